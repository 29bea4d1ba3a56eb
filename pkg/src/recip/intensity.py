"""Jump intensities ``k(t, z->z')`` on the arcs of a graph.

Each arc carries a time profile: :class:`Constant`, :class:`ClosedForm`
(a named function with parameters) or :class:`Grid` (values on a uniform grid
of ``[0, 1]``, cubic interpolation).  :class:`IntensitySpec` evaluates all
arcs at once; per-arc arrays follow ``graph.arcs`` order.

Bridge intensities (see :mod:`recip.bridge`) expose the same evaluation
methods, so everything that consumes an intensity works on either.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy import sparse

from .errors import IntensityError
from .graph import Arc, DirectedGraph

DEFAULT_H_FD = 1e-4
BOUND_GRID = 4097

_GL_X, _GL_W = np.polynomial.legendre.leggauss(32)


class ClosedFormFamily(NamedTuple):
    value: Callable[..., np.ndarray]
    derivative: Callable[..., np.ndarray]
    params: tuple[str, ...]


CLOSED_FORMS: dict[str, ClosedFormFamily] = {
    # scale * exp(rate * t)
    "exp": ClosedFormFamily(
        lambda t, scale, rate: scale * np.exp(rate * t),
        lambda t, scale, rate: scale * rate * np.exp(rate * t),
        ("scale", "rate"),
    ),
    # a + b t
    "affine": ClosedFormFamily(
        lambda t, a, b: a + b * t,
        lambda t, a, b: b + 0.0 * t,
        ("a", "b"),
    ),
    # base + amp cos(2 pi freq t + phase)
    "cosine": ClosedFormFamily(
        lambda t, base, amp, freq, phase: base + amp * np.cos(2 * np.pi * freq * t + phase),
        lambda t, base, amp, freq, phase: -2 * np.pi * freq * amp * np.sin(2 * np.pi * freq * t + phase),
        ("base", "amp", "freq", "phase"),
    ),
}


@dataclass(frozen=True)
class Constant:
    value: float

    def __post_init__(self):
        if not self.value > 0 or not math.isfinite(self.value):
            raise IntensityError(f"constant rate must be positive and finite, got {self.value!r}")

    def __call__(self, t):
        return np.full(np.shape(t), float(self.value))

    def dlog(self, t, h_fd=DEFAULT_H_FD):
        return np.zeros(np.shape(t))

    def to_json(self):
        return float(self.value)


@dataclass(frozen=True)
class ClosedForm:
    name: str
    params: tuple[tuple[str, float], ...]

    def __post_init__(self):
        fam = CLOSED_FORMS.get(self.name)
        if fam is None:
            raise IntensityError(f"unknown closed-form profile {self.name!r}; known: {sorted(CLOSED_FORMS)}")
        missing = set(fam.params) - {k for k, _ in self.params}
        if missing:
            raise IntensityError(f"profile {self.name!r} lacks parameter(s) {sorted(missing)}")

    @classmethod
    def of(cls, name: str, **params: float) -> "ClosedForm":
        return cls(name, tuple(sorted((k, float(v)) for k, v in params.items())))

    @property
    def kwargs(self) -> dict[str, float]:
        return dict(self.params)

    def __call__(self, t):
        return np.asarray(CLOSED_FORMS[self.name].value(np.asarray(t, dtype=float), **self.kwargs), dtype=float)

    def derivative(self, t):
        return np.asarray(CLOSED_FORMS[self.name].derivative(np.asarray(t, dtype=float), **self.kwargs), dtype=float)

    def dlog(self, t, h_fd=DEFAULT_H_FD):
        return self.derivative(t) / self(t)

    def to_json(self):
        return {"name": self.name, "params": self.kwargs}


@dataclass(frozen=True, eq=False)
class Grid:
    """Values on the uniform grid ``linspace(0, 1, n)``; cubic interpolation."""

    values: tuple[float, ...]

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size < 4:
            raise IntensityError("a grid profile needs at least 4 values")
        if not np.all(vals > 0) or not np.all(np.isfinite(vals)):
            raise IntensityError("grid profile values must be positive and finite")
        object.__setattr__(self, "values", tuple(float(v) for v in vals))

    def __hash__(self):
        return hash(self.values)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.values == other.values

    @cached_property
    def spline(self) -> CubicSpline:
        return CubicSpline(np.linspace(0.0, 1.0, len(self.values)), np.asarray(self.values))

    def __call__(self, t):
        return self.spline(np.asarray(t, dtype=float))

    def dlog(self, t, h_fd=DEFAULT_H_FD):
        # central differences, second-order one-sided within h_fd of the ends
        t0 = np.asarray(t, dtype=float)
        t = np.atleast_1d(t0)
        f = self.spline
        d = (f(t + h_fd) - f(t - h_fd)) / (2 * h_fd)
        lo, hi = t - h_fd < 0.0, t + h_fd > 1.0
        tl, th = t[lo], t[hi]
        d[lo] = (-3 * f(tl) + 4 * f(tl + h_fd) - f(tl + 2 * h_fd)) / (2 * h_fd)
        d[hi] = (3 * f(th) - 4 * f(th - h_fd) + f(th - 2 * h_fd)) / (2 * h_fd)
        return (d / f(t)).reshape(t0.shape)

    def to_json(self):
        return list(self.values)


Profile = Constant | ClosedForm | Grid


@dataclass(frozen=True)
class RateBound:
    """Stored upper bound of the total exit rate over ``[0, 1] x X``."""

    value: float


@dataclass(frozen=True, eq=False)
class IntensitySpec:
    """Positive, continuously differentiable jump intensity on ``graph``.

    ``profiles[i]`` is the time profile of ``graph.arcs[i]``.  Use
    :func:`make_intensity` or the file loader to build one; both check
    positivity on a dense grid and store the :class:`RateBound`.
    """

    graph: DirectedGraph
    profiles: tuple[Profile, ...]
    h_fd: float = DEFAULT_H_FD
    bound: RateBound = field(default=RateBound(math.inf))

    def __eq__(self, other):
        return (
            isinstance(other, IntensitySpec)
            and self.graph == other.graph
            and self.profiles == other.profiles
            and self.h_fd == other.h_fd
        )

    __hash__ = object.__hash__

    @cached_property
    def homogeneous(self) -> bool:
        return all(isinstance(p, Constant) for p in self.profiles)

    @cached_property
    def _groups(self) -> list[tuple[Profile, np.ndarray]]:
        members: dict[Profile, list[int]] = {}
        for i, p in enumerate(self.profiles):
            members.setdefault(p, []).append(i)
        return [(p, np.array(ix, dtype=np.intp)) for p, ix in members.items()]

    @cached_property
    def _constant_rates(self) -> np.ndarray:
        return np.array([p.value for p in self.profiles]) if self.homogeneous else None

    # -- vectorised evaluation -------------------------------------------------

    def rates(self, t) -> np.ndarray:
        """Rates on every arc; shape ``(n_arcs,)`` for scalar ``t``, ``(m, n_arcs)`` for ``m`` times."""
        t = np.asarray(t, dtype=float)
        if self.homogeneous:
            return np.broadcast_to(self._constant_rates, t.shape + (self.graph.n_arcs,)).copy()
        out = np.empty(t.shape + (self.graph.n_arcs,))
        for prof, ix in self._groups:
            out[..., ix] = np.asarray(prof(t))[..., None]
        return out

    def arc_rate(self, i: int, t) -> np.ndarray:
        """Rate of ``graph.arcs[i]`` alone, shaped like ``t``."""
        return np.asarray(self.profiles[i](np.asarray(t, dtype=float)), dtype=float)

    def total_rates(self, t) -> np.ndarray:
        """Total exit rate of every vertex; shape ``(n_vertices,)`` or ``(m, n_vertices)``."""
        r = self.rates(t)
        if r.ndim == 1:
            return np.bincount(self.graph.src, weights=r, minlength=self.graph.n_vertices)
        return np.asarray(self._incidence.T @ r.reshape(-1, r.shape[-1]).T).T.reshape(r.shape[:-1] + (-1,))

    @cached_property
    def _incidence(self):
        g = self.graph
        return sparse.csr_matrix((np.ones(g.n_arcs), (np.arange(g.n_arcs), g.src)), shape=(g.n_arcs, g.n_vertices))

    def dlog_rates_dt(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if self.homogeneous:
            return np.zeros(t.shape + (self.graph.n_arcs,))
        out = np.empty(t.shape + (self.graph.n_arcs,))
        for prof, ix in self._groups:
            out[..., ix] = np.asarray(prof.dlog(t, self.h_fd))[..., None]
        return out

    def cumulative_total(self, vertex: int, a, b) -> np.ndarray:
        """``int_a^b kbar(s, vertex) ds`` for arrays of interval ends."""
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if self.homogeneous:
            return self.constant_total_rates[vertex] * (b - a)
        half = 0.5 * (b - a)
        nodes = (a + half)[..., None] + half[..., None] * _GL_X
        vals = self.total_rates(nodes.reshape(-1))[:, vertex].reshape(nodes.shape)
        return half * (vals @ _GL_W)

    @cached_property
    def constant_total_rates(self) -> np.ndarray:
        return self.total_rates(0.0)

    @cached_property
    def constant_generator(self):
        if not self.homogeneous:
            raise IntensityError("intensity is time-dependent")
        return self.generator(0.0)

    @cached_property
    def shifted_generator(self):
        """``(L + c I, c)`` with ``c`` the largest exit rate; the matrix is nonnegative."""
        L = self.constant_generator
        c = float(self.constant_total_rates.max())
        return (L + c * sparse.identity(L.shape[0], format="csr")).tocsr(), c

    def generator(self, t: float):
        """Sparse generator ``L_t`` (rows sum to zero) as a CSR matrix."""
        return generator_matrix(self.graph, self.rates(t))


def generator_matrix(graph: DirectedGraph, arc_rates: np.ndarray):
    n = graph.n_vertices
    total = np.bincount(graph.src, weights=arc_rates, minlength=n)
    rows = np.concatenate([graph.src, np.arange(n)])
    cols = np.concatenate([graph.dst, np.arange(n)])
    data = np.concatenate([arc_rates, -total])
    return sparse.csr_matrix((data, (rows, cols)), shape=(n, n))


def _check_time(t: float, closed: bool = False) -> None:
    hi_ok = t <= 1.0 if closed else t < 1.0
    if not (0.0 <= t and hi_ok):
        raise IntensityError(f"time {t!r} outside {'[0, 1]' if closed else '[0, 1)'}")


def make_intensity(
    graph: DirectedGraph,
    profiles: Mapping[Arc, Profile | float] | Sequence[Profile | float] | Callable[[Arc], Profile | float],
    *,
    h_fd: float = DEFAULT_H_FD,
) -> IntensitySpec:
    """Build an :class:`IntensitySpec`, validate positivity and store its rate bound.

    ``profiles`` may be a mapping keyed by arc, a sequence in ``graph.arcs``
    order, or a callable of the arc.  Bare numbers become :class:`Constant`.
    """
    if callable(profiles) and not isinstance(profiles, Mapping):
        raw = [profiles(a) for a in graph.arcs]
    elif isinstance(profiles, Mapping):
        extra = set(profiles) - set(graph.arcs)
        if extra:
            a = sorted(extra)[0]
            raise IntensityError(f"intensity given on {a[0]}->{a[1]}, which is not an arc")
        try:
            raw = [profiles[a] for a in graph.arcs]
        except KeyError as exc:
            a = exc.args[0]
            raise IntensityError(f"no intensity for arc {a[0]}->{a[1]}") from None
    else:
        raw = list(profiles)
        if len(raw) != graph.n_arcs:
            raise IntensityError(f"expected {graph.n_arcs} profiles, got {len(raw)}")
    profs = tuple(p if isinstance(p, (Constant, ClosedForm, Grid)) else Constant(float(p)) for p in raw)
    spec = IntensitySpec(graph, profs, h_fd=h_fd)

    if spec.homogeneous:
        bound = float(spec.constant_total_rates.max())
    else:
        ts = np.linspace(0.0, 1.0, BOUND_GRID)
        r = spec.rates(ts)
        if not np.all(np.isfinite(r)) or r.min() <= 0.0:
            i, k = np.unravel_index(np.argmin(np.where(np.isfinite(r), r, -np.inf)), r.shape)
            a = graph.arcs[k]
            raise IntensityError(f"rate on {a[0]}->{a[1]} is not positive at t={ts[i]:.6g}")
        bound = float(spec.total_rates(ts).max()) * 1.01
    object.__setattr__(spec, "bound", RateBound(bound))
    return spec


# -- scalar conveniences ---------------------------------------------------------


def rate(spec, t: float, arc: Arc) -> float:
    _check_time(t)
    return float(spec.rates(t)[spec.graph.arc_index[arc]])


def total_rate(spec, t: float, z: str) -> float:
    _check_time(t)
    return float(spec.total_rates(t)[spec.graph.index[z]])


def dlog_rate_dt(spec, t: float, arc: Arc) -> float:
    _check_time(t)
    return float(spec.dlog_rates_dt(t)[spec.graph.arc_index[arc]])


# -- files -----------------------------------------------------------------------


def _arc_key(a: Arc) -> str:
    return f"{a[0]}->{a[1]}"


def _parse_profile(entry) -> Profile:
    if isinstance(entry, (int, float)) and not isinstance(entry, bool):
        return Constant(float(entry))
    if isinstance(entry, Mapping):
        if "name" not in entry:
            raise IntensityError(f"closed-form entry needs a 'name': {entry!r}")
        return ClosedForm.of(entry["name"], **entry.get("params", {}))
    if isinstance(entry, (list, tuple)):
        return Grid(tuple(entry))
    raise IntensityError(f"cannot interpret intensity entry {entry!r}")


_KIND = {Constant: "constant", ClosedForm: "closed_form", Grid: "grid"}


def intensity_to_dict(spec: IntensitySpec) -> dict:
    kinds = {_KIND[type(p)] for p in spec.profiles}
    doc = {"type": kinds.pop() if len(kinds) == 1 else "mixed"}
    if spec.h_fd != DEFAULT_H_FD:
        doc["h_fd"] = spec.h_fd
    doc["arcs"] = {_arc_key(a): p.to_json() for a, p in zip(spec.graph.arcs, spec.profiles)}
    return doc


def intensity_from_dict(doc: Mapping, graph: DirectedGraph) -> IntensitySpec:
    kind = doc.get("type")
    if kind not in ("constant", "closed_form", "grid", "mixed"):
        raise IntensityError(f"intensity field 'type' must be constant|closed_form|grid|mixed, got {kind!r}")
    entries = doc.get("arcs")
    if not isinstance(entries, Mapping):
        raise IntensityError("intensity document lacks an 'arcs' object")
    profiles = {}
    for key, entry in entries.items():
        src, sep, dst = key.partition("->")
        if not sep:
            raise IntensityError(f"arc key {key!r} is not of the form 'src->dst'")
        prof = _parse_profile(entry)
        if kind != "mixed" and _KIND[type(prof)] != kind:
            raise IntensityError(f"entry {key!r} is {_KIND[type(prof)]} but document type is {kind}")
        profiles[(src, dst)] = prof
    return make_intensity(graph, profiles, h_fd=float(doc.get("h_fd", DEFAULT_H_FD)))


def load_intensity(path: str | Path, graph: DirectedGraph) -> IntensitySpec:
    return intensity_from_dict(json.loads(Path(path).read_text(encoding="utf-8")), graph)
