"""Short-time expansions of jump probabilities and the characteristics they reveal.

For an arc ``z -> z'``:

    P(T_1 <= t + h/2 | X_t = z, X_{t+h} = z', T_2 > t + h) = 1/2 - (h/8) chi_a(t, z->z') + o(h)

and for a closed walk ``c`` followed in ``[t, t+h]`` with exactly ``|c|`` jumps,
the probability is ``chi_c(t, c) h^{|c|} / |c|! + o(h^{|c|})``.  Both sides are
computed here exactly by quadrature of the defining integrals, fitted for the
coefficient, and cross-checked by Monte Carlo.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bridge import transition_matrix
from .errors import FitError, IntensityError, NumericalError
from .graph import ClosedWalk
from .simulate import ConditionalEstimate, arc_events, cycle_events, empirical_conditionals, sample_paths

GL_NODES = 32
QUAD_TOL = 1e-12
MAX_EXACT_CYCLE = 4
DEFAULT_HS = (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)
INTERCEPT_TOL = 1e-3
# accuracy expected of a fitted characteristic on the default grid (absolute
# for arcs, relative for cycles, both scaled by max(1, |chi|))
FIT_TOL = 1e-3

_X, _W = np.polynomial.legendre.leggauss(GL_NODES)
_CHECK_RULE = np.polynomial.legendre.leggauss(24)


def _gl_panels(f, a: float, b: float, panels: int) -> float:
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    nodes = (edges[:-1] + half)[:, None] + half[:, None] * _X[None, :]
    vals = np.asarray(f(nodes.reshape(-1)), dtype=float).reshape(nodes.shape)
    return float((half[:, None] * vals * _W[None, :]).sum())


def adaptive_gauss_legendre(f, a: float, b: float, tol: float = QUAD_TOL, max_depth: int = 40) -> float:
    """``int_a^b f`` by 32-node Gauss-Legendre with adaptive bisection.

    ``f`` takes an array of points.  A panel is accepted when it agrees with
    the sum over its two halves to within its share of ``tol``.
    """
    if b == a:
        return 0.0

    def rec(lo, hi, whole, tol_, depth):
        mid = 0.5 * (lo + hi)
        left = _gl_panels(f, lo, mid, 1)
        right = _gl_panels(f, mid, hi, 1)
        if abs(left + right - whole) <= tol_:
            return left + right
        if depth >= max_depth:
            raise NumericalError(f"quadrature did not converge on [{lo:.6g}, {hi:.6g}]")
        return rec(lo, mid, left, tol_ / 2, depth + 1) + rec(mid, hi, right, tol_ / 2, depth + 1)

    return rec(a, b, _gl_panels(f, a, b, 1), tol, 0)


def _arc_rate(k, arc):
    i = k.graph.arc_index[tuple(arc)]
    return lambda s: k.arc_rate(i, s)


# --------------------------------------------------------------------------- arc case


def exact_arc_probability(k, t: float, h: float, z: str, w: str, tau: float = 0.5) -> tuple[float, float]:
    """Numerator (``T_1 <= t + tau h``) and denominator (``tau = 1``) of the arc conditional.

    Each is ``int_0^{tau h} k(t+r, z->w) exp(-int_0^r kbar(t+s, z) ds)
    exp(-int_r^h kbar(t+s, w) ds) dr`` given ``X_t = z``; their ratio is
    ``P(T_1 <= t + tau h | X_t = z, X_{t+h} = w, T_2 > t + h)``.
    """
    g = k.graph
    if not g.has_arc(z, w):
        raise IntensityError(f"{z}->{w} is not an arc")
    if not (0.0 < t and h > 0 and t + h < 1.0):
        raise IntensityError(f"need 0 < t and t + h < 1 with h > 0, got t={t}, h={h}")
    zi, wi = g.index[z], g.index[w]
    rate = _arc_rate(k, (z, w))
    end = t + h

    def integrand(r):
        s = t + r
        stay = k.cumulative_total(zi, np.full_like(s, t), s)
        after = k.cumulative_total(wi, s, np.full_like(s, end))
        return rate(s) * np.exp(-stay - after)

    num = adaptive_gauss_legendre(integrand, 0.0, tau * h)
    den = num + adaptive_gauss_legendre(integrand, tau * h, h)
    return num, den


def arc_ratio(k, t: float, h: float, z: str, w: str, tau: float = 0.5) -> float:
    num, den = exact_arc_probability(k, t, h, z, w, tau)
    return num / den


# --------------------------------------------------------------------------- cycle case


def _cycle_integral(k, t: float, h: float, verts: list[int], panels: int, rule=(_X, _W)) -> float:
    """Nested Gauss-Legendre evaluation of the ordered-simplex integral.

    ``G_n(s) = exp(-int_s^{t+h} kbar(., x_n))`` and, going backwards,
    ``G_i(s) = int_s^{t+h} exp(-int_s^r kbar(., x_i)) k(r, x_i -> x_{i+1}) G_{i+1}(r) dr``;
    the probability is ``G_0(t)``.  Each level maps every point to its own
    ``panels x nodes`` points, so the cost is ``(nodes panels)^{|c|}``.
    """
    X, W = rule
    g = k.graph
    end = t + h
    n = len(verts) - 1
    arcs = [g.arc_index[(g.vertices[verts[i]], g.vertices[verts[i + 1]])] for i in range(n)]

    def G(i, s):
        if i == n:
            return np.exp(-k.cumulative_total(verts[n], s, np.full_like(s, end)))
        width = (end - s) / panels
        left = s[:, None] + width[:, None] * np.arange(panels)[None, :]
        half = 0.5 * width
        r = (left + half[:, None])[:, :, None] + half[:, None, None] * X[None, None, :]
        flat = r.reshape(-1)
        src = np.repeat(s, panels * len(X))
        vals = np.exp(-k.cumulative_total(verts[i], src, flat)) * k.arc_rate(arcs[i], flat) * G(i + 1, flat)
        return (vals.reshape(r.shape) * W[None, None, :]).sum(axis=2).sum(axis=1) * half

    return float(G(0, np.array([t]))[0])


def exact_cycle_probability(k, t: float, h: float, c: ClosedWalk, conditioning: str = "start",
                            tol: float = QUAD_TOL) -> float:
    """Probability that the jumps in ``[t, t+h]`` trace exactly ``c``.

    ``conditioning="start"`` conditions on ``X_t = z`` only (the integral
    itself); ``"return"`` conditions on ``X_t = X_{t+h} = z`` by dividing by
    ``P(X_{t+h} = z | X_t = z)``.  Supported up to ``|c| = 4``.

    Convergence is checked against a 24-node rule on the same panels; when
    they disagree by more than ``tol`` every level is bisected again.
    """
    g = k.graph
    g.check_walk(c)
    if len(c) > MAX_EXACT_CYCLE:
        raise ValueError(f"exact mode supports closed walks up to length {MAX_EXACT_CYCLE}; use mc_expansion_check")
    if h == 0:
        return 0.0
    if not (0.0 < t and h > 0 and t + h < 1.0):
        raise IntensityError(f"need 0 < t and t + h < 1 with h > 0, got t={t}, h={h}")
    verts = [g.index[v] for v in c.vertices]
    panels = 1
    while True:
        value = _cycle_integral(k, t, h, verts, panels)
        check = _cycle_integral(k, t, h, verts, panels, _CHECK_RULE)
        if abs(check - value) <= max(tol, 1e-13 * abs(value)):
            break
        panels *= 2
        if panels ** len(c) > 64:
            raise NumericalError("cycle quadrature did not converge")
    if conditioning == "start":
        return value
    if conditioning == "return":
        if not hasattr(k, "constant_generator"):
            raise ValueError("return conditioning needs a reference intensity, not a bridge")
        M = transition_matrix(k, t, t + h, method="expm" if k.homogeneous else "rk4").matrix
        return value / M[verts[0], verts[0]]
    raise ValueError(f"unknown conditioning {conditioning!r}")


# --------------------------------------------------------------------------- probes and fits


@dataclass(frozen=True)
class ExpansionProbe:
    """Exact probabilities on a decreasing ``h`` grid for one arc or closed walk."""

    kind: str  # "arc" | "cycle"
    t: float
    hs: tuple[float, ...]
    target: tuple
    values: tuple[float, ...]
    intercept: float | None = None
    slope: float | None = None
    fit_residual: float | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        hs = np.asarray(self.hs)
        if len(hs) < 1 or np.any(np.diff(hs) >= 0):
            raise ValueError("h grid must be strictly decreasing")
        if np.any(hs <= 0) or np.any(self.t + hs >= 1.0):
            raise ValueError("every h must lie in (0, 1 - t)")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "t": self.t,
            "hs": list(self.hs),
            "target": list(self.target),
            "values": list(self.values),
            "intercept": self.intercept,
            "slope": self.slope,
            "fit_residual": self.fit_residual,
        }


def probe_arc(k, t: float, z: str, w: str, hs=DEFAULT_HS, tau: float = 0.5) -> ExpansionProbe:
    values = tuple(arc_ratio(k, t, h, z, w, tau) for h in hs)
    return ExpansionProbe("arc", t, tuple(hs), (z, w), values, extras={"tau": tau})


def probe_cycle(k, t: float, c: ClosedWalk, hs=DEFAULT_HS, conditioning: str = "start") -> ExpansionProbe:
    values = tuple(exact_cycle_probability(k, t, h, c, conditioning) for h in hs)
    return ExpansionProbe("cycle", t, tuple(hs), tuple(c.vertices), values, extras={"conditioning": conditioning})


def _affine_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    A = np.column_stack([np.ones_like(x), x])
    (a, b), *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(a), float(b), float(np.abs(y - (a + b * x)).max())


def fit_probe(probe: ExpansionProbe, n_fit: int = 3) -> ExpansionProbe:
    """Affine least-squares fit on the ``n_fit`` smallest ``h``; returns an annotated probe."""
    if len(probe.hs) < 3:
        raise FitError("need at least three h values")
    hs = np.asarray(probe.hs[-n_fit:])
    vals = np.asarray(probe.values[-n_fit:])
    if probe.kind == "cycle":
        n = len(probe.target) - 1
        vals = vals * math.factorial(n) / hs**n
    a, b, res = _affine_fit(hs, vals)
    return ExpansionProbe(probe.kind, probe.t, probe.hs, probe.target, probe.values, a, b, res, dict(probe.extras))


def fit_characteristic(probe: ExpansionProbe, n_fit: int = 3, intercept_tol: float = INTERCEPT_TOL) -> float:
    """Characteristic read off a probe.

    Arc: ``-8 x slope`` of the ratio against ``h`` (``tau = 1/2``).  Cycle:
    intercept of ``value |c|! / h^{|c|}`` against ``h``.  Raises
    :class:`FitError` when the fit shows the expansion regime was not reached.
    """
    fitted = fit_probe(probe, n_fit)
    hmax = max(probe.hs[-n_fit:])
    if probe.kind == "arc":
        tau = probe.extras.get("tau", 0.5)
        if tau != 0.5:
            raise FitError("slope extraction assumes tau = 1/2")
        if abs(fitted.intercept - 0.5) > intercept_tol:
            raise FitError(f"intercept {fitted.intercept:.6g} is not within {intercept_tol:g} of 1/2; shrink h")
        return -8.0 * fitted.slope
    if abs(fitted.slope) * hmax > 0.5 * abs(fitted.intercept):
        raise FitError("first-order correction dominates the leading coefficient; shrink h")
    return fitted.intercept


def richardson_arc(k, t: float, h: float, z: str, w: str) -> float:
    """``chi_a`` from one Richardson step on the slopes at ``h`` and ``h/2``."""
    s1 = (arc_ratio(k, t, h, z, w) - 0.5) / h
    s2 = (arc_ratio(k, t, h / 2, z, w) - 0.5) / (h / 2)
    return -8.0 * (2.0 * s2 - s1)


# --------------------------------------------------------------------------- Monte Carlo


@dataclass(frozen=True)
class MCCheck:
    estimate: ConditionalEstimate
    oracle: float | None
    consistent: bool | None

    def to_dict(self) -> dict:
        return {**self.estimate.to_dict(), "oracle": self.oracle, "consistent": self.consistent}


def mc_expansion_check(k, t: float, h: float, target, N: int, seed: int, tau: float = 0.5,
                       threads: int = 1) -> MCCheck:
    """Monte Carlo estimate of the short-time conditional probability, with its oracle.

    ``target`` is an arc ``(z, w)`` or a :class:`ClosedWalk`.  Paths start at
    the source vertex at time ``t`` (the conditioning on ``X_t`` is exact by
    the Markov property) and run on ``[t, t + h]``.  The cycle event is the
    literal one, conditioned on ``X_t = X_{t+h}``; beyond the exact-mode
    length cap the oracle and verdict are ``None``.
    """
    if N < 1000:
        raise ValueError("need at least 1000 paths")
    g = k.graph
    if isinstance(target, ClosedWalk):
        event, given = cycle_events(g, target)
        m = len(target) + 1
        start = target.start
        oracle = None
        if len(target) <= MAX_EXACT_CYCLE:
            oracle = exact_cycle_probability(k, t, h, target, conditioning="return")
    else:
        z, w = target
        event, given = arc_events(g, z, w, tau)
        m = 2
        start = z
        oracle = arc_ratio(k, t, h, z, w, tau)
    batch = sample_paths(k, start, N, seed, t_start=t, t_end=t + h, threads=threads)
    est = empirical_conditionals(batch, t, h, event, given, m=m)
    if oracle is None:
        return MCCheck(est, None, None)
    return MCCheck(est, float(oracle), bool(est.covers(oracle)))
