"""Ready-made graphs and intensities with their known closed forms.

Each builder returns a :class:`PresetDescriptor`.  Truncations of infinite
lattices mark their cut vertices in ``graph.boundary``; closed-form
characteristics of the infinite graph are only meaningful on
``graph.interior()``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .graph import Arc, ClosedWalk, DirectedGraph, SpanningTree, build_graph, spanning_tree, t_basis
from .intensity import IntensitySpec, make_intensity


@dataclass(frozen=True, eq=False)
class PresetDescriptor:
    """A named construction: graph, reference intensity and attached closed forms.

    ``chi_arc`` / ``chi_cycle`` are callables ``(t, arc)`` / ``(t, walk)``
    returning the closed-form characteristic; ``bridge`` (when present) is
    ``(t, x, y) -> per-arc bridge rates``.  ``extras`` holds anything
    preset-specific (a second intensity, potentials, shortcuts).
    """

    name: str
    params: dict
    graph: DirectedGraph
    intensity: IntensitySpec
    root: str
    chi_arc: Callable[[float, Arc], float] | None = None
    chi_cycle: Callable[[float, ClosedWalk], float] | None = None
    bridge: Callable | None = None
    extras: dict = field(default_factory=dict)

    @property
    def tree(self) -> SpanningTree:
        return spanning_tree(self.graph, self.root)

    @property
    def basis(self):
        return t_basis(self.graph, self.tree)


def _rate_product(intensity: IntensitySpec, walk: ClosedWalk) -> float:
    idx = intensity.graph.arc_index
    r = intensity.rates(0.0)
    return float(np.prod([r[idx[a]] for a in walk.arcs]))


# --------------------------------------------------------------------------- path / birth-death


def path_graph(N: int) -> DirectedGraph:
    """``{0..N}`` with nearest-neighbour arcs; ``N`` is a truncation vertex."""
    verts = [str(z) for z in range(N + 1)]
    arcs = [(str(z), str(z + 1)) for z in range(N)]
    return build_graph(verts, arcs, symmetrize=True, boundary=[str(N)])


def birth_death(lam: float = 1.0, mu: float = 1.0, N: int = 20) -> PresetDescriptor:
    if lam <= 0 or mu <= 0:
        raise ValueError("birth and death rates must be positive")
    if N < 2:
        raise ValueError("truncation level N must be >= 2")
    g = path_graph(N)
    j = make_intensity(g, lambda a: lam if int(a[1]) > int(a[0]) else mu)

    def chi_arc(t, arc):
        if arc == ("0", "1"):
            return mu
        if arc == ("1", "0"):
            return -mu
        return 0.0

    def chi_cycle(t, walk):
        ups = sum(1 for z, w in walk.arcs if int(w) > int(z))
        return lam**ups * mu ** (len(walk) - ups)

    return PresetDescriptor("birth_death", {"lam": lam, "mu": mu, "N": N}, g, j, root="0", chi_arc=chi_arc, chi_cycle=chi_cycle)


# --------------------------------------------------------------------------- hypercube


def hypercube_graph(d: int) -> DirectedGraph:
    verts = ["".join(bits) for bits in itertools.product("01", repeat=d)]
    arcs = []
    for v in verts:
        for i in range(d):
            w = v[:i] + ("1" if v[i] == "0" else "0") + v[i + 1 :]
            arcs.append((v, w))
    return build_graph(verts, arcs)


def flip_direction(arc: Arc) -> int:
    """Coordinate flipped by a hypercube arc."""
    return next(i for i, (a, b) in enumerate(zip(*arc)) if a != b)


def hypercube_bridge_rates(graph: DirectedGraph, t, y: str) -> np.ndarray:
    """Closed-form bridge rates of the unit-rate walk towards ``y``.

    ``coth(1-t)`` for a flip that fixes a wrong coordinate, ``tanh(1-t)`` for
    one that breaks a correct coordinate.  Shape ``(n_arcs,)`` or ``(m, n_arcs)``.
    """
    t = np.asarray(t, dtype=float)
    s = 1.0 - t
    wrong = np.array([z[flip_direction((z, w))] != y[flip_direction((z, w))] for z, w in graph.arcs])
    coth = (1.0 / np.tanh(s))[..., None]
    tanh = np.tanh(s)[..., None]
    return np.where(wrong, coth, tanh)


def hypercube_potential(graph: DirectedGraph, t, y: str) -> np.ndarray:
    """``psi(t, z) = sum_i log(1 + (-1)^{z_i - y_i} e^{-2(1-t)})`` per vertex.

    Solves the HJB equation of the unit-rate walk with the bridge boundary
    data at ``y``, up to the additive constant ``d log 2``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    e = np.exp(-2.0 * (1.0 - t))[:, None]
    sign = np.array([[1.0 if zi == yi else -1.0 for zi, yi in zip(z, y)] for z in graph.vertices])
    # log1p keeps the matched coordinates accurate; mismatched ones are log(1 - e)
    return np.log1p(sign[None, :, :] * e[:, :, None]).sum(axis=2)


def hypercube_potential_dt(graph: DirectedGraph, t, y: str) -> np.ndarray:
    t = np.atleast_1d(np.asarray(t, dtype=float))
    e = np.exp(-2.0 * (1.0 - t))[:, None, None]
    sign = np.array([[1.0 if zi == yi else -1.0 for zi, yi in zip(z, y)] for z in graph.vertices])[None]
    return (2.0 * sign * e / (1.0 + sign * e)).sum(axis=2)


def hypercube(d: int = 3, rates=None) -> PresetDescriptor:
    """Walk on ``{0,1}^d``; unit rates unless per-direction ``rates`` are given."""
    if not 1 <= d <= 10:
        raise ValueError("hypercube dimension must be in 1..10")
    g = hypercube_graph(d)
    per_dir = np.ones(d) if rates is None else np.asarray(rates, dtype=float).reshape(-1)
    if per_dir.shape != (d,) or np.any(per_dir <= 0):
        raise ValueError(f"need {d} positive per-direction rates")
    j = make_intensity(g, lambda a: float(per_dir[flip_direction(a)]))
    unit = rates is None or bool(np.all(per_dir == 1.0))

    def chi_cycle(t, walk):
        return float(np.prod([per_dir[flip_direction(a)] for a in walk.arcs]))

    extras = {"direction_rates": tuple(float(r) for r in per_dir)}
    if unit:
        extras["potential"] = lambda t, y: hypercube_potential(g, t, y)
        extras["potential_dt"] = lambda t, y: hypercube_potential_dt(g, t, y)
    return PresetDescriptor(
        "hypercube",
        {"d": d} if rates is None else {"d": d, "rates": tuple(per_dir)},
        g,
        j,
        root="0" * d,
        chi_arc=lambda t, arc: 0.0,
        chi_cycle=chi_cycle,
        bridge=(lambda t, x, y: hypercube_bridge_rates(g, t, y)) if unit else None,
        extras=extras,
    )


def hypercube_cayley_rigidity(d: int, j, k, rtol: float = 1e-12) -> bool:
    """Translation-invariant walks on ``{0,1}^d`` share bridges iff their rates coincide.

    Every generator is its own inverse, so the edge 2-walk product is
    ``j_i^2`` and equality of products forces ``j_i = k_i``.
    """
    j = np.asarray(j, dtype=float).reshape(-1)
    k = np.asarray(k, dtype=float).reshape(-1)
    if j.shape != (d,) or k.shape != (d,):
        raise ValueError(f"need {d} per-direction rates for each walk")
    return bool(np.allclose(j * j, k * k, rtol=rtol, atol=0.0))


# --------------------------------------------------------------------------- small complete graphs


def two_cycle(rate_ab: float = 1.0, rate_ba: float = 1.0) -> PresetDescriptor:
    g = build_graph(["a", "b"], [("a", "b"), ("b", "a")])
    j = make_intensity(g, {("a", "b"): rate_ab, ("b", "a"): rate_ba})
    return PresetDescriptor(
        "two_cycle",
        {"rate_ab": rate_ab, "rate_ba": rate_ba},
        g,
        j,
        root="a",
        chi_arc=lambda t, arc: (rate_ba - rate_ab) * (1.0 if arc == ("a", "b") else -1.0),
        chi_cycle=lambda t, walk: _rate_product(j, walk),
    )


def complete_graph(n: int, names=None) -> DirectedGraph:
    verts = list(names) if names is not None else [str(i) for i in range(n)]
    return build_graph(verts, [(a, b) for a in verts for b in verts if a != b])


def triangle() -> PresetDescriptor:
    """Unit rates on the complete graph over ``a, b, c``; tree ``a - b - c``.

    ``extras["listed_basis"]`` lists the fundamental 3-cycle and one 2-walk
    per edge; ``extras["bridge_identities"]`` measures how far a bridge
    towards ``b`` from ``a`` is from the structural identities
    ``j(a->c) = j(c->a) = 1`` and ``j(b->a) = j(b->c) = 1 / j(a->b)``.
    """
    g = complete_graph(3, "abc")
    j = make_intensity(g, lambda a: 1.0)
    root = "b"  # BFS from b gives the path tree a - b - c
    tree = spanning_tree(g, root)
    basis = t_basis(g, tree)
    listed_basis = basis.fundamental + tuple(ClosedWalk((x, y, x)) for x, y in g.edges())

    def bridge_identities(solution, t) -> float:
        r = solution.rates(t)
        idx = g.arc_index
        ab = r[..., idx[("a", "b")]]
        devs = [
            r[..., idx[("a", "c")]] - 1.0,
            r[..., idx[("c", "a")]] - 1.0,
            r[..., idx[("b", "a")]] * ab - 1.0,
            r[..., idx[("b", "c")]] * ab - 1.0,
        ]
        return float(np.max(np.abs(devs)))

    return PresetDescriptor(
        "triangle",
        {},
        g,
        j,
        root=root,
        chi_arc=lambda t, arc: 0.0,
        chi_cycle=lambda t, walk: 1.0,
        extras={"listed_basis": listed_basis, "bridge_identities": bridge_identities},
    )


def complete_graph_sampler(m=(0.4, 0.3, 0.2, 0.1)) -> PresetDescriptor:
    """Rates ``sqrt(m(z') / m(z))`` on the complete graph; ``m`` is reversing."""
    m = np.asarray(m, dtype=float)
    if m.ndim != 1 or len(m) < 2:
        raise ValueError("need at least two weights")
    if np.any(m <= 0):
        raise ValueError(f"weights must be positive, got {m.min():g}")
    if not math.isclose(m.sum(), 1.0, rel_tol=0, abs_tol=1e-12):
        raise ValueError(f"weights must sum to 1, got {m.sum():.17g}")
    g = complete_graph(len(m))
    sq = np.sqrt(m)
    j = make_intensity(g, lambda a: float(sq[int(a[1])] / sq[int(a[0])]))
    S = float(sq.sum())

    def chi_arc(t, arc):
        return S * (1.0 / sq[int(arc[1])] - 1.0 / sq[int(arc[0])])

    return PresetDescriptor(
        "complete_graph_sampler",
        {"m": tuple(float(x) for x in m)},
        g,
        j,
        root="0",
        chi_arc=chi_arc,
        chi_cycle=lambda t, walk: 1.0,
    )


# --------------------------------------------------------------------------- lattices


def _coord_name(c) -> str:
    return ",".join(str(v) for v in c)


def _box_lattice(dim: int, L: int, generators) -> tuple[DirectedGraph, dict]:
    """Truncated Cayley graph on ``{0..L-1}^dim``.

    Returns the graph and a map from arc to generator label.  Vertices that
    lose at least one generator to the cut are boundary vertices.
    """
    coords = list(itertools.product(range(L), repeat=dim))
    inside = set(coords)
    arcs, label, boundary = [], {}, []
    for c in coords:
        lost = False
        for lab, g in generators:
            w = tuple(a + b for a, b in zip(c, g))
            if w in inside:
                arc = (_coord_name(c), _coord_name(w))
                arcs.append(arc)
                label[arc] = lab
            else:
                lost = True
        if lost:
            boundary.append(_coord_name(c))
    graph = build_graph([_coord_name(c) for c in coords], arcs, boundary=boundary)
    return graph, label


def _center(dim: int, L: int) -> str:
    return _coord_name((L // 2,) * dim)


def _pairs(rates, d: int) -> np.ndarray:
    r = np.asarray(rates, dtype=float).reshape(d, 2)
    if np.any(r <= 0):
        raise ValueError("lattice rates must be positive")
    return r


def zd_product_criterion(j_rates, k_rates, d: int, rtol: float = 1e-9) -> bool:
    """``j_i j_{-i} = k_i k_{-i}`` for every direction ``i``."""
    j, k = _pairs(j_rates, d), _pairs(k_rates, d)
    return bool(np.allclose(j.prod(axis=1), k.prod(axis=1), rtol=rtol, atol=0.0))


def cayley_zd(d: int = 1, rates=None, L: int = 9) -> PresetDescriptor:
    """Translation-invariant walk on a box of ``Z^d`` of side ``L``.

    ``rates`` is ``[(j_1, j_-1), ..., (j_d, j_-d)]``; unit by default.
    """
    if L < 5:
        raise ValueError("side L must be at least 5")
    r = _pairs(np.ones((d, 2)) if rates is None else rates, d)
    gens = []
    for i in range(d):
        e = tuple(1 if a == i else 0 for a in range(d))
        gens.append(((i, 0), e))
        gens.append(((i, 1), tuple(-x for x in e)))
    g, label = _box_lattice(d, L, gens)
    j = make_intensity(g, lambda a: float(r[label[a]]))

    def chi_cycle(t, walk):
        return float(np.prod([r[label[a]] for a in walk.arcs]))

    return PresetDescriptor(
        "cayley_zd",
        {"d": d, "rates": tuple(map(tuple, r)), "L": L},
        g,
        j,
        root=_center(d, L),
        chi_arc=lambda t, arc: 0.0,
        chi_cycle=chi_cycle,
        extras={"labels": label, "same_class_shortcut": lambda other: zd_product_criterion(r, other, d)},
    )


# triangular lattice in integer coordinates; g1 + g2 + g3 = 0
TRIANGULAR_GENERATORS = ((1, 0), (-1, 1), (0, -1))


def triangular_lattice_family(rates=None, alpha: float = 1.0, beta: float = 1.0, L: int = 7) -> PresetDescriptor:
    """Pair ``(j, k)`` of translation-invariant walks on a truncated triangular lattice.

    ``rates`` is ``[(j_1, j_-1), (j_2, j_-2), (j_3, j_-3)]``.  The second walk
    multiplies ``(j_1, j_2, j_3)`` by ``(alpha, beta, 1/(alpha beta))`` and
    divides the opposite directions by the same factors, which keeps every
    edge product and the face product ``j_1 j_2 j_3``.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    if L < 5:
        raise ValueError("side L must be at least 5")
    r = _pairs(np.ones((3, 2)) if rates is None else rates, 3)
    factor = np.array([alpha, beta, 1.0 / (alpha * beta)])
    rk = np.column_stack([r[:, 0] * factor, r[:, 1] / factor])
    gens = []
    for i, gvec in enumerate(TRIANGULAR_GENERATORS):
        gens.append(((i, 0), gvec))
        gens.append(((i, 1), tuple(-x for x in gvec)))
    g, label = _box_lattice(2, L, gens)
    j = make_intensity(g, lambda a: float(r[label[a]]))
    k = make_intensity(g, lambda a: float(rk[label[a]]))
    face = float(r[:, 0].prod())

    def face_at(z: str) -> ClosedWalk:
        c = tuple(int(v) for v in z.split(","))
        pts = [c]
        for gvec in TRIANGULAR_GENERATORS:
            pts.append(tuple(a + b for a, b in zip(pts[-1], gvec)))
        return ClosedWalk(tuple(_coord_name(p) for p in pts))

    def chi_cycle(t, walk):
        return float(np.prod([r[label[a]] for a in walk.arcs]))

    return PresetDescriptor(
        "triangular_lattice_family",
        {"rates": tuple(map(tuple, r)), "alpha": alpha, "beta": beta, "L": L},
        g,
        j,
        root=_center(2, L),
        chi_arc=lambda t, arc: 0.0,
        chi_cycle=chi_cycle,
        extras={"k": k, "k_rates": tuple(map(tuple, rk)), "face_characteristic": face, "face_at": face_at, "labels": label},
    )


# --------------------------------------------------------------------------- registry


PRESETS: dict[str, Callable[..., PresetDescriptor]] = {
    "birth_death": birth_death,
    "hypercube": hypercube,
    "triangle": triangle,
    "two_cycle": two_cycle,
    "complete_graph_sampler": complete_graph_sampler,
    "cayley_zd": cayley_zd,
    "triangular_lattice_family": triangular_lattice_family,
}


def get_preset(name: str, **params) -> PresetDescriptor:
    try:
        builder = PRESETS[name.replace("-", "_")]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}") from None
    return builder(**params)
