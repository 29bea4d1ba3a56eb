"""Reciprocal characteristics and the reciprocal-class decision for Markov intensities.

For an intensity ``k``:

* arc characteristic ``chi_a[k](t, z->z') = d/dt log k(t, z->z') + kbar(t, z') - kbar(t, z)``
* closed-walk characteristic ``chi_c[k](t, c)`` = product of ``k`` along ``c``.

Two Markov intensities generate the same bridges iff ``chi_a`` agrees on the
arcs of a spanning tree and ``chi_c`` agrees on a T-basis of closed walks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import IntensityError
from .graph import ClosedWalk, CycleBasis, DirectedGraph, SpanningTree, closed_walks, spanning_tree, t_basis
from .intensity import Grid, IntensitySpec, make_intensity

DEFAULT_DELTA = 1e-3
DEFAULT_POINTS = 257
TOL_ARC = {"analytic": 1e-6, "grid": 1e-3}
TOL_CYCLE = {"analytic": 1e-9, "grid": 1e-6}


def default_time_grid(points: int = DEFAULT_POINTS, delta: float = DEFAULT_DELTA) -> np.ndarray:
    return np.linspace(delta, 1.0 - delta, points)


def chi_arc_values(k, times) -> np.ndarray:
    """``chi_a[k]`` on every arc at every time; shape ``(m, n_arcs)``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    g = k.graph
    kbar = k.total_rates(times)
    return k.dlog_rates_dt(times) + kbar[:, g.dst] - kbar[:, g.src]


def log_chi_cycle_values(k, times, cycles) -> np.ndarray:
    """``log chi_c[k]`` for each closed walk; shape ``(m, len(cycles))``."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    logr = np.log(k.rates(times))
    idx = k.graph.arc_index
    out = np.empty((len(times), len(cycles)))
    for i, c in enumerate(cycles):
        out[:, i] = logr[:, [idx[a] for a in c.arcs]].sum(axis=1)
    return out


def chi_arc(k, t: float, arc) -> float:
    return float(chi_arc_values(k, [t])[0, k.graph.arc_index[tuple(arc)]])


def chi_cycle(k, t: float, c: ClosedWalk) -> float:
    k.graph.check_walk(c)
    return float(np.exp(log_chi_cycle_values(k, [t], [c])[0, 0]))


@dataclass(frozen=True)
class ClassReport:
    equal: bool
    arc_residual: float
    cycle_residual: float
    tol_arc: float
    tol_cycle: float
    n_arcs_checked: int
    n_cycles_checked: int
    violation_time: float | None = None
    violation: str | None = None

    @property
    def verdict(self) -> str:
        return "equal" if self.equal else "not-equal"

    def to_dict(self) -> dict:
        d = asdict(self)
        return {"verdict": self.verdict, **{k: d[k] for k in d if k != "equal"}}


def _uses_grid_derivatives(k) -> bool:
    if isinstance(k, IntensitySpec):
        return any(isinstance(p, Grid) for p in k.profiles)
    return True


def _region_ok(vertices, region) -> bool:
    return region is None or all(v in region for v in vertices)


def same_class(
    j,
    k,
    tree: SpanningTree | None = None,
    basis: CycleBasis | None = None,
    time_grid=None,
    tol_arc: float | None = None,
    tol_cycle: float | None = None,
    region=None,
) -> ClassReport:
    """Decide whether ``k`` lies in the reciprocal class of ``j``.

    Checks ``|chi_a[j] - chi_a[k]| <= tol_arc`` on tree arcs and
    ``|chi_c[j] / chi_c[k] - 1| <= tol_cycle`` on basis cycles, over the time
    grid.  On truncated graphs only arcs and cycles whose vertices lie in
    ``region`` (default: distance >= 2 from the truncation boundary) count.
    Tolerances default by whether either side needs grid derivatives.
    """
    g = j.graph
    if k.graph != g:
        raise IntensityError("intensities live on different graphs")
    tree = spanning_tree(g) if tree is None else tree
    basis = t_basis(g, tree) if basis is None else basis
    times = default_time_grid() if time_grid is None else np.asarray(time_grid, dtype=float)
    kind = "grid" if _uses_grid_derivatives(j) or _uses_grid_derivatives(k) else "analytic"
    tol_arc = TOL_ARC[kind] if tol_arc is None else tol_arc
    tol_cycle = TOL_CYCLE[kind] if tol_cycle is None else tol_cycle
    if region is None and g.boundary:
        region = g.interior(2)

    tree_arcs = [a for a in g.arcs if tree.contains(*a) and _region_ok(a, region)]
    cycles = [c for c in basis.cycles if _region_ok(c.vertices, region)]

    arc_res, cyc_res = 0.0, 0.0
    where_t, where = None, None
    if tree_arcs:
        ix = [g.arc_index[a] for a in tree_arcs]
        diff = np.abs(chi_arc_values(j, times)[:, ix] - chi_arc_values(k, times)[:, ix])
        arc_res = float(diff.max())
        if arc_res > tol_arc:
            m, i = np.unravel_index(np.argmax(diff > tol_arc), diff.shape)
            where_t, where = float(times[m]), "arc " + "->".join(tree_arcs[i])
    if cycles:
        ratio = np.abs(np.expm1(log_chi_cycle_values(j, times, cycles) - log_chi_cycle_values(k, times, cycles)))
        cyc_res = float(ratio.max())
        if cyc_res > tol_cycle and where is None:
            m, i = np.unravel_index(np.argmax(ratio > tol_cycle), ratio.shape)
            where_t, where = float(times[m]), "cycle " + str(cycles[i])
    return ClassReport(
        equal=arc_res <= tol_arc and cyc_res <= tol_cycle,
        arc_residual=arc_res,
        cycle_residual=cyc_res,
        tol_arc=tol_arc,
        tol_cycle=tol_cycle,
        n_arcs_checked=len(tree_arcs),
        n_cycles_checked=len(cycles),
        violation_time=where_t,
        violation=where,
    )


def exhaustive_residuals(j, k, time_grid=None, max_length: int = 4, region=None) -> tuple[float, float]:
    """Diagnostic: residuals over ALL arcs and all closed walks up to ``max_length``."""
    g = j.graph
    times = default_time_grid() if time_grid is None else time_grid
    if region is None and g.boundary:
        region = g.interior(2)
    ix = [i for i, a in enumerate(g.arcs) if _region_ok(a, region)]
    arc = float(np.abs(chi_arc_values(j, times)[:, ix] - chi_arc_values(k, times)[:, ix]).max(initial=0.0))
    walks = [c for c in closed_walks(g, max_length) if _region_ok(c.vertices, region)]
    cyc = 0.0
    if walks:
        cyc = float(np.abs(np.expm1(log_chi_cycle_values(j, times, walks) - log_chi_cycle_values(k, times, walks))).max())
    return arc, cyc


def birth_death_family_rates(lam: float, mu: float, lam0: float, N: int) -> tuple[np.ndarray, np.ndarray]:
    """Up-rates ``lt[0..N-1]`` and down-rates ``mt[1..N]`` (``mt[0]`` unused).

    ``mt(z+1) = lam mu / lt(z)`` and ``lt(z+1) = mu + lam0 - mt(z+1)``.
    """
    lt = np.empty(N)
    mt = np.full(N + 1, np.nan)
    lt[0] = lam0
    if not lam0 > 0:
        raise IntensityError(f"lambda~(0) must be positive, got {lam0}")
    for z in range(N):
        mt[z + 1] = lam * mu / lt[z]
        if z + 1 < N:
            lt[z + 1] = mu + lam0 - mt[z + 1]
            if not lt[z + 1] > 0:
                raise IntensityError(
                    f"recursion leaves the positive cone at level {z + 1} "
                    f"(lambda~ = {lt[z + 1]:.6g}); increase lambda~(0)"
                )
    return lt, mt


def markov_family_birth_death(lam: float, mu: float, lam0: float, N: int) -> IntensitySpec:
    """Time-homogeneous birth-death intensity in the class of ``(lam, mu)`` on ``{0..N}``."""
    from .presets import path_graph

    g = path_graph(N)
    lt, mt = birth_death_family_rates(lam, mu, lam0, N)
    rates = {}
    for z in range(N):
        rates[(str(z), str(z + 1))] = float(lt[z])
        rates[(str(z + 1), str(z))] = float(mt[z + 1])
    return make_intensity(g, rates)
