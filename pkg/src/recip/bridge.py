"""Bridge intensities through the h-transform.

The harmonic function ``u_t(z) = P(X_1 = y | X_t = z)`` solves the backward
Kolmogorov equation ``du/dt + L_t u = 0`` with terminal value ``1{z = y}``.
With ``phi = log u`` the bridge intensity is

    j^{xy}(t, z->z') = exp(phi_t(z') - phi_t(z)) j(t, z->z'),

and ``phi`` solves the HJB equation

    d/dt phi_t(z) + sum_{z'} j(t, z->z') [exp(phi_t(z') - phi_t(z)) - 1] = 0.

Integration is carried out on ``u`` (smooth, linear) rather than ``phi``
(singular at ``t = 1``).  The table is stored as max-normalised vectors plus
an accumulated log-scale so nothing underflows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg
from scipy import stats

from .errors import IntensityError, NumericalError
from .graph import ArcFunction, CycleBasis, DirectedGraph, cycle_residual
from .intensity import IntensitySpec, generator_matrix

RK4_STEP = 1.0 / 4096
GRADING = 64.0  # substeps never exceed (1 - t) / GRADING
STENCIL_GRADING = 512.0
DEFAULT_DELTA = 1e-3
DEFAULT_GRID = 4097
UNDERFLOW = 1e-300
ORACLE_INTERVAL = 1.0 / 1024


def fd_weights(offsets, order: int = 1) -> np.ndarray:
    """Finite-difference weights of the ``order``-th derivative on integer ``offsets``."""
    o = np.asarray(offsets, dtype=float)
    vander = np.vander(o, len(o), increasing=True).T
    rhs = np.zeros(len(o))
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs)


_CENTRAL = np.arange(-3, 4)
_W_CENTRAL = fd_weights(_CENTRAL)
_W_FORWARD = fd_weights(np.arange(0, 7))
_W_BACKWARD = fd_weights(np.arange(-6, 1))


# --------------------------------------------------------------------------- semigroup


def _generator(j: IntensitySpec, t: float):
    if j.homogeneous:
        return _homogeneous_generator(j)
    return j.generator(t)


def _homogeneous_generator(j: IntensitySpec):
    return j.constant_generator


def _rk4_backward(j: IntensitySpec, v: np.ndarray, t: float, dt: float) -> np.ndarray:
    """One RK4 step of ``du/dt = -L_t u`` from ``t`` down to ``t - dt``."""
    L1 = _generator(j, t)
    Lm = _generator(j, t - dt / 2)
    L2 = _generator(j, t - dt)
    k1 = L1 @ v
    k2 = Lm @ (v + dt / 2 * k1)
    k3 = Lm @ (v + dt / 2 * k2)
    k4 = L2 @ (v + dt * k3)
    return v + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)


def _taylor_expm_apply(L, v: np.ndarray, tau: float, max_terms: int) -> np.ndarray:
    # exp(tau L) v summed until every component has converged
    out = v.copy()
    term = v.copy()
    for k in range(1, max_terms + 1):
        term = (tau / k) * (L @ term)
        out += term
        if k > 8 and np.all(np.abs(term) <= 1e-18 * np.abs(out)):
            break
    return out


def _substep(t: float, remaining: float, step: float) -> float:
    return min(step, (1.0 - t) / GRADING, remaining)


SERIES_CHUNK = 16.0  # max h * c per series application


def _series_apply(j: IntensitySpec, V: np.ndarray, h) -> np.ndarray:
    """``exp(h L) V`` for time-homogeneous ``j`` through a nonnegative series.

    With ``c`` the largest exit rate, ``A = L + c I`` is entrywise
    nonnegative and ``exp(hL) = e^{-hc} sum_n (hA)^n / n!``.  Every term is
    nonnegative, so each component keeps full relative accuracy however
    small it is.  ``h`` is a scalar or one value per column of ``V``.
    """
    A, c = j.shifted_generator
    h = np.asarray(h, dtype=float)
    pieces = max(1, math.ceil(float(np.max(h, initial=0.0)) * c / SERIES_CHUNK))
    hp = h / pieces
    for _ in range(pieces):
        acc = V.copy()
        term = V.copy()
        n = 0
        while True:
            n += 1
            term = (A @ term) * (hp / n)
            acc += term
            if n > 2 * float(np.max(hp, initial=0.0)) * c + 2 and np.all(term <= 1e-18 * acc):
                break
        V = acc * np.exp(-hp * c)
    return V


def _advance(j: IntensitySpec, v: np.ndarray, t_from: float, t_to: float, step: float, method: str = "rk4") -> np.ndarray:
    """Integrate the backward equation from ``t_from`` down to ``t_to < t_from``."""
    if method == "series":
        return _series_apply(j, v, t_from - t_to)
    t = t_from
    while t - t_to > 1e-15:
        dt = _substep(t, t - t_to, step)
        v = _rk4_backward(j, v, t, dt)
        t -= dt
    return v


def _advance_many(j: IntensitySpec, V: np.ndarray, t_from: np.ndarray, t_to: np.ndarray, step: float, method: str = "rk4") -> np.ndarray:
    """Column-wise :func:`_advance`: column ``i`` goes from ``t_from[i]`` down to ``t_to[i]``."""
    if method == "series":
        return _series_apply(j, V, np.asarray(t_from, dtype=float) - np.asarray(t_to, dtype=float))
    if not j.homogeneous:
        for i in range(V.shape[1]):
            V[:, i] = _advance(j, V[:, i], float(t_from[i]), float(t_to[i]), step)
        return V
    L = j.constant_generator
    t = np.array(t_from, dtype=float)
    t_to = np.asarray(t_to, dtype=float)
    while True:
        rem = t - t_to
        live = np.flatnonzero(rem > 1e-15)
        if not live.size:
            return V
        dt = np.minimum(np.minimum(step, (1.0 - t[live]) / GRADING), rem[live])
        # RK4 on an autonomous linear system is the degree-4 Taylor polynomial
        W = V[:, live]
        term = W
        acc = W.copy()
        for k in range(1, 5):
            term = (L @ term) * (dt / k)
            acc += term
        V[:, live] = acc
        t[live] -= dt


def _terminal_layer(j: IntensitySpec, y: int, delta: float) -> np.ndarray:
    """``u`` on ``[1 - delta, 1]`` from the indicator of ``y``.

    Graded RK4 cannot start at ``t = 1`` (its step bound vanishes there), so
    the layer is covered by exponential substeps with the generator frozen at
    each substep midpoint; exact when ``j`` is time-homogeneous.
    """
    n = j.graph.n_vertices
    v = np.zeros(n)
    v[y] = 1.0
    max_terms = n + 40
    if j.homogeneous:
        L = _homogeneous_generator(j)
        norm = float(np.abs(L.diagonal()).max()) * 2
        pieces = max(1, math.ceil(delta * norm / 0.5))
        for _ in range(pieces):
            v = _taylor_expm_apply(L, v, delta / pieces, max_terms)
        return v
    pieces = max(32, math.ceil(delta / RK4_STEP) * 8)
    h = delta / pieces
    t = 1.0
    for _ in range(pieces):
        v = _taylor_expm_apply(j.generator(t - h / 2), v, h, max_terms)
        t -= h
    return v


@dataclass(frozen=True)
class TransitionMatrix:
    s: float
    t: float
    matrix: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return self.matrix if dtype is None else self.matrix.astype(dtype)


def transition_matrix(j: IntensitySpec, s: float, t: float, method: str = "rk4", step: float = RK4_STEP) -> TransitionMatrix:
    """``P(X_t = . | X_s = .)`` under ``j``.

    ``method="rk4"`` propagates ``dM/dr = M L_r`` with fixed RK4 steps;
    ``method="expm"`` uses ``exp((t-s)L)`` for time-homogeneous ``j`` and a
    time-ordered product of midpoint exponentials over ``1/1024`` intervals
    otherwise (a test oracle).
    """
    if not 0.0 <= s <= t <= 1.0:
        raise IntensityError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")
    n = j.graph.n_vertices
    if method == "expm":
        if j.homogeneous:
            M = scipy.linalg.expm((t - s) * _homogeneous_generator(j).toarray())
        else:
            M = np.eye(n)
            pieces = max(1, math.ceil((t - s) / ORACLE_INTERVAL))
            h = (t - s) / pieces
            for i in range(pieces):
                M = M @ scipy.linalg.expm(h * j.generator(s + (i + 0.5) * h).toarray())
    elif method == "rk4":
        MT = np.eye(n)
        pieces = max(1, math.ceil((t - s) / step)) if t > s else 0
        h = (t - s) / pieces if pieces else 0.0
        r = s
        for _ in range(pieces):
            L1 = _generator(j, r).T
            Lm = _generator(j, r + h / 2).T
            L2 = _generator(j, r + h).T
            k1 = L1 @ MT
            k2 = Lm @ (MT + h / 2 * k1)
            k3 = Lm @ (MT + h / 2 * k2)
            k4 = L2 @ (MT + h * k3)
            MT = MT + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
            r += h
        M = np.asarray(MT).T
    else:
        raise ValueError(f"unknown method {method!r}")
    if M.min() < -1e-12:
        raise NumericalError(f"transition matrix has entry {M.min():.3g} < -1e-12")
    return TransitionMatrix(s, t, np.clip(M, 0.0, None))


# --------------------------------------------------------------------------- bridge


@dataclass(eq=False)
class BridgeSolution:
    """Tabulated harmonic function and bridge intensity of ``j`` from ``x`` to ``y``.

    ``scaled[n]`` is ``u_{times[n]}`` divided by its maximum and
    ``logscale[n]`` the log of that maximum, so ``log u = log(scaled) + logscale``.
    Instances behave as intensities (``rates``, ``total_rates``,
    ``dlog_rates_dt``) on ``[0, 1 - delta]``.
    """

    j: IntensitySpec
    x: str
    y: str
    times: np.ndarray
    scaled: np.ndarray
    logscale: np.ndarray
    step: float = RK4_STEP
    method: str = "rk4"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def graph(self) -> DirectedGraph:
        return self.j.graph

    @property
    def delta(self) -> float:
        return 1.0 - float(self.times[-1])

    @property
    def homogeneous(self) -> bool:
        return False

    @cached_property
    def log_u_table(self) -> np.ndarray:
        return np.log(self.scaled) + self.logscale[:, None]

    @cached_property
    def log_u0x(self) -> float:
        return float(self.log_u_table[0, self.graph.index[self.x]])

    @cached_property
    def phi_table(self) -> np.ndarray:
        """``phi_t(z) = log u_t(z) - log u_0(x)`` on the grid."""
        return self.log_u_table - self.log_u0x

    # -- evaluation off the grid ----------------------------------------------

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < -1e-15) or np.any(t > self.times[-1] + 1e-12):
            raise IntensityError(f"bridge intensity is tabulated on [0, {self.times[-1]:.6g}]; got t outside")
        return np.clip(t, 0.0, self.times[-1])

    def log_u(self, t) -> np.ndarray:
        """``log u_t`` for any ``t`` in the tabulated range.

        Off-grid values come from a partial backward solve, with the table's
        propagator, starting at the grid node above ``t``.  Array input returns one row per time.
        """
        t = self._check(t)
        if t.ndim:
            return self._log_u_many(t)
        return self._log_u_many(t[None])[0]

    def _log_u_many(self, ts: np.ndarray) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        out = np.empty((len(ts), self.graph.n_vertices))
        node = np.searchsorted(self.times, ts, side="left")
        node = np.minimum(node, len(self.times) - 1)
        on_grid = np.abs(self.times[node] - ts) <= 1e-15
        out[on_grid] = self.log_u_table[node[on_grid]]
        off = np.flatnonzero(~on_grid)
        if off.size:
            V = self.scaled[node[off]].T.copy()
            start = self.times[node[off]]
            V = _advance_many(self.j, V, start, ts[off], self.step, "series" if self.method == "expm" else self.method)
            if V.min() <= 0:
                raise NumericalError("harmonic function lost positivity between grid nodes")
            out[off] = np.log(V.T) + self.logscale[node[off], None]
        return out

    def phi(self, t) -> np.ndarray:
        return self.log_u(t) - self.log_u0x

    def stencil_spacing(self, t):
        return np.minimum(self.step, (1.0 - np.asarray(t, dtype=float)) / STENCIL_GRADING)

    def dphi_dt(self, t) -> np.ndarray:
        """Time derivative of ``phi`` by a 7-point difference stencil on ``log u``.

        Spacing is ``min(step, (1-t)/256)``; the stencil is central when it
        fits in the tabulated range and one-sided otherwise.
        """
        t = self._check(t)
        scalar = t.ndim == 0
        t = np.atleast_1d(t)
        pts, w = _stencil(t, self.stencil_spacing(t), 0.0, float(self.times[-1]))
        lu = self._log_u_many(pts.reshape(-1)).reshape(len(t), 7, -1)
        d = np.einsum("mk,mkn->mn", w, lu - self._log_u_many(t)[:, None, :])
        return d[0] if scalar else d

    # -- intensity interface ---------------------------------------------------

    def log_ratio(self, t) -> np.ndarray:
        """``phi_t(z') - phi_t(z)`` on every arc, i.e. ``log(j^{xy} / j)``."""
        lu = self.log_u(t)
        g = self.graph
        return lu[..., g.dst] - lu[..., g.src]

    def rates(self, t) -> np.ndarray:
        t = self._check(t)
        return self.j.rates(t) * np.exp(self.log_ratio(t))

    def arc_rate(self, i: int, t) -> np.ndarray:
        t = self._check(t)
        z, w = self.graph.src[i], self.graph.dst[i]
        lu = self.log_u(t.reshape(-1))
        return (self.j.arc_rate(i, t.reshape(-1)) * np.exp(lu[:, w] - lu[:, z])).reshape(t.shape)

    def total_rates(self, t) -> np.ndarray:
        r = self.rates(t)
        g = self.graph
        if r.ndim == 1:
            return np.bincount(g.src, weights=r, minlength=g.n_vertices)
        out = np.zeros(r.shape[:-1] + (g.n_vertices,))
        np.add.at(out.T, g.src, r.T)
        return out

    def dlog_rates_dt(self, t) -> np.ndarray:
        t = self._check(t)
        d = self.dphi_dt(t)
        g = self.graph
        return self.j.dlog_rates_dt(t) + d[..., g.dst] - d[..., g.src]

    def cumulative_total(self, vertex: int, a, b) -> np.ndarray:
        """``int_a^b`` of the bridge total rate at ``vertex``.

        Exact through ``d/dt log u = jbar - jbar^{xy}``.
        """
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        la = self.log_u(a.reshape(-1))[:, vertex].reshape(a.shape)
        lb = self.log_u(b.reshape(-1))[:, vertex].reshape(b.shape)
        return self.j.cumulative_total(vertex, a, b) - (lb - la)

    def gradient_function(self, t: float) -> ArcFunction:
        return ArcFunction(self.graph, self.log_ratio(t))

    def to_rows(self):
        """``(t, src, dst, bridge rate)`` for every grid time and arc."""
        g = self.graph
        for n, t in enumerate(self.times):
            lu = self.log_u_table[n]
            r = self.j.rates(float(t)) * np.exp(lu[g.dst] - lu[g.src])
            for (z, w), val in zip(g.arcs, r):
                yield float(t), z, w, float(val)


def solve_bridge(
    j: IntensitySpec,
    x: str,
    y: str,
    grid: int | np.ndarray = DEFAULT_GRID,
    delta: float = DEFAULT_DELTA,
    step: float = RK4_STEP,
    method: str = "auto",
) -> BridgeSolution:
    """Solve for the bridge of ``j`` from ``x`` to ``y``.

    ``grid`` is either a number of points (uniform on ``[0, 1 - delta]``) or an
    explicit increasing array starting at 0, in which case its last point
    fixes ``delta``.

    ``method`` selects the backward propagator: ``"rk4"`` (graded RK4,
    any ``j``), ``"series"`` (nonnegative exponential series, time-homogeneous
    ``j``; keeps full relative accuracy at vertices far from ``y``) or
    ``"expm"`` (dense matrix exponentials per row, an oracle).  ``"auto"``
    picks ``"series"`` for time-homogeneous ``j`` and ``"rk4"`` otherwise.
    """
    g = j.graph
    for v in (x, y):
        if v not in g.index:
            raise IntensityError(f"unknown vertex {v!r}")
    if np.ndim(grid) == 0:
        times = np.linspace(0.0, 1.0 - delta, int(grid))
    else:
        times = np.asarray(grid, dtype=float)
        delta = 1.0 - float(times[-1])
    if times[0] != 0.0 or np.any(np.diff(times) <= 0) or not 0.0 < delta < 1.0:
        raise ValueError("grid must increase from 0 to a last point inside (0, 1)")
    yi = g.index[y]
    T, n = len(times), g.n_vertices
    scaled = np.empty((T, n))
    logscale = np.empty(T)

    if method == "auto":
        method = "series" if j.homogeneous else "rk4"
    if method in ("expm", "series") and not j.homogeneous:
        raise ValueError(f"method {method!r} needs a time-homogeneous intensity")
    if method == "expm":
        L = _homogeneous_generator(j).toarray()
        for k, t in enumerate(times):
            col = scipy.linalg.expm((1.0 - t) * L)[:, yi]
            mx = col.max()
            scaled[k] = col / mx
            logscale[k] = math.log(mx)
    elif method in ("rk4", "series"):
        if method == "series":
            v = np.zeros(n)
            v[yi] = 1.0
            v = _series_apply(j, v, delta)
        else:
            v = _terminal_layer(j, yi, delta)
        ls = 0.0
        for k in range(T - 1, -1, -1):
            if k < T - 1:
                v = _advance(j, v, float(times[k + 1]), float(times[k]), step, method)
            mx = float(v.max())
            v = v / mx
            ls += math.log(mx)
            if v.min() < UNDERFLOW:
                z = g.vertices[int(v.argmin())]
                raise NumericalError(
                    f"u_t({z}) fell below {UNDERFLOW:g} (relative) at t={times[k]:.6g}; "
                    "shrink the graph or increase delta"
                )
            scaled[k] = v
            logscale[k] = ls
    else:
        raise ValueError(f"unknown method {method!r}")
    if scaled.min() <= 0:
        raise NumericalError("harmonic function is not positive on the grid")
    return BridgeSolution(j=j, x=x, y=y, times=times, scaled=scaled, logscale=logscale, step=step, method=method)


# --------------------------------------------------------------------------- diagnostics


def hjb_residual_of(potential, dpotential, j: IntensitySpec, times) -> float:
    """Max over ``times`` and vertices of ``|d/dt phi + sum_z' j (e^{dphi} - 1)|``.

    ``potential`` and ``dpotential`` map an array of ``m`` times to ``(m, n_vertices)``.
    """
    g = j.graph
    times = np.asarray(times, dtype=float)
    worst = 0.0
    for chunk in np.array_split(times, max(1, len(times) // 512)):
        phi = potential(chunk)
        jump = j.rates(chunk) * np.expm1(phi[:, g.dst] - phi[:, g.src])
        res = dpotential(chunk).copy()
        np.add.at(res.T, g.src, jump.T)
        worst = max(worst, float(np.abs(res).max()))
    return worst


def _stencil(t: np.ndarray, h, lo: float, hi: float) -> tuple[np.ndarray, np.ndarray]:
    """Evaluation times and first-derivative weights of a 7-point stencil.

    Central when ``[t - 3h, t + 3h]`` fits in ``[lo, hi]``, one-sided
    otherwise.  Weights are solved for the offsets actually realised in
    floating point: near ``t = 1`` the rates are large enough that rounding
    ``t + i h`` would otherwise dominate the error.
    """
    h = np.broadcast_to(np.asarray(h, dtype=float), t.shape)
    offs = np.tile(_CENTRAL, (len(t), 1)).astype(float)
    fwd = t - 3 * h < lo
    bwd = (t + 3 * h > hi) & ~fwd
    offs[fwd] = np.arange(0, 7)
    offs[bwd] = np.arange(-6, 1)
    pts = np.clip(t[:, None] + offs * h[:, None], lo, hi)
    real = pts - t[:, None]
    scale = h[:, None]
    vander = (real / scale)[:, None, :] ** np.arange(7)[None, :, None]
    rhs = np.zeros((len(t), 7))
    rhs[:, 1] = 1.0
    w = np.linalg.solve(vander, rhs[..., None])[..., 0] / scale
    return pts, w


def stencil_derivative(potential, t, h: float, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """7-point derivative of a vectorised ``potential`` at the times ``t``.

    One-sided stencils are used within ``3h`` of ``lo``/``hi``.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    pts, w = _stencil(t, h, lo, hi)
    vals = potential(pts.reshape(-1)).reshape(len(t), 7, -1)
    return np.einsum("mk,mkn->mn", w, vals - potential(t)[:, None, :])


def hjb_residual(solution: BridgeSolution, j: IntensitySpec | None = None, times=None) -> float:
    """HJB residual of a solved bridge on its grid (or on ``times``)."""
    j = solution.j if j is None else j
    times = solution.times if times is None else times
    return hjb_residual_of(solution.phi, solution.dphi_dt, j, times)


def gradient_check(solution: BridgeSolution, basis: CycleBasis, times=None) -> float:
    """Largest basis-cycle sum of ``log(j^{xy}/j)`` over the grid."""
    times = solution.times if times is None else times
    return max(cycle_residual(solution.gradient_function(float(t)), basis)[0] for t in times)


def bridge_marginal(solution: BridgeSolution, t: float, method: str = "expm") -> np.ndarray:
    """``P(X_t = . | bridge) = M_{0,t}(x, .) u_t(.) / u_0(x)``."""
    g = solution.graph
    M = transition_matrix(solution.j, 0.0, t, method=method).matrix
    row = M[g.index[solution.x]]
    return row * np.exp(solution.log_u(t) - solution.log_u0x)


def propagate_bridge(solution: BridgeSolution, t_end: float | None = None, step: float | None = None) -> np.ndarray:
    """Forward Kolmogorov equation under the bridge intensity, started at ``x``."""
    g = solution.graph
    t_end = float(solution.times[-1]) if t_end is None else t_end
    step = solution.step if step is None else step
    p = np.zeros(g.n_vertices)
    p[g.index[solution.x]] = 1.0
    pieces = max(1, math.ceil(t_end / step))
    h = t_end / pieces
    # rates at every RK4 stage time, evaluated in one batch
    stage_times = np.minimum(np.arange(2 * pieces + 1) * (h / 2), t_end)
    R = solution.rates(stage_times)

    def flow(r, q):
        out = np.zeros_like(q)
        np.add.at(out, g.dst, q[g.src] * r)
        out -= q * np.bincount(g.src, weights=r, minlength=g.n_vertices)
        return out

    for n in range(pieces):
        r0, rm, r1 = R[2 * n], R[2 * n + 1], R[2 * n + 2]
        k1 = flow(r0, p)
        k2 = flow(rm, p + h / 2 * k1)
        k3 = flow(rm, p + h / 2 * k2)
        k4 = flow(r1, p + h * k3)
        p = p + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return p


@dataclass(frozen=True)
class DivergenceReport:
    deltas: tuple[float, ...]
    integrals: dict[str, tuple[float, ...]]
    monotone_off_target: bool
    target_limit: float
    target_limit_printed: float
    target_gap: float


def boundary_divergence_check(solutions: list[BridgeSolution]) -> DivergenceReport:
    """Partial integrals ``int_0^{1-delta} jbar^{xy}(t, z) dt`` over a shrinking ``delta`` sequence.

    Uses ``d/dt phi = jbar - jbar^{xy}``, so the partial integral equals
    ``int jbar - (phi_{1-delta} - phi_0)``.  Off the target it grows without
    bound; at the target it converges to ``int_0^1 jbar(t, y) dt + log P(X_1=y | X_0=y)``.
    ``target_limit_printed`` is ``-log P(X_1=y | X_0=x) + int_0^1 jbar(t, y) dt``,
    kept for comparison.
    """
    sols = sorted(solutions, key=lambda s: -s.delta)
    ref = sols[0]
    g = ref.graph
    yi = g.index[ref.y]
    integrals: dict[str, list[float]] = {v: [] for v in g.vertices}
    for sol in sols:
        end = float(sol.times[-1])
        ints = np.array([float(sol.j.cumulative_total(i, 0.0, end)) for i in range(g.n_vertices)])
        part = ints - (sol.log_u_table[-1] - sol.log_u_table[0])
        for v, val in zip(g.vertices, part):
            integrals[v].append(float(val))
    monotone = all(
        all(b > a for a, b in zip(vals, vals[1:])) for v, vals in integrals.items() if v != ref.y
    )
    full_y = float(ref.j.cumulative_total(yi, 0.0, 1.0))
    M = transition_matrix(ref.j, 0.0, 1.0, method="expm" if ref.j.homogeneous else "rk4").matrix
    limit = full_y + math.log(M[yi, yi])
    printed = full_y - math.log(M[g.index[ref.x], yi])
    return DivergenceReport(
        deltas=tuple(s.delta for s in sols),
        integrals={v: tuple(vals) for v, vals in integrals.items()},
        monotone_off_target=monotone,
        target_limit=limit,
        target_limit_printed=printed,
        target_gap=abs(integrals[ref.y][-1] - limit),
    )


def poisson_tail_radius(rate_bound: float, eps: float) -> int:
    """Smallest ``r`` with ``P(N > r) < eps`` for ``N ~ Poisson(rate_bound)``."""
    if eps >= 1.0:
        return 0
    r = 0
    while stats.poisson.sf(r, rate_bound) >= eps:
        r += 1
    return r


def truncation_radius(j: IntensitySpec, x: str, y: str, eps: float) -> int:
    """Jump-count radius ``r``; truncate to the ball of radius ``r + dist(x, y)`` around ``{x, y}``."""
    return poisson_tail_radius(j.bound.value, eps)


def truncation_ball(graph: DirectedGraph, x: str, y: str, r: int) -> int:
    return r + graph.distance(x, y)
