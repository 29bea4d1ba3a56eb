"""Exact sampling of Markov jump paths and of computed bridges.

Randomness comes from Philox counter-based generators.  Paths are produced in
blocks of ``BLOCK`` and block ``b`` draws from the stream
``SeedSequence(seed, spawn_key=(b,))``, so a batch is a deterministic function
of ``(seed, n)`` whatever the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, NamedTuple

import numpy as np
from scipy import stats

from .bridge import BridgeSolution
from .errors import EmptyEventError, IntensityError, NumericalError
from .graph import DirectedGraph
from .intensity import IntensitySpec

BLOCK = 1 << 16
RESAMPLE_BUDGET = 100


def block_rng(seed: int, block: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def jump_cap(bound: float) -> int:
    """Hard limit on jumps per path; exceeding it is an error, never a truncation."""
    return int(math.ceil(10.0 * bound)) + 100


# --------------------------------------------------------------------------- path containers


@dataclass(frozen=True)
class JumpClock:
    """Jump instants ``T^t_1 < T^t_2 < ...`` after ``t`` (``inf`` past the last)."""

    t: float
    instants: tuple[float, ...]

    def __getitem__(self, k: int) -> float:
        if k < 1:
            raise IndexError("jump instants are numbered from 1")
        return self.instants[k - 1] if k <= len(self.instants) else math.inf


@dataclass(frozen=True)
class PathSample:
    """Piecewise-constant path: start vertex plus ``(jump time, destination)`` pairs."""

    x0: str
    jumps: tuple[tuple[float, str], ...]

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.jumps)

    @property
    def states(self) -> tuple[str, ...]:
        return (self.x0,) + tuple(z for _, z in self.jumps)

    @property
    def end(self) -> str:
        return self.states[-1]

    def state_at(self, t: float) -> str:
        state = self.x0
        for s, z in self.jumps:
            if s > t:
                break
            state = z
        return state

    def clock(self, t: float) -> JumpClock:
        return JumpClock(t, tuple(s for s in self.times if s > t))

    def validate(self, graph: DirectedGraph, t_start: float = 0.0, t_end: float = 1.0) -> None:
        ts = self.times
        if any(not t_start < s < t_end for s in ts):
            raise NumericalError("jump time outside the sampling window")
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise NumericalError("jump times are not strictly increasing")
        st = self.states
        for z, w in zip(st, st[1:]):
            if not graph.has_arc(z, w):
                raise NumericalError(f"path jumps along {z}->{w}, which is not an arc")

    def to_dict(self) -> dict:
        return {"x0": self.x0, "jumps": [[t, z] for t, z in self.jumps]}


class PathBatch:
    """Many paths in flat arrays (CSR layout: jumps of path ``i`` are ``ptr[i]:ptr[i+1]``)."""

    def __init__(self, graph: DirectedGraph, x0: np.ndarray, ptr: np.ndarray, jt: np.ndarray, jd: np.ndarray,
                 t_start: float, t_end: float):
        self.graph = graph
        self.x0 = np.asarray(x0, dtype=np.intp)
        self.ptr = np.asarray(ptr, dtype=np.intp)
        self.jt = np.asarray(jt, dtype=float)
        self.jd = np.asarray(jd, dtype=np.intp)
        self.t_start = t_start
        self.t_end = t_end

    def __len__(self) -> int:
        return len(self.x0)

    def __getitem__(self, i: int) -> PathSample:
        a, b = self.ptr[i], self.ptr[i + 1]
        v = self.graph.vertices
        return PathSample(v[self.x0[i]], tuple((float(t), v[d]) for t, d in zip(self.jt[a:b], self.jd[a:b])))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @cached_property
    def n_jumps(self) -> np.ndarray:
        return np.diff(self.ptr)

    def _count_le(self, t: float) -> np.ndarray:
        c = np.concatenate([[0], np.cumsum(self.jt <= t)])
        return c[self.ptr[1:]] - c[self.ptr[:-1]]

    def state_at(self, t: float) -> np.ndarray:
        """Vertex index of every path at time ``t``."""
        k = self._count_le(t)
        out = self.x0.copy()
        has = k > 0
        out[has] = self.jd[self.ptr[:-1][has] + k[has] - 1]
        return out

    @property
    def end_states(self) -> np.ndarray:
        return self.state_at(self.t_end)

    def window(self, t: float, m: int) -> tuple[np.ndarray, np.ndarray]:
        """First ``m`` jump instants after ``t`` and their destinations.

        Returns ``(T, D)`` of shape ``(n, m)``; missing jumps are ``inf`` / ``-1``.
        """
        first = self.ptr[:-1] + self._count_le(t)
        idx = first[:, None] + np.arange(m)[None, :]
        ok = idx < self.ptr[1:, None]
        safe = np.where(ok, idx, 0)
        T = np.where(ok, self.jt[safe] if len(self.jt) else 0.0, np.inf)
        D = np.where(ok, self.jd[safe] if len(self.jd) else 0, -1)
        return T, D

    @classmethod
    def concatenate(cls, batches: list["PathBatch"]) -> "PathBatch":
        b0 = batches[0]
        offs = np.cumsum([0] + [len(b.jt) for b in batches[:-1]])
        ptr = np.concatenate([b.ptr[:-1] + o for b, o in zip(batches, offs)] + [[sum(len(b.jt) for b in batches)]])
        return cls(
            b0.graph,
            np.concatenate([b.x0 for b in batches]),
            ptr,
            np.concatenate([b.jt for b in batches]),
            np.concatenate([b.jd for b in batches]),
            b0.t_start,
            b0.t_end,
        )


def _assemble(graph, x0, rec_path, rec_t, rec_d, t_start, t_end) -> PathBatch:
    n = len(x0)
    if rec_path:
        p = np.concatenate(rec_path)
        t = np.concatenate(rec_t)
        d = np.concatenate(rec_d)
        order = np.lexsort((t, p))
        p, t, d = p[order], t[order], d[order]
    else:
        p = np.zeros(0, dtype=np.intp)
        t = np.zeros(0)
        d = np.zeros(0, dtype=np.intp)
    ptr = np.concatenate([[0], np.cumsum(np.bincount(p, minlength=n))])
    return PathBatch(graph, x0, ptr, t, d, t_start, t_end)


# --------------------------------------------------------------------------- routing


class _Router:
    """Chooses the arc taken out of each current vertex given per-arc rates."""

    def __init__(self, graph: DirectedGraph):
        self.graph = graph
        deg = np.bincount(graph.src, minlength=graph.n_vertices)
        start = np.concatenate([[0], np.cumsum(deg)])
        width = int(deg.max())
        slots = start[:-1, None] + np.arange(width)[None, :]
        # padding points at a sentinel column that always carries zero rate
        self.table = np.where(np.arange(width)[None, :] < deg[:, None], slots, graph.n_arcs)

    def choose(self, states: np.ndarray, rates: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Arc index for each row; ``rates`` is ``(m, n_arcs)`` or ``(n_arcs,)``."""
        cols = self.table[states]
        if rates.ndim == 1:
            ext = np.append(rates, 0.0)
            w = ext[cols]
        else:
            ext = np.concatenate([rates, np.zeros((len(rates), 1))], axis=1)
            w = np.take_along_axis(ext, cols, axis=1)
        cum = np.cumsum(w, axis=1)
        pick = (cum < (u * cum[:, -1])[:, None]).sum(axis=1)
        pick = np.minimum(pick, (w > 0).sum(axis=1) - 1)
        return cols[np.arange(len(states)), pick]


# --------------------------------------------------------------------------- free walk


def _simulate_block(k: IntensitySpec, starts: np.ndarray, t0: float, t1: float, rng: np.random.Generator,
                    method: str) -> PathBatch:
    g = k.graph
    router = _Router(g)
    cap = jump_cap(k.bound.value)
    m = len(starts)
    state = starts.copy()
    t = np.full(m, t0)
    count = np.zeros(m, dtype=np.intp)
    alive = np.arange(m)
    rec_p, rec_t, rec_d = [], [], []
    if method == "race":
        kbar = k.constant_total_rates
        rates = k.rates(0.0)
    bound = k.bound.value
    while alive.size:
        s = state[alive]
        if method == "race":
            t_new = t[alive] + rng.exponential(size=alive.size) / kbar[s]
            ok = t_new < t1
            idx, tj = alive[ok], t_new[ok]
            arc = router.choose(s[ok], rates, rng.random(idx.size))
            alive = idx
        else:
            t_new = t[alive] + rng.exponential(size=alive.size) / bound
            ok = t_new < t1
            idx, tj, sj = alive[ok], t_new[ok], s[ok]
            r = k.rates(tj) if tj.size else np.zeros((0, g.n_arcs))
            tot = np.take_along_axis(np.concatenate([r, np.zeros((len(r), 1))], axis=1), router.table[sj], axis=1).sum(axis=1)
            if np.any(tot > bound * (1 + 1e-9)):
                raise NumericalError("total rate exceeds the stored rate bound; thinning would be biased")
            accept = rng.random(idx.size) * bound < tot
            t[idx] = tj
            alive = idx
            idx, tj = idx[accept], tj[accept]
            arc = router.choose(sj[accept], r[accept], rng.random(idx.size))
        state[idx] = g.dst[arc]
        t[idx] = tj
        count[idx] += 1
        if idx.size and count[idx].max() > cap:
            raise NumericalError(f"path exceeded the jump cap of {cap}")
        rec_p.append(idx)
        rec_t.append(tj)
        rec_d.append(g.dst[arc])
    return _assemble(g, starts, rec_p, rec_t, rec_d, t0, t1)


def _resolve_method(k: IntensitySpec, method: str) -> str:
    if method == "auto":
        return "race" if k.homogeneous else "thinning"
    if method == "race" and not k.homogeneous:
        raise IntensityError("exponential races need a time-homogeneous intensity")
    if method not in ("race", "thinning"):
        raise ValueError(f"unknown sampling method {method!r}")
    return method


def _map_blocks(fn, n: int, seed: int, threads: int) -> list:
    """Apply ``fn(first_index, size, rng)`` to each block, in block order."""
    items = [(b, b * BLOCK, min(BLOCK, n - b * BLOCK)) for b in range((n + BLOCK - 1) // BLOCK)]

    def one(item):
        b, first, size = item
        return fn(first, size, block_rng(seed, b))

    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, items))
    return [one(item) for item in items]


def sample_paths(
    k: IntensitySpec,
    x0,
    n: int,
    seed: int,
    t_start: float = 0.0,
    t_end: float = 1.0,
    method: str = "auto",
    threads: int = 1,
) -> PathBatch:
    """``n`` independent paths of the walk with intensity ``k`` on ``[t_start, t_end]``.

    ``x0`` is a vertex or an array of ``n`` vertex indices.  ``method`` is
    ``"race"`` (exponential races, time-homogeneous only), ``"thinning"``
    (proposals at the rate bound, accepted with probability
    ``kbar(s, z) / bound``) or ``"auto"``.
    """
    g = k.graph
    if not 0.0 <= t_start < t_end <= 1.0:
        raise IntensityError(f"need 0 <= t_start < t_end <= 1, got [{t_start}, {t_end}]")
    method = _resolve_method(k, method)
    if isinstance(x0, str):
        if x0 not in g.index:
            raise IntensityError(f"unknown vertex {x0!r}")
        starts = np.full(n, g.index[x0], dtype=np.intp)
    else:
        starts = np.asarray(x0, dtype=np.intp)
        if len(starts) != n:
            raise ValueError("need one start per path")
    parts = _map_blocks(
        lambda first, size, rng: _simulate_block(k, starts[first : first + size], t_start, t_end, rng, method),
        n, seed, threads,
    )
    return PathBatch.concatenate(parts) if len(parts) > 1 else parts[0]


def sample_path(k: IntensitySpec, x0: str, seed: int, t_start: float = 0.0, t_end: float = 1.0,
                method: str = "auto") -> PathSample:
    """One path; identical to ``sample_paths(k, x0, 1, seed, ...)[0]``."""
    return sample_paths(k, x0, 1, seed, t_start, t_end, method)[0]


# --------------------------------------------------------------------------- bridges


class _HazardTable:
    """Integrated exit hazard of the bridge, ``H_z(t) = Lambda_z(t) - log u_t(z)``.

    ``Lambda_z`` integrates the reference total rate, and ``dH/dt`` is the
    bridge total rate, so the next jump out of ``z`` after ``s`` happens at
    ``H_z^{-1}(H_z(s) + E)`` with ``E ~ Exp(1)``.  The inverse is bracketed on
    the grid, started by cubic Hermite interpolation and finished by Newton
    steps using exact off-grid values.
    """

    def __init__(self, sol: BridgeSolution):
        self.sol = sol
        j = sol.j
        g = sol.graph
        times = sol.times
        self.times = times
        if j.homogeneous:
            lam = times[:, None] * j.constant_total_rates[None, :]
        else:
            pieces = np.column_stack([j.cumulative_total(v, times[:-1], times[1:]) for v in range(g.n_vertices)])
            lam = np.vstack([np.zeros(g.n_vertices), np.cumsum(pieces, axis=0)])
        self.lam = lam
        self.H = lam - sol.log_u_table
        self.dH = sol.total_rates(times)

    def lam_at(self, t: np.ndarray, z: np.ndarray) -> np.ndarray:
        j = self.sol.j
        if j.homogeneous:
            return t * j.constant_total_rates[z]
        k = np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, len(self.times) - 1)
        out = self.lam[k, z].copy()
        for v in np.unique(z):
            sel = z == v
            out[sel] += j.cumulative_total(int(v), self.times[k[sel]], t[sel])
        return out

    def invert(self, z: np.ndarray, target: np.ndarray, newton: int = 3) -> np.ndarray:
        """Times ``s`` with ``H_z(s) = target`` (caller guarantees a root inside the grid)."""
        times = self.times
        k = np.empty(len(z), dtype=np.intp)
        for v in np.unique(z):
            sel = z == v
            k[sel] = np.searchsorted(self.H[:, v], target[sel], side="right") - 1
        k = np.clip(k, 0, len(times) - 2)
        t0, t1 = times[k], times[k + 1]
        h0, h1 = self.H[k, z], self.H[k + 1, z]
        d0, d1 = self.dH[k, z], self.dH[k + 1, z]
        # cubic Hermite in time, inverted by bisection on the monotone cubic
        lo, hi = np.zeros(len(z)), np.ones(len(z))
        dt = t1 - t0
        for _ in range(50):
            x = 0.5 * (lo + hi)
            x2, x3 = x * x, x * x * x
            val = (2 * x3 - 3 * x2 + 1) * h0 + (x3 - 2 * x2 + x) * dt * d0 + (-2 * x3 + 3 * x2) * h1 + (x3 - x2) * dt * d1
            below = val < target
            lo = np.where(below, x, lo)
            hi = np.where(below, hi, x)
        s = t0 + 0.5 * (lo + hi) * dt
        for _ in range(newton):
            lu = self.sol._log_u_many(s)
            H = self.lam_at(s, z) - lu[np.arange(len(z)), z]
            rates = self.sol.j.rates(s) * np.exp(lu[:, self.sol.graph.dst] - lu[:, self.sol.graph.src])
            tot = np.zeros((len(s), self.sol.graph.n_vertices))
            np.add.at(tot.T, self.sol.graph.src, rates.T)
            s = np.clip(s - (H - target) / tot[np.arange(len(z)), z], t0, t1)
        return s


def _bridge_block(sol: BridgeSolution, table: _HazardTable, size: int, rng: np.random.Generator) -> PathBatch:
    g = sol.graph
    router = _Router(g)
    xi, yi = g.index[sol.x], g.index[sol.y]
    end = float(sol.times[-1])
    H_end = table.H[-1]
    cap = jump_cap(float(table.dH.max()))
    done_p, done_t, done_d = [], [], []
    pending = np.arange(size)
    attempts = np.zeros(size, dtype=np.intp)
    while pending.size:
        attempts[pending] += 1
        if attempts[pending].max() > RESAMPLE_BUDGET:
            raise NumericalError(f"bridge resample budget of {RESAMPLE_BUDGET} exceeded; increase delta")
        m = pending.size
        state = np.full(m, xi)
        hcur = np.full(m, table.H[0, xi])
        count = np.zeros(m, dtype=np.intp)
        rec_p, rec_t, rec_d = [], [], []
        alive = np.arange(m)
        while alive.size:
            z = state[alive]
            target = hcur[alive] + rng.exponential(size=alive.size)
            jumps = target < H_end[z]
            idx = alive[jumps]
            if idx.size:
                s = table.invert(z[jumps], target[jumps])
                lu = sol._log_u_many(s)
                r = sol.j.rates(s) * np.exp(lu[:, g.dst] - lu[:, g.src])
                arc = router.choose(z[jumps], r, rng.random(idx.size))
                dst = g.dst[arc]
                state[idx] = dst
                hcur[idx] = table.lam_at(s, dst) - lu[np.arange(idx.size), dst]
                count[idx] += 1
                if count[idx].max() > cap:
                    raise NumericalError(f"bridge path exceeded the jump cap of {cap}")
                rec_p.append(idx)
                rec_t.append(s)
                rec_d.append(dst)
            alive = idx
        ok = state == yi
        keep = np.flatnonzero(ok)
        if rec_p and keep.size:
            p = np.concatenate(rec_p)
            sel = ok[p]
            done_p.append(pending[p[sel]])
            done_t.append(np.concatenate(rec_t)[sel])
            done_d.append(np.concatenate(rec_d)[sel])
        pending = pending[~ok]
    return _assemble(g, np.full(size, xi), done_p, done_t, done_d, 0.0, end)


def sample_bridges(sol: BridgeSolution, n: int, seed: int, threads: int = 1) -> PathBatch:
    """``n`` paths of the bridge from ``sol.x`` to ``sol.y``.

    Paths follow the bridge intensity exactly on ``[0, 1 - delta]``.  A path
    that is not at ``y`` by then is resampled (budget ``RESAMPLE_BUDGET``);
    the others make no further jump, so every returned path ends at ``y``.
    """
    table = _HazardTable(sol)
    parts = _map_blocks(lambda first, size, rng: _bridge_block(sol, table, size, rng), n, seed, threads)
    batch = PathBatch.concatenate(parts) if len(parts) > 1 else parts[0]
    batch.t_end = 1.0
    return batch


def sample_bridge(sol: BridgeSolution, seed: int) -> PathSample:
    return sample_bridges(sol, 1, seed)[0]


# --------------------------------------------------------------------------- conditional frequencies


class WindowView(NamedTuple):
    """What an event may look at: ``X_t``, ``X_{t+h}`` and the next ``m`` jumps after ``t``."""

    t: float
    h: float
    x_t: np.ndarray
    x_th: np.ndarray
    times: np.ndarray
    dests: np.ndarray


Event = Callable[[WindowView], np.ndarray]


@dataclass(frozen=True)
class ConditionalEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    successes: int
    trials: int
    confidence: float = 0.95

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "ci": [self.ci_low, self.ci_high],
            "successes": self.successes,
            "trials": self.trials,
            "confidence": self.confidence,
        }


def wilson(successes: int, trials: int, confidence: float = 0.95) -> ConditionalEstimate:
    if trials == 0:
        raise EmptyEventError("no sample satisfies the conditioning event")
    ci = stats.binomtest(successes, trials).proportion_ci(confidence_level=confidence, method="wilson")
    return ConditionalEstimate(successes / trials, float(ci.low), float(ci.high), successes, trials, confidence)


def window_view(batch: PathBatch, t: float, h: float, m: int) -> WindowView:
    T, D = batch.window(t, m)
    return WindowView(t, h, batch.state_at(t), batch.state_at(t + h), T, D)


def empirical_conditionals(batch: PathBatch, t: float, h: float, event: Event, given: Event | None = None,
                           m: int = 2, confidence: float = 0.95) -> ConditionalEstimate:
    """Frequency of ``event`` among the paths satisfying ``given``, with a Wilson interval."""
    view = window_view(batch, t, h, m)
    cond = np.ones(len(batch), dtype=bool) if given is None else np.asarray(given(view), dtype=bool)
    hit = np.asarray(event(view), dtype=bool) & cond
    return wilson(int(hit.sum()), int(cond.sum()), confidence)


def arc_events(graph: DirectedGraph, z: str, w: str, tau: float = 0.5) -> tuple[Event, Event]:
    """``(event, given)`` for ``T_1 <= t + tau h`` given ``X_t = z, X_{t+h} = w, T_2 > t + h``."""
    zi, wi = graph.index[z], graph.index[w]

    def given(v: WindowView):
        return (v.x_t == zi) & (v.x_th == wi) & (v.times[:, 1] > v.t + v.h)

    def event(v: WindowView):
        return v.times[:, 0] <= v.t + tau * v.h

    return event, given


def cycle_events(graph: DirectedGraph, walk) -> tuple[Event, Event]:
    """``(event, given)`` for "the jumps in ``[t, t+h]`` trace exactly ``walk``" given ``X_t = X_{t+h}`` = start.

    Use with ``m = len(walk) + 1``.
    """
    verts = [graph.index[v] for v in walk.vertices]
    n = len(verts) - 1

    def given(v: WindowView):
        return (v.x_t == verts[0]) & (v.x_th == verts[0])

    def event(v: WindowView):
        ok = (v.times[:, n - 1] < v.t + v.h) & (v.times[:, n] > v.t + v.h)
        for i in range(n):
            ok &= v.dests[:, i] == verts[i + 1]
        return ok

    return event, given
