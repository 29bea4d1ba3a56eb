import math

import numpy as np
import pytest
from scipy import stats

import oracles
from recip.bridge import bridge_marginal, solve_bridge, transition_matrix
from recip.errors import EmptyEventError, IntensityError
from recip.intensity import ClosedForm, make_intensity
from recip.presets import birth_death, cayley_zd, hypercube, triangle, triangular_lattice_family, two_cycle
from recip.simulate import (
    JumpClock,
    PathSample,
    arc_events,
    empirical_conditionals,
    jump_cap,
    sample_bridge,
    sample_bridges,
    sample_path,
    sample_paths,
    wilson,
)


def test_mean_jump_count_two_cycle():
    b = sample_paths(two_cycle().intensity, "a", 100_000, seed=1)
    sigma = 1 / math.sqrt(100_000)
    assert abs(b.n_jumps.mean() - 1.0) < 3 * sigma


def test_first_jump_exponential():
    k = two_cycle(2.5, 1.0).intensity
    b = sample_paths(k, "a", 20_000, seed=2, t_end=1.0)
    T, _ = b.window(0.0, 1)
    first = T[:, 0]
    # censor at 1: compare the conditional law on [0, 1]
    seen = first[np.isfinite(first)]
    cdf = lambda x: (1 - np.exp(-2.5 * x)) / (1 - math.exp(-2.5))
    assert stats.kstest(seen, cdf).pvalue > 0.01
    assert abs(np.isinf(first).mean() - math.exp(-2.5)) < 4 * math.sqrt(math.exp(-2.5) / 20_000)


def test_same_seed_same_path():
    j = triangle().intensity
    assert sample_path(j, "a", 9) == sample_path(j, "a", 9)
    assert sample_path(j, "a", 9) == sample_paths(j, "a", 1, 9)[0]
    a = sample_paths(j, "b", 150_000, 3)
    b = sample_paths(j, "b", 150_000, 3, threads=4)
    np.testing.assert_array_equal(a.jt, b.jt)
    np.testing.assert_array_equal(a.jd, b.jd)


def test_samples_respect_invariants():
    p = hypercube(3)
    b = sample_paths(p.intensity, "000", 10_000, seed=4)
    for path in b:
        path.validate(p.graph)


def test_endpoint_law_matches_transition_matrix():
    p = triangle()
    n = 100_000
    b = sample_paths(p.intensity, "a", n, seed=5)
    M = transition_matrix(p.intensity, 0.0, 1.0, method="expm").matrix[0]
    counts = np.bincount(b.end_states, minlength=3) / n
    assert np.all(np.abs(counts - M) < 3 * np.sqrt(M * (1 - M) / n))


@pytest.mark.parametrize(
    "preset",
    [
        hypercube(6),
        birth_death(1.0, 2.0, 20),
        cayley_zd(2, [(1.3, 0.4), (2.0, 0.9)], L=8),
        triangular_lattice_family([(2.0, 0.5), (1.5, 1.0), (0.7, 3.0)]),
    ],
    ids=lambda p: p.name,
)
def test_endpoint_law_on_larger_presets(preset):
    # many states at once: chi-square plus a Bonferroni band instead of a flat 3 sigma
    n = 100_000
    M = transition_matrix(preset.intensity, 0.0, 1.0, method="expm").matrix[preset.graph.index[preset.root]]
    f = np.bincount(sample_paths(preset.intensity, preset.root, n, seed=31).end_states, minlength=len(M))
    live = M * n > 5
    chi2 = (((f - n * M) ** 2)[live] / (n * M[live])).sum()
    assert stats.chi2.sf(chi2, live.sum() - 1) > 1e-3
    z = np.abs(f / n - M)[live] / np.sqrt(M * (1 - M) / n)[live]
    assert z.max() < stats.norm.isf(1e-3 / (2 * live.sum()))
    assert f[M * n < 1e-6].sum() == 0


def test_race_and_thinning_agree():
    j = hypercube(2).intensity
    a = np.bincount(sample_paths(j, "00", 50_000, 6, method="race").end_states, minlength=4)
    b = np.bincount(sample_paths(j, "00", 50_000, 7, method="thinning").end_states, minlength=4)
    assert stats.chi2_contingency(np.vstack([a, b]))[1] > 0.01


def test_time_dependent_thinning_endpoint():
    g = two_cycle().graph
    j = make_intensity(g, {("a", "b"): ClosedForm.of("exp", scale=1.0, rate=1.0), ("b", "a"): 0.5})
    n = 100_000
    b = sample_paths(j, "a", n, seed=8)
    fn = lambda t: {("a", "b"): math.exp(t), ("b", "a"): 0.5}
    M = oracles.transition_inhomogeneous(["a", "b"], fn, 0.0, 1.0, interval=1 / 2048)[0]
    p = np.bincount(b.end_states, minlength=2)[0] / n
    assert abs(p - M[0]) < 3 * math.sqrt(M[0] * (1 - M[0]) / n)


def test_race_rejects_time_dependent():
    g = two_cycle().graph
    j = make_intensity(g, {("a", "b"): ClosedForm.of("exp", scale=1.0, rate=1.0), ("b", "a"): 0.5})
    with pytest.raises(IntensityError):
        sample_paths(j, "a", 10, 1, method="race")


def test_jump_cap():
    assert jump_cap(2.0) == 120


def test_jump_clock():
    path = PathSample("a", ((0.2, "b"), (0.5, "a"), (0.7, "c")))
    clock = path.clock(0.3)
    assert clock[1] == 0.5 and clock[2] == 0.7 and clock[3] == math.inf
    assert JumpClock(0.0, ())[1] == math.inf
    assert path.state_at(0.6) == "a" and path.end == "c"


def test_bridge_endpoint_and_parity():
    p = hypercube(2)
    sol = solve_bridge(p.intensity, "00", "00", grid=1025)
    b = sample_bridges(sol, 10_000, seed=9)
    assert (b.end_states == p.graph.index["00"]).mean() >= 0.999
    assert np.all(b.n_jumps % 2 == 0)
    sample_bridge(sol, 3).validate(p.graph)


def test_bridge_mid_marginal():
    p = triangle()
    sol = solve_bridge(p.intensity, "a", "b", grid=1025)
    n = 20_000
    b = sample_bridges(sol, n, seed=10)
    want = bridge_marginal(sol, 0.5)
    got = np.bincount(b.state_at(0.5), minlength=3) / n
    assert np.all(np.abs(got - want) < 3 * np.sqrt(want * (1 - want) / n))


def test_wilson_interval():
    est = wilson(30, 100)
    assert est.ci_low < 0.3 < est.ci_high
    with pytest.raises(EmptyEventError):
        wilson(0, 0)


def test_full_space_has_probability_one():
    b = sample_paths(triangle().intensity, "a", 2000, seed=11)
    est = empirical_conditionals(b, 0.2, 0.1, lambda v: np.ones(len(v.x_t), bool))
    assert est.estimate == 1.0


def test_constant_rate_arc_conditional_is_half():
    k = two_cycle().intensity
    b = sample_paths(k, "a", 100_000, seed=12, t_start=0.3, t_end=0.4)
    ev, given = arc_events(k.graph, "a", "b")
    est = empirical_conditionals(b, 0.3, 0.1, ev, given)
    assert est.covers(0.5)


def test_ci_width_shrinks_like_root_n():
    k = two_cycle().intensity
    ev, given = arc_events(k.graph, "a", "b")
    widths = []
    for n in (10_000, 160_000):
        b = sample_paths(k, "a", n, seed=13, t_start=0.3, t_end=0.4)
        e = empirical_conditionals(b, 0.3, 0.1, ev, given)
        widths.append(e.ci_high - e.ci_low)
    assert widths[0] / widths[1] == pytest.approx(4.0, rel=0.1)


def test_empty_conditioning_raises():
    k = two_cycle().intensity
    b = sample_paths(k, "a", 1000, seed=14, t_start=0.3, t_end=0.31)
    with pytest.raises(EmptyEventError):
        empirical_conditionals(b, 0.3, 0.01, lambda v: v.x_t >= 0, lambda v: v.x_t < 0)
