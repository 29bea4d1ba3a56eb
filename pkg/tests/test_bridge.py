import math

import numpy as np
import pytest

import oracles
from recip.bridge import (
    boundary_divergence_check,
    bridge_marginal,
    gradient_check,
    hjb_residual,
    hjb_residual_of,
    poisson_tail_radius,
    propagate_bridge,
    solve_bridge,
    stencil_derivative,
    transition_matrix,
    truncation_ball,
    truncation_radius,
)
from recip.errors import IntensityError
from recip.graph import reconstruct_potential
from recip.intensity import ClosedForm, make_intensity
from recip.presets import birth_death, hypercube, hypercube_potential, triangle, two_cycle


def rate_dict(j):
    r = j.rates(0.0)
    return {a: float(r[i]) for i, a in enumerate(j.graph.arcs)}


def test_transition_identity():
    M = transition_matrix(triangle().intensity, 0.4, 0.4).matrix
    np.testing.assert_array_equal(M, np.eye(3))


def test_two_state_closed_form():
    M = transition_matrix(two_cycle().intensity, 0.0, 1.0, method="rk4").matrix
    assert M[0, 0] == pytest.approx((1 + math.exp(-2)) / 2, abs=1e-12)
    assert M[0, 1] == pytest.approx((1 - math.exp(-2)) / 2, abs=1e-12)


def test_rk4_matches_expm_on_triangle():
    j = triangle().intensity
    a = transition_matrix(j, 0.1, 0.9, method="rk4").matrix
    b = transition_matrix(j, 0.1, 0.9, method="expm").matrix
    assert np.abs(a - b).max() < 1e-9
    np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-10)


def test_inhomogeneous_transition_against_oracle():
    g = two_cycle().graph
    j = make_intensity(g, {("a", "b"): ClosedForm.of("exp", scale=1.0, rate=0.8), ("b", "a"): 2.0})
    fn = lambda t: {("a", "b"): math.exp(0.8 * t), ("b", "a"): 2.0}
    want = oracles.transition_inhomogeneous(list(g.vertices), fn, 0.0, 1.0, interval=1 / 4096)
    got = transition_matrix(j, 0.0, 1.0).matrix
    assert np.abs(got - want).max() < 1e-7


@pytest.mark.parametrize("d", [1, 2, 3])
def test_hypercube_bridge_closed_form(d):
    p = hypercube(d)
    y = "1" * d
    sol = solve_bridge(p.intensity, "0" * d, y)
    ts = np.linspace(0.0, 0.99, 41)
    got = sol.rates(ts)
    for n, t in enumerate(ts):
        for i, (z, w) in enumerate(p.graph.arcs):
            k = next(k for k in range(d) if z[k] != w[k])
            want = oracles.hypercube_rate(t, z[k] != y[k])
            assert got[n, i] == pytest.approx(want, rel=1e-9)


def test_triangle_bridge_against_oracle():
    p = triangle()
    sol = solve_bridge(p.intensity, "a", "b")
    # frozen from tests/oracles.py bridge_rates at t = 1/2
    want = {("a", "b"): 1.8616507503666049, ("b", "a"): 0.5371576810543414, ("a", "c"): 1.0, ("c", "b"): 1.8616507503666049}
    r = sol.rates(0.5)
    for arc, val in want.items():
        assert r[p.graph.arc_index[arc]] == pytest.approx(val, rel=1e-12)
    ts = np.linspace(0, 0.995, 50)
    assert p.extras["bridge_identities"](sol, ts) < 1e-11


def test_series_keeps_relative_accuracy_far_from_target():
    # u falls to ~e^-48 at the far end; double-precision expm cannot resolve
    # that, so the reference is a 30-digit matrix exponential
    import mpmath

    j = birth_death(1.2, 0.9, 10).intensity
    sol = solve_bridge(j, "2", "4", grid=257, method="series")
    Q = oracles.generator(list(j.graph.vertices), rate_dict(j))
    with mpmath.workdps(30):
        for n in (0, 128, 250, 256):
            t = float(sol.times[n])
            E = mpmath.expm(mpmath.matrix(Q.tolist()) * mpmath.mpf(1.0 - t))
            want = np.array([float(mpmath.log(E[i, 4])) for i in range(11)])
            assert np.abs(sol.log_u_table[n] - want).max() < 1e-11


def test_methods_agree():
    j = birth_death(1.2, 0.9, 10).intensity
    a = solve_bridge(j, "2", "4", grid=257, method="series")
    b = solve_bridge(j, "2", "4", grid=257, method="expm")
    c = solve_bridge(j, "2", "4", grid=257, method="rk4")
    ua, ub, uc = (np.exp(s.log_u_table) for s in (a, b, c))
    assert np.abs(ua - ub).max() < 1e-13
    assert np.abs(uc - ub).max() < 1e-9


def test_time_dependent_needs_rk4():
    g = two_cycle().graph
    j = make_intensity(g, {("a", "b"): ClosedForm.of("exp", scale=1.0, rate=0.5), ("b", "a"): 1.0})
    with pytest.raises(ValueError):
        solve_bridge(j, "a", "b", method="series")
    sol = solve_bridge(j, "a", "b", grid=513)
    assert sol.method == "rk4"
    assert hjb_residual(sol, times=sol.times[::16]) < 1e-6


def test_unknown_vertex():
    with pytest.raises(IntensityError):
        solve_bridge(triangle().intensity, "a", "q")


def test_u_in_unit_interval():
    sol = solve_bridge(hypercube(3).intensity, "000", "110", grid=513)
    lu = sol.log_u_table
    assert np.all(lu <= 1e-12)
    assert np.all(np.isfinite(lu))


def test_hjb_residuals():
    sol = solve_bridge(triangle().intensity, "a", "c")
    assert hjb_residual(sol) < 1e-6
    bumped = lambda t: sol.phi(t) + np.array([0.1, 0.0, 0.0])
    assert hjb_residual_of(bumped, sol.dphi_dt, sol.j, sol.times[::64]) > 0.01


def test_closed_form_potential_residual():
    p = hypercube(2)
    g, y = p.graph, "11"
    pot = lambda t: hypercube_potential(g, t, y)
    dpot = p.extras["potential_dt"]
    ts = np.linspace(0, 0.99, 1025)
    assert hjb_residual_of(pot, lambda t: dpot(t, y), p.intensity, ts) < 1e-12
    inner = ts[1:-1]
    fd = stencil_derivative(pot, inner, np.minimum(1e-3, (1 - inner) / 256))
    exact = dpot(inner, y)
    assert np.abs(fd / exact - 1).max() < 1e-9


def test_gradient_and_potential():
    p = hypercube(2)
    sol = solve_bridge(p.intensity, "00", "11", grid=513)
    assert gradient_check(sol, p.basis) < 1e-12
    for t in (0.1, 0.5, 0.9):
        psi = reconstruct_potential(sol.gradient_function(t), p.graph, "00")
        ref = hypercube_potential(p.graph, t, "11")[0]
        ref = ref - ref[p.graph.index["00"]]
        for v, i in p.graph.index.items():
            assert psi[v] == pytest.approx(ref[i], abs=1e-10)


def test_bridge_marginal_matches_oracle():
    p = triangle()
    sol = solve_bridge(p.intensity, "a", "b", grid=513)
    got = bridge_marginal(sol, 0.5)
    want = oracles.bridge_marginal(list(p.graph.vertices), rate_dict(p.intensity), "a", "b", 0.5)
    np.testing.assert_allclose(got, want, atol=1e-13)


def test_forward_consistency():
    p = hypercube(2)
    sol = solve_bridge(p.intensity, "00", "11", grid=1025)
    prop = propagate_bridge(sol)
    want = bridge_marginal(sol, float(sol.times[-1]))
    assert 0.5 * np.abs(prop - want).sum() < 1e-6
    assert prop[p.graph.index["11"]] >= 1 - 10 * sol.delta
    assert prop.sum() == pytest.approx(1.0, abs=1e-10)


def test_boundary_divergence_hypercube_line():
    p = hypercube(1)
    sols = [solve_bridge(p.intensity, "0", "1", grid=257, delta=d) for d in (1e-2, 1e-3, 1e-4)]
    rep = boundary_divergence_check(sols)
    assert rep.monotone_off_target
    # off target: int_0^{1-delta} coth(1-t) dt = log sinh(1) - log sinh(delta)
    for d, val in zip(rep.deltas, rep.integrals["0"]):
        assert val == pytest.approx(math.log(math.sinh(1.0) / math.sinh(d)), rel=1e-9)
    # at the target: int tanh(1-t) dt = log cosh(1)
    assert rep.target_limit == pytest.approx(math.log(math.cosh(1.0)), rel=1e-12)
    assert rep.target_gap < 1e-6


def test_poisson_radius_against_exact_tail():
    assert poisson_tail_radius(1.0, 1e-12) == 14 == oracles.poisson_radius(1.0, 1e-12)
    assert poisson_tail_radius(2.0, 1e-8) == oracles.poisson_radius(2.0, 1e-8) == 14
    assert poisson_tail_radius(1.0, 1.0) == 0


def test_truncation_ball():
    p = birth_death(1.0, 1.0, 40)
    r = truncation_radius(p.intensity, "10", "13", 1e-12)
    assert r == poisson_tail_radius(2.0, 1e-12)
    assert truncation_ball(p.graph, "10", "13", r) == r + 3
