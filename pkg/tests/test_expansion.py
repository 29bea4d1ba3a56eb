import math

import numpy as np
import pytest

import oracles
from recip.bridge import solve_bridge
from recip.errors import FitError
from recip.expansion import (
    DEFAULT_HS,
    FIT_TOL,
    ExpansionProbe,
    adaptive_gauss_legendre,
    arc_ratio,
    exact_arc_probability,
    exact_cycle_probability,
    fit_characteristic,
    mc_expansion_check,
    probe_arc,
    probe_cycle,
    richardson_arc,
)
from recip.graph import ClosedWalk
from recip.intensity import ClosedForm, make_intensity
from recip.presets import birth_death, cayley_zd, hypercube, triangle, triangular_lattice_family, two_cycle


def rate_dict(j):
    r = j.rates(0.0)
    return {a: float(r[i]) for i, a in enumerate(j.graph.arcs)}


def test_gauss_legendre_adaptive():
    assert adaptive_gauss_legendre(np.exp, 0.0, 1.0) == pytest.approx(math.e - 1, abs=1e-14)
    # a sharp feature forces bisection
    f = lambda x: 1.0 / (1e-4 + (x - 0.3) ** 2)
    want = (math.atan(0.7 / 1e-2) + math.atan(0.3 / 1e-2)) / 1e-2
    assert adaptive_gauss_legendre(f, 0.0, 1.0) == pytest.approx(want, rel=1e-12)


@pytest.mark.parametrize("h", [0.3, 0.05, 1e-3])
def test_constant_two_cycle_ratio_is_half(h):
    assert arc_ratio(two_cycle().intensity, 0.2, h, "a", "b") == pytest.approx(0.5, abs=1e-15)


def test_numerator_and_denominator():
    num, den = exact_arc_probability(two_cycle(1.0, 3.0).intensity, 0.2, 0.05, "a", "b")
    assert 0 < num < den
    # rate 1 along a->b; no other jump in the window
    want = math.exp(-3 * 0.05) * math.expm1(2 * 0.05) / 2
    assert den == pytest.approx(want, rel=1e-13)


# frozen from oracles.arc_ratio_constant(1, 1 + mu, h)
BD_RATIOS = {
    (0.5, 1e-2): 0.4993750003255206,
    (1.0, 3e-3): 0.4996250000703125,
    (2.0, 1e-3): 0.4997500000208333,
}


@pytest.mark.parametrize("mu, h", sorted(BD_RATIOS))
def test_birth_death_ratio_frozen(mu, h):
    j = birth_death(1.0, mu, 12).intensity
    assert arc_ratio(j, 0.3, h, "0", "1") == pytest.approx(BD_RATIOS[(mu, h)], abs=1e-14)


@pytest.mark.parametrize("h", [1e-2, 1e-3, 1e-4])
def test_birth_death_slope(h):
    mu = 1.7
    j = birth_death(1.0, mu, 12).intensity
    assert (arc_ratio(j, 0.3, h, "0", "1") - 0.5) / h == pytest.approx(-mu / 8, rel=2 * h)


def test_time_dependent_ratio_against_quadpack():
    g = two_cycle().graph
    j = make_intensity(g, {("a", "b"): ClosedForm.of("exp", scale=1.0, rate=1.5), ("b", "a"): 2.0})
    want = oracles.arc_ratio_quad(lambda s: math.exp(1.5 * s), lambda s: math.exp(1.5 * s), lambda s: 2.0, 0.3, 0.2)
    assert arc_ratio(j, 0.3, 0.2, "a", "b") == pytest.approx(want, abs=1e-12)


def test_richardson_gains_an_order():
    # chi_a = d/dt log k + kbar(b) - kbar(a) = 1.5 + 2 - e^{1.5 t}
    g = two_cycle().graph
    j = make_intensity(g, {("a", "b"): ClosedForm.of("exp", scale=1.0, rate=1.5), ("b", "a"): 2.0})
    t = 0.3
    chi = 1.5 + 2.0 - math.exp(1.5 * t)
    for h in (1e-2, 3e-3):
        plain = -8 * (arc_ratio(j, t, h, "a", "b") - 0.5) / h
        rich = richardson_arc(j, t, h, "a", "b")
        assert abs(rich - chi) < 0.2 * abs(plain - chi)


def test_cycle_probability_against_path_chain():
    p = triangle()
    c = ClosedWalk(("a", "b", "c", "a"))
    # frozen from oracles.cycle_probability
    assert exact_cycle_probability(p.intensity, 0.3, 1e-3, c) == pytest.approx(1.66333666444561e-10, rel=1e-12)
    assert exact_cycle_probability(p.intensity, 0.3, 0.3, c) == pytest.approx(0.0024696523624231203, rel=1e-12)
    bd = birth_death(1.5, 2.0, 20).intensity
    e = ClosedWalk(("3", "4", "3"))
    assert exact_cycle_probability(bd, 0.3, 1e-3, e) == pytest.approx(1.4947591767906225e-06, rel=1e-12)


@pytest.mark.parametrize("walk", [("a", "b", "a"), ("a", "b", "c", "a"), ("a", "b", "a", "c", "a")])
def test_cycle_probability_live_oracle(walk):
    p = triangle()
    j = make_intensity(p.graph, lambda a: 1.0 + 0.3 * "abc".index(a[0]) + 0.1 * "abc".index(a[1]))
    want = oracles.cycle_probability(list(p.graph.vertices), rate_dict(j), list(walk), 0.2)
    assert exact_cycle_probability(j, 0.3, 0.2, ClosedWalk(walk)) == pytest.approx(want, rel=1e-12)


def test_unit_triangle_leading_coefficient():
    v = exact_cycle_probability(triangle().intensity, 0.3, 1e-3, ClosedWalk(("a", "b", "c", "a")))
    assert v * 6 / 1e-9 == pytest.approx(1.0, rel=1e-2)


def test_birth_death_edge_coefficient():
    bd = birth_death(1.5, 2.0, 20).intensity
    v = exact_cycle_probability(bd, 0.3, 1e-3, ClosedWalk(("3", "4", "3")))
    assert v * 2 / 1e-6 == pytest.approx(3.0, rel=5e-3)
    # the 0.1% of the worked example needs the fit: first-order term is -jbar h
    assert fit_characteristic(probe_cycle(bd, 0.3, ClosedWalk(("3", "4", "3")))) == pytest.approx(3.0, rel=1e-3)


def test_empty_window():
    assert exact_cycle_probability(triangle().intensity, 0.3, 0.0, ClosedWalk(("a", "b", "a"))) == 0.0


def test_long_cycles_rejected():
    c = ClosedWalk(("a", "b", "a", "b", "a", "b", "a"))
    with pytest.raises(ValueError):
        exact_cycle_probability(two_cycle().intensity, 0.3, 0.1, c)


def test_return_conditioning_divides_by_return_probability():
    import scipy.linalg

    p = triangle()
    c = ClosedWalk(("a", "b", "c", "a"))
    start = exact_cycle_probability(p.intensity, 0.3, 0.3, c)
    back = exact_cycle_probability(p.intensity, 0.3, 0.3, c, conditioning="return")
    Q = oracles.generator(list(p.graph.vertices), rate_dict(p.intensity))
    assert back == pytest.approx(start / scipy.linalg.expm(0.3 * Q)[0, 0], rel=1e-12)


@pytest.mark.parametrize("mu", [0.5, 1.0, 2.0])
def test_fit_recovers_mu(mu):
    probe = probe_arc(birth_death(1.0, mu, 12).intensity, 0.3, "0", "1")
    assert fit_characteristic(probe) == pytest.approx(mu, rel=0.02)


def test_fit_on_constant_rate_graph_is_zero():
    j = hypercube(3).intensity
    est = fit_characteristic(probe_arc(j, 0.3, "000", "100"))
    assert abs(est) < 1e-3 * j.bound.value


def test_fit_triangular_face():
    rates = [(2.0, 0.5), (1.5, 1.0), (0.7, 3.0)]
    tl = triangular_lattice_family(rates)
    est = fit_characteristic(probe_cycle(tl.intensity, 0.3, tl.extras["face_at"]("3,3")))
    assert est == pytest.approx(2.0 * 1.5 * 0.7, rel=0.01)


def test_fit_error_outside_regime():
    probe = probe_arc(birth_death(1.0, 40.0, 5).intensity, 0.3, "0", "1", hs=(0.3, 0.2, 0.1))
    with pytest.raises(FitError):
        fit_characteristic(probe)


def test_probe_invariants():
    with pytest.raises(ValueError):
        ExpansionProbe("arc", 0.3, (1e-3, 1e-2, 1e-1), ("a", "b"), (0.5, 0.5, 0.5))
    with pytest.raises(ValueError):
        ExpansionProbe("arc", 0.95, (0.1, 0.01), ("a", "b"), (0.5, 0.5))
    assert DEFAULT_HS == (1e-1, 3e-2, 1e-2, 3e-3, 1e-3)


def test_probes_agree_under_bridge_intensity():
    p = birth_death(1.0, 2.0, 12)
    sol = solve_bridge(p.intensity, "1", "4")
    for arc in (("0", "1"), ("3", "2")):
        a = fit_characteristic(probe_arc(p.intensity, 0.3, *arc))
        b = fit_characteristic(probe_arc(sol, 0.3, *arc))
        assert abs(a - b) <= 2 * FIT_TOL * max(1.0, abs(a))
    c = ClosedWalk(("2", "3", "2"))
    a = fit_characteristic(probe_cycle(p.intensity, 0.3, c))
    b = fit_characteristic(probe_cycle(sol, 0.3, c))
    assert abs(a - b) <= 2 * FIT_TOL * max(1.0, abs(a))


def test_rotation_symmetry_on_cayley_square():
    z = cayley_zd(2, [(1.3, 0.4), (2.0, 0.9)])
    sq = ("4,4", "5,4", "5,5", "4,5", "4,4")
    rot = sq[1:] + (sq[1],)
    a = exact_cycle_probability(z.intensity, 0.3, 0.05, ClosedWalk(sq))
    b = exact_cycle_probability(z.intensity, 0.3, 0.05, ClosedWalk(rot))
    assert abs(a - b) <= 1e-10 * a


def test_mc_two_cycle_covers_half():
    res = mc_expansion_check(two_cycle().intensity, 0.3, 0.1, ("a", "b"), 100_000, seed=21)
    assert res.oracle == 0.5 and res.consistent


def test_mc_birth_death_arc():
    res = mc_expansion_check(birth_death(1.0, 2.0, 10).intensity, 0.3, 0.05, ("0", "1"), 1_000_000, seed=22)
    assert res.consistent


def test_mc_needs_enough_paths():
    with pytest.raises(ValueError):
        mc_expansion_check(two_cycle().intensity, 0.3, 0.1, ("a", "b"), 10, seed=1)


def test_mc_long_cycle_has_no_oracle():
    c = ClosedWalk(("a", "b", "a", "b", "a", "b", "a"))
    res = mc_expansion_check(two_cycle().intensity, 0.2, 0.5, c, 200_000, seed=23)
    assert res.oracle is None and res.consistent is None and res.estimate.trials > 0


def test_mc_interval_coverage():
    # nominal 95%; 93 of 100 leaves room for binomial spread
    j = birth_death(1.0, 2.0, 8).intensity
    oracle = arc_ratio(j, 0.3, 0.05, "0", "1")
    hits = 0
    for seed in range(100):
        est = mc_expansion_check(j, 0.3, 0.05, ("0", "1"), 20_000, seed=1000 + seed).estimate
        hits += est.ci_low <= oracle <= est.ci_high
    assert hits >= 93
