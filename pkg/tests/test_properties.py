"""Property-based checks of the structural invariants."""

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from recip.characteristics import same_class
from recip.graph import ArcFunction, ClosedWalk, build_graph, is_gradient, reconstruct_potential, spanning_tree, t_basis, walk_reverse, walk_sum
from recip.intensity import ClosedForm, make_intensity
from recip.presets import cayley_zd, triangle

rates = st.floats(0.2, 5.0)


@st.composite
def connected_graphs(draw, max_n=7):
    n = draw(st.integers(2, max_n))
    verts = [f"v{i}" for i in range(n)]
    edges = {(verts[draw(st.integers(0, i - 1))], verts[i]) for i in range(1, n)}
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=2 * n))
    edges |= {(verts[a], verts[b]) for a, b in extra if a != b}
    return build_graph(verts, sorted(edges), symmetrize=True)


@st.composite
def closed_walks_on(draw, graph, max_len=10):
    start = draw(st.sampled_from(graph.vertices))
    path = [start]
    for _ in range(draw(st.integers(1, max_len))):
        path.append(draw(st.sampled_from(graph.out_neighbors[path[-1]])))
    # close the walk along the tree
    tree = spanning_tree(graph, start)
    v = path[-1]
    while v != start:
        v = tree.parent[v]
        path.append(v)
    if len(path) == 1:
        path += [graph.out_neighbors[start][0], start]
    return ClosedWalk(tuple(path))


@given(st.data())
def test_basis_controls_every_closed_walk(data):
    g = data.draw(connected_graphs())
    basis = t_basis(g, spanning_tree(g))
    assert len(basis.fundamental) == g.n_edges - g.n_vertices + 1
    psi = data.draw(st.lists(st.floats(-3, 3), min_size=g.n_vertices, max_size=g.n_vertices))
    grad = ArcFunction.gradient_of(g, dict(zip(g.vertices, psi)))
    assert is_gradient(grad, basis, tol=1e-10)
    walk = data.draw(closed_walks_on(g))
    assert abs(walk_sum(grad, walk)) < 1e-10 * (1 + len(walk))


@given(st.data())
def test_non_gradient_is_caught_by_basis(data):
    g = data.draw(connected_graphs())
    basis = t_basis(g, spanning_tree(g))
    i = data.draw(st.integers(0, g.n_arcs - 1))
    bump = np.zeros(g.n_arcs)
    bump[i] = 1.0
    assert not is_gradient(ArcFunction(g, bump), basis)


@given(st.data())
def test_reconstruct_round_trip(data):
    g = data.draw(connected_graphs())
    psi = data.draw(st.lists(st.floats(-10, 10), min_size=g.n_vertices, max_size=g.n_vertices))
    tag = data.draw(st.sampled_from(g.vertices))
    pot = dict(zip(g.vertices, psi))
    back = reconstruct_potential(ArcFunction.gradient_of(g, pot), g, tag)
    for v in g.vertices:
        assert back[v] == pytest.approx(pot[v] - pot[tag], abs=1e-10)


@given(st.data())
def test_antisymmetric_sums_flip_under_reversal(data):
    g = data.draw(connected_graphs())
    half = data.draw(st.lists(st.floats(-5, 5), min_size=g.n_arcs, max_size=g.n_arcs))
    vals = np.array(half) - np.array(half)[g.reverse]
    ell = ArcFunction(g, vals)
    walk = data.draw(closed_walks_on(g))
    assert walk_sum(ell, walk_reverse(walk)) == pytest.approx(-walk_sum(ell, walk), abs=1e-10)


@given(st.data())
def test_gradient_perturbation_keeps_cycle_characteristics(data):
    g = data.draw(connected_graphs(max_n=5))
    base = data.draw(st.lists(rates, min_size=g.n_arcs, max_size=g.n_arcs))
    psi = data.draw(st.lists(st.floats(-1, 1), min_size=g.n_vertices, max_size=g.n_vertices))
    pot = dict(zip(g.vertices, psi))
    j = make_intensity(g, dict(zip(g.arcs, base)))
    k = make_intensity(g, {a: r * math.exp(pot[a[1]] - pot[a[0]]) for a, r in zip(g.arcs, base)})
    assert same_class(j, k, time_grid=[0.5]).cycle_residual < 1e-12


zd_rates = st.tuples(rates, rates)


@given(zd_rates, zd_rates, st.floats(0.2, 5.0), st.floats(0.2, 5.0))
@settings(max_examples=30)
def test_same_class_is_an_equivalence(a, b, s1, s2):
    # (r s, r' / s) keeps the edge product on Z
    j = cayley_zd(1, [a], L=7).intensity
    k = cayley_zd(1, [(a[0] * s1, a[1] / s1)], L=7).intensity
    m = cayley_zd(1, [(a[0] * s2, a[1] / s2)], L=7).intensity
    other = cayley_zd(1, [b], L=7).intensity
    grid = [0.25, 0.75]
    assert same_class(j, j, time_grid=grid).equal
    assert same_class(j, k, time_grid=grid).equal and same_class(k, j, time_grid=grid).equal
    assert same_class(k, m, time_grid=grid).equal and same_class(j, m, time_grid=grid).equal
    assert same_class(j, other, time_grid=grid).equal == same_class(other, j, time_grid=grid).equal


@given(st.data())
@settings(max_examples=30)
def test_total_rate_within_stored_bound(data):
    g = data.draw(connected_graphs(max_n=4))
    profiles = {}
    for a in g.arcs:
        kind = data.draw(st.sampled_from(["const", "exp", "affine", "cosine"]))
        if kind == "const":
            profiles[a] = data.draw(rates)
        elif kind == "exp":
            profiles[a] = ClosedForm.of("exp", scale=data.draw(rates), rate=data.draw(st.floats(-2, 2)))
        elif kind == "affine":
            profiles[a] = ClosedForm.of("affine", a=data.draw(st.floats(0.5, 3)), b=data.draw(st.floats(-0.4, 2)))
        else:
            base = data.draw(st.floats(1, 3))
            profiles[a] = ClosedForm.of("cosine", base=base, amp=0.9 * base * data.draw(st.floats(0, 1)),
                                        freq=data.draw(st.floats(0, 4)), phase=data.draw(st.floats(0, 6)))
    k = make_intensity(g, profiles)
    t = np.linspace(0, 1, 1001)
    assert k.total_rates(t).max() <= k.bound.value


@given(st.lists(rates, min_size=6, max_size=6), st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.booleans())
@settings(max_examples=40)
def test_triangle_basis_readings_agree_on_verdict(r, psi, in_class):
    p = triangle()
    if in_class:
        pot = dict(zip("abc", psi))
        k = make_intensity(p.graph, lambda a: math.exp(pot[a[1]] - pot[a[0]]))
    else:
        k = make_intensity(p.graph, dict(zip(p.graph.arcs, r)))
    default = same_class(p.intensity, k, tree=p.tree, time_grid=[0.5])
    listed = same_class(p.intensity, k, tree=p.tree, time_grid=[0.5], basis=_as_basis(p))
    assume(abs(default.cycle_residual - default.tol_cycle) > 1e-6)
    assert default.equal == listed.equal
    if in_class:
        assert listed.cycle_residual < 1e-12


def _as_basis(p):
    from recip.graph import CycleBasis

    listed = p.extras["listed_basis"]
    return CycleBasis(tree=p.tree, fundamental=listed[:1], edges=listed[1:])
