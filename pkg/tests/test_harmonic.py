"""Dirichlet solves, harmonic-map residuals, and dilation reports.

Oracles: the tripod solve is piecewise linear with hand-computable
values (hub = mean of the leg values, energy = half the sum of squared
slopes); on the flat square the solver must reproduce the harmonic
polynomial x^2 - y^2 at second order; vertical exponentials are
geodesics of the upper half-plane, so their weak residual vanishes.
"""
import math
from importlib import resources

import numpy as np
import pytest

from polybrownian import (
    BoundaryCondition,
    ConvexTester,
    DiscreteField,
    TargetManifold,
    build_mesh,
    bundled_complex,
    compute_dilation,
    dirichlet_energy,
    normal_distance_field,
    normal_trace_sum,
    point_on_edge,
    point_on_face,
    pullback,
    solve_dirichlet,
    solve_harmonic_map_flat,
    tangential_coordinate_field,
    weakly_harmonic_residual,
)
from polybrownian.geometry import get_atlas

SQUARE_EMBED = {"a": (0.0, 0.0), "b": (1.0, 0.0), "c": (1.0, 1.0), "d": (0.0, 1.0)}


def _book():
    P = bundled_complex("book_3")
    spine = P.face_index([P.vertex_index["s0"], P.vertex_index["s1"]])
    return P, spine


def _planar(P, point):
    names = {v: k for k, v in P.vertex_index.items()}
    M = np.array([SQUARE_EMBED[names[v]] for v in P.maximal[point.simplex].vertices])
    return np.asarray(point.bary) @ M


# ---------------------------------------------------------------------------
# tripod


def test_tripod_solve_exact():
    P = bundled_complex("star_3")
    mesh = build_mesh(P, 0.1)
    bc_path = resources.files("polybrownian").joinpath("data/tripod_bc.json")
    bc = BoundaryCondition.from_json(str(bc_path))
    sol = solve_dirichlet(mesh, bc)
    hub = mesh.node_map[("v", P.vertex_index["c"])]
    assert sol.values[hub] == pytest.approx(1.0, abs=1e-10)
    leg1 = next(
        s.index for s in P.maximal
        if set(s.vertices) == {P.vertex_index["c"], P.vertex_index["v1"]}
    )
    mid = sol.at_point(point_on_edge(P, leg1, 0.5))
    assert mid == pytest.approx(2.0, abs=1e-10)
    assert dirichlet_energy(mesh, sol.values) == pytest.approx(3.0, abs=1e-10)
    v1 = mesh.node_map[("v", P.vertex_index["v1"])]
    assert sol.values[v1] == 3.0


# ---------------------------------------------------------------------------
# flat square


@pytest.fixture(scope="module")
def square_setup():
    P = bundled_complex("square")

    def bc_fn(point):
        x, y = _planar(P, point)
        return x * x - y * y

    rng = np.random.default_rng(123)
    sims = rng.integers(0, len(P.maximal), size=40)
    bary = rng.dirichlet((1.0, 1.0, 1.0), size=40)
    atlas = get_atlas(P)
    pos = np.array([atlas.charts[s].vertices.T @ w for s, w in zip(sims, bary)])
    names = {v: k for k, v in P.vertex_index.items()}
    xy = np.array([
        np.asarray(w) @ np.array([SQUARE_EMBED[names[v]] for v in P.maximal[s].vertices])
        for s, w in zip(sims, bary)
    ])
    exact = xy[:, 0] ** 2 - xy[:, 1] ** 2
    return P, bc_fn, sims, pos, exact


def test_square_harmonic_convergence(square_setup):
    P, bc_fn, sims, pos, exact = square_setup
    errs = []
    for h in (0.1, 0.05, 0.025):
        mesh = build_mesh(P, h)
        sol = solve_dirichlet(mesh, BoundaryCondition.from_boundary_function(bc_fn))
        errs.append(np.abs(sol.evaluate(sims, pos) - exact).max())
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert min(orders) > 1.8  # second-order convergence off the nodes
    assert errs[-1] < 2e-4


def test_square_maximum_principle(square_setup):
    P, bc_fn, *_ = square_setup
    mesh = build_mesh(P, 0.1)
    bc = BoundaryCondition.from_boundary_function(bc_fn)
    sol = solve_dirichlet(mesh, bc)
    idx, vals = bc.resolve(mesh)
    assert sol.values.max() <= vals.max() + 1e-10
    assert sol.values.min() >= vals.min() - 1e-10


def test_square_energy_minimality(square_setup):
    P, bc_fn, *_ = square_setup
    mesh = build_mesh(P, 0.1)
    bc = BoundaryCondition.from_boundary_function(bc_fn)
    sol = solve_dirichlet(mesh, bc)
    e0 = dirichlet_energy(mesh, sol.values)
    idx, _ = bc.resolve(mesh)
    rng = np.random.default_rng(77)
    for _ in range(100):
        delta = rng.normal(0.0, 0.01, size=mesh.n_nodes)
        delta[idx] = 0.0
        assert dirichlet_energy(mesh, sol.values + delta) >= e0 - 1e-12


# ---------------------------------------------------------------------------
# book: flux balance of the solution


def test_book_solution_balances_fluxes():
    P, spine = _book()
    mesh = build_mesh(P, 0.1)
    bc = BoundaryCondition.from_vertices(
        {"u1": 1.0, "w1": 2.0, "u2": 0.0, "w2": -1.0, "u3": 0.5, "w3": 0.0}
    )
    sol = solve_dirichlet(mesh, bc)
    grads = np.einsum("enk,en->ek", mesh.el_grads, sol.values[mesh.el_nodes])
    gmax = float(np.linalg.norm(grads, axis=1).max())
    for s in (0.3, 0.5, 0.7):
        r = normal_trace_sum(P, sol, point_on_face(P, spine, s))
        assert abs(r) < 10.0 * mesh.spacing * gmax
        assert abs(r) < 0.01  # observed ~2.5e-3 at this resolution


def test_singular_pin_needs_flag():
    P, spine = _book()
    mesh = build_mesh(P, 0.25)
    m = mesh.m_of[P.adjacency[spine][0]]
    bc = BoundaryCondition(edge_values={(spine, 0.5): 1.0})
    with pytest.raises(ValueError, match="singular"):
        bc.resolve(mesh)
    forced = BoundaryCondition(edge_values={(spine, 0.5): 1.0}, allow_singular=True)
    idx, vals = forced.resolve(mesh)
    assert mesh.node_keys[idx[0]] == ("f", spine, m // 2)
    assert vals[0] == 1.0


def test_bc_validation():
    P = bundled_complex("star_3")
    mesh = build_mesh(P, 0.5)
    with pytest.raises(ValueError, match="unknown vertex"):
        BoundaryCondition.from_vertices({"nope": 1.0}).resolve(mesh)
    with pytest.raises(ValueError, match="empty"):
        BoundaryCondition().resolve(mesh)
    bc = BoundaryCondition.from_json({"v1": 3.0, "edge:0:0.5": 2.0})
    assert bc.vertex_values == {"v1": 3.0}
    assert bc.edge_values == {(0, 0.5): 2.0}


# ---------------------------------------------------------------------------
# maps into targets


def test_flat_target_residual_vanishes_at_free_nodes(square_setup):
    P, bc_fn, *_ = square_setup
    mesh = build_mesh(P, 0.1)
    bc = BoundaryCondition.from_boundary_function(bc_fn)
    sol = solve_dirichlet(mesh, bc)
    res = weakly_harmonic_residual(mesh, sol, TargetManifold.flat(1))
    assert res.shape == (mesh.n_nodes, 1)
    idx, _ = bc.resolve(mesh)
    free = np.setdiff1d(np.arange(mesh.n_nodes), idx)
    assert np.abs(res[free]).max() < 1e-9
    with pytest.raises(ValueError, match="component count"):
        weakly_harmonic_residual(mesh, sol, TargetManifold.flat(2))


def test_hyperbolic_geodesic_is_weakly_harmonic():
    # phi(x) = (0, e^x) is a geodesic of the upper half-plane; the linear
    # interpolation of its endpoints is not
    P = bundled_complex("interval")
    mesh = build_mesh(P, 0.01)
    x = DiscreteField.from_function(mesh, normal_distance_field(P, 0))
    zero = DiscreteField(mesh, np.zeros(mesh.n_nodes))
    geo = DiscreteField(mesh, np.exp(x.values))
    lin = DiscreteField(mesh, 1.0 + (math.e - 1.0) * x.values)
    H = TargetManifold.upper_half_plane()
    interior = mesh.nodes_of_kind("interior")
    res_geo = np.abs(weakly_harmonic_residual(mesh, [zero, geo], H)[interior]).max()
    res_lin = np.abs(weakly_harmonic_residual(mesh, [zero, lin], H)[interior]).max()
    assert res_geo < 1e-9
    assert res_lin > 1e-3


def test_target_validation():
    H = TargetManifold.upper_half_plane()
    H.validate_at(np.array([[0.0, 1.0], [2.0, 0.5]]))
    with pytest.raises(ValueError, match="outside"):
        H.validate_at(np.array([[0.0, -1.0]]))
    TargetManifold.flat(3).validate_at(np.zeros((2, 3)))


def test_solve_harmonic_map_flat_decouples():
    P = bundled_complex("star_3")
    mesh = build_mesh(P, 0.25)
    bcs = [
        BoundaryCondition.from_vertices({"v1": 1.0, "v2": 0.0, "v3": 0.0}),
        BoundaryCondition.from_vertices({"v1": 0.0, "v2": 1.0, "v3": -1.0}),
    ]
    comps = solve_harmonic_map_flat(mesh, bcs)
    assert len(comps) == 2
    for bc, comp in zip(bcs, comps):
        solo = solve_dirichlet(mesh, bc)
        assert np.allclose(comp.values, solo.values, atol=1e-12)


# ---------------------------------------------------------------------------
# dilation


def test_tangential_coordinate_is_morphism_candidate():
    P, spine = _book()
    mesh = build_mesh(P, 0.1)
    y = DiscreteField.from_function(mesh, tangential_coordinate_field(P, spine))
    rep = compute_dilation(mesh, y)
    assert rep.morphism_candidate
    assert np.allclose(rep.element_dilation, 1.0, atol=1e-9)
    assert np.allclose(rep.field, 1.0, atol=1e-9)


def test_normal_distance_fails_identity_member():
    # |x_n| has unit dilation too, but its one-sided normal traces do not
    # cancel; only the curvature-free identity member can see that
    P, spine = _book()
    mesh = build_mesh(P, 0.1)
    xn = DiscreteField.from_function(mesh, normal_distance_field(P, spine))
    rep = compute_dilation(mesh, xn)
    assert not rep.morphism_candidate
    assert "identity" in rep.failing
    assert rep.residuals["square"] < rep.thresholds["square"]


def test_dilation_scaling_is_quadratic():
    P, spine = _book()
    mesh = build_mesh(P, 0.1)
    y = DiscreteField.from_function(mesh, tangential_coordinate_field(P, spine))
    rep1 = compute_dilation(mesh, y)
    rep2 = compute_dilation(mesh, DiscreteField(mesh, 2.0 * y.values))
    assert np.allclose(rep2.element_dilation, 4.0 * rep1.element_dilation, rtol=1e-12)
    assert rep2.morphism_candidate


def test_dilation_suite_needs_curvature():
    P, spine = _book()
    mesh = build_mesh(P, 0.2)
    y = DiscreteField.from_function(mesh, tangential_coordinate_field(P, spine))
    flat_only = [("identity", lambda t: t, lambda t: np.ones_like(t),
                  lambda t: np.zeros_like(t))]
    with pytest.raises(ValueError, match="second derivative"):
        compute_dilation(mesh, y, v_suite=flat_only)


# ---------------------------------------------------------------------------
# convexity and pullbacks


def test_convex_tester():
    good = ConvexTester((0.35, 0.65), (0.2, 0.8), (0.05, 0.95), lambda t: t * t)
    assert good.certificate(seed=1)
    cubic = ConvexTester((-0.5, 0.5), (-0.8, 0.8), (-1.0, 1.0), lambda t: t**3)
    assert not cubic.certificate(seed=1)
    with pytest.raises(ValueError, match="nest"):
        ConvexTester((0.1, 0.9), (0.2, 0.8), (0.0, 1.0), lambda t: t * t)


def test_pullback():
    P = bundled_complex("interval")
    mesh = build_mesh(P, 0.25)
    x = DiscreteField.from_function(mesh, normal_distance_field(P, 0))
    ex = pullback(x, math.exp)
    assert np.allclose(ex.values, np.exp(x.values))
    with pytest.raises(ValueError, match="outside"):
        pullback(x, math.log, domain=lambda t: t > 0.5)
