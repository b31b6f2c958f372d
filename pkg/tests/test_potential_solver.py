import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biequil.functionals import CellGradient, energy_K, energy_Kn
from biequil.geometry import BoundaryMesh, DomainSpec, GridFunction, build_boundary_mesh, build_grid
from biequil.measures import BoundaryMeasure, mollify, uniform_measure
from biequil.potential_solver import (
    InfeasibleLevel,
    SolverConfig,
    measure_from_normal_derivative,
    normal_derivative,
    richardson,
    solve_exterior_dirichlet,
    solve_potential,
)
from biequil.radial import radial_phi


@pytest.fixture(scope="module")
def ball_solve():
    dom = DomainSpec.ball(1.0)
    grid = build_grid(dom, 3.0, 33)
    mesh = build_boundary_mesh(dom, 400)
    rho = uniform_measure(mesh)
    phi, rep = solve_potential(rho, grid, SolverConfig(tol=1e-10))
    return dom, grid, mesh, rho, phi, rep


@pytest.fixture(scope="module")
def exterior():
    dom = DomainSpec.ball(1.0)
    grid = build_grid(dom, 3.0, 41)
    mesh = build_boundary_mesh(dom, 600)
    sols = {lam: solve_exterior_dirichlet(lam, dom, grid, SolverConfig()) for lam in (0.03, 0.06)}
    return dom, grid, mesh, sols


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(tol=0)
    with pytest.raises(ValueError):
        SolverConfig(model="cubic")
    with pytest.raises(ValueError):
        SolverConfig(theta_min=0)


def test_converged_and_spacelike(ball_solve):
    *_, phi, rep = ball_solve
    assert rep.converged
    assert rep.theta > 0.01
    assert CellGradient(phi.grid).max_norm(phi.values) <= 1 + 1e-14


def test_action_descent(ball_solve):
    *_, rep = ball_solve
    h = np.array(rep.history)
    assert np.all(np.diff(h) <= 64 * np.finfo(float).eps * np.abs(h[1:]))


def test_positivity(ball_solve):
    *_, phi, rep = ball_solve
    assert phi.values.min() >= -1e-10


def test_negative_action_and_energy_bound(ball_solve):
    _, grid, _, rho, phi, rep = ball_solve
    assert rep.action < 0
    # equality holds at the discrete optimum, so only roundoff separates the two
    assert energy_K(phi, grid) <= -rep.action * (1 + 1e-9)


def test_maximum_on_boundary(ball_solve):
    _, grid, mesh, _, phi, _ = ball_solve
    i = np.unravel_index(np.argmax(phi.values), grid.shape)
    nb = grid.inside[tuple(slice(max(k - 1, 0), k + 2) for k in i)]
    assert nb.any() and not nb.all()


def test_symmetry_under_point_reflection():
    dom = DomainSpec.ball(1.0)
    grid = build_grid(dom, 2.5, 29)
    rng = np.random.default_rng(3)
    p = rng.standard_normal((40, 3))
    p /= np.linalg.norm(p, axis=1, keepdims=True)
    pts = np.concatenate((p, -p))
    mesh = BoundaryMesh(pts, np.full(80, 4 * np.pi / 80), pts.copy(), dom)
    q = rng.random(40)
    rho = BoundaryMeasure(np.concatenate((q, q)) / (2 * q.sum()), mesh)
    phi, rep = solve_potential(rho, grid, SolverConfig(tol=1e-12))
    u = phi.values
    assert np.max(np.abs(u - u[::-1, ::-1, ::-1])) <= 1e-9 * np.max(u)


def test_coarse_profile_with_richardson():
    dom = DomainSpec.ball(1.0)
    h = 0.125
    mesh = build_boundary_mesh(dom, 800)
    rho = uniform_measure(mesh)
    r = np.array([1.5, 2.0])
    vals = []
    for L in (3.0, 4.5):
        grid = build_grid(dom, L, int(round(2 * L / h)) + 1)
        vals.append(solve_potential(rho, grid, SolverConfig())[0].evaluate(np.column_stack((r, 0 * r, 0 * r))))
    ext = richardson([3.0, 4.5], np.array(vals))
    assert np.allclose(ext, radial_phi(r, 1.0), rtol=0.03)


def test_maxwell_model_matches_coulomb_with_richardson():
    dom = DomainSpec.ball(1.0)
    h = 0.125
    rho = uniform_measure(build_boundary_mesh(dom, 800))
    vals = []
    for L in (3.0, 4.5):
        grid = build_grid(dom, L, int(round(2 * L / h)) + 1)
        vals.append(solve_potential(rho, grid, SolverConfig(model="n=1"))[0].evaluate([[2.0, 0, 0]])[0])
    assert richardson([3.0, 4.5], vals) == pytest.approx(1 / (8 * np.pi), rel=0.03)


def test_model_ordering_at_fixed_charge():
    dom = DomainSpec.ball(0.35)
    grid = build_grid(dom, 1.5, 33)
    rho = uniform_measure(build_boundary_mesh(dom, 512))
    I, K = [], []
    for n in range(1, 7):
        phi, rep = solve_potential(rho, grid, SolverConfig(model=f"n={n}", tol=1e-11))
        I.append(rep.action)
        K.append(energy_Kn(phi, n, grid))
    assert all(b - a > 1e-10 for a, b in zip(I[:-1], I[1:]))
    assert all(a - b > 1e-10 for a, b in zip(K[:-1], K[1:]))


def test_continuous_dependence_on_mollification():
    dom = DomainSpec.ball(1.0)
    grid = build_grid(dom, 2.5, 41)
    rho = uniform_measure(build_boundary_mesh(dom, 800))
    cfg = SolverConfig(model="n=1")
    base = solve_potential(rho, grid, cfg)[0].values
    diffs = []
    for k in (8, 4):
        f = mollify(rho, k * grid.h, grid)
        diffs.append(np.max(np.abs(solve_potential(f, grid, cfg)[0].values - base)))
    assert diffs[1] < diffs[0]


def test_warm_start_reuses_solution(ball_solve):
    _, grid, _, rho, phi, rep = ball_solve
    phi2, rep2 = solve_potential(rho, grid, SolverConfig(tol=1e-10), u0=phi.values)
    assert rep2.iterations == 0
    assert np.array_equal(phi2.values, phi.values)


def test_zero_charge_rejected(ball_solve):
    _, grid, mesh, *_ = ball_solve
    with pytest.raises(ValueError):
        solve_potential(BoundaryMeasure(np.zeros(len(mesh)), mesh), grid)


def test_exterior_small_level(exterior):
    dom, grid, *_ = exterior
    phi, rep = solve_exterior_dirichlet(1e-8, dom, grid, SolverConfig())
    assert phi.values.max() <= 1e-8 * (1 + 1e-12)
    assert phi.values.min() >= -1e-20


def test_exterior_comparison_principle(exterior):
    *_, sols = exterior
    lo, hi = sols[0.03][0].values, sols[0.06][0].values
    assert np.all(hi >= lo - 1e-12)


def test_exterior_normal_derivative_negative_and_uniform(exterior):
    dom, grid, mesh, sols = exterior
    phi, rep = sols[0.06]
    for method in ("flux", "fd"):
        dn = normal_derivative(phi, mesh, grid, method=method)
        assert np.all(dn < 0)
    dn = normal_derivative(phi, mesh, grid, method="flux")
    rho = measure_from_normal_derivative(dn, mesh, "bi")
    d = rho.density
    assert (d.max() - d.min()) / d.mean() < 0.05
    # a uniform density of total mass Q has slope s(Q / 4 pi) on the unit sphere
    from biequil.radial import invert_constitutive

    s = invert_constitutive(rho.mass / (4 * np.pi))
    assert np.mean(-dn) == pytest.approx(s, rel=0.05)


def test_flux_and_fd_agree(exterior):
    dom, grid, mesh, sols = exterior
    phi, _ = sols[0.06]
    a = normal_derivative(phi, mesh, grid, method="flux")
    b = normal_derivative(phi, mesh, grid, method="fd")
    assert np.mean(a) == pytest.approx(np.mean(b), rel=0.05)


def test_infeasible_level(exterior):
    dom, grid, *_ = exterior
    with pytest.raises(InfeasibleLevel):
        solve_exterior_dirichlet(2.5, dom, grid, SolverConfig())
    with pytest.raises(ValueError):
        solve_exterior_dirichlet(-1.0, dom, grid)


def test_normal_derivative_of_constant(unit_ball):
    grid = build_grid(unit_ball, 3.0, 25)
    mesh = build_boundary_mesh(unit_ball, 100)
    phi = GridFunction(np.full(grid.shape, 0.4), grid)
    assert np.allclose(normal_derivative(phi, mesh, grid, method="fd"), 0.0, atol=1e-14)


def test_measure_from_zero_and_maxwell(unit_ball):
    mesh = build_boundary_mesh(unit_ball, 100)
    assert measure_from_normal_derivative(np.zeros(100), mesh, "bi").mass == 0.0
    rho = measure_from_normal_derivative(np.full(100, -0.2), mesh, "n=1")
    assert np.allclose(rho.density, 0.2)


def test_measure_rejects_outward_growth(unit_ball):
    mesh = build_boundary_mesh(unit_ball, 100)
    with pytest.raises(ValueError):
        measure_from_normal_derivative(np.full(100, 0.1), mesh, "n=1")
    with pytest.raises(ValueError):
        measure_from_normal_derivative(np.full(100, -1.0), mesh, "bi")


@settings(max_examples=30, deadline=None)
@given(v=st.floats(-5, 5), c1=st.floats(-3, 3), c2=st.floats(-3, 3))
def test_richardson_exact_on_model(v, c1, c2):
    Ls = [4.0, 6.0, 8.0]
    vals = [v + c1 / L + c2 / L ** 5 for L in Ls]
    assert richardson(Ls, vals, (1, 5)) == pytest.approx(v, abs=1e-9)
    assert richardson(Ls[:2], [v + c1 / L for L in Ls[:2]]) == pytest.approx(v, abs=1e-9)
