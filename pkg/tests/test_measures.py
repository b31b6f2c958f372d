import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from biequil.geometry import BoundaryMesh, DomainSpec, build_boundary_mesh, build_grid
from biequil.measures import (
    BoundaryMeasure,
    SurfaceTransfer,
    dirac_measure,
    grid_charges,
    mollify,
    pairing,
    random_measure,
    total_variation,
    uniform_measure,
)


@pytest.fixture(scope="module")
def fine():
    dom = DomainSpec.ball(1.0)
    return dom, build_grid(dom, 2.0, 41), build_boundary_mesh(dom, 1024)


def test_uniform_on_ball_equal_weights(unit_ball):
    mu = uniform_measure(build_boundary_mesh(unit_ball, 1024))
    assert np.allclose(mu.weights, 1 / 1024)


def test_uniform_on_ellipsoid_proportional(ellipsoid211):
    mesh = build_boundary_mesh(ellipsoid211, 512)
    mu = uniform_measure(mesh)
    assert mu.mass == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(mu.weights / mesh.weights, mu.weights[0] / mesh.weights[0])


def test_single_point_mesh_is_dirac():
    mesh = BoundaryMesh(np.array([[1.0, 0, 0]]), np.array([0.3]), np.array([[1.0, 0, 0]]))
    assert uniform_measure(mesh).weights.tolist() == [1.0]


def test_negative_weights_rejected(unit_ball):
    mesh = build_boundary_mesh(unit_ball, 64)
    q = np.full(64, 1 / 64)
    q[3] = -0.1
    with pytest.raises(ValueError):
        BoundaryMeasure(q, mesh)


def test_total_variation(unit_ball):
    mesh = build_boundary_mesh(unit_ball, 64)
    assert total_variation(dirac_measure(mesh, 0), dirac_measure(mesh, 1)) == pytest.approx(1.0)
    u = uniform_measure(mesh)
    assert total_variation(u, u) == 0.0


def test_mollified_dirac_mass(fine):
    _, grid, _ = fine
    node = grid.x[[20, 22, 25]]
    mesh = BoundaryMesh(node[None, :], np.ones(1), np.array([[1.0, 0, 0]]))
    f = mollify(BoundaryMeasure(np.ones(1), mesh), 4 * grid.h, grid)
    assert f.mass == pytest.approx(1.0, rel=1e-2)


def test_mollified_support_in_shell(fine):
    _, grid, mesh = fine
    eps = 4 * grid.h
    f = mollify(uniform_measure(mesh), eps, grid)
    r = np.linalg.norm(grid.nodes(), axis=-1)
    nz = f.density.values > 0
    assert np.all(np.abs(r[nz] - 1.0) <= eps + 1e-12)


@pytest.mark.parametrize("k", [2, 4, 8])
def test_mollified_mass_and_positivity(fine, k):
    _, grid, mesh = fine
    f = mollify(uniform_measure(mesh), k * grid.h, grid)
    assert f.mass == pytest.approx(1.0, abs=1e-12)
    assert np.all(f.density.values >= 0)


def test_mollify_radius_floor(fine):
    _, grid, mesh = fine
    with pytest.raises(ValueError):
        mollify(uniform_measure(mesh), grid.h, grid)


def test_weak_convergence_rate(fine):
    _, grid, mesh = fine
    rng = np.random.default_rng(0)
    mu = random_measure(mesh, rng)
    g = lambda X: np.exp(X[..., 0]) * np.cos(X[..., 1]) + X[..., 2] ** 2
    exact = mu.weights @ g(mesh.points)
    X = grid.nodes()
    errs = []
    for k in (8, 4, 2):
        f = mollify(mu, k * grid.h, grid)
        errs.append(abs(exact - np.sum(f.density.values * g(X)) * grid.h ** 3))
    assert errs[0] > errs[1] > errs[2]


def test_mollified_and_point_pairing_agree(fine, rng):
    from biequil.geometry import GridFunction

    _, grid, mesh = fine
    X = grid.nodes()
    phi = GridFunction(np.sin(X[..., 0]) + X[..., 1] * X[..., 2], grid)
    mu = random_measure(mesh, rng)
    a = pairing(mu, phi)
    b = pairing(mollify(mu, 2 * grid.h, grid), phi)
    assert abs(a - b) < 0.05


def test_surface_transfer_adjoint_and_mass(fine, rng):
    _, grid, mesh = fine
    T = SurfaceTransfer(mesh, grid)
    q = rng.random(len(mesh))
    u = rng.standard_normal(grid.shape)
    assert np.sum(T.to_grid(q) * u) == pytest.approx(q @ T.pair(u), rel=1e-12)
    assert T.to_grid(q).sum() == pytest.approx(q.sum(), rel=1e-12)
    c = rng.random(len(T.crossing_points))
    assert T.collect(c).sum() == pytest.approx(c.sum(), rel=1e-12)


@pytest.mark.parametrize("transfer", ["trilinear", "surface"])
def test_grid_charges_conserve_mass(fine, rng, transfer):
    _, grid, mesh = fine
    mu = random_measure(mesh, rng)
    assert grid_charges(mu, grid, transfer).sum() == pytest.approx(1.0, rel=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1), n=st.integers(2, 200))
def test_random_measures_are_probabilities(seed, n):
    mesh = build_boundary_mesh(DomainSpec.ball(1.0), max(n, 16))
    mu = random_measure(mesh, np.random.default_rng(seed))
    assert mu.mass == pytest.approx(1.0, abs=1e-12)
    assert np.all(mu.weights >= 0)
    assert 0.0 <= total_variation(mu, uniform_measure(mesh)) <= 1.0
