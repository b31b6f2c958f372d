import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.transform import Rotation

from biequil.ballcheck import characterization_experiment, domain_label, uniformity_deviation
from biequil.equilibrium import lambda_bisection_equilibrium
from biequil.geometry import BoundaryMesh, DomainSpec, build_boundary_mesh, build_grid
from biequil.measures import BoundaryMeasure, random_measure, uniform_measure
from biequil.potential_solver import SolverConfig


def test_uniform_has_zero_delta(ellipsoid211):
    mesh = build_boundary_mesh(ellipsoid211, 512)
    assert uniformity_deviation(uniform_measure(mesh)).delta < 1e-12


def test_rejects_unnormalized_and_zero_weights(unit_ball):
    mesh = build_boundary_mesh(unit_ball, 64)
    with pytest.raises(ValueError):
        uniformity_deviation(BoundaryMeasure(np.full(64, 0.5), mesh))
    bad = BoundaryMesh(mesh.points, np.where(np.arange(64) == 3, 0.0, mesh.weights), mesh.normals)
    with pytest.raises(ValueError):
        uniformity_deviation(BoundaryMeasure(np.full(64, 1 / 64), bad))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), kq=st.integers(-20, 20), kw=st.integers(-20, 20))
def test_delta_scale_invariant_bitwise(seed, kq, kw):
    # power-of-two scalings are exact in floating point
    mesh = build_boundary_mesh(DomainSpec.ellipsoid((1.5, 1.0, 0.7)), 64)
    q = random_measure(mesh, np.random.default_rng(seed)).weights
    d0 = uniformity_deviation(BoundaryMeasure(q, mesh)).delta
    scaled = BoundaryMesh(mesh.points, mesh.weights * 2.0 ** kw, mesh.normals)
    d1 = uniformity_deviation(BoundaryMeasure(q * 2.0 ** kq, scaled), mass_tol=np.inf).delta
    assert d1 == d0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2 ** 31), a=st.floats(1e-3, 1e3), b=st.floats(1e-3, 1e3))
def test_delta_scale_invariant_general(seed, a, b):
    mesh = build_boundary_mesh(DomainSpec.ball(1.0), 64)
    q = random_measure(mesh, np.random.default_rng(seed)).weights
    d0 = uniformity_deviation(BoundaryMeasure(q, mesh)).delta
    scaled = BoundaryMesh(mesh.points, mesh.weights * b, mesh.normals)
    d1 = uniformity_deviation(BoundaryMeasure(q * a, scaled), mass_tol=np.inf).delta
    assert d1 == pytest.approx(d0, rel=1e-13)


def test_rotation_invariance(unit_ball):
    mesh = build_boundary_mesh(unit_ball, 256)
    mu = random_measure(mesh, np.random.default_rng(5))
    Q = Rotation.from_rotvec([0.4, -1.0, 0.3]).as_matrix()
    rot = mesh.rotated(Q)
    d0 = uniformity_deviation(mu).delta
    d1 = uniformity_deviation(BoundaryMeasure(mu.weights, rot)).delta
    assert abs(d1 - d0) <= 1e-12


def test_labels():
    assert domain_label(DomainSpec.ball(1.0)) == "ball(1)"
    assert domain_label(DomainSpec.ellipsoid((2, 1, 1))) == "ellipsoid(2,1,1)"
    assert domain_label(DomainSpec.superellipsoid((1, 1, 1), 4)) == "superellipsoid(1,1,1;p=4)"


def test_ball_delta_decreases_under_refinement(unit_ball):
    cfg = SolverConfig()
    deltas = []
    for m, K in ((33, 400), (49, 800)):
        grid = build_grid(unit_ball, 3.0, m)
        mesh = build_boundary_mesh(unit_ball, K)
        res = lambda_bisection_equilibrium(unit_ball, grid, cfg, mesh=mesh)
        deltas.append(uniformity_deviation(res.measure, mesh).delta)
    assert deltas[1] < deltas[0]


def test_experiment_rows_and_error_propagation():
    domains = [DomainSpec.ball(1.0), DomainSpec.ellipsoid((2.0, 1.0, 1.0)), DomainSpec.ellipsoid((3.5, 1.0, 1.0))]
    rows = characterization_experiment(domains, SolverConfig(), L=3.0, m=33, models=("n=1",), resolution=400)
    assert [r["domain"] for r in rows] == ["ball(1)", "ellipsoid(2,1,1)", "ellipsoid(3.5,1,1)"]
    ball, ell, bad = rows
    assert ball["error"] == "" and ell["error"] == ""
    assert "GeometryError" in bad["error"] and np.isnan(bad["delta"])
    assert ball["delta"] < ell["delta"]
    assert ball["ball_like"] is True and ell["ball_like"] is False
