import numpy as np
import pytest

from biequil.equilibrium import (
    Upsilon,
    cross_validate,
    equilibrium_diagnostics,
    frank_wolfe_equilibrium,
    lambda_bisection_equilibrium,
)
from biequil.geometry import DomainSpec, build_boundary_mesh, build_grid
from biequil.measures import BoundaryMeasure, SurfaceTransfer, dirac_measure, total_variation, uniform_measure
from biequil.potential_solver import SolverConfig, richardson, solve_potential
from biequil.radial import lambda_star


@pytest.fixture(scope="module")
def coarse():
    dom = DomainSpec.ball(1.0)
    grid = build_grid(dom, 3.0, 33)
    mesh = build_boundary_mesh(dom, 400)
    cfg = SolverConfig()
    fw = frank_wolfe_equilibrium(mesh, grid, cfg, iters=6)
    bis = lambda_bisection_equilibrium(dom, grid, cfg, mesh=mesh)
    return dom, grid, mesh, cfg, fw, bis


def test_gaps_nonnegative_and_lambda_positive(coarse):
    *_, fw, bis = coarse
    assert all(h["gap"] >= 0 for h in fw.history)
    assert fw.lambda_star > 0 and bis.lambda_star > 0
    assert fw.gap == min(h["gap"] for h in fw.history)


def test_bisection_mass_and_normalization(coarse):
    *_, bis = coarse
    assert abs(bis.mass - 1) < 1e-3
    assert bis.measure.mass == pytest.approx(1.0, abs=1e-12)
    assert all(b["mass"] > a["mass"] for a, b in zip(bis.history[:-1], bis.history[1:]))


def test_gap_certifies_energy(coarse):
    dom, grid, mesh, cfg, fw, bis = coarse
    # energy of the bisection measure in the Frank-Wolfe discretization bounds the discrete optimum from above
    T = SurfaceTransfer(mesh, grid)
    _, rep = solve_potential(bis.measure, grid, cfg, transfer=T)
    e_ref = -rep.action
    for h in fw.history:
        assert h["energy"] - e_ref <= h["gap"] + 1e-12


def test_energy_convex_along_segment(coarse):
    dom, grid, mesh, cfg, *_ = coarse
    T = SurfaceTransfer(mesh, grid)
    a, b = uniform_measure(mesh), dirac_measure(mesh, 7)
    E = lambda q: -solve_potential(BoundaryMeasure(q, mesh), grid, cfg, transfer=T)[1].action
    for g in (0.25, 0.5, 0.75):
        assert E((1 - g) * a.weights + g * b.weights) <= (1 - g) * E(a.weights) + g * E(b.weights) + 1e-12


def test_diagnostics_on_ball(coarse):
    dom, grid, mesh, cfg, fw, bis = coarse
    for res in (fw, bis):
        d = equilibrium_diagnostics(res, mesh, grid, seed=1)
        assert d["spread_rel"] <= 1e-2
        assert d["probe_max_rel"] <= 1e-2
        assert d["theta"] > 0.01
    # Dirac probes: pointwise constancy on the boundary
    assert equilibrium_diagnostics(bis, mesh, grid)["pointwise_max_rel"] <= 1e-2


def test_cross_validation(coarse):
    dom, grid, mesh, cfg, fw, bis = coarse
    cv = cross_validate(fw, bis, mesh)
    assert cv["tv_distance"] <= 0.05
    same = cross_validate(bis, bis, mesh)
    assert same == {"lambda_rel_diff": 0.0, "potential_sup_diff": 0.0, "tv_distance": 0.0}


def test_frank_wolfe_from_dirac_spreads():
    dom = DomainSpec.ball(1.0)
    grid = build_grid(dom, 2.5, 21)
    mesh = build_boundary_mesh(dom, 64)
    res = frank_wolfe_equilibrium(mesh, grid, SolverConfig(model="n=1"), iters=50,
                                  init=dirac_measure(mesh, 0), transfer="trilinear")
    tv = [h["gap"] for h in res.history]
    assert np.mean(tv[-10:]) < np.mean(tv[:10])
    assert res.measure.weights.max() < 0.2
    assert total_variation(res.measure, uniform_measure(mesh)) < 0.5


def test_frank_wolfe_rejects_bad_input(coarse):
    dom, grid, mesh, cfg, *_ = coarse
    with pytest.raises(ValueError):
        frank_wolfe_equilibrium(mesh, grid, cfg, iters=0)
    with pytest.raises(ValueError):
        frank_wolfe_equilibrium(mesh, grid, cfg, init="random")


def test_upsilon_monotone_ellipsoid():
    dom = DomainSpec.ellipsoid((2.0, 1.0, 1.0))
    grid = build_grid(dom, 3.5, 29)
    mesh = build_boundary_mesh(dom, 400)
    ups = Upsilon(dom, grid, mesh, SolverConfig())
    masses = [ups(l) for l in np.linspace(0.01, 0.06, 5)]
    assert all(b > a for a, b in zip(masses[:-1], masses[1:]))


@pytest.mark.slow
def test_maxwell_bisection_matches_coulomb():
    dom = DomainSpec.ball(1.0)
    mesh = build_boundary_mesh(dom, 1024)
    cfg = SolverConfig(model="n=1")
    lams = [lambda_bisection_equilibrium(dom, build_grid(dom, L, m), cfg, mesh=mesh).lambda_star
            for L, m in ((4.0, 97), (6.0, 145))]
    assert richardson([4.0, 6.0], lams) == pytest.approx(lambda_star(1.0, 3, "n=1"), rel=0.02)
