"""Equilibrium measures by Frank-Wolfe and by root-finding on the level.

Frank-Wolfe minimizes the electrostatic energy over probability measures on
the mesh points. The derivative of the energy in the direction of a point
mass is the potential at that point, so each step moves mass towards the
point where the current potential is smallest.

The level route solves the exterior problem at level ``lam`` and reads off
the boundary flux measure; its total mass ``Upsilon(lam)`` is increasing and
the equilibrium level is the root of ``Upsilon(lam) = 1``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .functionals import CellGradient, cell_integral, make_model
from .geometry import BoundaryMesh, DomainSpec, Grid, GridFunction, build_boundary_mesh
from .measures import BoundaryMeasure, SurfaceTransfer, random_measure, total_variation, uniform_measure
from .potential_solver import (
    SolveReport,
    SolverConfig,
    box_clearance,
    measure_from_normal_derivative,
    normal_derivative,
    solve_exterior_dirichlet,
    solve_potential,
)
from .radial import lambda_star as radial_lambda_star

log = logging.getLogger(__name__)


class BracketError(RuntimeError):
    pass


class MonotonicityError(RuntimeError):
    """Sampled masses are not increasing in the level."""


@dataclass
class EquilibriumResult:
    """Equilibrium measure, potential and plateau from one route.

    ``point_values`` holds the potential at the mesh points as seen by the
    route's own pairing, so ``<mu, phi> = mu.weights @ point_values``.
    """

    measure: BoundaryMeasure
    potential: GridFunction
    lambda_star: float
    gap: float
    route: str
    point_values: np.ndarray
    report: Optional[SolveReport] = None
    history: list = field(default_factory=list)
    mass: float = 1.0
    warning: str = ""

    def pair(self, mu: BoundaryMeasure) -> float:
        return float(mu.weights @ self.point_values)

    def summary(self) -> dict:
        return {
            "route": self.route,
            "lambda_star": self.lambda_star,
            "gap": self.gap,
            "mass": self.mass,
            "theta": None if self.report is None else self.report.theta,
            "warning": self.warning,
        }


def _energy(report: SolveReport) -> float:
    # the electrostatic energy is minus the minimal action
    return -report.action


def frank_wolfe_equilibrium(mesh: BoundaryMesh, grid: Grid, cfg: Optional[SolverConfig] = None,
                            iters: int = 20, init: Union[str, BoundaryMeasure] = "uniform",
                            transfer: Union[str, SurfaceTransfer] = "surface") -> EquilibriumResult:
    """Conditional gradient on the probability simplex over the mesh points.

    Step ``gamma_k = 2/(k+2)``; the iterate with the smallest duality gap
    ``<rho_k, phi_k> - min_i phi_k(x_i)`` is returned.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    cfg = cfg or SolverConfig()
    if transfer == "surface":
        transfer = SurfaceTransfer(mesh, grid)
    if isinstance(transfer, SurfaceTransfer):
        pair = transfer.pair
    elif transfer == "trilinear":
        B = grid.interpolation_matrix(mesh.points)
        pair = lambda u: B @ u.ravel()
    else:
        raise ValueError(f"unknown transfer {transfer!r}")
    if isinstance(init, BoundaryMeasure):
        q = init.weights / init.weights.sum()
    elif init == "uniform":
        q = uniform_measure(mesh).weights
    else:
        raise ValueError(f"unknown init {init!r}")
    q = q.copy()
    u = None
    best = None
    history = []
    rising = 0
    warning = ""
    for k in range(iters + 1):
        phi, rep = solve_potential(BoundaryMeasure(q, mesh), grid, cfg, u0=u, transfer=transfer)
        if not rep.converged:
            log.warning("inner solve did not converge at iteration %d: %s", k, rep.message)
        u = phi.values
        v = pair(u)
        lam = float(q @ v)
        i = int(np.argmin(v))
        gap = max(lam - float(v[i]), 0.0)
        history.append({"iteration": k, "lambda": lam, "gap": gap, "energy": _energy(rep),
                        "min_index": i, "converged": rep.converged})
        if k > 0 and gap > history[-2]["gap"]:
            rising += 1
            if rising >= 10 and not warning:
                warning = "gap increased over 10 consecutive iterations (discretization floor)"
        else:
            rising = 0
        if best is None or gap < best[0]:
            best = (gap, q.copy(), phi, v.copy(), lam, rep)
        if k == iters:
            break
        gamma = 2.0 / (k + 2.0)
        q *= 1.0 - gamma
        q[i] += gamma
    gap, qb, phib, vb, lamb, repb = best
    return EquilibriumResult(BoundaryMeasure(qb, mesh), phib, lamb, gap, "frank_wolfe", vb,
                             repb, history, float(qb.sum()), warning)


def _oracle_bracket(domain: DomainSpec, model) -> tuple:
    lo = radial_lambda_star(domain.circumradius - float(np.linalg.norm(domain.center)), 3, model)
    hi = radial_lambda_star(domain.inradius, 3, model)
    return lo, hi


class Upsilon:
    """Mass of the boundary flux measure of the exterior solution at a level.

    Evaluations are cached, warm-started from the nearest previous level, and
    checked for strict monotonicity.
    """

    def __init__(self, domain: DomainSpec, grid: Grid, mesh: BoundaryMesh, cfg: SolverConfig):
        self.domain, self.grid, self.mesh, self.cfg = domain, grid, mesh, cfg
        self.transfer = SurfaceTransfer(mesh, grid)
        self.samples = {}

    def solve(self, lam: float):
        if lam in self.samples:
            return self.samples[lam]
        u0 = None
        if self.samples:
            near = min(self.samples, key=lambda s: abs(np.log(s / lam)))
            u0 = self.samples[near][0].values * (lam / near)
        phi, rep = solve_exterior_dirichlet(lam, self.domain, self.grid, self.cfg, u0=u0)
        dn = normal_derivative(phi, self.mesh, self.grid, method="flux", transfer=self.transfer)
        rho = measure_from_normal_derivative(dn, self.mesh, self.cfg.model)
        self.samples[lam] = (phi, rep, rho)
        self._check()
        return self.samples[lam]

    def __call__(self, lam: float) -> float:
        return self.solve(lam)[2].mass

    def _check(self):
        lams = sorted(self.samples)
        masses = [self.samples[l][2].mass for l in lams]
        if any(b <= a for a, b in zip(masses[:-1], masses[1:])):
            raise MonotonicityError(f"non-increasing masses {masses} at levels {lams}")

    def table(self) -> list:
        return [(l, self.samples[l][2].mass) for l in sorted(self.samples)]


def lambda_bisection_equilibrium(domain: DomainSpec, grid: Grid, cfg: Optional[SolverConfig] = None,
                                 model=None, mesh: Optional[BoundaryMesh] = None, tol: float = 1e-3,
                                 resolution: int = 1024, max_evals: int = 40,
                                 upsilon: Optional[Upsilon] = None) -> EquilibriumResult:
    """Root of ``Upsilon(lam) = 1`` by safeguarded false position.

    The bracket starts from the radial plateaus of the circumscribed and
    inscribed balls and is expanded geometrically until it brackets the root.
    The returned measure is normalized; ``mass`` records ``Upsilon(lam)``.
    """
    cfg = cfg or SolverConfig()
    if model is not None:
        cfg = cfg.with_model(model)
    if grid.domain != domain:
        grid = Grid(grid.L, grid.m, domain)
    mesh = mesh or build_boundary_mesh(domain, resolution)
    ups = upsilon or Upsilon(domain, grid, mesh, cfg)
    cap = box_clearance(domain, grid) * (1 - 1e-9) if cfg.model.bounded else np.inf
    lo, hi = _oracle_bracket(domain, cfg.model)
    lo, hi = min(lo, cap * 0.5), min(hi, cap)
    evals = 0
    f_lo = ups(lo) - 1.0
    evals += 1
    while f_lo >= 0:
        hi, lo = lo, lo / 1.5
        f_lo = ups(lo) - 1.0
        evals += 1
        if evals > max_evals:
            raise BracketError("no lower bracket found")
    f_hi = ups(hi) - 1.0
    evals += 1
    while f_hi <= 0:
        if hi >= cap:
            raise BracketError("upper bracket exceeds the box clearance")
        lo, f_lo = hi, f_hi
        hi = min(hi * 1.5, cap)
        f_hi = ups(hi) - 1.0
        evals += 1
        if evals > max_evals:
            raise BracketError("no upper bracket found")
    lam, f = (lo, f_lo) if abs(f_lo) < abs(f_hi) else (hi, f_hi)
    side = 0
    while abs(f) >= tol:
        if evals >= max_evals:
            raise BracketError(f"root finding did not converge (|Upsilon - 1| = {abs(f):.3g})")
        lam = (lo * f_hi - hi * f_lo) / (f_hi - f_lo)
        if not lo < lam < hi:
            lam = 0.5 * (lo + hi)
        f = ups(lam) - 1.0
        evals += 1
        # Illinois modification keeps false position from stalling on one side
        if f < 0:
            lo, f_lo = lam, f
            if side == -1:
                f_hi *= 0.5
            side = -1
        else:
            hi, f_hi = lam, f
            if side == 1:
                f_lo *= 0.5
            side = 1
    phi, rep, rho = ups.solve(lam)
    mass = rho.mass
    measure = BoundaryMeasure(rho.weights / mass, mesh)
    values = phi.evaluate(mesh.points)
    return EquilibriumResult(measure, phi, float(lam), abs(mass - 1.0), "lambda_bisection", values, rep,
                             [{"lambda": l, "mass": m} for l, m in ups.table()], mass)


def _probe_points(mesh: BoundaryMesh, grid: Grid, factors=(1.25, 1.5, 2.0)) -> np.ndarray:
    c = np.zeros(3) if mesh.domain is None else np.asarray(mesh.domain.center)
    pts = np.concatenate([c + f * (mesh.points - c) for f in factors])
    return pts[np.all(np.abs(pts) < grid.L - grid.h, axis=1)]


def cross_validate(a: EquilibriumResult, b: EquilibriumResult, mesh: BoundaryMesh) -> dict:
    """Relative plateau difference, sup potential difference on exterior probes, TV distance."""
    grid = a.potential.grid
    pts = _probe_points(mesh, grid)
    va = a.potential.evaluate(pts)
    vb = b.potential.evaluate(pts)
    return {
        "lambda_rel_diff": abs(a.lambda_star - b.lambda_star) / a.lambda_star,
        "potential_sup_diff": float(np.max(np.abs(va - vb))) if len(pts) else 0.0,
        "tv_distance": total_variation(a.measure, b.measure),
    }


def equilibrium_diagnostics(result: EquilibriumResult, mesh: BoundaryMesh, grid: Optional[Grid] = None,
                            seed: int = 0, n_probes: int = 10) -> dict:
    """Constancy checks on the closed domain and on the boundary."""
    phi = result.potential
    grid = grid or phi.grid
    lam = result.lambda_star
    inside = grid.inside
    vals = phi.values[inside]
    rng = np.random.default_rng(seed)
    probes = [abs(result.pair(random_measure(mesh, rng)) - lam) for _ in range(n_probes)]
    op = phi.meta.get("gradient") or CellGradient(grid)
    try:
        dn = normal_derivative(phi, mesh, grid)
        negative = float(np.mean(dn < 0))
    except Exception as exc:  # stencil may leave a tight box
        log.warning("normal derivative unavailable: %s", exc)
        negative = float("nan")
    return {
        "spread": float(vals.max() - vals.min()) if vals.size else 0.0,
        "spread_rel": float(vals.max() - vals.min()) / lam if vals.size else 0.0,
        "probe_max_dev": float(max(probes)),
        "probe_max_rel": float(max(probes)) / lam,
        "pointwise_max_rel": float(np.max(np.abs(result.point_values - lam))) / lam,
        "theta": 1.0 - op.max_norm(phi.values),
        "negative_normal_fraction": negative,
    }


@dataclass
class HierarchyRow:
    model: str
    lambda_star: float
    mass: float
    k_energy: float
    action: float
    tv_to_bi: float = float("nan")


def hierarchy_sweep(domain: DomainSpec, grid: Grid, max_n: int = 6, cfg: Optional[SolverConfig] = None,
                    mesh: Optional[BoundaryMesh] = None, tol: float = 1e-11) -> tuple:
    """Equilibria of the truncated models n = 1..max_n and of Born-Infeld.

    ``k_energy`` is the K-type energy of the equilibrium potential and
    ``action`` the minimal action ``J - lam * mass``; both use the same
    discrete gradient as the solver. The level is resolved to ``tol`` in mass
    so that row-to-row differences are not swamped by the normalization.
    """
    cfg = cfg or SolverConfig(tol=1e-11)
    mesh = mesh or build_boundary_mesh(domain, 1024)
    if grid.domain != domain:
        grid = Grid(grid.L, grid.m, domain)
    rows, results = [], {}
    for name in [f"n={n}" for n in range(1, max_n + 1)] + ["bi"]:
        model = make_model(name)
        c = cfg.with_model(model)
        res = lambda_bisection_equilibrium(domain, grid, c, mesh=mesh, tol=tol)
        phi = res.potential
        op = phi.meta["gradient"]
        tf, tb = op.squared_norms(phi.values)
        J = cell_integral(model.F(tf), model.F(tb), grid)
        K = cell_integral(model.K(tf), model.K(tb), grid)
        rows.append(HierarchyRow(model.name, res.lambda_star, res.mass, K, J - res.lambda_star * res.mass))
        results[model.name] = res
    bi = results["bi"].measure
    for r in rows:
        r.tv_to_bi = total_variation(results[r.model].measure, bi)
    return rows, results
