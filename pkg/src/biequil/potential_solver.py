"""Grid solvers for the Born-Infeld and truncated potentials.

Both the full-box problem (potential of a given charge) and the exterior
Dirichlet problem (potential equal to a level on the closed domain) are
minimized with a damped Newton method: conjugate gradients on the Hessian
with an exact fast-sine-transform Poisson preconditioner and Armijo
backtracking. The Born-Infeld energy is ``+inf`` outside the admissible set,
so backtracking keeps every iterate strictly spacelike.

The exterior problem uses cut-edge weights: an edge crossing the boundary at
fraction ``theta`` (measured from its outside endpoint) is weighted by
``1/sqrt(theta)``, which reproduces the energy of the short exterior piece of
the edge.
"""
from __future__ import annotations

import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence, Union

import numpy as np
from scipy.fft import dstn, idstn

from .functionals import CellGradient, Model, Truncated, cell_integral, make_model
from .geometry import BoundaryMesh, DomainSpec, GeometryError, Grid, GridFunction, edge_crossings
from .measures import BoundaryMeasure, MollifiedDensity, SurfaceTransfer, grid_charges
from .radial import invert_constitutive

_TINY = np.finfo(float).tiny


def fft_workers() -> int:
    """FFT thread count from ``BIEQUIL_THREADS`` (default 1, so results do not depend on the host)."""
    try:
        return max(1, int(os.environ.get("BIEQUIL_THREADS", "1")))
    except ValueError:
        return 1


class SolverError(RuntimeError):
    """Numerical breakdown (NaN, infeasible start)."""


class InfeasibleLevel(ValueError):
    """No 1-Lipschitz function connects the level to zero inside the box."""


@dataclass
class SolverConfig:
    """Newton solver settings.

    ``tol`` bounds the preconditioned gradient norm relative to the square
    root of the action, i.e. the relative energy-norm error of the iterate.
    """

    model: Union[str, Model] = "bi"
    tol: float = 1e-8
    max_iter: int = 60
    cg_max_iter: int = 500
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 60
    transfer: str = "trilinear"
    theta_min: float = 0.1

    def __post_init__(self):
        self.model = make_model(self.model)
        if not self.tol > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1 or self.cg_max_iter < 1:
            raise ValueError("iteration limits must be positive")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo < 0.5:
            raise ValueError("invalid backtracking parameters")
        if not 0 < self.theta_min <= 1:
            raise ValueError("theta_min must lie in (0, 1]")

    def with_model(self, model) -> "SolverConfig":
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["model"] = make_model(model)
        return SolverConfig(**d)


@dataclass
class SolveReport:
    iterations: int
    action: float
    residual: float
    theta: float
    wall_time: float
    converged: bool
    cg_iterations: int = 0
    history: list = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


class PoissonPreconditioner:
    """Exact inverse of ``h^3 (-Laplace_h)`` with zero data on the box faces."""

    def __init__(self, grid: Grid):
        n = grid.m - 2
        k = np.arange(1, n + 1)
        e = (2.0 - 2.0 * np.cos(np.pi * k / (n + 1))) / grid.h ** 2
        self.eig = e[:, None, None] + e[None, :, None] + e[None, None, :]
        self.scale = grid.h ** 3

    def __call__(self, r: np.ndarray) -> np.ndarray:
        out = np.zeros_like(r)
        inner = r[1:-1, 1:-1, 1:-1] / self.scale
        w = fft_workers()
        out[1:-1, 1:-1, 1:-1] = idstn(dstn(inner, type=1, workers=w) / self.eig, type=1, workers=w)
        return out


class _Problem:
    """Discrete action ``int F(|Du|^2) - b.u`` restricted to the free nodes."""

    def __init__(self, grid: Grid, model: Model, op: CellGradient, b: np.ndarray, free: np.ndarray):
        self.grid, self.model, self.op, self.b = grid, model, op, b
        self.free = free.astype(float)

    def energy(self, u):
        tf, tb = self.op.squared_norms(u)
        if self.model.bounded and max(tf.max(), tb.max()) >= 1.0:
            return np.inf
        return cell_integral(self.model.F(tf), self.model.F(tb), self.grid) - float(np.sum(self.b * u))

    def flux(self, u):
        gf, gb = self.op(u)
        tf, tb = (gf ** 2).sum(0), (gb ** 2).sum(0)
        return self.model.dF(tf) * gf, self.model.dF(tb) * gb

    def gradient_full(self, u):
        vf, vb = self.flux(u)
        return self.grid.h ** 2 * 0.5 * self.op.adjoint(vf, vb) - self.b

    def hessian(self, u):
        gf, gb = self.op(u)
        af, cf = self.model.d2F((gf ** 2).sum(0))
        ab, cb = self.model.d2F((gb ** 2).sum(0))
        c = self.grid.h ** 2 * 0.5

        def Hv(v):
            vf, vb = self.op(v)
            wf = af * vf + cf * (gf * vf).sum(0) * gf
            wb = ab * vb + cb * (gb * vb).sum(0) * gb
            return c * self.op.adjoint(wf, wb) * self.free

        return Hv


def _newton(problem: _Problem, u: np.ndarray, cfg: SolverConfig, prec) -> tuple:
    t0 = time.perf_counter()
    M = problem.free
    E = problem.energy(u)
    if not np.isfinite(E):
        raise SolverError("initial guess is not admissible")
    history = [E]
    cg_total = 0
    converged = False
    message = "max iterations reached"
    rel = np.inf
    it = 0
    for it in range(cfg.max_iter):
        g = problem.gradient_full(u) * M
        z = prec(g) * M
        res2 = float(np.sum(g * z))
        if not np.isfinite(res2):
            raise SolverError("NaN encountered in the gradient")
        rel = np.sqrt(max(res2, 0.0) / max(abs(E), _TINY))
        if rel <= cfg.tol or res2 == 0.0:
            converged, message = True, "converged"
            break
        Hv = problem.hessian(u)
        eta = min(0.1, rel)
        d = np.zeros_like(u)
        r = -g
        zr = -z
        p = zr.copy()
        rz = float(np.sum(r * zr))
        r0 = np.sqrt(rz)
        for k in range(cfg.cg_max_iter):
            Hp = Hv(p)
            curv = float(np.sum(p * Hp))
            if curv <= 0:
                break
            a = rz / curv
            d += a * p
            r -= a * Hp
            zr = prec(r) * M
            rz_new = float(np.sum(r * zr))
            if np.sqrt(max(rz_new, 0.0)) <= eta * r0:
                break
            p = zr + (rz_new / rz) * p
            rz = rz_new
        cg_total += k + 1
        slope = float(np.sum(g * d))
        step, accepted = 1.0, False
        for _ in range(cfg.max_backtracks):
            En = problem.energy(u + step * d)
            if En <= E + cfg.armijo * step * slope:
                accepted = True
                break
            # near the solution the decrease drops below roundoff of E
            if rel < 1e-5 and step == 1.0 and np.isfinite(En) and En <= E + 64 * np.finfo(float).eps * abs(E):
                accepted = True
                break
            step *= cfg.backtrack
        if not accepted:
            converged = rel <= np.sqrt(cfg.tol)
            message = "line search stalled"
            break
        u = u + step * d
        E = En
        history.append(E)
    else:
        it = cfg.max_iter
    theta = 1.0 - problem.op.max_norm(u)
    report = SolveReport(it, float(E), float(rel), float(theta), time.perf_counter() - t0,
                         bool(converged), cg_total, [float(e) for e in history], message)
    return u, report


def _interior_mask(grid: Grid) -> np.ndarray:
    return ~grid.boundary_mask()


def solve_potential(rho: Union[BoundaryMeasure, MollifiedDensity], grid: Grid,
                    cfg: Optional[SolverConfig] = None, u0: Optional[np.ndarray] = None,
                    transfer: Union[str, SurfaceTransfer, None] = None) -> tuple:
    """Minimize the discrete action of ``rho`` over the whole box.

    Returns
    -------
    (GridFunction, SolveReport)
    """
    cfg = cfg or SolverConfig()
    model = cfg.model
    b = grid_charges(rho, grid, transfer or cfg.transfer)
    if not b.sum() > 0:
        raise ValueError("charge must have positive total mass")
    free = _interior_mask(grid)
    b = b * free
    op = CellGradient(grid)
    prec = PoissonPreconditioner(grid)
    problem = _Problem(grid, model, op, b, free)
    if u0 is None or not np.isfinite(problem.energy(u0)):
        # the two-corner stencil has the 7-point Laplacian as its quadratic part,
        # so the Maxwell solution is one preconditioner application
        u0 = prec(b)
        if model.bounded:
            gmax = op.max_norm(u0)
            if gmax >= 0.9:
                u0 = u0 * (0.9 / gmax)
    u, report = _newton(problem, np.array(u0, dtype=float), cfg, prec)
    phi = GridFunction(u, grid, meta={"model": model, "gradient": op, "charges": b})
    return phi, report


def cut_edge_setup(grid: Grid, theta_min: float = 0.1) -> tuple:
    """Edge weights ``1/sqrt(theta)`` on boundary-crossing edges, plus the crossings."""
    key = ("cut", theta_min)
    cache = grid.__dict__.setdefault("_cache", {})
    if key not in cache:
        crossings = edge_crossings(grid)
        W = []
        for a in range(3):
            shape = list(grid.shape)
            shape[a] -= 1
            w = np.ones(shape)
            c = crossings[a]
            w[c.lower] = 1.0 / np.sqrt(np.maximum(c.outside_fraction, theta_min))
            W.append(w)
        cache[key] = (tuple(W), crossings)
    return cache[key]


def box_clearance(domain: DomainSpec, grid: Grid) -> float:
    """Distance from the domain to the faces of the box."""
    return float(grid.L - np.max(domain.extent))


def _exterior_start(grid, W, inside, free, prec):
    # Maxwell solution at unit level: a feasible, well-shaped starting point
    op = CellGradient(grid, W)
    base = np.where(inside, 1.0, 0.0)
    maxwell = _Problem(grid, Truncated(1), op, np.zeros(grid.shape), free)
    u, _ = _newton(maxwell, base, SolverConfig(model=Truncated(1), tol=1e-10, max_iter=5), prec)
    return u


def solve_exterior_dirichlet(lam: float, domain: DomainSpec, grid: Grid,
                             cfg: Optional[SolverConfig] = None,
                             u0: Optional[np.ndarray] = None) -> tuple:
    """Potential equal to ``lam`` on the closed domain and 0 on the box faces.

    Only nodes outside the domain are unknowns. Raises ``InfeasibleLevel`` for
    Born-Infeld when ``lam`` is at least the distance from the domain to the box.
    """
    cfg = cfg or SolverConfig()
    model = cfg.model
    if not lam > 0:
        raise ValueError("level must be positive")
    if grid.domain != domain:
        grid = Grid(grid.L, grid.m, domain)
    clearance = box_clearance(domain, grid)
    if clearance <= 0:
        raise GeometryError("domain touches the box")
    if model.bounded and lam >= clearance:
        raise InfeasibleLevel(f"level {lam:.6g} >= distance {clearance:.6g} from the domain to the box")
    W, crossings = cut_edge_setup(grid, cfg.theta_min)
    inside = grid.inside
    free = ~inside & _interior_mask(grid)
    op = CellGradient(grid, W)
    prec_raw = PoissonPreconditioner(grid)
    fm = free.astype(float)
    prec = lambda r: prec_raw(r * fm) * fm
    problem = _Problem(grid, model, op, np.zeros(grid.shape), free)

    def pin(u, level=lam):
        u = np.where(inside, level, u)
        u[grid.boundary_mask()] = 0.0
        return u

    u = None
    if u0 is not None:
        u = pin(np.array(u0, dtype=float))
        if not np.isfinite(problem.energy(u)):
            u = None
    total_cg = 0
    if u is None:
        v = _exterior_start(grid, W, inside, free, prec)
        gmax = op.max_norm(v)
        if not model.bounded or lam * gmax < 0.9:
            u = pin(lam * v)
        else:
            # continuation in the level from a safely spacelike start
            level = 0.5 / gmax
            u, rep = _newton(problem, pin(level * v, level), cfg, prec)
            total_cg += rep.cg_iterations
            factor = 1.5
            while level < lam:
                nxt = min(lam, level * factor)
                trial = pin(u * (nxt / level), nxt)
                if not np.isfinite(problem.energy(trial)):
                    factor = np.sqrt(factor)
                    if factor < 1.0 + 1e-6:
                        raise SolverError("level continuation failed")
                    continue
                u, rep = _newton(problem, trial, cfg, prec)
                total_cg += rep.cg_iterations
                level = nxt
    u, report = _newton(problem, u, cfg, prec)
    report.cg_iterations += total_cg
    ext = free
    if ext.any():
        lo, hi = float(u[ext].min()), float(u[ext].max())
        if lo < -1e-12 * lam or hi > lam * (1 + 1e-12):
            report.message += f"; maximum principle violated (range [{lo:.3g}, {hi:.3g}])"
    phi = GridFunction(u, grid, plateau=float(lam),
                       meta={"model": model, "gradient": op, "crossings": crossings})
    return phi, report


def boundary_flux(phi: GridFunction) -> tuple:
    """Outward flux of the displacement through each cut edge of an exterior solution.

    Returns the crossings and one charge per crossing (concatenated over axes);
    their sum is the total reaction on the fixed nodes.
    """
    try:
        op, model, crossings = phi.meta["gradient"], phi.meta["model"], phi.meta["crossings"]
    except KeyError as exc:
        raise ValueError("flux recovery needs an exterior Dirichlet solution") from exc
    u = phi.values
    gf, gb = op(u)
    tf, tb = (gf ** 2).sum(0), (gb ** 2).sum(0)
    fluxes = op.edge_flux(model.dF(tf) * gf, model.dF(tb) * gb)
    h2 = phi.grid.h ** 2
    parts = []
    for c in crossings:
        f = fluxes[c.axis][c.lower]
        sign = np.where(c.lower_inside, -1.0, 1.0)
        parts.append(sign * h2 * 0.5 * f)
    return crossings, np.concatenate(parts)


def normal_derivative(phi: GridFunction, mesh: BoundaryMesh, grid: Optional[Grid] = None,
                      method: str = "auto", transfer: Optional[SurfaceTransfer] = None) -> np.ndarray:
    """Outer normal derivative of ``phi`` at the mesh points.

    ``method="fd"`` uses a one-sided second-order difference along the normal
    with step h. ``method="flux"`` recovers the normal displacement from the
    discrete fluxes through the cut edges (exterior solutions only) and maps it
    back to a slope through the constitutive law. ``"auto"`` picks ``flux``
    when the flux data are available.
    """
    grid = grid or phi.grid
    if method == "auto":
        method = "flux" if "crossings" in phi.meta else "fd"
    if method == "fd":
        d = grid.h
        x = mesh.points
        n = mesh.normals
        far = x + 2 * d * n
        if np.any(np.abs(far) >= grid.L):
            raise GeometryError("normal-derivative stencil exits the grid")
        f0 = phi.evaluate(x)
        f1 = phi.evaluate(x + d * n)
        f2 = phi.evaluate(far)
        return (-3.0 * f0 + 4.0 * f1 - f2) / (2.0 * d)
    if method == "flux":
        transfer = transfer or SurfaceTransfer(mesh, grid)
        _, c = boundary_flux(phi)
        q = transfer.collect(c)
        D = q / mesh.weights
        s = invert_constitutive(np.abs(D), phi.meta["model"])
        return -np.sign(D) * s
    raise ValueError(f"unknown method {method!r}")


def measure_from_normal_derivative(dn: np.ndarray, mesh: BoundaryMesh, model) -> BoundaryMeasure:
    """``q_i = g(|s_i|) (-s_i) w_i`` with ``s_i`` the outer normal derivative."""
    model = make_model(model)
    dn = np.asarray(dn, dtype=float)
    if model.bounded and np.any(np.abs(dn) >= 1.0):
        raise ValueError("|normal derivative| >= 1: Born-Infeld density is singular")
    q = model.g(np.abs(dn)) * (-dn) * mesh.weights
    if np.any(q < 0):
        raise ValueError("positive outer normal derivative gives a negative density")
    return BoundaryMeasure(q, mesh)


def richardson(Ls: Sequence[float], values: Sequence[float], exponents: Sequence[float] = (1.0,)) -> float:
    """Extrapolate ``v(L) = v_inf + sum_k c_k L^(-p_k)`` to ``L = inf``.

    Least squares when more samples than unknowns are given.
    """
    Ls = np.asarray(Ls, dtype=float)
    v = np.asarray(values, dtype=float)
    A = np.column_stack([np.ones_like(Ls)] + [Ls ** (-p) for p in exponents])
    if A.shape[0] < A.shape[1]:
        raise ValueError("not enough samples for the requested exponents")
    if A.shape[0] == A.shape[1]:
        sol = np.linalg.solve(A, v)
    else:
        sol = np.linalg.lstsq(A, v, rcond=None)[0]
    return float(sol[0]) if v.ndim == 1 else sol[0]
