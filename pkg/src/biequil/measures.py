"""Boundary measures, grid transfers and mollification."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .geometry import BoundaryMesh, Grid, GridFunction, edge_crossings


@dataclass
class BoundaryMeasure:
    """Nonnegative weights ``q_i`` attached to the points of a boundary mesh."""

    weights: np.ndarray
    mesh: BoundaryMesh

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.shape != (len(self.mesh),):
            raise ValueError("one weight per mesh point required")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("measure weights must be finite and nonnegative")

    @property
    def mass(self) -> float:
        return float(self.weights.sum())

    @property
    def density(self) -> np.ndarray:
        """Density with respect to surface measure, ``q_i / w_i``."""
        return self.weights / self.mesh.weights

    def normalized(self) -> "BoundaryMeasure":
        return BoundaryMeasure(self.weights / self.weights.sum(), self.mesh)

    def to_rows(self) -> np.ndarray:
        """Rows ``(x_1, .., x_N, weight)`` for CSV export."""
        return np.column_stack((self.mesh.points, self.weights))


@dataclass
class MollifiedDensity:
    """Grid density ``f_eps`` obtained by mollifying a boundary measure."""

    density: GridFunction
    eps: float

    @property
    def grid(self) -> Grid:
        return self.density.grid

    @property
    def mass(self) -> float:
        return float(self.density.values.sum()) * self.grid.h ** 3


def uniform_measure(mesh: BoundaryMesh) -> BoundaryMeasure:
    """``q_i = w_i / sum w``: the normalized surface measure."""
    if len(mesh) == 0:
        raise ValueError("empty mesh")
    return BoundaryMeasure(mesh.weights / mesh.weights.sum(), mesh)


def dirac_measure(mesh: BoundaryMesh, index: int) -> BoundaryMeasure:
    q = np.zeros(len(mesh))
    q[index] = 1.0
    return BoundaryMeasure(q, mesh)


def random_measure(mesh: BoundaryMesh, rng: np.random.Generator) -> BoundaryMeasure:
    """Normalized i.i.d. uniform weights."""
    q = rng.random(len(mesh))
    return BoundaryMeasure(q / q.sum(), mesh)


def total_variation(a: BoundaryMeasure, b: BoundaryMeasure) -> float:
    """``(1/2) sum |q_a - q_b|`` for measures on the same mesh."""
    if len(a.weights) != len(b.weights):
        raise ValueError("measures live on different meshes")
    return 0.5 * float(np.abs(a.weights - b.weights).sum())


def bump(r):
    """Unnormalized C-infinity bump ``exp(-1/(1-r^2))`` on ``r < 1``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r[inside] ** 2))
    return out


def mollifier_matrix(points: np.ndarray, grid: Grid, eps: float) -> sparse.csr_matrix:
    """Rows hold the bump around each point, normalized to unit discrete integral."""
    h = grid.h
    rad = int(np.ceil(eps / h)) + 1
    x = grid.x
    rows, cols, vals = [], [], []
    for i, p in enumerate(np.atleast_2d(points)):
        c = np.rint((p + grid.L) / h).astype(int)
        rng = [np.arange(max(c[a] - rad, 0), min(c[a] + rad + 1, grid.m)) for a in range(3)]
        I, J, K = np.meshgrid(*rng, indexing="ij")
        r = np.sqrt((x[I] - p[0]) ** 2 + (x[J] - p[1]) ** 2 + (x[K] - p[2]) ** 2) / eps
        w = bump(r)
        w[w < 1e-300] = 0.0
        s = w.sum()
        if s == 0:
            raise ValueError("mollifier support contains no grid node")
        sel = w > 0
        rows.append(np.full(sel.sum(), i))
        cols.append(np.ravel_multi_index((I[sel], J[sel], K[sel]), grid.shape))
        vals.append(w[sel] / (s * h ** 3))
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(len(rows), grid.m ** 3),
    )


def mollify(rho: BoundaryMeasure, eps: float, grid: Grid) -> MollifiedDensity:
    """``f_eps(x) = sum_i q_i eta_eps(x_i - x)`` on the grid nodes.

    The bump is normalized on the grid, so ``h^3 sum f_eps`` equals the mass
    of ``rho`` to roundoff.
    """
    if eps < 2 * grid.h * (1 - 1e-12):
        raise ValueError(f"mollification radius {eps:.6g} is below 2h = {2 * grid.h:.6g}")
    M = mollifier_matrix(rho.mesh.points, grid, eps)
    f = (M.T @ rho.weights).reshape(grid.shape)
    return MollifiedDensity(GridFunction(f, grid), float(eps))


class SurfaceTransfer:
    """Transfer between mesh points and the grid through cut-edge crossings.

    Mesh charges are spread tangentially onto the points where grid edges cross
    the boundary with a Gaussian partition of unity, each crossing weighted by
    the surface area it represents (``|n_a| h^2`` for an edge along axis a).
    A crossing charge is then split linearly between the two endpoints of its
    edge. ``pair`` is the exact adjoint, so ``sum q_i pair(u)_i`` equals the
    discrete pairing of the assigned grid charges with ``u``.

    The default kernel width ``sigma = sqrt(h l / 3)`` (``l`` the inradius)
    shrinks more slowly than h, so the number of crossings averaged per mesh
    point grows under refinement and the recovered density converges.
    """

    def __init__(self, mesh: BoundaryMesh, grid: Grid, sigma: Optional[float] = None):
        if grid.domain is None:
            raise ValueError("surface transfer needs a grid with a domain")
        self.mesh = mesh
        self.grid = grid
        self.sigma = np.sqrt(grid.h * grid.domain.inradius / 3.0) if sigma is None else float(sigma)
        self.crossings = edge_crossings(grid)
        pts = np.concatenate([c.points for c in self.crossings])
        area = np.concatenate([np.abs(c.normals[:, c.axis]) * grid.h ** 2 for c in self.crossings])
        lo = np.concatenate([np.ravel_multi_index(c.lower, grid.shape) for c in self.crossings])
        up = np.concatenate([np.ravel_multi_index(c.upper, grid.shape) for c in self.crossings])
        t = np.concatenate([c.t for c in self.crossings])
        self.crossing_points = pts
        self.crossing_area = area
        nc = len(pts)
        # crossing -> grid node split along the edge
        self.split = sparse.csr_matrix(
            (np.concatenate((1.0 - t, t)), (np.concatenate((lo, up)), np.tile(np.arange(nc), 2))),
            shape=(grid.m ** 3, nc),
        )
        K = self._kernel(mesh.points, pts)
        # mesh -> crossings: for each mesh point a partition over crossings
        Ka = K.multiply(area[None, :]).tocsr()
        row = np.asarray(Ka.sum(axis=1)).ravel()
        if np.any(row == 0):
            raise ValueError("a mesh point has no crossing within the transfer kernel")
        self.spread = sparse.diags(1.0 / row) @ Ka  # (points, crossings)
        # crossings -> mesh: for each crossing a partition over mesh points
        Kw = K.multiply(mesh.weights[:, None]).tocsc()
        col = np.asarray(Kw.sum(axis=0)).ravel()
        if np.any(col == 0):
            raise ValueError("a crossing has no mesh point within the transfer kernel")
        self.gather = (Kw @ sparse.diags(1.0 / col)).tocsr()  # (points, crossings)

    def _kernel(self, a, b):
        ta, tb = cKDTree(a), cKDTree(b)
        D = ta.sparse_distance_matrix(tb, 3.0 * self.sigma, output_type="coo_matrix")
        vals = np.exp(-0.5 * (D.data / self.sigma) ** 2)
        return sparse.csr_matrix((vals, (D.row, D.col)), shape=(len(a), len(b)))

    def to_grid(self, q: np.ndarray) -> np.ndarray:
        """Nodal charges (units of charge, not density)."""
        c = self.spread.T @ q
        return (self.split @ c).reshape(self.grid.shape)

    def pair(self, u: np.ndarray) -> np.ndarray:
        """Per-point values whose q-weighted sum is the grid pairing."""
        return self.spread @ (self.split.T @ np.asarray(u).ravel())

    def collect(self, c: np.ndarray) -> np.ndarray:
        """Move crossing charges to mesh points, conserving total charge."""
        return self.gather @ c


def grid_charges(rho: Union[BoundaryMeasure, MollifiedDensity], grid: Grid,
                 transfer: Union[str, SurfaceTransfer] = "trilinear") -> np.ndarray:
    """Nodal charge array ``b`` such that the discrete pairing is ``b . u``."""
    if isinstance(rho, MollifiedDensity):
        return rho.density.values * grid.h ** 3
    if isinstance(transfer, SurfaceTransfer):
        return transfer.to_grid(rho.weights)
    if transfer == "trilinear":
        B = grid.interpolation_matrix(rho.mesh.points)
        return (B.T @ rho.weights).reshape(grid.shape)
    if transfer == "surface":
        return SurfaceTransfer(rho.mesh, grid).to_grid(rho.weights)
    raise ValueError(f"unknown transfer {transfer!r}")


def pairing(rho: Union[BoundaryMeasure, MollifiedDensity], phi) -> float:
    """``<rho, phi>``: trilinear point evaluation, or the grid integral for densities."""
    if isinstance(rho, MollifiedDensity):
        v = phi.values if isinstance(phi, GridFunction) else phi
        return float(np.sum(rho.density.values * v)) * rho.grid.h ** 3
    if not isinstance(phi, GridFunction):
        raise TypeError("pairing with a boundary measure needs a GridFunction")
    return float(rho.weights @ phi.evaluate(rho.mesh.points))
