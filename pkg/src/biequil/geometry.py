"""Domains, Cartesian grids and boundary quadrature meshes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

SHAPES = ("ball", "ellipsoid", "superellipsoid")


class GeometryError(ValueError):
    """Raised when a domain, grid or mesh request is invalid."""


@dataclass(frozen=True)
class DomainSpec:
    """A smooth star-shaped domain given by a level function ``level(x) <= 1``.

    Parameters
    ----------
    shape : {"ball", "ellipsoid", "superellipsoid"}
    semi_axes : sequence of float
        Semi-axes. A ball of radius R uses ``(R, R, R)``.
    exponent : float
        Superellipsoid exponent ``p >= 2`` (2 for balls and ellipsoids).
    dimension : int
    center : sequence of float, optional
    """

    shape: str
    semi_axes: tuple
    exponent: float = 2.0
    dimension: int = 3
    center: tuple = field(default=None)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise GeometryError(f"unsupported shape {self.shape!r}")
        if self.dimension < 3:
            raise GeometryError("dimension must be >= 3")
        axes = tuple(float(a) for a in self.semi_axes)
        if len(axes) != self.dimension:
            raise GeometryError("need one semi-axis per dimension")
        if min(axes) <= 0:
            raise GeometryError("semi-axes must be positive")
        if self.exponent < 2:
            raise GeometryError("superellipsoid exponent must be >= 2")
        object.__setattr__(self, "semi_axes", axes)
        c = (0.0,) * self.dimension if self.center is None else tuple(float(v) for v in self.center)
        if len(c) != self.dimension:
            raise GeometryError("center has wrong dimension")
        object.__setattr__(self, "center", c)

    @classmethod
    def ball(cls, radius: float = 1.0, dimension: int = 3, center=None) -> "DomainSpec":
        if radius <= 0:
            raise GeometryError("radius must be positive")
        return cls("ball", (radius,) * dimension, 2.0, dimension, center)

    @classmethod
    def ellipsoid(cls, semi_axes: Sequence[float], center=None) -> "DomainSpec":
        return cls("ellipsoid", tuple(semi_axes), 2.0, len(semi_axes), center)

    @classmethod
    def superellipsoid(cls, semi_axes: Sequence[float], exponent: float, center=None) -> "DomainSpec":
        return cls("superellipsoid", tuple(semi_axes), float(exponent), len(semi_axes), center)

    @property
    def radius(self) -> float:
        if self.shape != "ball":
            raise GeometryError("radius is only defined for balls")
        return self.semi_axes[0]

    def level(self, x: np.ndarray) -> np.ndarray:
        """Level function along the last axis of ``x``; ``<= 1`` means inside."""
        y = (np.asarray(x, dtype=float) - np.asarray(self.center)) / np.asarray(self.semi_axes)
        if self.exponent == 2.0:
            return np.sum(y * y, axis=-1)
        return np.sum(np.abs(y) ** self.exponent, axis=-1)

    def level_gradient(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(self.semi_axes)
        y = (np.asarray(x, dtype=float) - np.asarray(self.center)) / a
        p = self.exponent
        return p * np.sign(y) * np.abs(y) ** (p - 1) / a

    def contains(self, x: np.ndarray) -> np.ndarray:
        return self.level(x) <= 1.0

    def _radial_extent(self, u: np.ndarray) -> np.ndarray:
        # distance from the center to the boundary along unit directions u
        return self.level(u + np.asarray(self.center)) ** (-1.0 / self.exponent)

    @property
    def circumradius(self) -> float:
        """Largest distance from the origin to a point of the closed domain."""
        c = np.linalg.norm(self.center)
        if self.shape in ("ball", "ellipsoid"):
            return c + max(self.semi_axes)
        u = fibonacci_sphere(20000) if self.dimension == 3 else _axis_and_diagonals(self.dimension)
        return c + float(self._radial_extent(u).max()) * (1 + 1e-6)

    @property
    def inradius(self) -> float:
        """Radius of the largest centered ball contained in the domain."""
        return min(self.semi_axes)

    @property
    def extent(self) -> np.ndarray:
        """Half-widths of the axis-aligned bounding box around the origin."""
        return np.abs(np.asarray(self.center)) + np.asarray(self.semi_axes)


def _axis_and_diagonals(n: int) -> np.ndarray:
    rng = np.random.default_rng(0)
    u = rng.standard_normal((20000, n))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@dataclass
class Grid:
    """Uniform grid on the box ``[-L, L]^3`` with ``m`` points per axis.

    Nodes on the box faces carry homogeneous Dirichlet data.
    """

    L: float
    m: int
    domain: Optional[DomainSpec] = None
    dimension: int = 3

    def __post_init__(self):
        if self.m < 8:
            raise GeometryError("m must be >= 8")
        if self.dimension != 3:
            raise GeometryError("grid solves are implemented for N = 3 only")
        self._inside = None

    @property
    def h(self) -> float:
        return 2.0 * self.L / (self.m - 1)

    @property
    def x(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.m)

    @property
    def shape(self) -> tuple:
        return (self.m,) * self.dimension

    def nodes(self) -> np.ndarray:
        """Node coordinates, shape ``(m, m, m, 3)``."""
        return np.stack(np.meshgrid(self.x, self.x, self.x, indexing="ij"), axis=-1)

    def node_index(self, point: Sequence[float]) -> tuple:
        """Index of the node nearest to ``point``."""
        i = np.rint((np.asarray(point, dtype=float) + self.L) / self.h).astype(int)
        return tuple(np.clip(i, 0, self.m - 1))

    @property
    def inside(self) -> np.ndarray:
        """Boolean mask of nodes in the closed domain."""
        if self.domain is None:
            raise GeometryError("grid has no domain attached")
        if self._inside is None:
            self._inside = self.domain.contains(self.nodes())
        return self._inside

    def boundary_mask(self) -> np.ndarray:
        b = np.zeros(self.shape, dtype=bool)
        b[[0, -1]] = True
        b[:, [0, -1]] = True
        b[:, :, [0, -1]] = True
        return b

    def interpolation_matrix(self, points: np.ndarray) -> sparse.csr_matrix:
        """Trilinear interpolation from nodes to ``points`` as a sparse matrix."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        f = (pts + self.L) / self.h
        if np.any(f < 0) or np.any(f > self.m - 1):
            raise GeometryError("interpolation point outside the box")
        i0 = np.minimum(np.floor(f).astype(int), self.m - 2)
        t = f - i0
        rows, cols, vals = [], [], []
        for corner in np.ndindex(2, 2, 2):
            w = np.ones(len(pts))
            for a, c in enumerate(corner):
                w = w * (t[:, a] if c else 1.0 - t[:, a])
            idx = np.ravel_multi_index(tuple(i0[:, a] + corner[a] for a in range(3)), self.shape)
            rows.append(np.arange(len(pts)))
            cols.append(idx)
            vals.append(w)
        return sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(len(pts), self.m ** 3),
        )


def build_grid(domain: DomainSpec, L: float, m: int) -> Grid:
    """Build the computational box around ``domain``.

    Raises
    ------
    GeometryError
        If the box does not strictly contain the domain or ``m < 8``.
    """
    if domain.dimension != 3:
        raise GeometryError("grid solves are implemented for N = 3 only")
    R = domain.circumradius
    if not L > R:
        raise GeometryError(f"box half-width L={L} must exceed the domain circumradius {R:.6g}")
    if m < 8:
        raise GeometryError("m must be >= 8")
    return Grid(float(L), int(m), domain)


@dataclass
class GridFunction:
    """Nodal values on a grid.

    ``plateau`` marks exterior-problem potentials that equal a constant on the
    closed domain; point evaluation then returns that constant on the domain.
    ``meta`` carries solver context (model, discrete gradient) for flux
    post-processing.
    """

    values: np.ndarray
    grid: Grid
    plateau: Optional[float] = None
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).reshape(self.grid.shape)

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(points)
        out = self.grid.interpolation_matrix(pts) @ self.values.ravel()
        if self.plateau is not None and self.grid.domain is not None:
            on = self.grid.domain.level(pts) <= 1.0 + 1e-9
            out[on] = self.plateau
        return out

    def axis_profile(self, axis: int = 0) -> tuple:
        """Values along the positive half of a coordinate axis through the origin."""
        c = self.grid.m // 2
        idx = [c, c, c]
        idx[axis] = slice(c, None)
        return self.grid.x[c:], self.values[tuple(idx)].copy()


@dataclass
class BoundaryMesh:
    """Quadrature points on the boundary with weights and outward normals."""

    points: np.ndarray
    weights: np.ndarray
    normals: np.ndarray
    domain: Optional[DomainSpec] = None

    def __len__(self) -> int:
        return len(self.weights)

    @property
    def area(self) -> float:
        return float(self.weights.sum())

    def rotated(self, Q: np.ndarray) -> "BoundaryMesh":
        """Rigidly rotate a mesh about the domain center (balls stay balls)."""
        c = np.zeros(3) if self.domain is None else np.asarray(self.domain.center)
        return BoundaryMesh((self.points - c) @ Q.T + c, self.weights.copy(), self.normals @ Q.T, self.domain)


def fibonacci_sphere(K: int) -> np.ndarray:
    """Quasi-uniform points on the unit sphere in R^3."""
    i = np.arange(K) + 0.5
    z = 1.0 - 2.0 * i / K
    theta = np.pi * (1.0 + 5 ** 0.5) * i
    r = np.sqrt(1.0 - z * z)
    return np.stack((r * np.cos(theta), r * np.sin(theta), z), axis=1)


def build_boundary_mesh(domain: DomainSpec, resolution: int) -> BoundaryMesh:
    """Fibonacci-sphere mesh mapped onto ``domain``.

    Balls get equal weights ``4 pi R^2 / K``. Ellipsoids use the affine image of
    the sphere points with the surface Jacobian as weights; superellipsoids use
    the radial projection.
    """
    if resolution < 16:
        raise GeometryError("boundary mesh needs at least 16 points")
    if domain.dimension != 3:
        raise GeometryError("boundary meshes are implemented for N = 3 only")
    u = fibonacci_sphere(resolution)
    c = np.asarray(domain.center)
    a = np.asarray(domain.semi_axes)
    dw = 4.0 * np.pi / resolution
    if domain.shape == "ball":
        R = a[0]
        return BoundaryMesh(c + R * u, np.full(resolution, dw * R * R), u.copy(), domain)
    if domain.shape == "ellipsoid":
        pts = c + a * u
        n = u / a
        nn = np.linalg.norm(n, axis=1)
        w = dw * np.prod(a) * nn
        return BoundaryMesh(pts, w, n / nn[:, None], domain)
    r = domain._radial_extent(u)
    pts = c + r[:, None] * u
    # a few Newton steps along the ray put the points on the level set to roundoff
    for _ in range(3):
        f = domain.level(pts) - 1.0
        df = np.sum(domain.level_gradient(pts) * u, axis=1)
        r = r - f / df
        pts = c + r[:, None] * u
    g = domain.level_gradient(pts)
    n = g / np.linalg.norm(g, axis=1, keepdims=True)
    w = dw * r ** 2 / np.sum(n * u, axis=1)
    return BoundaryMesh(pts, w, n, domain)


@dataclass
class EdgeCrossings:
    """Grid edges along one axis whose endpoints lie on opposite sides of the boundary.

    ``lower`` holds the index of the lower endpoint, ``t`` the fractional
    position of the crossing measured from it, ``lower_inside`` whether that
    endpoint is in the closed domain, and ``normals`` the outward unit normals
    at the crossing points.
    """

    axis: int
    lower: tuple
    t: np.ndarray
    lower_inside: np.ndarray
    points: np.ndarray
    normals: np.ndarray

    def __len__(self) -> int:
        return len(self.t)

    @property
    def upper(self) -> tuple:
        up = list(self.lower)
        up[self.axis] = up[self.axis] + 1
        return tuple(up)

    @property
    def outside_fraction(self) -> np.ndarray:
        """Distance from the outside endpoint to the crossing, in units of h."""
        return np.where(self.lower_inside, 1.0 - self.t, self.t)


def edge_crossings(grid: Grid, bisection_steps: int = 60) -> list:
    """Locate boundary crossings of every grid edge, one ``EdgeCrossings`` per axis."""
    domain = grid.domain
    if domain is None:
        raise GeometryError("grid has no domain attached")
    inside = grid.inside
    X = grid.nodes()
    out = []
    for a in range(3):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        in0 = inside[tuple(lo)]
        cut = in0 ^ inside[tuple(hi)]
        idx = np.nonzero(cut)
        P0 = X[tuple(lo)][idx]
        inside0 = in0[idx]
        s_lo = np.zeros(len(P0))
        s_hi = np.ones(len(P0))
        for _ in range(bisection_steps):
            mid = 0.5 * (s_lo + s_hi)
            P = P0.copy()
            P[:, a] += grid.h * mid
            same = domain.contains(P) == inside0
            s_lo = np.where(same, mid, s_lo)
            s_hi = np.where(same, s_hi, mid)
        t = 0.5 * (s_lo + s_hi)
        Pc = P0.copy()
        Pc[:, a] += grid.h * t
        g = domain.level_gradient(Pc)
        n = g / np.linalg.norm(g, axis=1, keepdims=True)
        out.append(EdgeCrossings(a, idx, t, inside0, Pc, n))
    return out
