"""Born-Infeld and truncated-series functionals on the grid.

The bulk integrands are written in terms of ``t = |grad phi|^2``:

* Born-Infeld: ``F(t) = 1 - sqrt(1 - t)``
* truncated of order n: ``F_n(t) = sum_h alpha_h / (2h) t^h``

Each cell of the grid carries two gradient vectors, built from the
forward differences at its lowest corner and the backward differences at its
highest corner; the cell integral is the average of the integrand over both.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .geometry import Grid, GridFunction


class ConstraintViolation(ValueError):
    """Discrete gradient leaves the admissible set ``|grad phi| <= 1``."""


@dataclass(frozen=True)
class SeriesCoefficients:
    n: int
    alpha: np.ndarray

    def __iter__(self):
        return iter(self.alpha)


def alpha_coefficients(n: int) -> SeriesCoefficients:
    """Coefficients ``alpha_1..alpha_n`` of the Taylor series of ``1 - sqrt(1-x^2)``.

    ``alpha_1 = 1`` and ``alpha_{h+1} = alpha_h (2h-1)/(2h)``.
    """
    if not (isinstance(n, (int, np.integer)) and 1 <= n <= 200):
        raise ValueError("series order must be an integer in [1, 200]")
    a = np.empty(n)
    a[0] = 1.0
    for h in range(1, n):
        a[h] = a[h - 1] * (2 * h - 1) / (2 * h)
    return SeriesCoefficients(int(n), a)


def series_partial_sum(x, n: int):
    """``sum_{h<=n} alpha_h/(2h) x^{2h}``, the truncated expansion of ``1 - sqrt(1-x^2)``."""
    a = alpha_coefficients(n).alpha
    t = np.asarray(x, dtype=float) ** 2
    out = np.zeros_like(t)
    for h in range(n, 0, -1):
        out = (out + a[h - 1] / (2 * h)) * t
    return out


class BornInfeld:
    """Born-Infeld bulk integrand with ``b = 1``."""

    name = "bi"
    bounded = True

    def F(self, t):
        return 1.0 - np.sqrt(1.0 - t)

    def dF(self, t):
        # derivative with respect to the gradient is dF(t) * g
        return 1.0 / np.sqrt(1.0 - t)

    def d2F(self, t):
        # Hessian in g is a I + c g g^T
        a = 1.0 / np.sqrt(1.0 - t)
        return a, a ** 3

    def K(self, t):
        return 1.0 / np.sqrt(1.0 - t) - 1.0

    def g(self, s):
        """Constitutive factor: the flux density is ``g(s) s``."""
        s = np.asarray(s)
        return 1.0 / np.sqrt((1.0 - s) * (1.0 + s))

    def __repr__(self):
        return "BornInfeld()"


class Truncated:
    """Order-n truncation of the Born-Infeld integrand (n=1 is Maxwell)."""

    bounded = False

    def __init__(self, n: int):
        self.coeffs = alpha_coefficients(n)
        self.n = self.coeffs.n
        self.alpha = self.coeffs.alpha
        self.name = f"n={self.n}"

    def _horner(self, c, t):
        t = np.asarray(t)
        out = np.zeros_like(t, dtype=np.result_type(t.dtype, np.float64)) + c[-1]
        for ck in c[-2::-1]:
            out = out * t + ck
        return out

    def F(self, t):
        h = np.arange(1, self.n + 1)
        return t * self._horner(self.alpha / (2 * h), t)

    def dF(self, t):
        return self._horner(self.alpha, t)

    def d2F(self, t):
        a = self.dF(t)
        if self.n == 1:
            return a, np.zeros_like(a)
        h = np.arange(2, self.n + 1)
        return a, self._horner(self.alpha[1:] * (2 * h - 2), t)

    def K(self, t):
        h = np.arange(1, self.n + 1)
        return t * self._horner((2 * h - 1) / (2 * h) * self.alpha, t)

    def g(self, s):
        s = np.asarray(s)
        return self._horner(self.alpha.astype(np.result_type(s.dtype, np.float64)), s * s)

    def __repr__(self):
        return f"Truncated({self.n})"


Model = Union[BornInfeld, Truncated]


def make_model(spec: Union[str, int, Model]) -> Model:
    """Parse ``"bi"``, ``"n=3"``, ``"truncated(3)"`` or an integer order."""
    if isinstance(spec, (BornInfeld, Truncated)):
        return spec
    if isinstance(spec, (int, np.integer)):
        return Truncated(int(spec))
    s = str(spec).strip().lower().replace(" ", "")
    if s in ("bi", "born_infeld", "born-infeld", "borninfeld"):
        return BornInfeld()
    for prefix in ("n=", "truncated(", "truncated:", "n"):
        if s.startswith(prefix):
            try:
                return Truncated(int(s[len(prefix):].rstrip(")")))
            except ValueError:
                break
    raise ValueError(f"unknown model {spec!r}")


class CellGradient:
    """Two-corner cell gradient operator with optional per-edge weights.

    ``weights`` is a triple of arrays shaped like ``np.diff(u, axis=a)``; they
    scale the edge differences before they enter either corner stencil.
    """

    def __init__(self, grid: Grid, weights: Optional[Sequence[np.ndarray]] = None):
        self.grid = grid
        self.weights = None if weights is None else tuple(weights)

    def edge_differences(self, u):
        d = [np.diff(u, axis=a) for a in range(3)]
        if self.weights is not None:
            d = [da * wa for da, wa in zip(d, self.weights)]
        return d

    def __call__(self, u):
        d0, d1, d2 = self.edge_differences(u)
        h = self.grid.h
        gf = np.stack((d0[:, :-1, :-1], d1[:-1, :, :-1], d2[:-1, :-1, :])) / h
        gb = np.stack((d0[:, 1:, 1:], d1[1:, :, 1:], d2[1:, 1:, :])) / h
        return gf, gb

    def edge_flux(self, vf, vb):
        """Scatter cell vector fields onto the edges they were built from."""
        m = self.grid.m
        d0 = np.zeros((m - 1, m, m))
        d1 = np.zeros((m, m - 1, m))
        d2 = np.zeros((m, m, m - 1))
        d0[:, :-1, :-1] += vf[0]
        d1[:-1, :, :-1] += vf[1]
        d2[:-1, :-1, :] += vf[2]
        d0[:, 1:, 1:] += vb[0]
        d1[1:, :, 1:] += vb[1]
        d2[1:, 1:, :] += vb[2]
        if self.weights is not None:
            d0, d1, d2 = d0 * self.weights[0], d1 * self.weights[1], d2 * self.weights[2]
        return d0, d1, d2

    def adjoint(self, vf, vb):
        """Transpose of the raw edge differences applied to edge fluxes (no 1/h)."""
        d0, d1, d2 = self.edge_flux(vf, vb)
        out = np.zeros(self.grid.shape)
        out[:-1] -= d0
        out[1:] += d0
        out[:, :-1] -= d1
        out[:, 1:] += d1
        out[:, :, :-1] -= d2
        out[:, :, 1:] += d2
        return out

    def squared_norms(self, u):
        gf, gb = self(u)
        return (gf ** 2).sum(0), (gb ** 2).sum(0)

    def max_norm(self, u) -> float:
        tf, tb = self.squared_norms(u)
        return float(np.sqrt(max(tf.max(), tb.max())))


def cell_integral(density_f, density_b, grid: Grid) -> float:
    """Midpoint-rule integral of per-corner cell densities."""
    return grid.h ** 3 * 0.5 * (float(np.sum(density_f)) + float(np.sum(density_b)))


@dataclass(frozen=True)
class ActionValue:
    action: float
    bulk: float
    pairing: float


def _values(phi):
    return phi.values if isinstance(phi, GridFunction) else np.asarray(phi, dtype=float)


def _pairing(phi, rho) -> float:
    if rho is None:
        return 0.0
    from .measures import pairing

    return pairing(rho, phi)


def _check_admissible(tf, tb, strict=False):
    worst = max(tf.max(), tb.max())
    if worst > 1.0 or (strict and worst >= 1.0):
        t = tf if tf.max() >= tb.max() else tb
        cell = np.unravel_index(np.argmax(t), t.shape)
        kind = "singular integrand" if strict else "constraint violation"
        raise ConstraintViolation(f"{kind}: |grad phi| = {np.sqrt(worst):.6g} at cell {cell}")


def bulk_energy(phi, model: Model, grid: Grid, gradient: Optional[CellGradient] = None) -> float:
    """``int F(|grad phi|^2) dx`` for the given model."""
    D = gradient or CellGradient(grid)
    tf, tb = D.squared_norms(_values(phi))
    if model.bounded:
        _check_admissible(tf, tb)
    return cell_integral(model.F(tf), model.F(tb), grid)


def bi_action(phi, rho, grid: Grid, gradient: Optional[CellGradient] = None) -> ActionValue:
    """Born-Infeld action ``int (1 - sqrt(1-|grad phi|^2)) dx - <rho, phi>``."""
    bulk = bulk_energy(phi, BornInfeld(), grid, gradient)
    p = _pairing(phi, rho)
    return ActionValue(bulk - p, bulk, p)


def truncated_action(phi, rho, coeffs: Union[SeriesCoefficients, int], grid: Grid,
                     gradient: Optional[CellGradient] = None) -> ActionValue:
    """Truncated action ``sum_h alpha_h/(2h) ||grad phi||_{2h}^{2h} - <rho, phi>``."""
    n = coeffs.n if isinstance(coeffs, SeriesCoefficients) else int(coeffs)
    bulk = bulk_energy(phi, Truncated(n), grid, gradient)
    p = _pairing(phi, rho)
    return ActionValue(bulk - p, bulk, p)


def energy_K(phi, grid: Grid, gradient: Optional[CellGradient] = None) -> float:
    """``int (1/sqrt(1-|grad phi|^2) - 1) dx``."""
    D = gradient or CellGradient(grid)
    tf, tb = D.squared_norms(_values(phi))
    _check_admissible(tf, tb, strict=True)
    bi = BornInfeld()
    return cell_integral(bi.K(tf), bi.K(tb), grid)


def energy_Kn(phi, coeffs: Union[SeriesCoefficients, int], grid: Grid,
              gradient: Optional[CellGradient] = None) -> float:
    """``sum_h (2h-1)/(2h) alpha_h ||grad phi||_{2h}^{2h}``."""
    n = coeffs.n if isinstance(coeffs, SeriesCoefficients) else int(coeffs)
    D = gradient or CellGradient(grid)
    tf, tb = D.squared_norms(_values(phi))
    model = Truncated(n)
    return cell_integral(model.K(tf), model.K(tb), grid)


def model_energy_K(phi, model: Model, grid: Grid, gradient: Optional[CellGradient] = None) -> float:
    if model.bounded:
        return energy_K(phi, grid, gradient)
    return energy_Kn(phi, model.n, grid, gradient)
