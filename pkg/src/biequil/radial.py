"""Exact radial solutions on balls, used as the oracle for the grid solvers.

Outside a uniformly charged sphere of radius R carrying total charge q the
displacement is ``D(r) = q / (omega_{N-1} r^{N-1})``. The slope ``s = |phi'|``
solves the constitutive relation ``g(s) s = D`` and ``phi(r) = int_r^inf s``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln

from .functionals import Model, make_model

TAIL_FACTOR = 1e4


class QuadratureError(RuntimeError):
    pass


def omega(N: int) -> float:
    """Surface area of the unit sphere in R^N."""
    return float(2.0 * np.exp(0.5 * N * np.log(np.pi) - gammaln(0.5 * N)))


def radial_displacement(r, R: float, N: int = 3, charge: float = 1.0):
    """``D(r) = charge / (omega r^{N-1})`` for ``r > R`` and 0 inside."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        D = charge / (omega(N) * r ** (N - 1))
    out = np.where(r > R, D, 0.0)
    return float(out) if out.ndim == 0 else out


def _as_real(x):
    x = np.asarray(x)
    return x.astype(np.result_type(x.dtype, np.float64), copy=False)


def _scalar(x):
    return float(x) if x.ndim == 0 and x.dtype == np.float64 else (x[()] if x.ndim == 0 else x)


def constitutive(s, model: Union[str, Model] = "bi"):
    """Flux density ``g(s) s`` produced by slope ``s`` (dtype preserving)."""
    s = _as_real(s)
    return _scalar(make_model(model).g(s) * s)


def invert_constitutive(D, model: Union[str, Model] = "bi"):
    """Slope ``s >= 0`` with ``g(s) s = D``.

    Born-Infeld has the closed form ``s = D / sqrt(1 + D^2)``. Truncated models
    use Newton's method safeguarded by bisection on
    ``[0, min(D, (D/alpha_n)^(1/(2n-1)))]``. Extended-precision input
    (``np.longdouble``) is kept in extended precision.
    """
    model = make_model(model)
    D = _as_real(D)
    if np.any(D < 0):
        raise ValueError("displacement must be nonnegative")
    if model.bounded:
        return _scalar(D / np.hypot(np.ones_like(D), D))
    eps = np.finfo(D.dtype).eps
    a = model.alpha.astype(D.dtype)
    n = model.n
    hs = np.arange(1, n + 1)
    lo = np.zeros_like(D)
    hi = np.minimum(D, (D / a[-1]) ** (1.0 / (2 * n - 1)))
    s = hi.copy()
    for _ in range(200):
        p = s[..., None] ** (2 * hs - 2)
        f = (a * p).sum(-1) * s - D
        df = (a * (2 * hs - 1) * p).sum(-1)
        lo = np.where(f < 0, s, lo)
        hi = np.where(f > 0, s, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(df > 0, f / df, 0.0)
        s_new = s - step
        bad = (s_new < lo) | (s_new > hi)
        s_new = np.where(bad, 0.5 * (lo + hi), s_new)
        done = np.all(np.abs(s_new - s) <= eps * np.maximum(s, np.finfo(D.dtype).tiny))
        s = s_new
        if done:
            break
    return _scalar(s)


def _slope(t, R, N, model, charge):
    return invert_constitutive(radial_displacement(t, R, N, charge), model)


def _tail(T, N, model, charge):
    # int_T^inf s dt with s = D - alpha_2 D^3 + O(D^5)
    w = omega(N)
    val = charge / (w * (N - 2) * T ** (N - 2))
    alpha2 = 0.5 if (model.bounded or model.n >= 2) else 0.0
    return val - alpha2 * charge ** 3 / (w ** 3 * (3 * N - 4) * T ** (3 * N - 4))


def _phi_quadpack(r0, R, N, model, charge, rtol):
    T = TAIL_FACTOR * R
    if r0 >= T:
        return _tail(r0, N, model, charge)
    pts = [p for p in (2 * R, 10 * R, 100 * R, 1000 * R) if r0 < p < T]
    edges = [r0] + pts + [T]
    total = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = integrate.quad(_slope, a, b, args=(R, N, model, charge), epsabs=0.0, epsrel=rtol, limit=400)
        if err > max(1e-13, 1e3 * rtol * abs(val)):
            raise QuadratureError(f"quadrature error estimate {err:.3g} too large")
        total += val
    return total + _tail(T, N, model, charge)


def _phi_legendre(r0, R, N, model, charge, panels=64, order=20):
    # substitute t = r0/u, u in (0, 1]: int_0^1 s(r0/u) r0/u^2 du with a smooth integrand
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1) ** 2
    a, b = edges[:-1, None], edges[1:, None]
    u = (0.5 * (b - a) * x + 0.5 * (a + b)).ravel()
    wu = (0.5 * (b - a) * w).ravel()
    t = r0 / u
    s = invert_constitutive(radial_displacement(t, min(R, r0) * (1 - 1e-15), N, charge), model)
    return float(np.sum(wu * s * r0 / u ** 2))


def radial_phi(r, R: float = 1.0, N: int = 3, model="bi", charge: float = 1.0,
               rule: str = "quadpack", rtol: float = 1e-12):
    """Potential of the uniformly charged sphere at radii ``r`` (constant for r <= R)."""
    model = make_model(model)
    rr = np.atleast_1d(np.asarray(r, dtype=float))
    out = np.empty_like(rr)
    for i, r0 in enumerate(rr):
        r0 = max(r0, R)
        if rule == "quadpack":
            out[i] = _phi_quadpack(r0, R, N, model, charge, rtol)
        elif rule == "legendre":
            out[i] = _phi_legendre(r0, R, N, model, charge)
        else:
            raise ValueError(f"unknown quadrature rule {rule!r}")
    return float(out[0]) if np.ndim(r) == 0 else out


def lambda_star(R: float = 1.0, N: int = 3, model="bi", rule: str = "quadpack", charge: float = 1.0) -> float:
    """Plateau value of the unit-charge radial potential on the ball of radius R."""
    if R <= 0 or N < 3:
        raise ValueError("need R > 0 and N >= 3")
    return radial_phi(R, R, N, model, charge, rule)


@dataclass
class RadialProfile:
    R: float
    N: int
    model: str
    r: np.ndarray
    D: np.ndarray
    s: np.ndarray
    phi: np.ndarray
    lambda_star: float


def radial_potential(R: float = 1.0, N: int = 3, model="bi", r: Optional[Sequence[float]] = None,
                     rule: str = "quadpack") -> RadialProfile:
    """Sampled radial solution with ``lambda_star = phi(R)``."""
    if R <= 0 or N < 3:
        raise ValueError("need R > 0 and N >= 3")
    model = make_model(model)
    if r is None:
        r = R * np.geomspace(1.0, 100.0, 41)
    r = np.asarray(r, dtype=float)
    D = radial_displacement(np.maximum(r, R * (1 + 1e-15)), R, N) * (r >= R)
    s = invert_constitutive(D, model)
    phi = radial_phi(r, R, N, model, rule=rule)
    return RadialProfile(R, N, model.name, r, D, s, phi, lambda_star(R, N, model, rule))


def radial_upsilon(lam: float, R: float = 1.0, N: int = 3, model="bi") -> float:
    """Total charge ``q`` whose radial potential has plateau ``lam``."""
    if lam <= 0:
        raise ValueError("level must be positive")
    model = make_model(model)
    f = lambda lq: np.log(radial_phi(R, R, N, model, np.exp(lq))) - np.log(lam)
    # the plateau is at least linear-ish in q, so a bracket in log q is found quickly
    lo, hi = -1.0, 1.0
    while f(lo) > 0:
        lo -= 2.0
    while f(hi) < 0:
        hi += 2.0
    return float(np.exp(optimize.brentq(f, lo, hi, xtol=1e-14, rtol=1e-15)))
