"""Deterministic numerical primitives shared by the rest of the package.

Normal distribution functions, composite Gauss-Legendre quadrature, a
bracketing root finder, natural cubic splines with constant extension and a
counter-based random stream contract.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import interpolate, optimize, special

__all__ = [
    "NoBracket",
    "QuadratureRule",
    "gauss_legendre",
    "norm_pdf",
    "norm_cdf",
    "norm_quantile",
    "integrate",
    "find_root",
    "CubicSpline",
    "RngStream",
]

_INV_SQRT_2PI = 0.3989422804014327


class NoBracket(ValueError):
    """Raised when a root finder is handed an interval without a sign change."""


def norm_pdf(x):
    x = np.asarray(x, dtype=float)
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def norm_cdf(x):
    """Standard normal cdf, accurate to a few ulps over the whole real line."""
    return special.ndtr(x)


def norm_quantile(p):
    """Inverse of :func:`norm_cdf`.

    Raises
    ------
    ValueError
        If any ``p`` lies outside the open interval (0, 1).
    """
    arr = np.asarray(p, dtype=float)
    if np.any(~((arr > 0.0) & (arr < 1.0))):
        raise ValueError(f"quantile probability must lie in (0, 1), got {p!r}")
    x = special.ndtri(arr)
    # one Newton polish step; ndtri is already close to full precision
    pdf = norm_pdf(x)
    safe = pdf > 1e-300
    x = np.where(safe, x - (special.ndtr(x) - arr) / np.where(safe, pdf, 1.0), x)
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class QuadratureRule:
    nodes: np.ndarray
    weights: np.ndarray
    order: int


@lru_cache(maxsize=None)
def gauss_legendre(order: int) -> QuadratureRule:
    if order < 1:
        raise ValueError("quadrature order must be positive")
    nodes, weights = np.polynomial.legendre.leggauss(order)
    # leggauss is symmetric only to rounding; enforce it exactly
    nodes = 0.5 * (nodes - nodes[::-1])
    weights = 0.5 * (weights + weights[::-1])
    nodes.setflags(write=False)
    weights.setflags(write=False)
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def panel_nodes(a: float, b: float, panels: int, rule: QuadratureRule):
    """Abscissae and weights of the composite rule on ``[a, b]``.

    Returned as flat arrays so callers can evaluate vectorised integrands once
    and reuse the nodes.
    """
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    x = (mid[:, None] + half[:, None] * rule.nodes[None, :]).ravel()
    w = (half[:, None] * rule.weights[None, :]).ravel()
    return x, w


def integrate(f: Callable, a: float, b: float, panels: int = 1,
              rule: QuadratureRule | None = None) -> float:
    """Composite Gauss-Legendre estimate of the integral of ``f`` over [a, b].

    ``f`` must accept a numpy array of abscissae.
    """
    if a > b:
        raise ValueError("integration limits must satisfy a <= b")
    if rule is None:
        rule = gauss_legendre(20)
    x, w = panel_nodes(a, b, panels, rule)
    return float(np.dot(w, f(x)))


def find_root(f: Callable[[float], float], lo: float, hi: float,
              tol: float = 1e-10) -> float:
    """Root of ``f`` in ``[lo, hi]`` by Brent's method.

    Brent's method falls back to bisection whenever interpolation misbehaves,
    so convergence is guaranteed once a sign change is present.
    """
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if np.sign(flo) == np.sign(fhi):
        raise NoBracket(f"f({lo})={flo:.3g} and f({hi})={fhi:.3g} share a sign")
    return optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps,
                           maxiter=500)


class CubicSpline:
    """Natural cubic spline, constant beyond the end knots.

    Evaluation is linear in the stored values, which the b/s optimiser relies
    on to build basis matrices.
    """

    def __init__(self, knots, values):
        knots = np.asarray(knots, dtype=float)
        values = np.asarray(values, dtype=float)
        if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
            raise ValueError("knots and values must be 1-d arrays of equal length >= 2")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        self.knots = knots
        self.values = values
        self._pp = interpolate.CubicSpline(knots, values, bc_type="natural")

    @property
    def second_derivatives(self) -> np.ndarray:
        return self._pp(self.knots, 2)

    def __call__(self, x, nu: int = 0):
        x = np.asarray(x, dtype=float)
        inside = np.clip(x, self.knots[0], self.knots[-1])
        out = self._pp(inside, nu)
        if nu > 0:
            out = np.where(inside == x, out, 0.0)
        else:
            # stored values at the knots, not their rounded reconstruction
            i = np.clip(np.searchsorted(self.knots, inside), 0, self.knots.size - 1)
            out = np.where(self.knots[i] == inside, self.values[i], out)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class RngStream:
    """Counter-based stream: Philox keyed by ``(base_seed, stream_index)``.

    The same pair always reproduces the same draws, whatever else has been
    generated before, which keeps simulations independent of scheduling.
    """

    base_seed: int
    stream_index: int

    def __post_init__(self):
        for name in ("base_seed", "stream_index"):
            v = getattr(self, name)
            if not 0 <= v < 2**64:
                raise ValueError(f"{name} must be an unsigned 64-bit integer")

    def generator(self) -> np.random.Generator:
        key = (self.stream_index << 64) | self.base_seed
        return np.random.Generator(np.random.Philox(key=key))

    def uniform(self, size) -> np.ndarray:
        return self.generator().random(size)

    def standard_normal(self, size) -> np.ndarray:
        return self.generator().standard_normal(size)
