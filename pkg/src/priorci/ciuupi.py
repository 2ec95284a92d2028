"""Confidence interval CI(b, s) for the known-variance linear-normal problem.

The interval for theta that uses the uncertain prior information tau = t is

    [theta_hat - sd_theta * b(x) +/- sd_theta * s(x)],  x = (tau_hat - t) / sd_tau,

with ``b`` odd, ``s`` even and both constant (0 and z_{1-alpha/2}) for
|x| >= 6.  ``b`` and ``s`` are natural cubic splines through knot values at
0, 1, ..., 6 mirrored onto [-6, 6]; the free knot values are chosen to
minimise the scaled expected length at gamma = 0 subject to coverage and a
bound on the maximum scaled expected length.

Coverage and expected length are evaluated with the identity

    CP(gamma) = (1 - alpha) + int_{-6}^{6} phi(v - gamma) [K_bs(v) - K_usual(v)] dv,

which holds because ``b`` and ``s`` coincide with the usual interval outside
[-6, 6]; only a finite-range Gauss-Legendre quadrature is needed.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import optimize

from .numkernels import CubicSpline, gauss_legendre, norm_cdf, norm_pdf, norm_quantile, panel_nodes

__all__ = [
    "OptimFailed",
    "CiuupiConfig",
    "BSFunctions",
    "GammaRho",
    "cp",
    "sel",
    "cp_curve",
    "sel_curve",
    "optimize_bs",
    "ci_bs",
    "usual_ci",
    "BSTable",
]

log = logging.getLogger(__name__)

SUPPORT = 6.0
RHO_MARGIN = 1e-6
_HEADER = re.compile(r"^ciuupi-bs v1 alpha=(\S+) rho=(\S+)$")


class OptimFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class CiuupiConfig:
    alpha: float = 0.05
    n_knots: int = 7
    gamma_step: float = 0.05
    gamma_max: float = 10.0
    sel_max: float = 1.15
    constraint_tol: float = 1e-6
    step_tol: float = 1e-8
    quad_order: int = 20
    panels_per_unit: int = 1

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.sel_max <= 1.0:
            raise ValueError("sel_max must exceed 1")
        if self.n_knots < 3:
            raise ValueError("need at least 3 knots")
        if self.gamma_max < 10.0:
            raise ValueError("coverage grid must cover [0, 10]")

    @property
    def knots(self) -> np.ndarray:
        return np.linspace(0.0, SUPPORT, self.n_knots)

    @property
    def gamma_grid(self) -> np.ndarray:
        n = int(round(self.gamma_max / self.gamma_step))
        return np.linspace(0.0, n * self.gamma_step, n + 1)

    @property
    def z(self) -> float:
        return norm_quantile(1.0 - self.alpha / 2.0)


@dataclass(frozen=True)
class GammaRho:
    gamma: float
    rho: float

    def __post_init__(self):
        if not abs(self.rho) < 1.0 - RHO_MARGIN:
            raise ValueError(f"rho must be bounded away from +/-1, got {self.rho}")


def _mirror(knots):
    return np.concatenate([-knots[:0:-1], knots])


@dataclass(frozen=True)
class BSFunctions:
    """Knot values of ``b`` and ``s`` on ``0 = x_0 < ... < x_K = 6``.

    ``b_values[0]`` and ``b_values[-1]`` are 0 and ``s_values[-1]`` is
    z_{1-alpha/2}; the constructor checks these pins.
    """

    rho: float
    alpha: float
    knots: np.ndarray
    b_values: np.ndarray
    s_values: np.ndarray

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        b = np.asarray(self.b_values, dtype=float)
        s = np.asarray(self.s_values, dtype=float)
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "b_values", b)
        object.__setattr__(self, "s_values", s)
        if knots[0] != 0.0 or knots[-1] != SUPPORT or np.any(np.diff(knots) <= 0):
            raise ValueError("knots must increase strictly from 0 to 6")
        if b.shape != knots.shape or s.shape != knots.shape:
            raise ValueError("b and s need one value per knot")
        if b[0] != 0.0 or b[-1] != 0.0:
            raise ValueError("b must vanish at 0 and 6")
        z = norm_quantile(1.0 - self.alpha / 2.0)
        if abs(s[-1] - z) > 1e-11 * z:
            raise ValueError("s(6) must equal z_{1-alpha/2}")
        if np.any(s <= 0):
            raise ValueError("s must be positive")

    @classmethod
    def usual(cls, alpha: float, rho: float = 0.0, n_knots: int = 7) -> "BSFunctions":
        """b = 0, s = z: the usual interval written as CI(b, s)."""
        knots = np.linspace(0.0, SUPPORT, n_knots)
        z = norm_quantile(1.0 - alpha / 2.0)
        return cls(rho, alpha, knots, np.zeros(n_knots), np.full(n_knots, z))

    @property
    def z(self) -> float:
        return float(self.s_values[-1])

    @cached_property
    def _b_spline(self) -> CubicSpline:
        return CubicSpline(_mirror(self.knots), np.concatenate([-self.b_values[:0:-1], self.b_values]))

    @cached_property
    def _s_spline(self) -> CubicSpline:
        return CubicSpline(_mirror(self.knots), np.concatenate([self.s_values[:0:-1], self.s_values]))

    def b(self, x):
        x = np.asarray(x, dtype=float)
        # sign * value at |x| keeps oddness exact rather than to rounding
        return np.sign(x) * self._b_spline(np.abs(x))

    def s(self, x):
        return self._s_spline(np.abs(np.asarray(x, dtype=float)))

    def negated(self) -> "BSFunctions":
        """Functions for correlation ``-rho``: same ``s``, ``-b``."""
        return BSFunctions(-self.rho, self.alpha, self.knots, -self.b_values + 0.0, self.s_values)

    def to_text(self) -> str:
        lines = [f"ciuupi-bs v1 alpha={self.alpha!r} rho={self.rho!r}"]
        for x, b, s in zip(self.knots, self.b_values, self.s_values):
            lines.append(f"{x:.12g} {b:.12g} {s:.12g}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "BSFunctions":
        rows = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
        m = _HEADER.match(rows[0]) if rows else None
        if m is None:
            raise ValueError("not a 'ciuupi-bs v1' record")
        alpha, rho = float(m.group(1)), float(m.group(2))
        table = np.array([[float(v) for v in r.split()] for r in rows[1:]])
        if table.ndim != 2 or table.shape[1] != 3:
            raise ValueError("expected 'knot b s' triples")
        s = table[:, 2].copy()
        # the pinned end value is stored rounded; restore it exactly
        s[-1] = norm_quantile(1.0 - alpha / 2.0)
        return cls(rho, alpha, table[:, 0], table[:, 1], s)


class _Evaluator:
    """Quadrature nodes and spline basis matrices for one knot layout."""

    def __init__(self, knots: np.ndarray, alpha: float, quad_order: int = 20, panels_per_unit: int = 1):
        self.knots = np.asarray(knots, dtype=float)
        self.alpha = alpha
        self.z = norm_quantile(1.0 - alpha / 2.0)
        rule = gauss_legendre(quad_order)
        full = _mirror(self.knots)
        xs, ws = [], []
        for lo, hi in zip(full[:-1], full[1:]):
            x, w = panel_nodes(lo, hi, panels_per_unit, rule)
            xs.append(x)
            ws.append(w)
        self.v = np.concatenate(xs)
        self.w = np.concatenate(ws)
        k = self.knots.size
        # b basis: odd splines for interior knots 1..K-1
        self.Bb = np.empty((self.v.size, k - 2))
        for j in range(1, k - 1):
            e = np.zeros(k)
            e[j] = 1.0
            spl = CubicSpline(full, np.concatenate([-e[:0:-1], e]))
            self.Bb[:, j - 1] = np.sign(self.v) * spl(np.abs(self.v))
        # s basis: even splines for knots 0..K-1 plus the pinned end knot
        self.Bs = np.empty((self.v.size, k - 1))
        for j in range(k):
            e = np.zeros(k)
            e[j] = 1.0
            spl = CubicSpline(full, np.concatenate([e[:0:-1], e]))
            col = spl(np.abs(self.v))
            if j < k - 1:
                self.Bs[:, j] = col
            else:
                self.s_pinned = self.z * col

    def split(self, x):
        nb = self.knots.size - 2
        return x[:nb], x[nb:]

    def bs_at_nodes(self, x):
        bf, sf = self.split(x)
        return self.Bb @ bf, self.Bs @ sf + self.s_pinned

    def cp(self, x, gammas, rho, jac: bool = False):
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        bv, sv = self.bs_at_nodes(x)
        sig = math.sqrt(1.0 - rho * rho)
        d = self.v[None, :] - gammas[:, None]
        dens = norm_pdf(d) * self.w[None, :]
        m = rho * d
        up = (bv[None, :] + sv[None, :] - m) / sig
        lo = (bv[None, :] - sv[None, :] - m) / sig
        k = norm_cdf(up) - norm_cdf(lo)
        k0 = norm_cdf((self.z - m) / sig) - norm_cdf((-self.z - m) / sig)
        val = (1.0 - self.alpha) + np.sum(dens * (k - k0), axis=1)
        if not jac:
            return val
        pu, pl = norm_pdf(up), norm_pdf(lo)
        db = dens * (pu - pl) / sig
        ds = dens * (pu + pl) / sig
        return val, np.hstack([db @ self.Bb, ds @ self.Bs])

    def sel(self, x, gammas, jac: bool = False):
        gammas = np.atleast_1d(np.asarray(gammas, dtype=float))
        _, sv = self.bs_at_nodes(x)
        dens = norm_pdf(self.v[None, :] - gammas[:, None]) * self.w[None, :]
        val = 1.0 + dens @ (sv - self.z) / self.z
        if not jac:
            return val
        nb = self.knots.size - 2
        g = np.hstack([np.zeros((gammas.size, nb)), dens @ self.Bs / self.z])
        return val, g


_EVALUATORS: dict = {}


def _evaluator(knots, alpha, quad_order=20, panels_per_unit=1) -> _Evaluator:
    key = (tuple(np.round(knots, 12)), alpha, quad_order, panels_per_unit)
    ev = _EVALUATORS.get(key)
    if ev is None:
        ev = _EVALUATORS[key] = _Evaluator(np.asarray(knots), alpha, quad_order, panels_per_unit)
    return ev


def _free_vector(bs: BSFunctions) -> np.ndarray:
    return np.concatenate([bs.b_values[1:-1], bs.s_values[:-1]])


def cp_curve(bs: BSFunctions, gammas, rho: float | None = None, panels_per_unit: int = 1) -> np.ndarray:
    """Coverage probability of CI(b, s) at each gamma (vectorised :func:`cp`)."""
    rho = bs.rho if rho is None else rho
    GammaRho(0.0, rho)
    ev = _evaluator(bs.knots, bs.alpha, panels_per_unit=panels_per_unit)
    return ev.cp(_free_vector(bs), gammas, rho)


def sel_curve(bs: BSFunctions, gammas, panels_per_unit: int = 1) -> np.ndarray:
    """Scaled expected length of CI(b, s) at each gamma."""
    ev = _evaluator(bs.knots, bs.alpha, panels_per_unit=panels_per_unit)
    return ev.sel(_free_vector(bs), gammas)


def cp(bs: BSFunctions, g: GammaRho) -> float:
    """P(b(V) - s(V) <= W <= b(V) + s(V)) for (W, V) bivariate normal,
    means (0, gamma), unit variances, correlation rho."""
    return float(cp_curve(bs, [g.gamma], g.rho)[0])


def sel(bs: BSFunctions, g: GammaRho) -> float:
    """E[s(V)] / z_{1-alpha/2} with V ~ N(gamma, 1); does not depend on rho."""
    return float(sel_curve(bs, [g.gamma])[0])


def _solve(cfg: CiuupiConfig, rho: float, x0: np.ndarray, target: float) -> np.ndarray:
    ev = _evaluator(cfg.knots, cfg.alpha, cfg.quad_order, cfg.panels_per_unit)
    grid = cfg.gamma_grid
    nb = cfg.n_knots - 2
    _, sel0_grad = ev.sel(x0, [0.0], jac=True)
    c0 = sel0_grad[0]
    # sel is linear in x and cheap, so bound it on a 4x finer grid than coverage
    fine = np.linspace(0.0, grid[-1], 4 * (grid.size - 1) + 1)
    sel_val, sel_jac = ev.sel(np.zeros_like(x0), fine, jac=True)
    # sel is affine in x: sel(x) = sel(0) + J x
    sel_offset = sel_val
    constraints = [
        {"type": "ineq",
         "fun": lambda x: ev.cp(x, grid, rho) - target,
         "jac": lambda x: ev.cp(x, grid, rho, jac=True)[1]},
        {"type": "ineq",
         "fun": lambda x: cfg.sel_max - 1e-9 - (sel_offset + sel_jac @ x),
         "jac": lambda x: -sel_jac},
    ]
    bounds = [(-4.0, 4.0)] * nb + [(0.05, 6.0)] * (cfg.n_knots - 1)
    res = optimize.minimize(
        lambda x: float(c0 @ x), x0, jac=lambda x: c0, method="SLSQP",
        bounds=bounds, constraints=constraints,
        options={"maxiter": 500, "ftol": cfg.step_tol},
    )
    if not np.all(np.isfinite(res.x)):
        raise OptimFailed(res.message)
    return res.x


def _optimize_nonneg(cfg: CiuupiConfig, rho: float, x0: np.ndarray | None = None) -> BSFunctions:
    ev = _evaluator(cfg.knots, cfg.alpha, cfg.quad_order, cfg.panels_per_unit)
    grid = cfg.gamma_grid
    k = cfg.n_knots
    usual = np.concatenate([np.zeros(k - 2), np.full(k - 1, cfg.z)])
    if x0 is None:
        x0 = usual.copy()
    best = usual
    target = 1.0 - cfg.alpha
    for _ in range(8):
        x = _solve(cfg, rho, x0, target)
        worst = np.min(ev.cp(x, grid, rho)) - (1.0 - cfg.alpha)
        sel_ok = np.max(ev.sel(x, grid)) <= cfg.sel_max + cfg.constraint_tol
        if worst >= -cfg.constraint_tol and sel_ok and np.all(x[k - 2:] > 0):
            best = x
            break
        # nudge the coverage target up by the observed shortfall and retry
        target += max(-worst, 0.0) + cfg.constraint_tol
        x0 = x
    else:
        log.warning("b/s optimisation at rho=%.6f did not reach feasibility; using usual interval", rho)
    if ev.sel(best, [0.0])[0] > 1.0:
        best = usual
    b = np.concatenate([[0.0], best[: k - 2], [0.0]])
    s = np.concatenate([best[k - 2:], [cfg.z]])
    return BSFunctions(rho, cfg.alpha, cfg.knots, b, s)


def optimize_bs(cfg: CiuupiConfig, rho: float, x0: np.ndarray | None = None) -> BSFunctions:
    """Knot values minimising SEL(0) subject to CP >= 1 - alpha and
    SEL <= ``cfg.sel_max`` on the coverage grid.

    Solved for |rho| and reflected (b -> -b) for negative rho, which makes
    the rho -> -rho symmetry exact.

    Raises
    ------
    OptimFailed
        If the optimiser returns a non-finite point.
    """
    GammaRho(0.0, rho)
    if abs(rho) < 1e-12:
        return BSFunctions.usual(cfg.alpha, 0.0, cfg.n_knots)
    bs = _optimize_nonneg(cfg, abs(rho), x0)
    return bs if rho > 0 else bs.negated()


def usual_ci(theta_hat: float, var_theta: float, c: float) -> tuple[float, float]:
    if var_theta <= 0:
        raise ValueError("variance must be positive")
    half = norm_quantile(1.0 - c / 2.0) * math.sqrt(var_theta)
    return theta_hat - half, theta_hat + half


def ci_bs(bs: BSFunctions, theta_hat: float, tau_hat: float, t: float,
          var_theta: float, var_tau: float) -> tuple[float, float]:
    if var_theta <= 0 or var_tau <= 0:
        raise ValueError("variances must be positive")
    sd = math.sqrt(var_theta)
    x = (tau_hat - t) / math.sqrt(var_tau)
    centre = theta_hat - sd * float(bs.b(x))
    half = sd * float(bs.s(x))
    return centre - half, centre + half


@dataclass
class BSTable:
    """b/s functions on a grid of correlations, linearly interpolated in rho.

    Used when every simulated data set carries its own rho estimate.  Knot
    values are interpolated, and because spline evaluation is linear in the
    knot values this equals interpolating the evaluated functions.
    """

    cfg: CiuupiConfig
    step: float = 0.02
    _cache: dict = field(default_factory=dict, repr=False)

    def node(self, i: int) -> BSFunctions:
        bs = self._cache.get(i)
        if bs is not None:
            return bs
        if i < 0:
            bs = self.node(-i).negated()
        elif i == 0:
            bs = BSFunctions.usual(self.cfg.alpha, 0.0, self.cfg.n_knots)
        else:
            rho = min(i * self.step, 1.0 - 2 * RHO_MARGIN)
            # warm start from the neighbour nearer zero keeps the family smooth in rho
            x0 = _free_vector(self.node(i - 1)) if i > 1 else None
            bs = optimize_bs(self.cfg, rho, x0)
        self._cache[i] = bs
        return bs

    def prepare(self, rho_lo: float, rho_hi: float) -> None:
        """Compute every node covering [rho_lo, rho_hi], walking outward from 0."""
        lo = math.floor(rho_lo / self.step)
        hi = math.ceil(rho_hi / self.step)
        order = sorted(range(lo, hi + 1), key=abs)
        for i in order:
            self.node(i)

    def _weights(self, rho):
        rho = np.clip(np.asarray(rho, dtype=float), -1 + 2 * RHO_MARGIN, 1 - 2 * RHO_MARGIN)
        pos = rho / self.step
        i0 = np.floor(pos).astype(int)
        return i0, pos - i0

    def evaluate(self, rho, x):
        """b and s at ``x`` using the functions for ``rho`` (arrays broadcast)."""
        rho, x = np.broadcast_arrays(np.asarray(rho, dtype=float), np.asarray(x, dtype=float))
        i0, w = self._weights(rho)
        b = np.empty(rho.shape)
        s = np.empty(rho.shape)
        for i in np.unique(i0):
            m = i0 == i
            lo, hi = self.node(int(i)), self.node(int(i) + 1)
            wm = w[m]
            xm = x[m]
            b[m] = (1 - wm) * lo.b(xm) + wm * hi.b(xm)
            s[m] = (1 - wm) * lo.s(xm) + wm * hi.s(xm)
        return b, s

    def at(self, rho: float) -> BSFunctions:
        i0, w = self._weights(rho)
        i0, w = int(i0), float(w)
        lo, hi = self.node(i0), self.node(i0 + 1)
        b = (1 - w) * lo.b_values + w * hi.b_values
        s = (1 - w) * lo.s_values + w * hi.s_values
        s[-1] = lo.z
        b[0] = b[-1] = 0.0
        return BSFunctions(float(rho), self.cfg.alpha, self.cfg.knots, b, s)
