"""Wald and likelihood-based intervals for theta = g(beta), with and without
the uncertain prior information tau = t.

``SrlrEvaluator`` accepts a single data set or a stacked batch (see
``regmodel``).  Endpoint searches run in lockstep across the batch: the
bracket is expanded geometrically away from theta_hat, then refined by a
vectorised Illinois iteration.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ciuupi import BSFunctions, ci_bs
from .numkernels import NoBracket, find_root, norm_quantile
from .regmodel import FitResult, RegressionSpec, fit_constrained, fit_mle

__all__ = [
    "ConstrainedFitFailed",
    "IntervalResult",
    "SrlrEvaluator",
    "r1",
    "r2",
    "profile_ci",
    "aci_l",
    "wald_ci",
    "aci_w",
    "format_intervals",
]

LENGTH_CAP = 1000.0
RADICAND_TOL = 1e-10
MONO_POINTS = 81
SCAN_POINTS = 801


class ConstrainedFitFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class IntervalResult:
    kind: str
    lower: float
    upper: float
    nominal: float
    capped: bool = False
    monotone: bool = True
    fallback: bool = False
    residuals: tuple[float, float] = (0.0, 0.0)

    @property
    def length(self) -> float:
        return LENGTH_CAP if self.capped else self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper

    def to_line(self) -> str:
        return f"{self.kind} {self.lower:.6f} {self.upper:.6f} {self.nominal:.6f} {int(self.capped)}"


def format_intervals(results) -> str:
    return "\n".join(r.to_line() for r in results) + "\n"


@dataclass
class _Roots:
    root: np.ndarray
    capped: np.ndarray
    failed: np.ndarray
    residual: np.ndarray
    reach: np.ndarray  # distance from theta_hat of the final bracket end


class SrlrEvaluator:
    """Signed root likelihood ratio statistics r1(theta') and r2 for one
    data set or a batch.

    Constrained fits are cached by constraint value for single data sets.
    """

    def __init__(self, spec: RegressionSpec, fit: FitResult | None = None, cap: float = LENGTH_CAP,
                 cache: bool = True):
        self.spec = spec
        self.fit = fit_mle(spec) if fit is None else fit
        self.one = spec.batch is None
        self.B = 1 if self.one else spec.batch
        self.cap = float(cap)
        self._cache = {} if (cache and self.one) else None
        self.beta_hat = np.asarray(self.fit.beta, dtype=float).reshape(self.B, -1)
        self.ll_hat = np.asarray(self.fit.loglik, dtype=float).reshape(self.B)
        self.theta_hat = np.asarray(spec.g.value(self.beta_hat), dtype=float).reshape(self.B)
        self.tau_hat = np.asarray(spec.h.value(self.beta_hat), dtype=float).reshape(self.B)
        self._y = spec.y.reshape(self.B, -1)
        self._r2 = None
        self._avar = None

    # -- helpers -----------------------------------------------------------

    def _out(self, a):
        a = np.asarray(a)
        return a.reshape(()).item() if self.one else a

    @property
    def avar_theta(self) -> np.ndarray:
        if self._avar is None:
            vg, _, _, _ = self._summary()
            self._avar = vg
        return self._avar

    def _summary(self):
        from .regmodel import asymptotic_summary

        s = self.spec.with_responses(self._y)
        return tuple(np.asarray(v).reshape(self.B) for v in asymptotic_summary(s, self.beta_hat))

    def profile_rows(self, rows, theta_prime, start):
        """Constrained fits g(beta) = theta_prime for the given rows.

        Returns (r1, beta, converged).
        """
        spec = self.spec.with_responses(self._y[rows])
        res = fit_constrained(spec, self.spec.g, theta_prime, start=start)
        beta_c = np.asarray(res.beta).reshape(len(rows), -1)
        rad = 2.0 * np.asarray(spec.loglik_ratio(self.beta_hat[rows], beta_c)).reshape(-1)
        tol = RADICAND_TOL * (1.0 + np.abs(self.ll_hat[rows]))
        rad = np.where((rad < 0) & (rad >= -tol), 0.0, rad)
        val = np.sign(self.theta_hat[rows] - theta_prime) * np.sqrt(np.maximum(rad, 0.0))
        return val, np.asarray(res.beta).reshape(len(val), -1), np.asarray(res.converged).reshape(-1)

    # -- statistics --------------------------------------------------------

    def r1(self, theta_prime):
        """Signed root of the likelihood ratio for g(beta) = theta_prime."""
        tp = np.broadcast_to(np.asarray(theta_prime, dtype=float), (self.B,)).copy()
        if self._cache is not None:
            key = float(tp[0])
            hit = self._cache.get(key)
            if hit is not None:
                return hit[0]
        rows = np.arange(self.B)
        start = self._nearest_start(tp)
        val, beta, conv = self.profile_rows(rows, tp, start)
        if self.one and not conv[0]:
            raise ConstrainedFitFailed(f"constrained fit at theta'={tp[0]:.6g} did not converge")
        if self._cache is not None:
            self._cache[float(tp[0])] = (float(val[0]), beta[0])
        return self._out(val)

    def _nearest_start(self, tp):
        if not self._cache:
            return self.beta_hat
        keys = np.array(list(self._cache))
        k = keys[np.argmin(np.abs(keys - tp[0]))]
        if abs(k - tp[0]) < abs(self.theta_hat[0] - tp[0]):
            return self._cache[float(k)][1][None, :]
        return self.beta_hat

    def r2(self):
        """Signed root of the likelihood ratio for h(beta) = t."""
        if self._r2 is None:
            spec = self.spec.with_responses(self._y)
            res = fit_constrained(spec, self.spec.h, np.full(self.B, self.spec.t), start=self.beta_hat)
            conv = np.asarray(res.converged).reshape(-1)
            if self.one and not conv[0]:
                raise ConstrainedFitFailed("constrained fit at h(beta) = t did not converge")
            beta_c = np.asarray(res.beta).reshape(self.B, -1)
            rad = 2.0 * np.asarray(spec.loglik_ratio(self.beta_hat, beta_c)).reshape(-1)
            tol = RADICAND_TOL * (1.0 + np.abs(self.ll_hat))
            rad = np.where((rad < 0) & (rad >= -tol), 0.0, rad)
            self._r2 = np.sign(self.tau_hat - self.spec.t) * np.sqrt(np.maximum(rad, 0.0))
            self._r2_conv = conv
        return self._out(self._r2)

    # -- endpoint search ---------------------------------------------------

    def solve_levels(self, levels, rows=None, max_expand: int = 60, tol: float = 1e-10,
                     max_iter: int = 100) -> _Roots:
        """Solve r1(theta') = level row-wise, assuming r1 is decreasing.

        A positive level has its root below theta_hat, a negative level above.
        Rows whose root lies further than the length cap from theta_hat are
        flagged ``capped``; rows whose constrained fits fail are ``failed``.
        """
        rows = np.arange(self.B) if rows is None else np.asarray(rows)
        a = np.asarray(levels, dtype=float).reshape(-1)
        m = rows.size
        th = self.theta_hat[rows]
        direction = np.where(a > 0, -1.0, 1.0)
        step0 = np.sqrt(np.asarray(self.avar_theta)[rows])
        root = th.copy()
        capped = np.zeros(m, dtype=bool)
        failed = np.zeros(m, dtype=bool)
        resid = np.zeros(m)
        reach = np.zeros(m)

        # bracket in distance d from theta_hat; f(d) = direction * (r1 - a), f(0) = |a| > 0
        d_lo = np.zeros(m)
        f_lo = np.abs(a)
        beta_lo = self.beta_hat[rows].copy()
        d_hi = np.full(m, np.nan)
        f_hi = np.full(m, np.nan)
        open_ = a != 0.0
        for k in range(max_expand + 1):
            idx = np.flatnonzero(open_)
            if idx.size == 0:
                break
            d = np.minimum(step0[idx] * 2.0**k, self.cap)
            val, beta, conv = self.profile_rows(rows[idx], th[idx] + direction[idx] * d, beta_lo[idx])
            f = direction[idx] * (val - a[idx])
            bad = ~conv
            failed[idx[bad]] = True
            crossed = conv & (f <= 0)
            d_hi[idx[crossed]] = d[crossed]
            f_hi[idx[crossed]] = f[crossed]
            more = conv & ~crossed
            d_lo[idx[more]] = d[more]
            f_lo[idx[more]] = f[more]
            beta_lo[idx[more]] = beta[more]
            hit_cap = more & (d >= self.cap)
            capped[idx[hit_cap]] = True
            open_[idx[bad | crossed | hit_cap]] = False
        capped |= open_  # ran out of expansions
        reach = np.where(np.isnan(d_hi), d_lo, d_hi)

        # Illinois iteration on [d_lo, d_hi]
        active = (a != 0.0) & ~capped & ~failed
        exact = active & (f_hi == 0.0)
        root[exact] = th[exact] + direction[exact] * d_hi[exact]
        active &= ~exact
        side = np.zeros(m, dtype=int)
        for _ in range(max_iter):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            x0, x1, y0, y1 = d_lo[idx], d_hi[idx], f_lo[idx], f_hi[idx]
            x = x1 - y1 * (x1 - x0) / (y1 - y0)
            mid = 0.5 * (x0 + x1)
            x = np.where(np.isfinite(x) & (x > x0) & (x < x1), x, mid)
            val, beta, conv = self.profile_rows(rows[idx], th[idx] + direction[idx] * x, beta_lo[idx])
            f = direction[idx] * (val - a[idx])
            bad = ~conv
            failed[idx[bad]] = True
            pos = conv & (f > 0)
            neg = conv & (f <= 0)
            # replace the lower end; halve the retained upper value if lower was kept last time
            j = idx[pos]
            d_lo[j], f_lo[j], beta_lo[j] = x[pos], f[pos], beta[pos]
            f_hi[j] = np.where(side[j] == 1, 0.5 * f_hi[j], f_hi[j])
            side[j] = 1
            j = idx[neg]
            d_hi[j], f_hi[j] = x[neg], f[neg]
            f_lo[j] = np.where(side[j] == -1, 0.5 * f_lo[j], f_lo[j])
            side[j] = -1
            width = d_hi[idx] - d_lo[idx]
            done = conv & ((np.abs(f) <= 1e-12) | (width <= tol * np.maximum(1.0, x)))
            root[idx[done]] = th[idx[done]] + direction[idx[done]] * x[done]
            resid[idx[done]] = np.abs(f[done])
            active[idx[done | bad]] = False
        # anything left unconverged: take the bracket midpoint
        left = active
        root[left] = th[left] + direction[left] * 0.5 * (d_lo[left] + d_hi[left])
        root[capped] = th[capped] + direction[capped] * self.cap
        return _Roots(root, capped, failed, resid, reach)

    def band_interval(self, lo_level, hi_level, rows=None):
        """Solve r1 = hi_level (lower endpoint) and r1 = lo_level (upper endpoint).

        Returns (lower, upper, capped, failed) arrays.
        """
        lower = self.solve_levels(hi_level, rows)
        upper = self.solve_levels(lo_level, rows)
        capped = lower.capped | upper.capped | (upper.root - lower.root > self.cap)
        return lower, upper, capped, lower.failed | upper.failed


# ---------------------------------------------------------------------------
# single data set API


def r1(ev: SrlrEvaluator, theta_prime: float) -> float:
    return ev.r1(theta_prime)


def r2(ev: SrlrEvaluator) -> float:
    return ev.r2()


def _scalar_interval(ev: SrlrEvaluator, kind: str, lo_level: float, hi_level: float,
                     nominal: float) -> IntervalResult:
    if not ev.one:
        raise ValueError("use SrlrEvaluator.band_interval for batched data")
    lower, upper, capped, failed = ev.band_interval(np.array([lo_level]), np.array([hi_level]))
    if failed[0]:
        raise ConstrainedFitFailed("a constrained fit failed during the endpoint search")
    lo, hi = float(lower.root[0]), float(upper.root[0])
    th = float(ev.theta_hat[0])
    span_lo = th - max(float(lower.reach[0]), 1e-12)
    span_hi = th + max(float(upper.reach[0]), 1e-12)
    grid = np.linspace(span_lo, span_hi, MONO_POINTS)
    vals = np.array([_r1_or_nan(ev, x) for x in grid])
    ok = np.isfinite(vals)
    # fits far out along a capped side may not converge; judge the rest
    monotone = bool(np.all(np.diff(vals[ok]) <= 1e-9))
    fallback = False
    if not monotone and not capped[0]:
        lo, hi = _level_set_hull(ev, span_lo, span_hi, lo_level, hi_level)
        fallback = True
    res = (abs(ev.r1(lo) - hi_level) if not lower.capped[0] else float("nan"),
           abs(ev.r1(hi) - lo_level) if not upper.capped[0] else float("nan"))
    return IntervalResult(kind, lo, hi, nominal, bool(capped[0]), monotone, fallback, res)


def _r1_or_nan(ev, x):
    try:
        return ev.r1(x)
    except ConstrainedFitFailed:
        return float("nan")


def _level_set_hull(ev, a, b, lo_level, hi_level):
    """inf and sup of {theta': lo_level <= r1(theta') <= hi_level} by grid scan
    and refinement of the boundary crossings."""
    grid = np.linspace(a, b, SCAN_POINTS)
    vals = np.array([ev.r1(x) for x in grid])
    inside = (vals >= lo_level) & (vals <= hi_level)
    k = np.flatnonzero(inside)
    if k.size == 0:
        th = float(ev.theta_hat[0])
        return th, th

    def edge(i, j):
        # refine the crossing between grid[i] (outside) and grid[j] (inside)
        level = hi_level if vals[i] > hi_level else lo_level
        try:
            return find_root(lambda x: ev.r1(x) - level, min(grid[i], grid[j]), max(grid[i], grid[j]))
        except NoBracket:
            return grid[j]

    lo = edge(k[0] - 1, k[0]) if k[0] > 0 else grid[0]
    hi = edge(k[-1] + 1, k[-1]) if k[-1] < grid.size - 1 else grid[-1]
    return lo, hi


def profile_ci(ev: SrlrEvaluator, c: float) -> IntervalResult:
    """Profile likelihood interval {theta': |r1(theta')| <= z_{1-c/2}}."""
    z = norm_quantile(1.0 - c / 2.0)
    return _scalar_interval(ev, "I_L", -z, z, 1.0 - c)


def aci_l(ev: SrlrEvaluator, bs: BSFunctions) -> IntervalResult:
    """Likelihood analogue of CI(b, s): b(r2) - s(r2) <= r1 <= b(r2) + s(r2)."""
    x = ev.r2()
    b, s = float(bs.b(x)), float(bs.s(x))
    return _scalar_interval(ev, "ACI_L", b - s, b + s, 1.0 - bs.alpha)


def wald_ci(fit: FitResult, c: float) -> IntervalResult:
    z = norm_quantile(1.0 - c / 2.0)
    th, sd = float(fit.theta_hat), math.sqrt(float(fit.avar_theta))
    return IntervalResult("I_W", th - z * sd, th + z * sd, 1.0 - c)


def aci_w(fit: FitResult, bs: BSFunctions) -> IntervalResult:
    lo, hi = ci_bs(bs, float(fit.theta_hat), float(fit.tau_hat), fit.spec.t,
                   float(fit.avar_theta), float(fit.avar_tau))
    return IntervalResult("ACI_W", lo, hi, 1.0 - bs.alpha)
