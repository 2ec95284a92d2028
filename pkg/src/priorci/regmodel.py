"""Regression models without a scale parameter, fitted by maximum likelihood.

Every model and fitting routine here accepts a leading batch axis: responses
of shape ``(B, n)`` and parameters of shape ``(B, p)`` are handled row by row
in one vectorised pass.  Single data sets use 1-d arrays and get 1-d results.
The Monte Carlo engine relies on this to fit thousands of simulated data sets
at once without a Python-level loop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import special

__all__ = [
    "SingularInformation",
    "DegenerateSlope",
    "Functional",
    "LinearFunctional",
    "CallableFunctional",
    "EDDifference",
    "AffineChart",
    "RegressionSpec",
    "BinomialLogitModel",
    "LinearNormalModel",
    "FitResult",
    "fit_mle",
    "fit_constrained",
    "expected_information",
    "asymptotic_summary",
    "bioassay_functionals",
    "logit",
]

COND_LIMIT = 1e12
SEPARATION_ETA = 30.0
FD_STEP = 1e-6


class SingularInformation(np.linalg.LinAlgError):
    pass


class DegenerateSlope(ValueError):
    pass


def logit(p):
    return np.log(p / (1.0 - p))


def _rows(a, p):
    """View ``a`` as (B, p) and report whether it was 1-d."""
    a = np.asarray(a, dtype=float)
    return a.reshape(-1, p), a.ndim == 1


# ---------------------------------------------------------------------------
# functionals g(beta), h(beta) and charts of their level sets


class Functional:
    """A smooth scalar function of the parameter vector.

    Subclasses provide ``value`` and ``grad``; ``hess`` defaults to central
    differences of ``grad``.  A subclass may also offer ``chart(value)``, a
    smooth parametrisation of the level set used for constrained fits.
    """

    linear = False
    fd_gradient = False

    def value(self, beta):
        raise NotImplementedError

    def grad(self, beta):
        raise NotImplementedError

    def hess(self, beta):
        beta = np.asarray(beta, dtype=float)
        p = beta.shape[-1]
        cols = []
        for j in range(p):
            e = np.zeros(p)
            e[j] = FD_STEP
            cols.append((self.grad(beta + e) - self.grad(beta - e)) / (2 * FD_STEP))
        h = np.stack(cols, axis=-1)
        return 0.5 * (h + np.swapaxes(h, -1, -2))

    def chart(self, value):
        return None

    def scaled(self, factor: float) -> "Functional":
        return _Scaled(self, factor)


class _Scaled(Functional):
    def __init__(self, base: Functional, factor: float):
        self.base, self.factor = base, float(factor)
        self.linear = base.linear

    def value(self, beta):
        return self.factor * self.base.value(beta)

    def grad(self, beta):
        return self.factor * self.base.grad(beta)

    def hess(self, beta):
        return self.factor * self.base.hess(beta)

    def chart(self, value):
        return self.base.chart(np.asarray(value) / self.factor)


class LinearFunctional(Functional):
    """``a @ beta + offset``."""

    linear = True

    def __init__(self, a, offset: float = 0.0):
        self.a = np.asarray(a, dtype=float)
        self.offset = float(offset)

    def value(self, beta):
        return np.asarray(beta, dtype=float) @ self.a + self.offset

    def grad(self, beta):
        beta = np.asarray(beta, dtype=float)
        return np.broadcast_to(self.a, beta.shape).copy()

    def hess(self, beta):
        beta = np.asarray(beta, dtype=float)
        p = self.a.size
        return np.zeros(beta.shape[:-1] + (p, p))

    def chart(self, value):
        a = self.a
        origin = np.multiply.outer(np.asarray(value, dtype=float) - self.offset, a / (a @ a))
        # orthonormal basis of the null space of a
        _, _, vt = np.linalg.svd(a[None, :])
        return AffineChart(origin, vt[1:].T)


class CallableFunctional(Functional):
    """Wrap plain callables; gradients fall back to central differences."""

    def __init__(self, fn, grad=None, hess=None):
        self.fn = fn
        self._grad = grad
        self._hess = hess
        self.fd_gradient = grad is None

    def value(self, beta):
        beta = np.asarray(beta, dtype=float)
        rows, one = _rows(beta, beta.shape[-1])
        out = np.array([self.fn(b) for b in rows])
        return out[0] if one else out.reshape(beta.shape[:-1])

    def grad(self, beta):
        beta = np.asarray(beta, dtype=float)
        if self._grad is not None:
            rows, one = _rows(beta, beta.shape[-1])
            out = np.array([self._grad(b) for b in rows])
            return out[0] if one else out.reshape(beta.shape)
        p = beta.shape[-1]
        g = []
        for j in range(p):
            e = np.zeros(p)
            e[j] = FD_STEP
            g.append((self.value(beta + e) - self.value(beta - e)) / (2 * FD_STEP))
        return np.stack(g, axis=-1)

    def hess(self, beta):
        if self._hess is None:
            return super().hess(beta)
        beta = np.asarray(beta, dtype=float)
        rows, one = _rows(beta, beta.shape[-1])
        out = np.array([self._hess(b) for b in rows])
        return out[0] if one else out.reshape(beta.shape + (beta.shape[-1],))


class AffineChart:
    """``beta = origin + phi @ basis.T``; ``origin`` may carry a batch axis."""

    def __init__(self, origin, basis):
        self.origin = np.asarray(origin, dtype=float)
        self.basis = np.asarray(basis, dtype=float)
        self.q = self.basis.shape[1]

    def beta(self, phi):
        return self.origin + phi @ self.basis.T

    def jac(self, phi):
        return np.broadcast_to(self.basis, phi.shape[:-1] + self.basis.shape)

    def second(self, phi):
        return None

    def phi_from(self, beta):
        return (np.asarray(beta, dtype=float) - self.origin) @ self.basis

    def rows(self, idx):
        o = self.origin[idx] if self.origin.ndim == 2 else self.origin
        return AffineChart(o, self.basis)


class EDDifference(Functional):
    """theta = ED_z(A) - ED_z(B) for two logit lines
    ``logit p = beta1 + beta2 x`` and ``logit p' = beta3 + beta4 x``."""

    def __init__(self, z: float):
        if not 0.0 < z < 100.0:
            raise ValueError("z must lie in (0, 100)")
        self.z = float(z)
        self.L = float(logit(z / 100.0))

    def _check(self, beta):
        b2, b4 = beta[..., 1], beta[..., 3]
        if np.any(np.abs(b2) < 1e-10) or np.any(np.abs(b4) < 1e-10):
            raise DegenerateSlope("ED_z undefined when a slope is zero")

    def ed(self, beta):
        beta = np.asarray(beta, dtype=float)
        self._check(beta)
        return ((self.L - beta[..., 0]) / beta[..., 1], (self.L - beta[..., 2]) / beta[..., 3])

    def value(self, beta):
        e1, e2 = self.ed(beta)
        return e1 - e2

    def grad(self, beta):
        beta = np.asarray(beta, dtype=float)
        self._check(beta)
        b1, b2, b3, b4 = np.moveaxis(beta, -1, 0)
        L = self.L
        return np.stack([-1.0 / b2, -(L - b1) / b2**2, 1.0 / b4, (L - b3) / b4**2], axis=-1)

    def hess(self, beta):
        beta = np.asarray(beta, dtype=float)
        self._check(beta)
        b1, b2, b3, b4 = np.moveaxis(beta, -1, 0)
        L = self.L
        h = np.zeros(beta.shape + (4,))
        h[..., 0, 1] = h[..., 1, 0] = 1.0 / b2**2
        h[..., 1, 1] = 2.0 * (L - b1) / b2**3
        h[..., 2, 3] = h[..., 3, 2] = -1.0 / b4**2
        h[..., 3, 3] = -2.0 * (L - b3) / b4**3
        return h

    def chart(self, value):
        return _EDChart(self.L, value)


class _EDChart:
    """Level set {ED_A - ED_B = theta'} parametrised by phi = (beta2, e, beta4),
    where e is the ED of the anchor compound:

        anchor B:  beta1 = L - beta2 (e + theta'),  beta3 = L - beta4 e
        anchor A:  beta1 = L - beta2 e,             beta3 = L - beta4 (e - theta')

    The anchor is the compound with the steeper slope at the starting point.
    Its ED stays finite while the other slope may pass through zero, which
    is how profile intervals become unbounded.
    """

    q = 3

    def __init__(self, L: float, value, anchor_a=None):
        self.L = L
        self.value = np.asarray(value, dtype=float)
        self.anchor_a = None if anchor_a is None else np.asarray(anchor_a, dtype=bool)

    def _shifts(self):
        w = self.anchor_a.astype(float)
        return self.value * (1.0 - w), -self.value * w

    def beta(self, phi):
        b2, e, b4 = np.moveaxis(phi, -1, 0)
        sa, sb = self._shifts()
        return np.stack([self.L - b2 * (e + sa), b2, self.L - b4 * (e + sb), b4], axis=-1)

    def jac(self, phi):
        b2, e, b4 = np.moveaxis(phi, -1, 0)
        sa, sb = self._shifts()
        J = np.zeros(phi.shape[:-1] + (4, 3))
        J[..., 0, 0] = -(e + sa)
        J[..., 0, 1] = -b2
        J[..., 1, 0] = 1.0
        J[..., 2, 1] = -b4
        J[..., 2, 2] = -(e + sb)
        J[..., 3, 2] = 1.0
        return J

    def second(self, phi):
        S = np.zeros(phi.shape[:-1] + (4, 3, 3))
        S[..., 0, 0, 1] = S[..., 0, 1, 0] = -1.0
        S[..., 2, 1, 2] = S[..., 2, 2, 1] = -1.0
        return S

    def phi_from(self, beta):
        beta = np.asarray(beta, dtype=float)
        b2, b4 = beta[..., 1], beta[..., 3]
        if self.anchor_a is None:
            self.anchor_a = np.abs(b2) >= np.abs(b4)
        a = self.anchor_a
        safe2 = np.where(np.abs(b2) > 1e-8, b2, 1e-8)
        safe4 = np.where(np.abs(b4) > 1e-8, b4, 1e-8)
        e = np.where(a, (self.L - beta[..., 0]) / safe2, (self.L - beta[..., 2]) / safe4)
        return np.stack([b2, e, b4], axis=-1)

    def rows(self, idx):
        v = self.value[idx] if self.value.ndim == 1 else self.value
        a = self.anchor_a[idx] if self.anchor_a.ndim == 1 else self.anchor_a
        return _EDChart(self.L, v, a)


def bioassay_functionals(z: float = 60.0):
    """(g, h) for the two-compound bioassay: g = ED_z - ED'_z, h = beta2 - beta4."""
    return EDDifference(z), LinearFunctional([0.0, 1.0, 0.0, -1.0])


# ---------------------------------------------------------------------------
# models


@dataclass(frozen=True, eq=False)
class RegressionSpec:
    """Independent responses ``y`` with a design ``X`` and no scale parameter.

    ``g`` is the parameter of interest, ``h`` the parameter carrying the
    uncertain prior information ``h(beta) = t``.
    """

    X: np.ndarray
    y: np.ndarray
    g: Functional | None = None
    h: Functional | None = None
    t: float = 0.0

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))
        if self.y.shape[-1] != X.shape[0]:
            raise ValueError("response length does not match the design")

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def batch(self) -> int | None:
        return None if self.y.ndim == 1 else self.y.shape[0]

    def with_responses(self, y) -> "RegressionSpec":
        return replace(self, y=np.asarray(y, dtype=float))

    def subset(self, mask) -> "RegressionSpec":
        return replace(self, y=self.y[mask])

    def eta(self, beta):
        return np.asarray(beta, dtype=float) @ self.X.T

    def loglik(self, beta):
        raise NotImplementedError

    def loglik_ratio(self, beta_a, beta_b):
        """``loglik(beta_a) - loglik(beta_b)``; models override this to avoid
        cancellation when the two fits are close."""
        return self.loglik(beta_a) - self.loglik(beta_b)

    def score(self, beta):
        raise NotImplementedError

    def hessian(self, beta):
        raise NotImplementedError

    def expected_information(self, beta):
        raise NotImplementedError

    def default_start(self) -> np.ndarray:
        return np.zeros(self.p)

    def separated(self, beta):
        return np.zeros(np.shape(beta)[:-1], dtype=bool)

    def simulate(self, beta, uniforms):
        """Responses at ``beta`` from uniforms of shape (..., n) by inversion."""
        raise NotImplementedError


@dataclass(frozen=True, eq=False)
class BinomialLogitModel(RegressionSpec):
    """``y_i ~ Binomial(N_i, psi_i)`` with ``logit psi_i = x_i @ beta``."""

    N: np.ndarray = None

    def __post_init__(self):
        super().__post_init__()
        N = np.asarray(self.N, dtype=float)
        object.__setattr__(self, "N", N)
        if N.shape != (self.n,) or np.any(N < 1) or np.any(N != np.round(N)):
            raise ValueError("trial counts must be positive integers, one per row")
        if np.any(self.y < 0) or np.any(self.y > N):
            raise ValueError("successes must satisfy 0 <= y <= N")

    @cached_property
    def _log_binom(self):
        y = self.y
        return np.sum(special.gammaln(self.N + 1) - special.gammaln(y + 1) - special.gammaln(self.N - y + 1), axis=-1)

    def loglik(self, beta):
        eta = self.eta(beta)
        return np.sum(self.y * eta - self.N * np.logaddexp(0.0, eta), axis=-1) + self._log_binom

    def loglik_ratio(self, beta_a, beta_b):
        eta_b = self.eta(beta_b)
        d = (np.asarray(beta_a, dtype=float) - np.asarray(beta_b, dtype=float)) @ self.X.T
        near = np.abs(d) < 1.0
        # softplus(eta_b + d) - softplus(eta_b) without cancellation for small d
        dsp = np.where(near, np.log1p(np.expm1(np.where(near, d, 0.0)) * special.expit(eta_b)),
                       np.logaddexp(0.0, eta_b + d) - np.logaddexp(0.0, eta_b))
        return np.sum(self.y * d - self.N * dsp, axis=-1)

    def psi(self, beta):
        return special.expit(self.eta(beta))

    def score(self, beta):
        return (self.y - self.N * self.psi(beta)) @ self.X

    def expected_information(self, beta):
        psi = self.psi(beta)
        w = self.N * psi * (1.0 - psi)
        return np.einsum("...i,ij,ik->...jk", w, self.X, self.X)

    def hessian(self, beta):
        # canonical link: observed and expected information coincide
        return -self.expected_information(beta)

    def separated(self, beta):
        return np.any(np.abs(self.eta(beta)) > SEPARATION_ETA, axis=-1)

    def simulate(self, beta, uniforms):
        from scipy import stats

        psi = self.psi(beta)
        return stats.binom.ppf(uniforms, self.N, psi)


@dataclass(frozen=True, eq=False)
class LinearNormalModel(RegressionSpec):
    """``y = X beta + eps`` with ``eps ~ N(0, sigma2 I)`` and ``sigma2`` known."""

    sigma2: float = 1.0

    def loglik(self, beta):
        r = self.y - self.eta(beta)
        return -0.5 * np.sum(r * r, axis=-1) / self.sigma2 - 0.5 * self.n * math.log(2 * math.pi * self.sigma2)

    def loglik_ratio(self, beta_a, beta_b):
        d = (np.asarray(beta_a, dtype=float) - np.asarray(beta_b, dtype=float)) @ self.X.T
        r_sum = 2.0 * self.y - self.eta(beta_a) - self.eta(beta_b)
        return 0.5 * np.sum(d * r_sum, axis=-1) / self.sigma2

    def score(self, beta):
        return ((self.y - self.eta(beta)) @ self.X) / self.sigma2

    def expected_information(self, beta):
        info = self.X.T @ self.X / self.sigma2
        return np.broadcast_to(info, np.shape(beta)[:-1] + info.shape).copy()

    def hessian(self, beta):
        return -self.expected_information(beta)

    def simulate(self, beta, uniforms):
        from .numkernels import norm_quantile

        return self.eta(beta) + math.sqrt(self.sigma2) * norm_quantile(uniforms)


# ---------------------------------------------------------------------------
# fitting


def _inv_spd(info):
    """Inverse of a stack of symmetric positive-definite matrices via Cholesky."""
    cond = np.linalg.cond(info)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularInformation(f"information matrix condition number {np.max(cond):.3g} exceeds {COND_LIMIT:g}")
    L = np.linalg.cholesky(info)
    eye = np.broadcast_to(np.eye(info.shape[-1]), info.shape)
    Linv = np.linalg.solve(L, eye)
    return np.swapaxes(Linv, -1, -2) @ Linv


@dataclass(frozen=True, eq=False)
class FitResult:
    """Maximum likelihood fit (possibly constrained, possibly batched).

    Asymptotic quantities are derived lazily from the expected information
    at ``beta``.
    """

    spec: RegressionSpec
    beta: np.ndarray
    loglik: np.ndarray
    converged: np.ndarray
    iterations: int
    multiplier: np.ndarray | None = None
    kkt_residual: np.ndarray | None = None
    _summary: tuple | None = field(default=None, repr=False)

    @cached_property
    def information(self):
        return self.spec.expected_information(self.beta)

    @cached_property
    def information_inverse(self):
        return _inv_spd(self.information)

    @cached_property
    def theta_hat(self):
        return self.spec.g.value(self.beta)

    @cached_property
    def tau_hat(self):
        return self.spec.h.value(self.beta)

    @cached_property
    def asymptotics(self):
        return asymptotic_summary(self.spec, self.beta)

    @property
    def avar_theta(self):
        return self.asymptotics[0]

    @property
    def avar_tau(self):
        return self.asymptotics[1]

    @property
    def acov(self):
        return self.asymptotics[2]

    @property
    def rho_hat(self):
        return self.asymptotics[3]

    @property
    def score(self):
        return self.spec.score(self.beta)


def _newton_solve(H, g):
    """Solve ``H d = g`` row-wise; rows with singular H get a zero step."""
    try:
        return np.linalg.solve(H, g[..., None])[..., 0]
    except np.linalg.LinAlgError:
        out = np.zeros_like(g)
        for i in range(g.shape[0]):
            try:
                out[i] = np.linalg.solve(H[i], g[i])
            except np.linalg.LinAlgError:
                pass
        return out


def _line_search(f, x, step, f0, active, max_halvings=30):
    """Halve steps row-wise until ``f`` does not decrease (maximisation)."""
    t = np.ones(x.shape[0])
    todo = active.copy()
    x_new = x.copy()
    f_new = f0.copy()
    slack = 1e-12 * (1.0 + np.abs(f0))
    for _ in range(max_halvings + 1):
        if not np.any(todo):
            break
        idx = np.flatnonzero(todo)
        trial = x[idx] + t[idx, None] * step[idx]
        ft = f(trial, idx)
        ok = np.isfinite(ft) & (ft >= f0[idx] - slack[idx])
        good = idx[ok]
        x_new[good] = trial[ok]
        f_new[good] = ft[ok]
        todo[good] = False
        t[idx[~ok]] *= 0.5
    return x_new, f_new, todo


def fit_mle(spec: RegressionSpec, start=None, max_iter: int = 200, tol: float = 1e-9,
            step_tol: float = 1e-10) -> FitResult:
    """Newton-Raphson with step halving for the unconstrained MLE.

    Rows that hit the iteration cap or show separation (|eta| > 30 while the
    score is still large) come back with ``converged = False``.

    Raises
    ------
    SingularInformation
        For a single data set whose information matrix is numerically
        singular.
    """
    p = spec.p
    one = spec.batch is None
    B = 1 if one else spec.batch
    beta = np.broadcast_to(np.asarray(spec.default_start() if start is None else start, dtype=float), (B, p)).copy()
    y = spec.y.reshape(B, -1)

    def sub(idx):
        return spec.with_responses(y[idx])

    ll = sub(slice(None)).loglik(beta)
    active = np.ones(B, dtype=bool)
    converged = np.zeros(B, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            it -= 1
            break
        s = sub(idx)
        sc = s.score(beta[idx])
        H = s.hessian(beta[idx])
        step = _newton_solve(-H, sc)
        small = (np.max(np.abs(sc), axis=1) <= tol) & (np.linalg.norm(step, axis=1) <= step_tol)
        sep = spec.separated(beta[idx]) if not isinstance(spec, BinomialLogitModel) else s.separated(beta[idx])
        bad = sep & ~small
        beta[idx[small]] += step[small]
        converged[idx[small]] = True
        active[idx[small | bad]] = False
        move = ~(small | bad)
        if not np.any(move):
            continue
        midx = idx[move]
        new, fnew, stuck = _line_search(lambda b, j: sub(midx[j]).loglik(b), beta[midx], step[move], ll[midx],
                                        np.ones(midx.size, dtype=bool))
        beta[midx] = new
        ll[midx] = fnew
        # a step that cannot improve at all means we are at the optimum to rounding
        done = stuck & (np.max(np.abs(sc[move]), axis=1) <= 1e3 * tol)
        converged[midx[done]] = True
        active[midx[stuck]] = False
    ll = sub(slice(None)).loglik(beta)
    res = FitResult(spec, beta[0] if one else beta, ll[0] if one else ll,
                    bool(converged[0]) if one else converged, it)
    if one and converged[0]:
        _inv_spd(res.information)
    return res


def _chart_fit(spec, chart, start, max_iter, tol):
    p = spec.p
    one = spec.batch is None
    B = 1 if one else spec.batch
    y = spec.y.reshape(B, -1)
    st = np.broadcast_to(np.asarray(start, dtype=float), (B, p))
    phi = chart.phi_from(st)
    phi = np.broadcast_to(phi, (B, chart.q)).copy()

    def chart_rows(idx):
        return chart.rows(idx)

    def ll_at(ph, idx):
        return spec.with_responses(y[idx]).loglik(chart_rows(idx).beta(ph))

    ll = ll_at(phi, np.arange(B))
    active = np.ones(B, dtype=bool)
    converged = np.zeros(B, dtype=bool)
    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            it -= 1
            break
        ch = chart_rows(idx)
        s = spec.with_responses(y[idx])
        ph = phi[idx]
        beta = ch.beta(ph)
        J = ch.jac(ph)
        sc = s.score(beta)
        grad = np.einsum("bpq,bp->bq", J, sc)
        H = np.einsum("bpq,bpr,brs->bqs", J, s.hessian(beta), J)
        S = ch.second(ph)
        if S is not None:
            H = H + np.einsum("bp,bpqr->bqr", sc, S)
        # fall back to Fisher scoring where the chart Hessian is not negative definite
        neg = np.all(np.linalg.eigvalsh(H) < 0, axis=1)
        if not np.all(neg):
            I = np.einsum("bpq,bpr,brs->bqs", J[~neg], s.expected_information(beta[~neg]), J[~neg])
            H[~neg] = -I
        step = _newton_solve(-H, grad)
        small = np.max(np.abs(grad), axis=1) <= tol
        phi[idx[small]] += step[small]
        converged[idx[small]] = True
        active[idx[small]] = False
        move = ~small
        if not np.any(move):
            continue
        midx = idx[move]
        new, fnew, stuck = _line_search(lambda ph, j: ll_at(ph, midx[j]), phi[midx], step[move], ll[midx],
                                        np.ones(midx.size, dtype=bool))
        phi[midx] = new
        ll[midx] = fnew
        done = stuck & (np.max(np.abs(grad[move]), axis=1) <= 1e3 * tol)
        converged[midx[done]] = True
        active[midx[stuck]] = False
    beta = chart_rows(np.arange(B)).beta(phi)
    return beta, converged, it


def _kkt_fit(spec, functional, value, start, max_iter, tol):
    """Newton on the Lagrange conditions for functionals without a chart."""
    p = spec.p
    one = spec.batch is None
    B = 1 if one else spec.batch
    y = spec.y.reshape(B, -1)
    value = np.broadcast_to(np.asarray(value, dtype=float), (B,))
    beta = np.broadcast_to(np.asarray(start, dtype=float), (B, p)).copy()
    s = spec.with_responses(y)
    gc = functional.grad(beta)
    lam = np.einsum("bp,bp->b", s.score(beta), gc) / np.einsum("bp,bp->b", gc, gc)
    converged = np.zeros(B, dtype=bool)

    def resid(b, lm, rows):
        ss = spec.with_responses(y[rows])
        g = functional.grad(b)
        return np.concatenate([ss.score(b) - lm[:, None] * g, (functional.value(b) - value[rows])[:, None]], axis=1)

    it = 0
    for it in range(1, max_iter + 1):
        idx = np.flatnonzero(~converged)
        if idx.size == 0:
            it -= 1
            break
        F = resid(beta[idx], lam[idx], idx)
        small = np.max(np.abs(F), axis=1) <= tol
        converged[idx[small]] = True
        idx, F = idx[~small], F[~small]
        if idx.size == 0:
            break
        b, lm = beta[idx], lam[idx]
        ss = spec.with_responses(y[idx])
        g = functional.grad(b)
        K = np.zeros((idx.size, p + 1, p + 1))
        K[:, :p, :p] = ss.hessian(b) - lm[:, None, None] * functional.hess(b)
        K[:, :p, p] = -g
        K[:, p, :p] = g
        d = _newton_solve(K, -F)
        f0 = np.sum(F * F, axis=1)
        t = np.ones(idx.size)
        for _ in range(31):
            nb = b + t[:, None] * d[:, :p]
            nl = lm + t * d[:, p]
            f1 = np.sum(resid(nb, nl, idx) ** 2, axis=1)
            ok = (f1 <= f0 * (1 - 1e-4 * t)) | (f1 <= tol * tol)
            if np.all(ok):
                break
            t = np.where(ok, t, 0.5 * t)
        beta[idx] = b + t[:, None] * d[:, :p]
        lam[idx] = lm + t * d[:, p]
    return beta, converged, it


def fit_constrained(spec: RegressionSpec, functional: Functional, value, start=None,
                    max_iter: int = 200, tol: float = 1e-9) -> FitResult:
    """Maximise the log-likelihood subject to ``functional(beta) = value``.

    Linear constraints and functionals that provide a chart are solved by
    Newton's method in chart coordinates (which eliminates the constraint);
    anything else goes through Newton on the Lagrange conditions.  ``value``
    may be a per-row array when ``spec`` is batched.
    """
    one = spec.batch is None
    if start is None:
        start = spec.default_start()
    chart = functional.chart(value)
    if chart is not None:
        beta, conv, it = _chart_fit(spec, chart, start, max_iter, tol)
    else:
        beta, conv, it = _kkt_fit(spec, functional, value, start, max_iter, tol)
    B = 1 if one else spec.batch
    s = spec.with_responses(spec.y.reshape(B, -1))
    ll = s.loglik(beta)
    sc = s.score(beta)
    try:
        gc = functional.grad(beta)
        lam = np.einsum("bp,bp->b", sc, gc) / np.einsum("bp,bp->b", gc, gc)
        kkt = np.max(np.abs(sc - lam[:, None] * gc), axis=1)
        viol = np.abs(functional.value(beta) - np.broadcast_to(value, (B,)))
        kkt = np.maximum(kkt, viol)
    except DegenerateSlope:
        # the chart stays valid where g itself is undefined; skip the diagnostic
        lam = np.full(B, np.nan)
        kkt = np.full(B, np.nan)
    if one:
        return FitResult(spec, beta[0], ll[0], bool(conv[0]), it, lam[0], kkt[0])
    return FitResult(spec, beta, ll, conv, it, lam, kkt)


def expected_information(spec: RegressionSpec, beta) -> np.ndarray:
    """Fisher information at ``beta``; raises SingularInformation if the
    condition number exceeds 1e12."""
    info = spec.expected_information(beta)
    cond = np.linalg.cond(info)
    if np.any(~np.isfinite(cond)) or np.any(cond > COND_LIMIT):
        raise SingularInformation("information matrix is numerically singular")
    return info


def asymptotic_summary(spec: RegressionSpec, beta, g: Functional | None = None,
                       h: Functional | None = None):
    """(avar theta_hat, avar tau_hat, acov, rho) at ``beta``."""
    g = spec.g if g is None else g
    h = spec.h if h is None else h
    Iinv = _inv_spd(spec.expected_information(beta))
    dg, dh = g.grad(beta), h.grad(beta)
    vg = np.einsum("...i,...ij,...j->...", dg, Iinv, dg)
    vh = np.einsum("...i,...ij,...j->...", dh, Iinv, dh)
    c = np.einsum("...i,...ij,...j->...", dg, Iinv, dh)
    return vg, vh, c, c / np.sqrt(vg * vh)
