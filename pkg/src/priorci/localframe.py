"""Local family of parameter values used to assess coverage and length.

A point beta_tilde on the constraint surface {h(beta) = t} is chosen close to
the data, and the family is the straight line through it along the gradient
of h, scaled so that the index equals the standardised distance of tau from t.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ciuupi import BSFunctions, cp_curve, sel_curve
from .regmodel import RegressionSpec, asymptotic_summary

__all__ = [
    "ProjectionFailed",
    "LocalFrame",
    "project_beta_tilde",
    "build_frame",
    "beta_star",
    "gamma_tau_table",
    "approx_cp_sel",
    "default_gammas",
]


class ProjectionFailed(RuntimeError):
    pass


def project_beta_tilde(spec: RegressionSpec, beta_hat, tol: float = 1e-12, max_iter: int = 100) -> np.ndarray:
    """Euclidean-nearest point to ``beta_hat`` on {h(beta) = t}.

    Linear h has a closed form; otherwise Newton on the Lagrange conditions
    ``beta - beta_hat + mu grad h(beta) = 0, h(beta) = t``.
    """
    h, t = spec.h, spec.t
    beta_hat = np.asarray(beta_hat, dtype=float)
    if h.linear:
        a = h.grad(beta_hat)
        return beta_hat - ((h.value(beta_hat) - t) / (a @ a)) * a
    p = beta_hat.size
    beta = beta_hat.copy()
    mu = 0.0
    for _ in range(max_iter):
        gr = h.grad(beta)
        F = np.concatenate([beta - beta_hat + mu * gr, [h.value(beta) - t]])
        if np.max(np.abs(F)) <= tol:
            return beta
        K = np.zeros((p + 1, p + 1))
        K[:p, :p] = np.eye(p) + mu * h.hess(beta)
        K[:p, p] = gr
        K[p, :p] = gr
        try:
            d = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError as exc:
            raise ProjectionFailed(str(exc)) from None
        beta = beta + d[:p]
        mu = mu + d[p]
    raise ProjectionFailed("Newton iteration for the projection did not converge")


def default_gammas(u: float, step: float = 0.5) -> np.ndarray:
    n = int(round(2 * u / step))
    return np.round(np.linspace(-u, u, n + 1), 12)


@dataclass(frozen=True, eq=False)
class LocalFrame:
    """beta*(gamma) = beta_tilde + kappa * gamma * direction."""

    spec: RegressionSpec
    beta_tilde: np.ndarray
    direction: np.ndarray
    kappa: float
    u: float
    gammas: np.ndarray
    rho_tilde: float
    avar_theta: float
    avar_tau: float
    acov: float

    def __post_init__(self):
        if not 1.0 <= self.u <= 10.0:
            raise ValueError("u must lie in [1, 10]")
        if abs(float(self.spec.h.value(self.beta_tilde)) - self.spec.t) > 1e-10:
            raise ValueError("beta_tilde does not satisfy h(beta) = t")

    def beta_star(self, gamma) -> np.ndarray:
        gamma = np.asarray(gamma, dtype=float)
        return self.beta_tilde + self.kappa * np.multiply.outer(gamma, self.direction)

    def tau_star(self, gamma):
        return math.sqrt(self.avar_tau) * np.asarray(gamma, dtype=float)

    def report(self) -> str:
        fmt = lambda v: " ".join(f"{x:.6f}" for x in np.atleast_1d(v))
        lines = [
            f"beta_tilde {fmt(self.beta_tilde)}",
            f"direction {fmt(self.direction)}",
            f"kappa {self.kappa:.6f}",
            f"avar_theta {self.avar_theta:.6f}",
            f"avar_tau {self.avar_tau:.6f}",
            f"acov {self.acov:.6f}",
            f"rho_tilde {self.rho_tilde:.6f}",
            f"u {self.u:g}",
            f"gammas {' '.join(f'{g:g}' for g in self.gammas)}",
        ]
        return "\n".join(lines) + "\n"


def build_frame(spec: RegressionSpec, beta_hat, u: float = 2.5, step: float = 0.5,
                gammas=None) -> LocalFrame:
    bt = project_beta_tilde(spec, beta_hat)
    direction = np.asarray(spec.h.grad(bt), dtype=float)
    vg, vh, c, rho = (float(v) for v in asymptotic_summary(spec, bt))
    kappa = math.sqrt(vh) / float(direction @ direction)
    grid = default_gammas(u, step) if gammas is None else np.asarray(gammas, dtype=float)
    return LocalFrame(spec, bt, direction, kappa, float(u), grid, rho, vg, vh, c)


def beta_star(frame: LocalFrame, gamma) -> np.ndarray:
    return frame.beta_star(gamma)


def gamma_tau_table(frame: LocalFrame, gammas) -> list[tuple[float, float]]:
    gammas = np.asarray(gammas, dtype=float)
    return list(zip(gammas.tolist(), frame.tau_star(gammas).tolist()))


def approx_cp_sel(frame: LocalFrame, bs: BSFunctions, gammas) -> list[tuple[float, float, float]]:
    """Large-sample coverage and scaled expected length along the family."""
    gammas = np.asarray(gammas, dtype=float)
    cp = cp_curve(bs, gammas, rho=frame.rho_tilde)
    sel = sel_curve(bs, gammas)
    return list(zip(gammas.tolist(), cp.tolist(), sel.tolist()))
