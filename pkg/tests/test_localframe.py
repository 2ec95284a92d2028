import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from priorci.ciuupi import BSFunctions
from priorci.localframe import (LocalFrame, approx_cp_sel, beta_star, build_frame, default_gammas, gamma_tau_table,
                                project_beta_tilde)
from priorci.regmodel import BinomialLogitModel, CallableFunctional, LinearFunctional

from conftest import RHO_TILDE


def test_beta_tilde_golden(frame, fit):
    bt = frame.beta_tilde
    assert np.max(np.abs(bt - np.array([-2.0652, 4.04995, -2.0968, 4.04995]))) < 1e-4
    assert bt[0] == fit.beta[0] and bt[2] == fit.beta[2]
    assert bt[1] == bt[3] == pytest.approx((fit.beta[1] + fit.beta[3]) / 2, abs=1e-15)
    assert abs(float(frame.spec.h.value(bt)) - frame.spec.t) <= 1e-10
    assert np.array_equal(frame.direction, [0.0, 1.0, 0.0, -1.0])
    assert abs(frame.rho_tilde - RHO_TILDE) < 1e-4


def test_projection_fixed_point(spec, frame):
    assert np.array_equal(project_beta_tilde(spec, frame.beta_tilde), frame.beta_tilde)


@settings(max_examples=25, deadline=None)
@given(a=st.tuples(st.floats(0.2, 2), st.floats(-2, 2)), t=st.floats(-1, 1), bh=st.tuples(st.floats(-2, 2),
                                                                                          st.floats(-2, 2)))
def test_linear_projection_grid_oracle(a, t, bh):
    a, bh = np.array(a), np.array(bh)
    spec = BinomialLogitModel(X=np.eye(2), y=np.ones(2), N=np.full(2, 2.0), h=LinearFunctional(a), t=t)
    got = project_beta_tilde(spec, bh)
    # walk the constraint line by arc length on a dense grid
    p0 = np.array([t / a[0], 0.0])
    v = np.array([-a[1], a[0]]) / np.linalg.norm(a)
    s = np.linspace(-15, 15, 1_500_001)
    pts = p0 + s[:, None] * v
    best = pts[np.argmin(np.sum((pts - bh) ** 2, axis=1))]
    assert np.max(np.abs(got - best)) < 1e-4


def test_nonlinear_projection_matches_slsqp():
    h = CallableFunctional(lambda b: b[0] * b[1] + b[2] ** 2, grad=lambda b: np.array([b[1], b[0], 2 * b[2]]),
                           hess=lambda b: np.array([[0, 1, 0], [1, 0, 0], [0, 0, 2.0]]))
    spec = BinomialLogitModel(X=np.eye(3), y=np.ones(3), N=np.full(3, 2.0), h=h, t=1.0)
    bh = np.array([0.3, 0.2, -0.4])
    got = project_beta_tilde(spec, bh)
    ref = optimize.minimize(lambda b: np.sum((b - bh) ** 2), bh, method="SLSQP",
                            constraints=[{"type": "eq", "fun": lambda b: h.value(b) - 1.0}],
                            options={"ftol": 1e-14})
    assert abs(float(h.value(got)) - 1.0) < 1e-10
    assert np.max(np.abs(got - ref.x)) < 1e-6


def test_frame_line_exact(frame):
    g = np.linspace(-2.5, 2.5, 11)
    bs = frame.beta_star(g)
    std = (frame.spec.h.value(bs) - frame.spec.t) / math.sqrt(frame.avar_tau)
    assert np.max(np.abs(std - g)) < 1e-12
    assert np.array_equal(beta_star(frame, 0.0), frame.beta_tilde)
    dist = np.linalg.norm(bs - frame.beta_tilde, axis=1)
    assert np.allclose(dist, math.sqrt(frame.avar_tau) * np.abs(g) / math.sqrt(2), atol=1e-12)


def test_frame_goldens(frame):
    g = frame.spec.g
    assert abs(frame.kappa - 0.415023) < 1e-6
    b = frame.beta_star(2.5)
    assert abs(float(frame.tau_star(2.5)) - 2.075) < 1e-3
    assert abs(b[1] - 5.0874) < 1e-3 and abs(b[3] - 3.0124) < 1e-3
    assert abs(float(g.value(b)) + 0.345) < 1e-3
    assert abs(float(g.value(frame.beta_star(-2.5))) - 0.3283) < 1e-3
    table = dict(gamma_tau_table(frame, [-3.5, 0.0, 5.0]))
    assert table[0.0] == 0.0
    assert abs(table[5.0] - 4.15) < 5e-3 and abs(table[-3.5] + 2.91) < 5e-3


def test_default_grid():
    g = default_gammas(2.5)
    assert g.size == 11 and g[0] == -2.5 and g[-1] == 2.5 and g[5] == 0.0


@pytest.mark.parametrize("u", [0.5, 11.0])
def test_u_range(spec, fit, u):
    with pytest.raises(ValueError):
        build_frame(spec, fit.beta, u=u)


def test_frame_rejects_off_surface_point(frame):
    with pytest.raises(ValueError):
        LocalFrame(frame.spec, frame.beta_tilde + np.array([0, 0.1, 0, 0]), frame.direction, frame.kappa, 2.5,
                   frame.gammas, frame.rho_tilde, frame.avar_theta, frame.avar_tau, frame.acov)


def test_approx_cp_sel(frame, bs_tilde):
    g = np.linspace(-10, 10, 41)
    usual = approx_cp_sel(frame, BSFunctions.usual(0.05), g)
    assert all(abs(cp - 0.95) < 1e-8 and sel == 1.0 for _, cp, sel in usual)
    rows = np.array(approx_cp_sel(frame, bs_tilde, g))
    assert np.max(np.abs(rows[:, 1:] - rows[::-1, 1:])) < 1e-8
    sel = dict(zip(rows[:, 0], rows[:, 2]))
    assert sel[0.0] < 1.0
    assert max(sel.values()) > 1.0
    assert abs(sel[10.0] - 1.0) < 1e-5 and abs(sel[8.0] - 1.0) < 5e-3


def test_report_lists_fields(frame):
    text = frame.report()
    assert "rho_tilde -0.39985" in text and text.count("\n") == 9
