import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize, stats

from priorci.regmodel import (BinomialLogitModel, CallableFunctional, DegenerateSlope, EDDifference,
                              LinearFunctional, SingularInformation, asymptotic_summary, bioassay_functionals,
                              expected_information, fit_constrained, fit_mle)

BETA_HAT = np.array([-2.0652, 3.6418, -2.0968, 4.4581])
BETA_TILDE = np.array([-2.0652, 4.04995, -2.0968, 4.04995])


def nll(spec, b):
    return -float(spec.loglik(np.asarray(b)))


def toy_spec(y=(2, 5, 8), N=(10, 10, 10)):
    X = np.column_stack([np.ones(3), [-1.0, 0.0, 1.0]])
    return BinomialLogitModel(X=X, y=np.asarray(y, float), N=np.asarray(N, float))


def test_golden_mle(fit):
    assert fit.converged
    assert np.max(np.abs(fit.beta - BETA_HAT)) < 1e-3
    assert np.max(np.abs(fit.score)) <= 1e-9


def test_intercept_only_half():
    spec = BinomialLogitModel(X=np.ones((1, 1)), y=np.array([6.0]), N=np.array([12.0]))
    assert abs(fit_mle(spec).beta[0]) < 1e-12


def test_mle_matches_nelder_mead():
    spec = toy_spec()
    ours = fit_mle(spec).beta
    res = optimize.minimize(lambda b: nll(spec, b), np.zeros(2), method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 10_000})
    assert np.max(np.abs(ours - res.x)) < 1e-5


def test_mle_start_invariance(spec):
    fits = [fit_mle(spec, start=s).beta for s in (np.zeros(4), np.array([1.0, 1.0, -1.0, 0.5]),
                                                   np.array([-3.0, 6.0, -1.0, 2.0]))]
    for b in fits[1:]:
        assert np.max(np.abs(b - fits[0])) < 1e-8


def test_batched_fit_matches_rows(spec):
    rng = np.random.default_rng(5)
    U = rng.random((6, spec.n))
    Y = spec.simulate(np.broadcast_to(BETA_HAT, (6, 4)), U)
    batch = fit_mle(spec.with_responses(Y))
    for k in range(6):
        single = fit_mle(spec.with_responses(Y[k]))
        assert np.max(np.abs(batch.beta[k] - single.beta)) < 1e-9


def test_separation_flagged():
    spec = toy_spec(y=(0, 0, 10))
    assert not fit_mle(spec).converged


def test_singular_information():
    X = np.column_stack([np.ones(3), np.ones(3)])
    spec = BinomialLogitModel(X=X, y=np.array([2.0, 5.0, 8.0]), N=np.full(3, 10.0))
    with pytest.raises(SingularInformation):
        expected_information(spec, np.zeros(2))


def test_information_examples(spec):
    single = BinomialLogitModel(X=np.ones((1, 1)), y=np.array([0.0]), N=np.array([1.0]))
    assert single.expected_information(np.zeros(1))[0, 0] == 0.25
    inv = np.linalg.inv(spec.expected_information(BETA_TILDE))
    printed = {(0, 0): 0.086304, (0, 1): -0.142229, (1, 1): 0.280902, (2, 2): 0.132504, (2, 3): -0.216338,
               (3, 3): 0.408074}
    for (i, j), v in printed.items():
        assert abs(inv[i, j] - v) < 1e-5 and abs(inv[j, i] - inv[i, j]) < 1e-15
    assert np.all(inv[:2, 2:] == 0) and np.all(inv[2:, :2] == 0)


def test_information_by_enumeration():
    """E[score score^T] summed over every outcome equals the information."""
    X = np.array([[1.0, -0.5], [1.0, 0.4], [1.0, 1.3]])
    N = np.array([2.0, 3.0, 4.0])
    beta = np.array([0.3, -0.8])
    psi = 1 / (1 + np.exp(-X @ beta))
    spec = BinomialLogitModel(X=X, y=np.zeros(3), N=N)
    oracle = np.zeros((2, 2))
    for ys in itertools.product(*(range(int(n) + 1) for n in N)):
        ys = np.array(ys, float)
        prob = np.prod(stats.binom.pmf(ys, N, psi))
        sc = spec.with_responses(ys).score(beta)
        oracle += prob * np.outer(sc, sc)
    assert np.max(np.abs(spec.expected_information(beta) - oracle)) < 1e-8


@settings(max_examples=25, deadline=None)
@given(shift=st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_observed_equals_expected(shift, spec):
    beta = BETA_HAT + np.array(shift)
    assert np.max(np.abs(-spec.hessian(beta) - spec.expected_information(beta))) < 1e-8


@settings(max_examples=25, deadline=None)
@given(shift=st.lists(st.floats(-0.5, 0.5), min_size=4, max_size=4))
def test_gradients_match_finite_differences(shift, spec):
    beta = BETA_HAT + np.array(shift)
    e = 1e-6 * np.eye(4)
    for fn, grad in ((spec.g.value, spec.g.grad), (spec.h.value, spec.h.grad), (spec.loglik, spec.score)):
        fd = np.array([(fn(beta + e[j]) - fn(beta - e[j])) / 2e-6 for j in range(4)])
        an = grad(beta)
        assert np.max(np.abs(fd - an)) <= 1e-6 * max(1.0, np.max(np.abs(an)))
    fdh = np.array([(spec.g.grad(beta + e[j]) - spec.g.grad(beta - e[j])) / 2e-6 for j in range(4)])
    assert np.max(np.abs(fdh - spec.g.hess(beta))) < 1e-5


def test_gradients_not_parallel(fit):
    dg, dh = fit.spec.g.grad(fit.beta), fit.spec.h.grad(fit.beta)
    cos = dg @ dh / np.linalg.norm(dg) / np.linalg.norm(dh)
    assert abs(cos) < 1 - 1e-8


def test_constrained_equal_slopes(spec, fit):
    con = fit_constrained(spec, spec.h, 0.0, start=fit.beta)
    assert con.converged
    assert abs(con.beta[1] - con.beta[3]) < 1e-10
    assert con.kkt_residual < 1e-6
    assert con.loglik <= fit.loglik
    # the reduced-model refit moves the intercepts as well
    assert np.max(np.abs(con.beta - BETA_TILDE)) > 1e-2


def test_constrained_at_unconstrained_value(spec, fit):
    for functional in (spec.g, spec.h):
        con = fit_constrained(spec, functional, float(functional.value(fit.beta)), start=fit.beta)
        assert np.max(np.abs(con.beta - fit.beta)) < 1e-6


def test_nonlinear_constraint_matches_penalty_oracle():
    spec = toy_spec()
    ed = CallableFunctional(lambda b: -b[0] / b[1], grad=lambda b: np.array([-1 / b[1], b[0] / b[1] ** 2]))
    target = 0.25
    con = fit_constrained(spec, ed, target, start=fit_mle(spec).beta)
    assert con.converged
    pen = lambda b: nll(spec, b) + 1e8 * (ed.value(b) - target) ** 2
    res = optimize.minimize(pen, con.beta + 0.01, method="Nelder-Mead",
                            options={"xatol": 1e-11, "fatol": 1e-14, "maxiter": 20_000})
    assert np.max(np.abs(con.beta - res.x)) < 1e-5


def test_chart_and_kkt_paths_agree(spec, fit):
    g = spec.g
    plain = CallableFunctional(g.value, grad=g.grad, hess=g.hess)
    for theta in (-0.1, 0.05, 0.3):
        a = fit_constrained(spec, g, theta, start=fit.beta)
        b = fit_constrained(spec, plain, theta, start=fit.beta)
        assert a.converged and b.converged
        assert np.max(np.abs(a.beta - b.beta)) < 1e-7


@settings(max_examples=30)
@given(slope_a=st.floats(0.5, 6), e=st.floats(-1, 1), slope_b=st.floats(0.5, 6), theta=st.floats(-1, 1),
       anchor=st.booleans())
def test_ed_chart_stays_on_level_set(slope_a, e, slope_b, theta, anchor):
    g = EDDifference(60)
    chart = g.chart(theta)
    chart.anchor_a = np.asarray(anchor)
    phi = np.array([slope_a, e, slope_b])
    beta = chart.beta(phi)
    assert abs(g.value(beta) - theta) < 1e-9
    assert np.allclose(chart.phi_from(beta), phi, atol=1e-9)


def test_ed_functional_examples():
    g, h = bioassay_functionals(60)
    e1, e2 = g.ed(BETA_TILDE)
    assert abs(e1 - 0.6101) < 1e-3 and abs(e2 - 0.6178) < 1e-3 and abs(g.value(BETA_TILDE) + 0.0078) < 1e-3
    b = np.array([-2.0652, 5.0874, -2.0968, 3.0124])
    assert abs(g.value(b) + 0.345) < 1e-3
    assert g.value(np.array([-1.0, 2.0, -1.0, 2.0])) == 0.0
    assert h.value(BETA_TILDE) == 0.0
    with pytest.raises(DegenerateSlope):
        g.value(np.array([-1.0, 0.0, -1.0, 2.0]))
    with pytest.raises(ValueError):
        EDDifference(100)


def test_asymptotic_summary_golden(spec):
    vt, vh, c, rho = asymptotic_summary(spec, BETA_TILDE)
    assert abs(vt - 0.002333) < 1e-5 and abs(vh - 0.688976) < 1e-5
    assert abs(c + 0.01603) < 1e-4 and abs(rho + 0.399855) < 1e-4
    assert rho == pytest.approx(c / np.sqrt(vt * vh), abs=1e-15)


def test_asymptotic_summary_orthogonal():
    X = np.array([[1.0, 0.0], [0.0, 1.0]])
    spec = BinomialLogitModel(X=X, y=np.array([3.0, 4.0]), N=np.array([10.0, 10.0]),
                              g=LinearFunctional([1.0, 0.0]), h=LinearFunctional([0.0, 1.0]))
    _, _, c, rho = asymptotic_summary(spec, np.array([0.2, -0.3]))
    assert c == 0.0 and rho == 0.0


@given(k=st.floats(0.01, 100))
def test_rho_scale_invariant(k, spec):
    rho = asymptotic_summary(spec, BETA_HAT)[3]
    assert abs(asymptotic_summary(spec, BETA_HAT, g=spec.g.scaled(k))[3] - rho) < 1e-10


def test_fit_result_invariants(fit):
    assert fit.avar_theta > 0 and fit.avar_tau > 0 and abs(fit.rho_hat) < 1
    assert fit.rho_hat == pytest.approx(fit.acov / np.sqrt(fit.avar_theta * fit.avar_tau), abs=1e-15)


def test_spec_validation():
    with pytest.raises(ValueError):
        BinomialLogitModel(X=np.ones((2, 1)), y=np.zeros(3), N=np.ones(2))
    with pytest.raises(ValueError):
        BinomialLogitModel(X=np.ones((2, 1)), y=np.zeros(2), N=np.array([1.0, 0.5]))
