import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from priorci.ciuupi import (BSFunctions, BSTable, CiuupiConfig, GammaRho, ci_bs, cp, cp_curve, optimize_bs, sel,
                            sel_curve, usual_ci)
from priorci.numkernels import RngStream, norm_quantile

Z = norm_quantile(0.975)


def random_bs(seed: int, rho: float = -0.4) -> BSFunctions:
    rng = np.random.default_rng(seed)
    knots = np.arange(7.0)
    b = np.concatenate([[0.0], rng.uniform(-1, 1, 5), [0.0]])
    s = np.concatenate([rng.uniform(1.2, 2.6, 6), [Z]])
    return BSFunctions(rho, 0.05, knots, b, s)


def mc_cp(bs, gamma, rho, n=10_000_000, chunk=1_000_000):
    """Brute-force P(b(V) - s(V) <= W <= b(V) + s(V)) with (W, V - gamma)
    standard bivariate normal with correlation rho."""
    hits = 0
    for k in range(n // chunk):
        e = RngStream(99, k).standard_normal((2, chunk))
        w = e[0]
        v = gamma + rho * e[0] + np.sqrt(1 - rho**2) * e[1]
        b, s = bs.b(v), bs.s(v)
        hits += np.count_nonzero((b - s <= w) & (w <= b + s))
    p = hits / n
    return p, np.sqrt(p * (1 - p) / n)


def mc_sel(bs, gamma, n=10_000_000, chunk=1_000_000):
    vals = []
    for k in range(n // chunk):
        v = gamma + RngStream(98, k).standard_normal(chunk)
        vals.append(bs.s(v) / bs.z)
    q = np.concatenate(vals)
    return q.mean(), q.std(ddof=1) / np.sqrt(n)


def test_usual_functions_have_exact_coverage():
    bs = BSFunctions.usual(0.05)
    for rho in (-0.9, -0.4, 0.0, 0.7):
        assert np.max(np.abs(cp_curve(bs, np.linspace(-8, 8, 33), rho) - 0.95)) < 1e-8
    assert np.all(sel_curve(bs, np.linspace(-8, 8, 33)) == 1.0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), gamma=st.floats(0, 9), rho=st.floats(-0.95, 0.95))
def test_cp_and_sel_even_in_gamma(seed, gamma, rho):
    bs = random_bs(seed, rho)
    assert abs(cp(bs, GammaRho(gamma, rho)) - cp(bs, GammaRho(-gamma, rho))) < 1e-8
    assert abs(sel(bs, GammaRho(gamma, rho)) - sel(bs, GammaRho(-gamma, rho))) < 1e-8


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), gamma=st.floats(-9, 9), rho=st.floats(-0.95, 0.95))
def test_cp_even_in_rho_with_negated_b(seed, gamma, rho):
    bs = random_bs(seed, rho)
    assert abs(cp(bs, GammaRho(gamma, rho)) - cp(bs.negated(), GammaRho(gamma, -rho))) < 1e-8


@pytest.mark.parametrize("which,gamma,rho", [("tilde", 3.0, -0.4), ("random", 3.0, -0.4), ("tilde", 0.0, -0.4),
                                             ("random", 1.5, 0.6)])
def test_cp_matches_monte_carlo(which, gamma, rho, bs_tilde):
    bs = bs_tilde if which == "tilde" else random_bs(11, rho)
    p, se = mc_cp(bs, gamma, rho)
    assert abs(cp(bs, GammaRho(gamma, rho)) - p) < 3 * se


def test_sel_matches_monte_carlo(bs_tilde):
    q, se = mc_sel(bs_tilde, 0.0)
    assert abs(sel(bs_tilde, GammaRho(0.0, -0.4)) - q) < 3 * se


def test_optimized_strong_correlation(cfg):
    bs = optimize_bs(cfg, 0.9)
    assert cp_curve(bs, cfg.gamma_grid).min() >= 0.95 - 1e-6
    assert sel(bs, GammaRho(0.0, 0.9)) < 1.0


@pytest.mark.parametrize("rho", [0.0, 1e-3])
def test_no_gain_without_correlation(cfg, rho):
    bs = optimize_bs(cfg, rho)
    assert sel(bs, GammaRho(0.0, rho)) >= 1 - 1e-4
    if rho == 0.0:
        assert np.all(bs.b_values == 0) and np.allclose(bs.s_values, Z)


def test_optimize_symmetric_in_rho(cfg, bs_tilde):
    pos = optimize_bs(cfg, 0.399855)
    assert np.max(np.abs(pos.s_values - bs_tilde.s_values)) < 1e-6
    assert np.max(np.abs(pos.b_values + bs_tilde.b_values)) < 1e-6


def test_optimize_deterministic(cfg):
    a, b = optimize_bs(cfg, 0.55), optimize_bs(cfg, 0.55)
    assert np.array_equal(a.b_values, b.b_values) and np.array_equal(a.s_values, b.s_values)


@pytest.mark.parametrize("rho", [0.3, -0.6])
def test_tradeoff_and_feasibility(cfg, rho):
    bs = optimize_bs(cfg, rho)
    fine = np.linspace(0, 10, 801)
    assert cp_curve(bs, cfg.gamma_grid, rho).min() >= 0.95 - 1e-6
    assert cp_curve(bs, fine, rho).min() >= 0.95 - 5e-4
    s = sel_curve(bs, np.linspace(0, 10, 201))
    assert s[0] < 1.0 <= s.max() <= cfg.sel_max + 1e-6
    assert abs(sel_curve(bs, [12.0])[0] - 1.0) < 1e-6


def test_bs_shape_invariants(bs_tilde):
    x = np.linspace(0, 10, 201)
    assert np.max(np.abs(bs_tilde.b(-x) + bs_tilde.b(x))) < 1e-12
    assert np.max(np.abs(bs_tilde.s(-x) - bs_tilde.s(x))) < 1e-12
    far = np.array([6.0, 6.5, 20.0, -7.0])
    assert np.all(bs_tilde.b(far) == 0.0) and np.all(bs_tilde.s(far) == Z)
    assert np.all(bs_tilde.s(np.linspace(-8, 8, 161)) > 0)


def test_bs_pins_validated():
    k = np.arange(7.0)
    with pytest.raises(ValueError):
        BSFunctions(0.1, 0.05, k, np.r_[0.1, np.zeros(6)], np.full(7, Z))
    with pytest.raises(ValueError):
        BSFunctions(0.1, 0.05, k, np.zeros(7), np.full(7, 2.0))
    with pytest.raises(ValueError):
        BSFunctions(0.1, 0.05, k, np.zeros(7), np.r_[-1.0, np.full(6, Z)])


@given(st.integers(0, 10_000))
def test_text_round_trip(seed):
    bs = random_bs(seed)
    back = BSFunctions.from_text(bs.to_text())
    x = np.linspace(-7, 7, 57)
    assert back.rho == bs.rho and back.alpha == bs.alpha
    assert np.max(np.abs(back.b(x) - bs.b(x))) < 1e-10
    assert np.max(np.abs(back.s(x) - bs.s(x))) < 1e-10


def test_from_text_rejects_garbage():
    with pytest.raises(ValueError):
        BSFunctions.from_text("hello\n1 2 3\n")


def test_gamma_rho_bounds():
    GammaRho(1.0, 0.99)
    with pytest.raises(ValueError):
        GammaRho(1.0, 1.0)


@pytest.mark.parametrize("kwargs", [dict(alpha=0.0), dict(sel_max=1.0), dict(n_knots=2), dict(gamma_max=5.0)])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        CiuupiConfig(**kwargs)


def test_ci_bs_examples(bs_tilde):
    usual = BSFunctions.usual(0.05)
    lo, hi = ci_bs(usual, 0.0, 0.3, 0.0, 1.0, 1.0)
    assert abs(lo + 1.959963985) < 1e-8 and abs(hi - 1.959963985) < 1e-8
    far = ci_bs(bs_tilde, 2.0, 7 * 0.5, 0.0, 0.25, 0.25)
    assert far == pytest.approx(usual_ci(2.0, 0.25, 0.05), abs=1e-12)
    a = ci_bs(bs_tilde, 1.0, 0.8, 0.0, 0.04, 0.64)
    b = ci_bs(bs_tilde, 1.0, -0.8, 0.0, 0.04, 0.64)
    assert abs((a[0] + a[1]) / 2 - 1.0 + ((b[0] + b[1]) / 2 - 1.0)) < 1e-12
    assert abs((a[1] - a[0]) - (b[1] - b[0])) < 1e-12
    assert (a[0] + a[1]) / 2 != 1.0
    with pytest.raises(ValueError):
        ci_bs(bs_tilde, 0.0, 0.0, 0.0, 0.0, 1.0)


@given(st.floats(-100, 100), st.floats(0.01, 100))
def test_usual_ci_width_invariant(theta, var):
    lo, hi = usual_ci(theta, var, 0.05)
    assert abs((hi - lo) - 2 * Z * np.sqrt(var)) < 1e-9 * (1 + np.sqrt(var))


def test_usual_ci_examples():
    assert usual_ci(0.0, 1.0, 0.05) == pytest.approx((-1.96, 1.96), abs=1e-2)
    assert usual_ci(5.0, 4.0, 0.05) == pytest.approx((5 - 3.9199, 5 + 3.9199), abs=1e-3)


def test_bs_table_interpolation(cfg):
    table = BSTable(cfg, step=0.1)
    table.prepare(-0.25, 0.25)
    x = np.linspace(-7, 7, 29)
    node = table.node(2)
    b, s = table.evaluate(np.full(x.shape, 0.2), x)
    assert np.allclose(b, node.b(x), atol=1e-12) and np.allclose(s, node.s(x), atol=1e-12)
    mid = table.at(0.15)
    b, s = table.evaluate(0.15, x)
    assert np.allclose(b, mid.b(x), atol=1e-10) and np.allclose(s, mid.s(x), atol=1e-10)
    neg = table.node(-2)
    assert np.array_equal(neg.b_values, -node.b_values)
