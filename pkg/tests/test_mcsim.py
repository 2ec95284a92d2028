import math
import warnings
from dataclasses import replace

import numpy as np
import pytest

from priorci.ciuupi import BSFunctions, GammaRho, cp, optimize_bs
from priorci.localframe import build_frame
from priorci.mcsim import (Estimate, SimConfig, SimReport, c_tilde_from_line, coverage_sweep,
                           min_coverage_three_step, sel_sweep, simulate_coverage, simulate_runs, stream_index,
                           table2_census)
from priorci.regmodel import fit_mle


@pytest.fixture(scope="module")
def lin_frame(linear_spec):
    return build_frame(linear_spec, fit_mle(linear_spec).beta)


@pytest.fixture(scope="module")
def lin_bs(cfg, lin_frame):
    return optimize_bs(cfg, lin_frame.rho_tilde)


@pytest.fixture(scope="module")
def lin_cfg(lin_frame, lin_bs):
    return SimConfig(lin_frame, bs=lin_bs, M=4000, M_prime=1000, block=1000)


def test_linear_profile_coverage_is_nominal(lin_cfg):
    for g in (0.0, 2.0):
        est = simulate_coverage(lin_cfg, "I_L", 0.05, g)
        assert est.n_excluded == 0 and est.n_used == 4000
        assert abs(est.estimate - 0.95) < 3 * est.se


@pytest.mark.parametrize("gamma", [0.0, 1.5, 3.0])
def test_linear_aci_l_coverage_matches_cp(lin_cfg, lin_bs, gamma):
    # with a linear model the statistics are exactly the Wald ratios
    est = simulate_coverage(lin_cfg, "ACI_L", lin_bs, gamma)
    exact = cp(lin_bs, GammaRho(gamma, lin_cfg.frame.rho_tilde))
    assert abs(est.estimate - exact) < 3 * est.se


def test_usual_functions_give_unit_length_ratio(lin_cfg):
    cfg = replace(lin_cfg, bs=BSFunctions.usual(0.05))
    est = sel_sweep(cfg, [0.0, 2.0], 0.05, M=500)
    for e in est.values():
        assert abs(e.estimate - 1.0) < 1e-10 and e.se < 1e-10


def test_linear_sel_tracks_expected_half_width(lin_cfg, lin_bs):
    # the length ratio is s(r2) / z, whose mean over r2 ~ N(gamma, 1) is SEL
    from priorci.ciuupi import sel

    for g, e in sel_sweep(lin_cfg, [0.0, 2.5], 0.05, M=2000).items():
        assert abs(e.estimate - sel(lin_bs, GammaRho(g, lin_cfg.frame.rho_tilde))) < 3 * e.se + 1e-6


def test_c_tilde_line_examples():
    c, slope, intercept, clamped = c_tilde_from_line([0.04, 0.05, 0.06], [0.96, 0.95, 0.94], 0.95, 0.05)
    assert abs(c - 0.05) < 1e-12 and abs(slope + 1) < 1e-10 and not clamped
    c, *_ = c_tilde_from_line([0.04, 0.05, 0.06], [0.96, 0.95, 0.94], 0.951, 0.05)
    assert abs(c - 0.049) < 1e-10
    c, *_, clamped = c_tilde_from_line([0.04, 0.05, 0.06], [0.96, 0.95, 0.94], 0.5, 0.05)
    assert clamped and c == 0.2
    c, *_, clamped = c_tilde_from_line([0.04, 0.05, 0.06], [0.96, 0.95, 0.94], 0.999, 0.05)
    assert clamped and c == 0.0125


def test_linear_three_step_minimum(lin_frame):
    cfg = SimConfig(lin_frame, M=1000, M_prime=1000, block=1000)
    res = min_coverage_three_step(cfg, "I_L", 0.05)
    assert len(res.step1) == 11 and len(res.step2) == 3 and res.gamma in res.step2
    assert res.estimate.n_used == 100_000
    assert abs(res.estimate.estimate - 0.95) < 3 * res.estimate.se
    low = sorted(res.step1, key=lambda g: (res.step1[g].estimate, g))[:3]
    assert set(res.step2) == set(low)


def test_exclusions_are_accounted(frame, bs_tilde):
    cfg = SimConfig(frame, bs=bs_tilde, M=400, M_prime=400, block=200)
    sweep = coverage_sweep(cfg, [-2.5, 2.5], M=400)
    for row in sweep.values():
        for e in row.values():
            assert e.n_used + e.n_excluded == 400
            assert 0.0 <= e.estimate <= 1.0


def test_workers_do_not_change_results(frame, bs_tilde):
    jobs = [("w:0", 0.0, 300, (("I_L", 0.05), ("ACI_L", None))), ("w:1", 1.5, 200, ())]
    one = SimConfig(frame, bs=bs_tilde, M=300, M_prime=300, block=100, workers=1)
    two = replace(one, workers=2)
    for a, b in zip(simulate_runs(one, jobs), simulate_runs(two, jobs)):
        assert np.array_equal(a.status, b.status)
        assert np.array_equal(a.r1, b.r1, equal_nan=True) and np.array_equal(a.r2, b.r2, equal_nan=True)
        for k in a.lengths:
            assert np.array_equal(a.lengths[k][0], b.lengths[k][0], equal_nan=True)


def test_block_size_does_not_change_results(frame):
    jobs = [("blk", 0.5, 240, ())]
    a = simulate_runs(SimConfig(frame, M=240, M_prime=240, block=240), jobs)[0]
    b = simulate_runs(SimConfig(frame, M=240, M_prime=240, block=70), jobs)[0]
    # batch shape only moves the last bits; block size is part of the digest
    assert np.array_equal(a.status, b.status)
    assert np.nanmax(np.abs(a.r1 - b.r1)) < 1e-12


def test_bioassay_length_ratio_near_one_at_prior(frame, bs_tilde):
    cfg = SimConfig(frame, bs=bs_tilde, M=500, M_prime=500, block=250)
    e = sel_sweep(cfg, [0.0], 0.05)[0.0]
    assert 0.5 < e.estimate < 1.5 and e.n_used > 0


def test_census_central_point(frame):
    cfg = SimConfig(frame, M=300, M_prime=300, block=300)
    rows = table2_census(cfg, [0.0], M=300)
    g, tau, pct, se = rows[0]
    assert g == 0.0 and tau == 0.0 and pct == 0.0 and se == 0.0


def test_report_csv():
    rep = SimReport(seed=7)
    rep.add(0.5, 0.415, "I_L@0.05", Estimate(0.95, 0.001, 999, 1, 0))
    lines = rep.to_csv().splitlines()
    assert lines[0] == "gamma_star,tau_star,kind,estimate,se,ci_lo,ci_hi,n_excluded,n_capped,seed"
    fields = lines[1].split(",")
    assert fields[2] == "I_L@0.05" and fields[-1] == "7" and fields[7] == "1"
    assert float(fields[5]) == pytest.approx(0.95 - 1.96 * 0.001, abs=1e-12)


def test_sim_config_validation(frame):
    with pytest.raises(ValueError):
        SimConfig(frame, M=0)
    with pytest.raises(ValueError):
        SimConfig(frame, delta_c=0.06)
    with pytest.raises(ValueError):
        SimConfig(frame, block=0)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        SimConfig(frame, M=10, M_prime=10)
    assert any("fewer than 1000" in str(w.message) for w in caught)


def test_stream_index_separates_labels():
    assert stream_index("a", 0) != stream_index("b", 0)
    assert stream_index("a", 1) - stream_index("a", 0) == 1
    assert math.isclose(Estimate(0.5, 0.1, 10, 0).ci[1], 0.696)
