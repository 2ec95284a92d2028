"""End-to-end steps shared by the command line, the scripts and the tests."""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .bioassay import BioassayDataset, bioassay_spec, morphine_amidone
from .ciuupi import BSFunctions, BSTable, optimize_bs
from .config import Settings
from .intervals import SrlrEvaluator, aci_l, aci_w, profile_ci, wald_ci
from .localframe import LocalFrame, approx_cp_sel, build_frame
from .mcsim import SimConfig, SimReport, compute_c_tilde, coverage_sweep, sel_sweep, table2_census
from .regmodel import FitResult, fit_mle

log = logging.getLogger(__name__)

__all__ = ["FitSummary", "fit_summary", "interval_report", "golden_checks", "run_simulation", "RunManifest",
           "PRINTED_TABLE2", "PRINTED_TAU"]

# printed percentages of capped profile intervals, gamma* = -5, -4.5, ..., 5
PRINTED_TABLE2 = (2.10, 1.08, 0.16, 0.02, 0.01, 0.00, 0.00, 0.00, 0.00, 0.00,
                  0.00, 0.00, 0.00, 0.00, 0.00, 0.00, 0.08, 0.53, 1.50, 3.92, 7.51)
PRINTED_TAU = (-4.15, -3.74, -3.32, -2.91, -2.49, -2.08, -1.66, -1.25, -0.83, -0.42,
               0.00, 0.42, 0.83, 1.25, 1.66, 2.08, 2.49, 2.91, 3.32, 3.74, 4.15)


@dataclass(frozen=True, eq=False)
class FitSummary:
    data: BioassayDataset
    z: float
    fit: FitResult
    frame: LocalFrame
    info_inv_tilde: np.ndarray

    def text(self) -> str:
        f, fr = self.fit, self.frame
        e1, e2 = f.spec.g.ed(f.beta)
        fmt = lambda v: " ".join(f"{x:.6f}" for x in np.ravel(v))
        lines = [
            f"z {self.z:g}",
            f"beta_hat {fmt(f.beta)}",
            f"converged {int(f.converged)} iterations {f.iterations}",
            f"slope_sum {f.beta[1] + f.beta[3]:.6f}",
            f"ED {e1:.6f}",
            f"ED_prime {e2:.6f}",
            f"theta_hat {float(f.theta_hat):.6f}",
            f"tau_hat {float(f.tau_hat):.6f}",
            f"rho_hat {float(f.rho_hat):.6f}",
        ]
        for i, row in enumerate(self.info_inv_tilde):
            lines.append(f"info_inv_tilde_row{i + 1} {fmt(row)}")
        return "\n".join(lines) + "\n" + fr.report()


def fit_summary(data: BioassayDataset | None = None, z: float = 60.0, t: float = 0.0, u: float = 2.5,
                gamma_step: float = 0.5) -> FitSummary:
    data = morphine_amidone() if data is None else data
    spec = bioassay_spec(data, z=z, t=t)
    fit = fit_mle(spec)
    if not fit.converged:
        raise RuntimeError("maximum likelihood fit did not converge")
    frame = build_frame(spec, fit.beta, u=u, step=gamma_step)
    slope_bound = (fit.beta[1] + fit.beta[3]) / math.sqrt(frame.avar_tau)
    if u >= slope_bound:
        log.warning("u = %g reaches the slope-sign boundary %.3f; some beta* have a non-positive slope",
                    u, slope_bound)
    info_inv = np.linalg.inv(spec.expected_information(frame.beta_tilde))
    return FitSummary(data, z, fit, frame, info_inv)


def interval_report(summary: FitSummary, bs: BSFunctions | None, alpha: float = 0.05, cfg=None):
    """I_W, ACI_W, I_L and ACI_L for the observed data; bs defaults to the
    optimised functions at rho(beta_hat)."""
    fit = summary.fit
    if bs is None:
        from .ciuupi import CiuupiConfig

        bs = optimize_bs(cfg or CiuupiConfig(alpha=alpha), float(fit.rho_hat))
    ev = SrlrEvaluator(fit.spec, fit)
    return [wald_ci(fit, alpha), aci_w(fit, bs), profile_ci(ev, alpha), aci_l(ev, bs)], bs, ev


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    expected: float
    tol: float

    @property
    def passed(self) -> bool:
        return abs(self.value - self.expected) <= self.tol

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} value={self.value:.6f} expected={self.expected:.6f} tol={self.tol:g}"


def golden_checks(summary: FitSummary) -> list[Check]:
    """Printed numbers for the Morphine/Amidone example."""
    f, fr = summary.fit, summary.frame
    out = [Check(f"beta_hat[{i + 1}]", float(f.beta[i]), e, 1e-3)
           for i, e in enumerate((-2.0652, 3.6418, -2.0968, 4.4581))]
    out.append(Check("slope_sum", float(f.beta[1] + f.beta[3]), 8.0999, 1e-3))
    Iinv = summary.info_inv_tilde
    for (i, j), e in {(0, 0): 0.086304, (0, 1): -0.142229, (1, 1): 0.280902,
                      (2, 2): 0.132504, (2, 3): -0.216338, (3, 3): 0.408074}.items():
        out.append(Check(f"info_inv[{i + 1},{j + 1}]", float(Iinv[i, j]), e, 1e-5))
    for i in range(2):
        for j in range(2, 4):
            out.append(Check(f"info_inv[{i + 1},{j + 1}]", float(Iinv[i, j]), 0.0, 0.0))
    out += [
        Check("avar_theta", fr.avar_theta, 0.002333, 1e-5),
        Check("avar_tau", fr.avar_tau, 0.688976, 1e-5),
        Check("acov", fr.acov, -0.01603, 1e-4),
        Check("rho_tilde", fr.rho_tilde, -0.399855, 1e-4),
    ]
    g = f.spec.g
    for gamma, (ed, edp, th) in {0.0: (0.6101, 0.6178, -0.0078), 2.5: (0.4856, 0.8306, -0.345),
                                 -2.5: (0.8202, 0.4918, 0.3283)}.items():
        e1, e2 = g.ed(fr.beta_star(gamma))
        out += [Check(f"ED[{gamma:+g}]", float(e1), ed, 1e-3), Check(f"ED_prime[{gamma:+g}]", float(e2), edp, 1e-3),
                Check(f"theta_star[{gamma:+g}]", float(e1 - e2), th, 1e-3)]
    bs2 = fr.beta_star(2.5)
    out += [Check("tau_star[+2.5]", float(fr.tau_star(2.5)), 2.075, 1e-3),
            Check("beta2_star[+2.5]", float(bs2[1]), 5.0874, 1e-3),
            Check("beta4_star[+2.5]", float(bs2[3]), 3.0124, 1e-3)]
    for gamma, tau in zip(np.arange(-5, 5.01, 0.5), PRINTED_TAU):
        out.append(Check(f"table2_tau[{gamma:+g}]", float(fr.tau_star(gamma)), tau, 5e-3))
    return out


@dataclass(frozen=True)
class RunManifest:
    config_path: str
    settings: Settings
    data_digest: str
    out_dir: str
    version: str = __version__

    def text(self) -> str:
        return (f"version {self.version}\nconfig {self.config_path}\ndata_digest {self.data_digest}\n"
                f"settings_digest {self.settings.digest()}\n" + self.settings.to_text(include_workers=False))

    @property
    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(self.text().encode()).hexdigest()[:16]


def _write(path: Path, body: str, digest: str):
    path.write_text(f"# manifest {digest}\n" + body)


def _rows_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def run_simulation(settings: Settings, out_dir: str | Path, data: BioassayDataset | None = None,
                   config_path: str = "-", workers: int | None = None) -> dict:
    """Run the configured stages and write CSV files plus a manifest into
    ``out_dir``.  Returns a dictionary of in-memory results."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fs, cs, ss = settings.frame, settings.ciuupi, settings.sim
    summary = fit_summary(data, z=fs.z, t=fs.t, u=fs.u, gamma_step=fs.gamma_step)
    manifest = RunManifest(config_path, settings, summary.data.digest(), str(out))
    digest = manifest.digest
    (out / "manifest.txt").write_text(manifest.text() + f"digest {digest}\n")
    t0 = time.time()

    ccfg = cs.config()
    table = BSTable(ccfg, step=cs.rho_step)
    frame = summary.frame
    bs_tilde = optimize_bs(ccfg, frame.rho_tilde)
    _write(out / "bs_rho_tilde.txt", bs_tilde.to_text(), digest)
    fine = np.round(np.arange(-10, 10.0001, 0.1), 10)
    approx = approx_cp_sel(frame, bs_tilde, fine)
    _write(out / "approx_cp_sel.csv", _rows_csv(["gamma_star", "cp", "sel"], approx), digest)

    sim = SimConfig(frame=frame, bs=table, M=ss.M, M_prime=ss.M_prime, delta_c=ss.delta_c, alpha=cs.alpha,
                    base_seed=ss.base_seed, workers=ss.workers if workers is None else workers, block=ss.block)
    results = {"summary": summary, "bs_tilde": bs_tilde, "approx": approx}
    gammas = [float(g) for g in frame.gammas]

    if "coverage" in ss.stages:
        rep = SimReport(seed=ss.base_seed)
        cov = coverage_sweep(sim, gammas, cs=(cs.alpha,))
        for g in gammas:
            rep.add(g, float(frame.tau_star(g)), "I_L", cov[g][f"I_L@{cs.alpha:g}"])
            rep.add(g, float(frame.tau_star(g)), "ACI_L", cov[g]["ACI_L"])
        _write(out / "coverage.csv", rep.to_csv(), digest)
        results["coverage"] = cov

    c_tilde = cs.alpha
    if "ctilde" in ss.stages:
        ct = compute_c_tilde(sim)
        c_tilde = ct.value
        rows = [(c, m) for c, m in zip(ct.cs, ct.min_coverages)]
        body = _rows_csv(["c", "min_coverage_I_L"], rows)
        body += f"# ACI_L minimum coverage {ct.target:.10g}\n# c_tilde {ct.value:.10g} clamped {int(ct.clamped)}\n"
        _write(out / "c_tilde.csv", body, digest)
        results["c_tilde"] = ct

    if "sel" in ss.stages:
        rep = SimReport(seed=ss.base_seed, c_tilde=c_tilde)
        sel = sel_sweep(sim, gammas, c_tilde)
        for g in gammas:
            rep.add(g, float(frame.tau_star(g)), "Q_L", sel[g])
        _write(out / "sel.csv", rep.to_csv(), digest)
        results["sel"] = sel

    if "census" in ss.stages:
        rows = table2_census(replace(sim, bs=None), list(ss.census_gammas), M=ss.census_M)
        _write(out / "census.csv", _rows_csv(["gamma_star", "tau_star", "percent_capped", "se"], rows), digest)
        results["census"] = rows

    log.info("simulation stages finished in %.1f s", time.time() - t0)
    return results
