"""Monte Carlo estimation of local coverage and scaled expected length.

Each simulated data set k under label L draws its uniforms from
``RngStream(base_seed, (crc32(L) << 32) | k)``, so results do not depend on
how runs are split across worker processes.  Runs are grouped into blocks of
fixed size; a block is fitted in one batched pass and blocks are reduced in
index order.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .ciuupi import BSFunctions, BSTable
from .intervals import LENGTH_CAP, SrlrEvaluator
from .localframe import LocalFrame
from .numkernels import RngStream, norm_quantile
from .regmodel import COND_LIMIT, EDDifference, FitResult, _inv_spd, fit_mle

__all__ = [
    "SimConfig",
    "Estimate",
    "SimReport",
    "RunData",
    "simulate_runs",
    "simulate_coverage",
    "coverage_sweep",
    "simulate_sel",
    "sel_sweep",
    "min_coverage_three_step",
    "compute_c_tilde",
    "CTilde",
    "table2_census",
    "stream_index",
]

log = logging.getLogger(__name__)

FAILED = 1
CAPPED = 2


@dataclass(frozen=True, eq=False)
class SimConfig:
    """Simulation settings.

    ``bs`` is either a BSTable (b and s at each run's own rho estimate) or a
    fixed BSFunctions.
    """

    frame: LocalFrame
    bs: BSTable | BSFunctions | None = None
    M: int = 40000
    M_prime: int = 10000
    delta_c: float = 0.01
    alpha: float = 0.05
    base_seed: int = 20240601
    length_cap: float = LENGTH_CAP
    workers: int = 1
    block: int = 2000

    def __post_init__(self):
        if self.M < 1 or self.M_prime < 1:
            raise ValueError("run counts must be positive")
        if self.M < 1000 or self.M_prime < 1000:
            warnings.warn("fewer than 1000 runs per grid point; estimates are rough", stacklevel=3)
        if not 0 < self.delta_c < self.alpha:
            raise ValueError("delta_c must lie in (0, alpha)")
        if self.block < 1:
            raise ValueError("block size must be positive")


def stream_index(label: str, k: int) -> int:
    return (zlib.crc32(label.encode()) << 32) | int(k)


def _uniforms(base_seed: int, label: str, start: int, count: int, n: int) -> np.ndarray:
    out = np.empty((count, n))
    for j in range(count):
        out[j] = RngStream(base_seed, stream_index(label, start + j)).uniform(n)
    return out


@dataclass
class RunData:
    """Per-run outputs for one grid point, in run-index order."""

    status: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    b: np.ndarray
    s: np.ndarray
    lengths: dict = field(default_factory=dict)  # name -> (length, capped)

    @staticmethod
    def concat(parts):
        keys = parts[0].lengths.keys()
        return RunData(
            np.concatenate([p.status for p in parts]),
            np.concatenate([p.r1 for p in parts]),
            np.concatenate([p.r2 for p in parts]),
            np.concatenate([p.b for p in parts]),
            np.concatenate([p.s for p in parts]),
            {k: (np.concatenate([p.lengths[k][0] for p in parts]),
                 np.concatenate([p.lengths[k][1] for p in parts])) for k in keys},
        )


def _safe_rho(spec, beta):
    """rho at each row; rows with near-singular information come back NaN."""
    info = spec.expected_information(beta)
    cond = np.linalg.cond(info)
    good = np.isfinite(cond) & (cond <= COND_LIMIT)
    rho = np.full(beta.shape[0], np.nan)
    if np.any(good):
        Iinv = _inv_spd(info[good])
        dg, dh = spec.g.grad(beta[good]), spec.h.grad(beta[good])
        vg = np.einsum("bi,bij,bj->b", dg, Iinv, dg)
        vh = np.einsum("bi,bij,bj->b", dh, Iinv, dh)
        c = np.einsum("bi,bij,bj->b", dg, Iinv, dh)
        rho[good] = c / np.sqrt(vg * vh)
    return rho


def _bs_values(bs, rho, x):
    if isinstance(bs, BSFunctions):
        return np.asarray(bs.b(x), dtype=float), np.asarray(bs.s(x), dtype=float)
    return bs.evaluate(rho, x)


def _evaluate_block(cfg: SimConfig, gamma: float, U: np.ndarray, lengths: tuple) -> RunData:
    """Fit one block of simulated data sets at beta*(gamma).

    ``lengths`` lists the intervals whose lengths are needed, as
    ("I_L", c) or ("ACI_L", None).
    """
    frame = cfg.frame
    spec = frame.spec
    beta_star = frame.beta_star(gamma)
    theta_star = float(spec.g.value(beta_star))
    m = U.shape[0]
    Y = spec.simulate(np.broadcast_to(beta_star, (m, beta_star.size)), U)
    fit = fit_mle(spec.with_responses(Y), start=beta_star)
    beta = np.asarray(fit.beta).reshape(m, -1)
    ok = np.asarray(fit.converged).reshape(m).copy()
    ok &= np.all(np.isfinite(beta), axis=1)
    if isinstance(spec.g, EDDifference):
        ok &= (np.abs(beta[:, 1]) >= 1e-10) & (np.abs(beta[:, 3]) >= 1e-10)
    rho = np.full(m, np.nan)
    if np.any(ok):
        rho[ok] = _safe_rho(spec, beta[ok])
    ok &= np.isfinite(rho)

    status = np.where(ok, 0, FAILED).astype(np.int8)
    r1 = np.full(m, np.nan)
    r2 = np.full(m, np.nan)
    b = np.full(m, np.nan)
    s = np.full(m, np.nan)
    out_len = {}
    for name, _c in lengths:
        out_len[_length_key(name, _c)] = (np.full(m, np.nan), np.zeros(m, dtype=bool))
    idx = np.flatnonzero(ok)
    if idx.size:
        sub = spec.with_responses(Y[idx])
        sub_fit = FitResult(sub, beta[idx], np.asarray(fit.loglik).reshape(m)[idx], np.ones(idx.size, bool), 0)
        ev = SrlrEvaluator(sub, sub_fit, cap=cfg.length_cap)
        v1, _, conv1 = ev.profile_rows(np.arange(idx.size), np.full(idx.size, theta_star), ev.beta_hat)
        v2 = ev.r2()
        conv2 = ev._r2_conv
        good = conv1 & conv2
        bb, ss = _bs_values(cfg.bs, rho[idx], v2) if cfg.bs is not None else (np.zeros(idx.size), np.zeros(idx.size))
        r1[idx], r2[idx], b[idx], s[idx] = v1, v2, bb, ss
        status[idx[~good]] = FAILED
        for name, c in lengths:
            if name == "I_L":
                z = norm_quantile(1.0 - c / 2.0)
                lo_level, hi_level = np.full(idx.size, -z), np.full(idx.size, z)
            else:
                lo_level, hi_level = bb - ss, bb + ss
            lower, upper, capped, failed = ev.band_interval(lo_level, hi_level)
            key = _length_key(name, c)
            out_len[key][0][idx] = upper.root - lower.root
            out_len[key][1][idx] = capped
            status[idx[failed]] = FAILED
    return RunData(status, r1, r2, b, s, out_len)


def _length_key(name, c):
    return name if c is None else f"{name}@{c:.10g}"


# -- task execution -----------------------------------------------------------

_WORKER_CFG = None


def _init_worker(cfg):
    global _WORKER_CFG
    _WORKER_CFG = cfg


def _task(args):
    label, gamma, start, count, lengths = args
    cfg = _WORKER_CFG
    n = cfg.frame.spec.n
    U = _uniforms(cfg.base_seed, label, start, count, n)
    return _evaluate_block(cfg, gamma, U, lengths)


def _prepare(cfg: SimConfig):
    """Compute b/s table nodes around rho_tilde in the parent so that workers
    inherit them rather than recomputing."""
    if isinstance(cfg.bs, BSTable):
        r = cfg.frame.rho_tilde
        cfg.bs.prepare(max(r - 0.3, -0.98), min(r + 0.3, 0.98))


def simulate_runs(cfg: SimConfig, jobs) -> list[RunData]:
    """Run ``jobs`` = [(label, gamma, M, lengths), ...] and return one RunData per job."""
    _prepare(cfg)
    tasks, owner = [], []
    for j, (label, gamma, M, lengths) in enumerate(jobs):
        for start in range(0, M, cfg.block):
            tasks.append((label, float(gamma), start, min(cfg.block, M - start), tuple(lengths)))
            owner.append(j)
    if cfg.workers <= 1:
        _init_worker(cfg)
        results = [_task(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=cfg.workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            results = list(pool.map(_task, tasks))
    grouped = [[] for _ in jobs]
    for j, r in zip(owner, results):
        grouped[j].append(r)
    return [RunData.concat(g) for g in grouped]


# -- estimators ---------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    estimate: float
    se: float
    n_used: int
    n_excluded: int
    n_capped: int = 0

    @property
    def ci(self) -> tuple[float, float]:
        return self.estimate - 1.96 * self.se, self.estimate + 1.96 * self.se


def _proportion(hits: np.ndarray, used: np.ndarray, n_capped: int = 0) -> Estimate:
    n = int(used.sum())
    p = float(hits[used].mean()) if n else float("nan")
    se = math.sqrt(p * (1 - p) / n) if n else float("nan")
    return Estimate(p, se, n, int(used.size - n), n_capped)


def coverage_indicators(data: RunData, kind: str, c: float | None = None) -> np.ndarray:
    if kind == "I_L":
        z = norm_quantile(1.0 - c / 2.0)
        return np.abs(data.r1) <= z
    if kind == "ACI_L":
        return (data.b - data.s <= data.r1) & (data.r1 <= data.b + data.s)
    raise ValueError(f"unknown interval kind {kind!r}")


def _coverage(data: RunData, kind: str, c=None) -> Estimate:
    return _proportion(coverage_indicators(data, kind, c), data.status == 0)


def coverage_sweep(cfg: SimConfig, gammas, cs=(0.05,), M: int | None = None, label: str = "cov"):
    """Coverage of I_L(c) for each c and of ACI_L at every gamma, all from
    the same simulated data.  Returns {gamma: {kind: Estimate}}."""
    M = cfg.M if M is None else M
    jobs = [(f"{label}:{g:+.6f}", g, M, ()) for g in gammas]
    out = {}
    for g, data in zip(gammas, simulate_runs(cfg, jobs)):
        row = {f"I_L@{c:g}": _coverage(data, "I_L", c) for c in cs}
        if cfg.bs is not None:
            row["ACI_L"] = _coverage(data, "ACI_L")
        out[float(g)] = row
    return out


def simulate_coverage(cfg: SimConfig, kind: str, c_or_bs, gamma: float, M: int | None = None) -> Estimate:
    """Coverage probability at beta*(gamma) from endpoint-free indicators."""
    if kind == "ACI_L":
        from dataclasses import replace

        cfg = replace(cfg, bs=c_or_bs)
        data = simulate_runs(cfg, [(f"cov:{gamma:+.6f}", gamma, cfg.M if M is None else M, ())])[0]
        return _coverage(data, "ACI_L")
    data = simulate_runs(cfg, [(f"cov:{gamma:+.6f}", gamma, cfg.M if M is None else M, ())])[0]
    return _coverage(data, "I_L", c_or_bs)


def _sel_from(data: RunData, c_tilde: float) -> Estimate:
    la, ca = data.lengths["ACI_L"]
    li, ci = data.lengths[_length_key("I_L", c_tilde)]
    capped = ca | ci
    used = (data.status == 0) & ~capped
    q = np.where(used, la / np.where(used, li, 1.0), np.nan)
    n = int(used.sum())
    mean = float(q[used].mean()) if n else float("nan")
    se = float(q[used].std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")
    return Estimate(mean, se, n, int(used.size - n), int((capped & (data.status == 0)).sum()))


def sel_sweep(cfg: SimConfig, gammas, c_tilde: float, M: int | None = None, label: str = "sel"):
    """Mean of length(ACI_L) / length(I_L(c_tilde)) at every gamma."""
    M = cfg.M if M is None else M
    lengths = (("ACI_L", None), ("I_L", c_tilde))
    jobs = [(f"{label}:{g:+.6f}", g, M, lengths) for g in gammas]
    return {float(g): _sel_from(d, c_tilde) for g, d in zip(gammas, simulate_runs(cfg, jobs))}


def simulate_sel(cfg: SimConfig, bs, c_tilde: float, gamma: float, M: int | None = None) -> Estimate:
    from dataclasses import replace

    cfg = replace(cfg, bs=bs)
    return sel_sweep(cfg, [gamma], c_tilde, M)[float(gamma)]


# -- minimum coverage and c_tilde ---------------------------------------------


@dataclass(frozen=True)
class MinCoverage:
    gamma: float
    estimate: Estimate
    step1: dict
    step2: dict


class _StageCache:
    """Simulated data shared by all procedures; keyed by (stage, gamma)."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.data = {}

    def get(self, stage: int, gammas, M: int):
        need = [g for g in gammas if (stage, g) not in self.data]
        if need:
            jobs = [(f"min{stage}:{g:+.6f}", g, M, ()) for g in need]
            for g, d in zip(need, simulate_runs(self.cfg, jobs)):
                self.data[(stage, g)] = d
        return {g: self.data[(stage, g)] for g in gammas}


def _three_step(cache: _StageCache, kind: str, c=None) -> MinCoverage:
    cfg = cache.cfg
    u = cfg.frame.u
    grid = [float(np.round(v, 12)) for v in np.linspace(-u, u, 11)]
    M1 = cfg.M_prime
    s1 = {g: _coverage(d, kind, c) for g, d in cache.get(1, grid, M1).items()}
    # ties are broken towards the smaller gamma for reproducibility
    pick = sorted(grid, key=lambda g: (s1[g].estimate, g))[:3]
    s2 = {g: _coverage(d, kind, c) for g, d in cache.get(2, pick, 10 * M1).items()}
    best = min(pick, key=lambda g: (s2[g].estimate, g))
    s3 = _coverage(cache.get(3, [best], 100 * M1)[best], kind, c)
    return MinCoverage(best, s3, s1, s2)


def min_coverage_three_step(cfg: SimConfig, kind: str, c_or_bs=None) -> MinCoverage:
    """Local minimum coverage over gamma in [-u, u] by the three-step scheme:
    M' runs on an 11-point grid, 10 M' on the three lowest, 100 M' on the
    lowest of those."""
    from dataclasses import replace

    if kind == "ACI_L":
        cfg = replace(cfg, bs=c_or_bs if c_or_bs is not None else cfg.bs)
        return _three_step(_StageCache(cfg), "ACI_L")
    return _three_step(_StageCache(cfg), "I_L", c_or_bs)


@dataclass(frozen=True)
class CTilde:
    value: float
    slope: float
    intercept: float
    cs: tuple
    min_coverages: tuple
    target: float
    clamped: bool
    details: dict


def c_tilde_from_line(cs, mins, target, alpha):
    """Solve the least-squares line through (c, min coverage) for ``target``,
    clamped to (alpha/4, 4 alpha)."""
    slope, intercept = np.polyfit(np.asarray(cs, float), np.asarray(mins, float), 1)
    c = (target - intercept) / slope
    lo, hi = alpha / 4.0, 4.0 * alpha
    clamped = not lo < c < hi
    if clamped:
        log.warning("c_tilde %.6g clamped into (%g, %g)", c, lo, hi)
        c = min(max(c, lo), hi)
    return float(c), float(slope), float(intercept), clamped


def compute_c_tilde(cfg: SimConfig, bs=None) -> CTilde:
    """Level c at which I_L(c) has the same local minimum coverage as ACI_L.

    All four three-step procedures draw on one pool of simulated data sets,
    so the coverage differences between levels are not blurred by sampling
    noise between pools.
    """
    from dataclasses import replace

    if bs is not None:
        cfg = replace(cfg, bs=bs)
    cache = _StageCache(cfg)
    a, d = cfg.alpha, cfg.delta_c
    cs = (a - d, a, a + d)
    mins = [_three_step(cache, "I_L", c) for c in cs]
    aci = _three_step(cache, "ACI_L")
    value, slope, intercept, clamped = c_tilde_from_line(cs, [m.estimate.estimate for m in mins],
                                                         aci.estimate.estimate, a)
    return CTilde(value, slope, intercept, cs, tuple(m.estimate.estimate for m in mins),
                  aci.estimate.estimate, clamped, {"I_L": mins, "ACI_L": aci})


# -- Table 2 census -----------------------------------------------------------


def table2_census(cfg: SimConfig, gammas, M: int = 5000, c: float = 0.05, label: str = "census"):
    """Per gamma: (gamma, tau*, percent of runs with a capped I_L(c) or a
    failed fit, binomial SE of that percentage)."""
    from dataclasses import replace

    cfg = replace(cfg, bs=None)
    jobs = [(f"{label}:{g:+.6f}", g, M, (("I_L", c),)) for g in gammas]
    rows = []
    for g, d in zip(gammas, simulate_runs(cfg, jobs)):
        capped = d.lengths[_length_key("I_L", c)][1]
        bad = (d.status != 0) | capped
        p = float(bad.mean())
        rows.append((float(g), float(cfg.frame.tau_star(g)), 100.0 * p, 100.0 * math.sqrt(p * (1 - p) / M)))
    return rows


# -- reporting ----------------------------------------------------------------

CSV_FIELDS = ["gamma_star", "tau_star", "kind", "estimate", "se", "ci_lo", "ci_hi", "n_excluded", "n_capped", "seed"]


@dataclass
class SimReport:
    records: list = field(default_factory=list)
    seed: int = 0
    c_tilde: float | None = None

    def add(self, gamma: float, tau: float, kind: str, est: Estimate):
        lo, hi = est.ci
        self.records.append({
            "gamma_star": gamma, "tau_star": tau, "kind": kind, "estimate": est.estimate, "se": est.se,
            "ci_lo": lo, "ci_hi": hi, "n_excluded": est.n_excluded, "n_capped": est.n_capped, "seed": self.seed,
        })

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in self.records:
            row = dict(r)
            for k in ("gamma_star", "tau_star", "estimate", "se", "ci_lo", "ci_hi"):
                row[k] = f"{r[k]:.10g}"
            w.writerow(row)
        return buf.getvalue()
