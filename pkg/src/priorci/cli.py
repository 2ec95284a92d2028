"""Command line interface: ``priorci {fit,bs,ci,simulate,reproduce}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .bioassay import DatasetError, morphine_amidone, load_dataset
from .ciuupi import BSFunctions, optimize_bs
from .config import load_settings
from .intervals import format_intervals

log = logging.getLogger("priorci")


class StageError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")


def _data(args):
    if args.data is None:
        return morphine_amidone()
    try:
        return load_dataset(args.data)
    except (OSError, DatasetError) as exc:
        raise StageError("data", f"{args.data}: {exc}") from None


def _settings(args):
    over = {}
    if getattr(args, "z", None) is not None:
        over["frame_z"] = args.z
    if getattr(args, "alpha", None) is not None:
        over["ciuupi_alpha"] = args.alpha
    if getattr(args, "seed", None) is not None:
        over["sim_base_seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        over["sim_workers"] = args.workers
    return load_settings(args.config, **over)


def cmd_fit(args) -> int:
    from .pipeline import fit_summary

    st = _settings(args)
    s = fit_summary(_data(args), z=st.frame.z, t=st.frame.t, u=st.frame.u, gamma_step=st.frame.gamma_step)
    text = s.text()
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "fit.txt").write_text(text)
    return 0


def cmd_bs(args) -> int:
    st = _settings(args)
    rho = args.rho
    if rho is None:
        from .pipeline import fit_summary

        rho = fit_summary(_data(args), z=st.frame.z, t=st.frame.t).frame.rho_tilde
    bs = optimize_bs(st.ciuupi.config(), rho)
    text = bs.to_text()
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "bs.txt").write_text(text)
    return 0


def cmd_ci(args) -> int:
    from .pipeline import fit_summary, interval_report

    st = _settings(args)
    s = fit_summary(_data(args), z=st.frame.z, t=st.frame.t, u=st.frame.u)
    bs = BSFunctions.from_text(Path(args.bs).read_text()) if args.bs else None
    results, bs, ev = interval_report(s, bs, alpha=st.ciuupi.alpha, cfg=st.ciuupi.config())
    text = (f"theta_hat {float(s.fit.theta_hat):.6f}\nrho_hat {float(s.fit.rho_hat):.6f}\nr2 {ev.r2():.6f}\n"
            + format_intervals(results))
    for r in results:
        if not r.monotone:
            text += f"# {r.kind}: r1 not monotone on the search bracket; endpoints from the level-set hull\n"
    print(text, end="")
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "intervals.txt").write_text(text)
    return 0


def cmd_simulate(args) -> int:
    from .pipeline import run_simulation

    st = _settings(args)
    out = args.out or "sim_out"
    run_simulation(st, out, _data(args), config_path=str(args.config or "-"))
    print(f"wrote {out}")
    return 0


def cmd_reproduce(args) -> int:
    from .pipeline import PRINTED_TABLE2, fit_summary, golden_checks, run_simulation

    st = _settings(args)
    out = Path(args.out or "reproduce_out")
    data = _data(args)
    s = fit_summary(data, z=st.frame.z, t=st.frame.t, u=st.frame.u, gamma_step=st.frame.gamma_step)
    checks = golden_checks(s)
    res = run_simulation(st, out, data, config_path=str(args.config or "-"))
    lines = [c.line() for c in checks]
    if "census" in res:
        import math

        M = st.sim.census_M
        printed_at = {round(-5 + 0.5 * i, 6): v for i, v in enumerate(PRINTED_TABLE2)}
        for g, tau, pct, _ in res["census"]:
            printed = printed_at.get(round(g, 6))
            if printed is None:
                continue
            p, q = pct / 100, printed / 100
            se = 100 * math.sqrt(p * (1 - p) / M + q * (1 - q) / 5000)
            ok = abs(pct - printed) <= max(3 * se, 1e-12)
            lines.append(f"{'PASS' if ok else 'FAIL'} census[{g:+g}] value={pct:.2f} expected={printed:.2f} "
                         f"tol={3 * se:.3f}")
    report = "\n".join(lines) + "\n"
    (out / "reproduce_report.txt").write_text(report)
    print(report, end="")
    return 0 if all(line.startswith("PASS") for line in lines if "census" not in line) else 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--data", help="dataset with header 'x n r n_prime r_prime' (default: embedded data)")
    common.add_argument("--z", type=float, help="ED percentage (default 60)")
    common.add_argument("--alpha", type=float, help="1 - nominal coverage (default 0.05)")
    common.add_argument("--config", help="configuration file with [frame], [ciuupi], [sim] sections")
    common.add_argument("--seed", type=int, help="base seed for the simulation streams")
    common.add_argument("--out", help="output directory")
    common.add_argument("--workers", type=int, help="worker processes for simulation")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="priorci", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("fit", parents=[common], help="fit the two logit lines and report the local frame")
    b = sub.add_parser("bs", parents=[common], help="optimise b and s for a correlation")
    b.add_argument("--rho", type=float, help="correlation (default: rho at beta_tilde for the data)")
    c = sub.add_parser("ci", parents=[common], help="report I_W, ACI_W, I_L and ACI_L")
    c.add_argument("--bs", help="b/s file written by 'priorci bs'")
    sub.add_parser("simulate", parents=[common], help="run the configured simulation stages")
    sub.add_parser("reproduce", parents=[common], help="fit, golden checks and a scaled-down simulation")
    return p


COMMANDS = {"fit": cmd_fit, "bs": cmd_bs, "ci": cmd_ci, "simulate": cmd_simulate, "reproduce": cmd_reproduce}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # report the failing stage rather than a traceback
        print(f"error: [{args.command}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
