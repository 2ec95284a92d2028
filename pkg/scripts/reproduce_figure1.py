"""Simulated coverage of I_L(0.05) and ACI_L along the local family of
parameter values, for the Morphine/Amidone data.

    python scripts/reproduce_figure1.py --M 40000 --workers 4
"""

from pathlib import Path

from _common import parser, settings_from
from priorci.pipeline import run_simulation


def main():
    args = parser(__doc__.splitlines()[0], "figure1.ini", "figure1_out").parse_args()
    st = settings_from(args, sim_stages=("coverage",))
    res = run_simulation(st, args.out, config_path=args.config)
    cov = res["coverage"]
    print(f"{'gamma*':>7} {'tau*':>7} {'I_L':>8} {'ACI_L':>8}  (SE)")
    frame = res["summary"].frame
    for g, row in cov.items():
        il, al = row[f"I_L@{st.ciuupi.alpha:g}"], row["ACI_L"]
        print(f"{g:7.2f} {float(frame.tau_star(g)):7.3f} {il.estimate:8.4f} {al.estimate:8.4f}  "
              f"({il.se:.4f}, {al.se:.4f})")
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        gs = list(cov)
        fig, ax = plt.subplots(figsize=(6, 4))
        for kind, key, mk in (("I_L", f"I_L@{st.ciuupi.alpha:g}", "o"), ("ACI_L", "ACI_L", "s")):
            est = [cov[g][key] for g in gs]
            ax.errorbar(gs, [e.estimate for e in est], yerr=[1.96 * e.se for e in est], marker=mk, ls="-",
                        capsize=2, label=kind)
        ax.axhline(1 - st.ciuupi.alpha, color="k", lw=0.8)
        ax.set_xlabel("gamma*")
        ax.set_ylabel("coverage probability")
        ax.legend()
        fig.tight_layout()
        fig.savefig(Path(args.out) / "coverage.png", dpi=150)


if __name__ == "__main__":
    main()
