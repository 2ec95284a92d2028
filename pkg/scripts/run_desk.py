"""Desk-scale run of every simulation stage: coverage, c_tilde, length
ratio and the capped-interval census, with a one-line summary of each.

    python scripts/run_desk.py --workers 4
"""

from _common import parser, settings_from
from priorci.ciuupi import GammaRho, sel
from priorci.pipeline import run_simulation


def main():
    args = parser(__doc__.splitlines()[0], "desk.ini", "desk_out").parse_args()
    st = settings_from(args)
    res = run_simulation(st, args.out, config_path=args.config)
    rho = res["summary"].frame.rho_tilde
    if "coverage" in res:
        worst = min((e.estimate, g, k) for g, row in res["coverage"].items() for k, e in row.items())
        print(f"lowest coverage {worst[0]:.4f} ({worst[2]} at gamma* {worst[1]:+g})")
    if "c_tilde" in res:
        ct = res["c_tilde"]
        print(f"c_tilde {ct.value:.4f} (ACI_L minimum coverage {ct.target:.4f})")
    if "sel" in res:
        print(f"{'gamma*':>7} {'q_L':>7} {'SE':>7} {'SEL':>7}")
        for g, e in res["sel"].items():
            print(f"{g:7.2f} {e.estimate:7.4f} {e.se:7.4f} {float(sel(res['bs_tilde'], GammaRho(g, rho))):7.4f}")
    if "census" in res:
        print("capped %: " + " ".join(f"{pct:.2f}" for _, _, pct, _ in res["census"]))


if __name__ == "__main__":
    main()
