"""Percentage of simulated data sets whose 95% profile likelihood interval
is capped (unbounded), at 21 values of gamma*, next to the printed row.

    python scripts/reproduce_table2.py --workers 4
"""

import math

from _common import parser, settings_from
from priorci.pipeline import PRINTED_TABLE2, run_simulation


def main():
    p = parser(__doc__.splitlines()[0], "table2.ini", "table2_out")
    args = p.parse_args()
    over = {"sim_stages": ("census",)}
    if args.M is not None:
        over["sim_census_M"] = args.M
        args.M = None
    st = settings_from(args, **over)
    rows = run_simulation(st, args.out, config_path=args.config)["census"]
    M = st.sim.census_M
    printed_at = {round(-5 + 0.5 * i, 6): v for i, v in enumerate(PRINTED_TABLE2)}
    print(f"{'gamma*':>7} {'tau*':>7} {'ours %':>8} {'SE':>6} {'printed':>8} {'z':>6}")
    for g, tau, pct, se in rows:
        printed = printed_at.get(round(g, 6), float("nan"))
        q = printed / 100
        pooled = 100 * math.sqrt((pct / 100) * (1 - pct / 100) / M + q * (1 - q) / 5000)
        z = (pct - printed) / pooled if pooled > 0 else 0.0
        print(f"{g:7.2f} {tau:7.3f} {pct:8.2f} {se:6.2f} {printed:8.2f} {z:6.1f}")


if __name__ == "__main__":
    main()
