"""Optimised b and s at rho(beta_tilde) together with the large-sample
coverage and scaled expected length along the local family, on a fine
grid of gamma*.

    python scripts/figure2_3_data.py --plot
"""

from pathlib import Path

import numpy as np

from _common import parser, settings_from
from priorci.ciuupi import optimize_bs
from priorci.localframe import approx_cp_sel
from priorci.pipeline import fit_summary


def main():
    args = parser(__doc__.splitlines()[0], "desk.ini", "figure2_3_out").parse_args()
    st = settings_from(args)
    fs = st.frame
    frame = fit_summary(z=fs.z, t=fs.t, u=fs.u, gamma_step=fs.gamma_step).frame
    bs = optimize_bs(st.ciuupi.config(), frame.rho_tilde)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "bs_rho_tilde.txt").write_text(bs.to_text())
    x = np.round(np.arange(-8, 8.0001, 0.05), 10)
    np.savetxt(out / "bs_curves.csv", np.column_stack([x, bs.b(x), bs.s(x)]), delimiter=",",
               header="x,b,s", comments="", fmt="%.10g")
    g = np.round(np.arange(-10, 10.0001, 0.1), 10)
    rows = np.array(approx_cp_sel(frame, bs, g))
    np.savetxt(out / "approx_cp_sel.csv", rows, delimiter=",", header="gamma_star,cp,sel", comments="", fmt="%.10g")
    print(f"rho_tilde {frame.rho_tilde:.6f}")
    print(f"min cp {rows[:, 1].min():.6f}  SEL(0) {rows[g == 0, 2][0]:.4f}  max SEL {rows[:, 2].max():.4f}")
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, axes = plt.subplots(1, 3, figsize=(12, 3.5))
        axes[0].plot(x, bs.b(x))
        axes[0].set_title("b(x)")
        axes[1].plot(x, bs.s(x))
        axes[1].set_title("s(x)")
        axes[2].plot(rows[:, 0], rows[:, 2] ** 2)
        axes[2].axhline(1, color="k", lw=0.8)
        axes[2].set_title("squared scaled expected length")
        for ax in axes:
            ax.set_xlabel("x" if ax is not axes[2] else "gamma*")
        fig.tight_layout()
        fig.savefig(out / "bs_sel.png", dpi=150)


if __name__ == "__main__":
    main()
