"""Figure rendering for solve/oracle artifacts.

Reads the delimited outputs back and saves PNG figures alongside them; the
CSV files remain the canonical record.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg", force=True)

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io_utils import read_csv  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_schedule(out: Path):
    header, rows = read_csv(out / "schedule_record.csv")
    alphas = np.array([r[0] for r in rows])
    lams = np.array([r[1] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(alphas, lams, "o-", label="alpha * v_alpha(0)")
    lam_file = out / "lambda.csv"
    if lam_file.exists():
        _, lrows = read_csv(lam_file)
        lam = lrows[0][0]
        ax.axhline(lam, color="k", lw=0.8, ls="--", label=f"extrapolated {lam:.5g}")
        ax.plot([0.0], [lam], "ks")
    ax.set_xlabel("discount rate alpha")
    ax.set_ylabel("long-run constant estimate")
    ax.legend(fontsize=8)
    return _save(fig, out / "fig_schedule.png")


def render_vbar(out: Path):
    header, rows = read_csv(out / "vbar_query.csv")
    n_x = sum(1 for h in header if h.startswith("x_"))
    vcol = header.index("vbar")
    pts = np.array([r[:n_x] for r in rows])
    vbar = np.array([r[vcol] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.4))
    if n_x == 1:
        order = np.argsort(pts[:, 0])
        ax.plot(pts[order, 0], vbar[order], "o-")
        ax.set_xlabel("x")
    else:
        ax.bar(np.arange(len(vbar)), vbar)
        ax.set_xlabel("query point index")
    ax.set_ylabel("vbar")
    return _save(fig, out / "fig_vbar.png")


def render_diagnostics(out: Path):
    header, rows = read_csv(out / "diagnostics.csv")
    steps = np.array([r[0] for r in rows])
    resid = np.array([r[1] for r in rows])
    fig, ax = plt.subplots(figsize=(5, 3.4))
    positive = resid > 0
    if positive.any():
        ax.semilogy(steps[positive], resid[positive], lw=0.7)
    else:
        ax.plot(steps, resid, lw=0.7)
    ax.set_xlabel("backward step")
    ax.set_ylabel("regression residual rms")
    return _save(fig, out / "fig_diagnostics.png")


def render_oracle(out: Path):
    header, rows = read_csv(out / "oracle_solution.csv")
    arr = np.array(rows, dtype=float)
    x, v, dv, pol = arr.T
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(5, 5), sharex=True)
    ax1.plot(x, v, label="v")
    ax1.plot(x, dv, lw=0.8, label="v'")
    ax1.legend(fontsize=8)
    ax2.plot(x, pol, color="tab:red")
    ax2.set_ylabel("policy")
    ax2.set_xlabel("x")
    dens = out / "oracle_density.csv"
    if dens.exists():
        _, drows = read_csv(dens)
        darr = np.array(drows, dtype=float)
        ax2b = ax2.twinx()
        ax2b.plot(darr[:, 0], darr[:, 1], color="tab:gray", lw=0.8, alpha=0.7)
        ax2b.set_ylabel("stationary density")
    return _save(fig, out / "fig_oracle.png")


def render_all(out_dir):
    """Render every figure whose source CSV exists; returns written paths."""
    out = Path(out_dir)
    written = []
    for src, renderer in (
        ("schedule_record.csv", render_schedule),
        ("vbar_query.csv", render_vbar),
        ("diagnostics.csv", render_diagnostics),
        ("oracle_solution.csv", render_oracle),
    ):
        if (out / src).exists():
            written.append(renderer(out))
    return written
