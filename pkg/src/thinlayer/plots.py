"""Figure rendering for run and study outputs.

Figures are written next to the delimited files with the headless Agg
backend: a thickness profile (initial vs final, with the free boundary
visible where the field hits zero) and the ledger time series, plus
log-log trend panels for refinement studies.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .mesh import solution_points  # noqa: E402


def save_field_figure(outdir, initial, final) -> Path:
    mesh = final.mesh
    path = Path(outdir) / "field.png"
    fig, ax = plt.subplots(figsize=(7, 4))
    if mesh.dimension == 1:
        x = solution_points(mesh, final.backend)[:, 0]
        ax.plot(x, initial.values, "k--", lw=1.0, label="initial")
        ax.plot(x, final.values, "C0-", lw=1.5, label=f"t = {final.t:g}")
        ax.axhline(0.0, color="0.7", lw=0.5)
        ax.set_xlabel("x")
        ax.set_ylabel("thickness")
        ax.legend(frameon=False)
    else:
        nx, ny = mesh.shape
        im = ax.imshow(final.values.reshape(ny, nx), origin="lower",
                       extent=[mesh.cell_centroids[:, 0].min(),
                               mesh.cell_centroids[:, 0].max(),
                               mesh.cell_centroids[:, 1].min(),
                               mesh.cell_centroids[:, 1].max()],
                       aspect="auto", cmap="viridis")
        fig.colorbar(im, ax=ax, label="thickness")
        ax.set_xlabel("x")
        ax.set_ylabel("y")
        ax.set_title(f"t = {final.t:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_ledger_figure(outdir, entries) -> Path:
    path = Path(outdir) / "ledger.png"
    t = np.array([e.t for e in entries])
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)
    ax1.plot(t, [e.M for e in entries], "C0-", lw=1.5)
    ax1.set_ylabel("total mass M")
    ax2.plot(t, [e.C for e in entries], label="climate C", lw=1.2)
    ax2.plot(t, [e.R for e in entries], label="retreat R", lw=1.2)
    ax2.plot(t, [e.B for e in entries], label="leak B", lw=1.2)
    if any(e.S != 0.0 for e in entries):
        ax2.plot(t, [e.S for e in entries], label="slop S", lw=1.2)
    ax2.set_xlabel("t")
    ax2.set_ylabel("per-step transfer")
    ax2.legend(frameon=False, ncol=2, fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def save_study_figure(outdir, rows) -> Path:
    path = Path(outdir) / "study.png"
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 4))
    sp = [r for r in rows if r.mode == "spatial"]
    tp = [r for r in rows if r.mode == "temporal"]
    if sp:
        ax1.loglog([r.h for r in sp], [max(r.total_abs_B, 1e-30) for r in sp],
                   "o-", label="total |B|")
        ax1.loglog([r.h for r in sp], [max(r.total_R, 1e-30) for r in sp],
                   "s--", label="total R")
        ax1.set_xlabel("h")
        ax1.set_title("spatial refinement, fixed dt")
        ax1.legend(frameon=False)
    if tp:
        ax2.loglog([r.dt for r in tp], [max(r.total_R, 1e-30) for r in tp],
                   "s-", label="total R")
        ax2.loglog([r.dt for r in tp], [max(r.total_bound, 1e-30) for r in tp],
                   "^--", label="total bound")
        ax2.set_xlabel("dt")
        ax2.set_title("temporal refinement, fixed h")
        ax2.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path
