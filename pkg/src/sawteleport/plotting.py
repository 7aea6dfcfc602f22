"""Figure rendering for the CLI report path.

Each function takes the already-written tabular rows and draws the
matching figure next to the delimited output.  Figures are a reporting
convenience: the CSV/JSON files remain the canonical, byte-stable
results.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 130,
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
    "savefig.bbox": "tight",
}


def _styled():
    return plt.rc_context(STYLE)


def save_sweep_figure(rows: list[dict], path):
    """Initial vs final coefficient weights and fidelity over phi1."""
    phi = np.array([r["phi1"] for r in rows]) / np.pi
    with _styled():
        fig, (ax, axf) = plt.subplots(
            2, 1, sharex=True, figsize=(6.4, 5.2),
            gridspec_kw={"height_ratios": [2.2, 1.0]},
        )
        ax.plot(phi, [r["si2"] for r in rows], "C0-", label=r"$|s^i|^2$")
        ax.plot(phi, [r["sf2"] for r in rows], "C0o", ms=3.5, label=r"$|s^f|^2$")
        ax.plot(phi, [r["ti2"] for r in rows], "C3-", label=r"$|t^i|^2$")
        ax.plot(phi, [r["tf2"] for r in rows], "C3s", ms=3.5, label=r"$|t^f|^2$")
        ax.set_ylabel("coefficient weight")
        ax.legend(ncol=2)
        axf.plot(phi, [r["mean_fidelity"] for r in rows], "k-")
        axf.set_ylabel("F")
        axf.set_xlabel(r"$\phi_1/\pi$")
        axf.set_ylim(min(0.85, min(r["mean_fidelity"] for r in rows) - 0.02), 1.005)
        fig.savefig(path)
        plt.close(fig)


def save_profile_figure(rows: list[tuple], path):
    """Pointwise teleportation fidelity across the wavepacket."""
    d = np.array([r[0] for r in rows])
    f = np.array([r[1] for r in rows])
    dens = np.array([r[2] for r in rows])
    with _styled():
        fig, ax = plt.subplots()
        ax.plot(d, f, "C0-", label="F")
        ax.set_xlabel(r"$\bar{y} - y_0$ (nm)")
        ax.set_ylabel("fidelity")
        ax.set_xlim(-20, 20)
        lo = min(f[np.abs(d) <= 20.0]) if np.any(np.abs(d) <= 20) else 0.9
        ax.set_ylim(min(0.9, lo - 0.02), 1.01)
        ax2 = ax.twinx()
        ax2.plot(d, dens / dens.max(), "k-", lw=2.2, alpha=0.35, label="density")
        ax2.set_ylabel("single-electron density (arb.)")
        ax2.grid(False)
        fig.savefig(path)
        plt.close(fig)


def save_snapshot_figure(stages: list[dict], path):
    """Square modulus of the eight components along the diagonal, per stage."""
    labels = [f"{x3}{x2}{x1}" for x3 in (0, 1) for x2 in (0, 1) for x1 in (0, 1)]
    with _styled():
        fig, axes = plt.subplots(
            8, 1, sharex=True, figsize=(6.4, 10.0), gridspec_kw={"hspace": 0.15}
        )
        for i, (lab, ax) in enumerate(zip(labels, axes)):
            for k, stage in enumerate(stages):
                y = np.asarray(stage["y"]) - stage["center"]
                ax.plot(y, stage["abs2"][i], color=plt.cm.viridis(k / max(1, len(stages) - 1)),
                        label=stage["stage"] if i == 0 else None)
            ax.set_ylabel(rf"$|{lab}\rangle$", rotation=0, labelpad=18, fontsize=8)
            ax.set_yticks([])
        axes[0].legend(fontsize=6, ncol=2, loc="upper right")
        axes[-1].set_xlabel(r"$\bar{y} - y_{min}$ (nm)")
        fig.savefig(path)
        plt.close(fig)


def save_calibration_figure(rows: list[dict], path):
    """Extracted coupler phase against the swept plateau length."""
    with _styled():
        fig, ax = plt.subplots()
        length = [r["plateau_length"] for r in rows]
        ax.plot(length, [r["gamma"] / np.pi for r in rows], "C0o-", label=r"$\gamma$ (mod $2\pi$)")
        ax.set_xlabel("plateau length (nm)")
        ax.set_ylabel(r"$\gamma/\pi$")
        ax.axhline(0.88, color="C3", lw=0.8, ls="--", label=r"$0.88\pi$")
        ax.legend()
        if len(rows) > 1:
            ax2 = ax.twinx()
            ax2.plot(length, [abs(r["gamma_total"]) for r in rows], "k.-", alpha=0.35)
            ax2.set_ylabel("|accumulated phase| (rad)")
            ax2.grid(False)
        fig.savefig(path)
        plt.close(fig)
