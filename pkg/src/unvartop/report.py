"""Figure rendering for a finished run: cost/volume evolution and the
final topology, written as PNG files next to the delimited outputs."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .output import chi_matrix

__all__ = ["render_history", "render_topology", "render_report"]


def render_history(history, path) -> str:
    """Plot the normalized cost and the void fraction against iteration."""
    iters = np.arange(1, len(history.records) + 1)
    j = [r.j_norm for r in history.records]
    vol = [r.vol for r in history.records]
    t_ref = [r.t_ref for r in history.records]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(iters, j, color="tab:blue", label="J / J_ref")
    ax.set_xlabel("iteration")
    ax.set_ylabel("normalized cost", color="tab:blue")
    ax.tick_params(axis="y", labelcolor="tab:blue")
    ax2 = ax.twinx()
    ax2.plot(iters, vol, color="tab:red", label="void fraction")
    ax2.plot(iters, t_ref, color="tab:red", linestyle=":", label="target")
    ax2.set_ylabel("void fraction", color="tab:red")
    ax2.tick_params(axis="y", labelcolor="tab:red")
    ax2.set_ylim(0.0, 1.0)
    lines = ax.get_lines() + ax2.get_lines()
    ax.legend(lines, [ln.get_label() for ln in lines], loc="center right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return os.fspath(path)


def render_topology(chi, nelx, nely, path) -> str:
    """Grayscale image of the topology (material dark, void light)."""
    mat = chi_matrix(chi, nelx, nely)
    fig, ax = plt.subplots(figsize=(7, 7 * nely / nelx))
    ax.imshow(
        mat,
        cmap="gray_r",
        vmin=0.0,
        vmax=1.0,
        origin="upper",
        interpolation="nearest",
        aspect="equal",
    )
    ax.set_xticks([])
    ax.set_yticks([])
    fig.tight_layout(pad=0.2)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return os.fspath(path)


def render_report(history, nelx, nely, out_dir) -> dict:
    """Render history.png and topology.png for a finished run."""
    paths = {}
    paths["history"] = render_history(
        history, os.path.join(os.fspath(out_dir), "history.png")
    )
    if history.final_chi is not None:
        paths["topology"] = render_topology(
            history.final_chi,
            nelx,
            nely,
            os.path.join(os.fspath(out_dir), "topology.png"),
        )
    return paths
