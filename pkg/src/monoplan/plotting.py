"""Matplotlib renderings of run artifacts.

All figures go through the Agg backend and are saved without the software
metadata chunk, so identical inputs give identical PNG bytes.
"""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle

from .occupancy import overlay_image

_RC = {
    "font.size": 9,
    "axes.titlesize": 9,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 100,
    "savefig.dpi": 100,
}


def _save(fig, path):
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def render_cycle_figure(depth, grid, padded, path_cells, path, max_range=20.0):
    """Depth panel plus the bird's-eye occupancy slice at vehicle height with the planned path."""
    with plt.rc_context(_RC):
        fig, (ax_d, ax_o) = plt.subplots(1, 2, figsize=(8, 3.4))
        im = ax_d.imshow(np.clip(depth, 0, max_range), cmap="magma_r", vmin=0, vmax=max_range)
        ax_d.set_title("estimated depth [m]")
        ax_d.set_axis_off()
        fig.colorbar(im, ax=ax_d, fraction=0.046, pad=0.04)

        layer = padded.origin_cell[2]
        rgb = overlay_image(padded, layer, path_cells).astype(float) / 255.0
        raw = grid.flags[:, :, layer].T[::-1]
        rgb[..., 1] = np.where(raw, 1.0, rgb[..., 1] * 0.45)
        extent = (padded.lower, padded.upper, padded.lower, padded.upper)
        ax_o.imshow(rgb, extent=extent, interpolation="nearest")
        ax_o.plot(0, 0, marker="^", color="w", markersize=6)
        ax_o.set_title("occupancy (green) and plan (red)")
        ax_o.set_xlabel("right [m]")
        ax_o.set_ylabel("forward [m]")
        fig.tight_layout()
        _save(fig, path)


def render_trajectory(scene, trajectory, goal, path):
    """Top-down view of the scene boxes and the flown trajectory."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(4.5, 6))
        for b in scene.boxes:
            ax.add_patch(Rectangle(b.lo[:2], b.hi[0] - b.lo[0], b.hi[1] - b.lo[1],
                                   facecolor="tab:brown", edgecolor="k", alpha=0.5, lw=0.8))
        if scene.bounds is not None:
            lo, hi = scene.bounds.lo, scene.bounds.hi
            ax.add_patch(Rectangle(lo[:2], hi[0] - lo[0], hi[1] - lo[1], fill=False, ls="--", lw=0.8))
        traj = np.asarray(trajectory)
        ax.plot(traj[:, 0], traj[:, 1], "-", color="tab:red", lw=1.2)
        ax.plot(traj[0, 0], traj[0, 1], "o", color="tab:blue", label="start")
        ax.plot(goal[0], goal[1], "*", color="tab:green", markersize=10, label="goal")
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.legend(loc="upper right", frameon=False)
        fig.tight_layout()
        _save(fig, path)
