"""SVG figures for inspection.

All figures go through :func:`_save`, which pins the SVG id salt and drops the
date stamp so repeated runs write byte-identical files.
"""

from __future__ import annotations

import io
import os
from typing import Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.patches import Polygon, Rectangle  # noqa: E402

from .conditioner import ConditionBundle  # noqa: E402
from .dsl import EGO  # noqa: E402
from .hdmap import HdMap  # noqa: E402
from .io import write_bytes  # noqa: E402
from .trajectory import Trajectory  # noqa: E402

__all__ = ["render_bundle", "render_bundle_frame", "render_loss", "render_scene"]

_MAP_COLORS = {"boundary": "#d62728", "divider": "#1f4fd6", "crossing": "#2ca02c"}
_RC = {"svg.hashsalt": "scenforge", "svg.fonttype": "none", "font.size": 8,
       "axes.linewidth": 0.6, "lines.linewidth": 1.0}


def _save(fig, path: str) -> None:
    buf = io.BytesIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    write_bytes(path, buf.getvalue())


def render_scene(trajs: Sequence[Trajectory], hd: HdMap | None, path: str,
                 extent: float = 51.2) -> None:
    """Top-down view, forward up and left to the left (as in the rasters)."""
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 5))
        if hd is not None:
            for cls, poly in hd.elements():
                pts = poly if cls != "crossing" else list(poly) + [poly[0]]
                xs = [-p[1] for p in pts]
                ys = [p[0] for p in pts]
                ax.plot(xs, ys, color=_MAP_COLORS[cls], lw=0.8)
        for tr in trajs:
            color = "#ffa500" if tr.agent_id == EGO else ("#c8b400" if tr.category == "vehicle" else "#00b5b5")
            ax.plot(-tr.xy[:, 1], tr.xy[:, 0], color=color, lw=1.6, label=tr.agent_id)
            ax.plot(-tr.xy[0, 1], tr.xy[0, 0], "o", color=color, ms=3)
        ax.set_xlim(-extent, extent)
        ax.set_ylim(-extent, extent)
        ax.set_aspect("equal")
        ax.set_xlabel("-y (m)")
        ax.set_ylabel("x (m)")
        ax.legend(loc="lower right", frameon=False)
        _save(fig, path)


def render_bundle_frame(b: ConditionBundle, frame: int, path: str) -> None:
    """One frame: the six views side by side, observed cells shaded."""
    T, _, H, KW = b.meta["layout"]
    views = b.meta["views"]
    W = KW // len(views)
    cells = b.mask.cells
    with plt.rc_context(_RC):
        fig, axes = plt.subplots(1, len(views), figsize=(2.2 * len(views), 1.6))
        for k, (ax, name) in enumerate(zip(axes, views)):
            ax.set_xlim(0, W)
            ax.set_ylim(H, 0)
            ax.set_xticks([])
            ax.set_yticks([])
            ax.set_title(name)
            if cells[frame, k]:
                shade = Rectangle((0, 0), W, H, facecolor="#9ecae1", alpha=0.35, lw=0)
                shade.set_gid(f"observed-{frame}-{name}")
                ax.add_patch(shade)
            for pc in b.polylines[frame]:
                if pc["view"] == name and len(pc["points"]) >= 2:
                    u = [p[0] for p in pc["points"]]
                    v = [p[1] for p in pc["points"]]
                    ax.plot(u, v, color=_MAP_COLORS[pc["class"]], lw=0.7)
            for entry in b.boxes[frame]:
                for proj in entry["projections"]:
                    if proj["view"] == name and len(proj["polygon"]) >= 3:
                        ax.add_patch(Polygon(proj["polygon"], closed=True, fill=False,
                                             edgecolor="#333333", lw=0.7))
        fig.suptitle(f"frame {frame}  t={b.meta['timestamps'][frame]:.2f} s  task={b.mask.task}")
        _save(fig, path)


def render_bundle(b: ConditionBundle, directory: str) -> list[str]:
    paths = []
    for f in range(b.meta["layout"][0]):
        p = os.path.join(directory, f"frame_{f:02d}.svg")
        render_bundle_frame(b, f, p)
        paths.append(p)
    return paths


def render_loss(train_loss: Sequence[float], eval_loss: Sequence[float], path: str) -> None:
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=(5, 3))
        ax.plot(range(1, len(train_loss) + 1), train_loss, color="#bbbbbb", lw=0.6, label="minibatch")
        ax.plot(range(len(eval_loss)), eval_loss, color="#1f4fd6", lw=1.2, label="held-out")
        ax.set_yscale("log")
        ax.set_xlabel("step")
        ax.set_ylabel("weighted DSM loss")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)

