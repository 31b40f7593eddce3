"""Per-clip structured conditions in the unified multi-view layout.

A clip is ``T`` frames sampled at 4 Hz from the waypoints. For every frame the
lane polylines and agent boxes are moved into that frame's ego pose, projected
into the six cameras and drawn; the six views are then placed side by side in
the fixed order FL, F, FR, BR, B, BL, giving ``T x 3 x H x (K*W)`` images.

Task masks mark the observed (conditioning) cells of the (frame, view) grid
with 1; everything at 0 is to be generated.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .bev import read_ppm, write_ppm
from .camera import NEAR, VIEW_ORDER, CameraRig, CameraView, project_points
from .dsl import EGO, ScenarioSpec
from .io import atomic_write, write_text
from .post import project_lanes
from .trajectory import Trajectory

__all__ = [
    "Box3D",
    "BoxPolygon",
    "ConditionBundle",
    "FRAME_RATE",
    "OBSERVED",
    "SIZE_TABLE",
    "TASKS",
    "TaskMask",
    "box_corners",
    "boxes_from_trajectories",
    "bundle",
    "convex_hull",
    "load_bundle",
    "make_mask",
    "next_start_index",
    "project_box",
    "save_bundle",
    "split_views",
    "unify_views",
]

SIZE_TABLE = {"vehicle": (4.6, 1.95, 1.73), "pedestrian": (0.7, 0.7, 1.7)}
TASKS = ("future_prediction", "front_outpaint", "full_generation")
FRAME_RATE = 4.0
CLIP_FRAMES = 8
# Mask polarity: 1 marks observed cells.
OBSERVED = 1

LANE_COLORS = {"boundary": (255, 0, 0), "crossing": (0, 255, 0), "divider": (0, 0, 255)}
BOX_COLORS = {"vehicle": (255, 255, 0), "pedestrian": (0, 255, 255)}


# --------------------------------------------------------------------- boxes

@dataclass(frozen=True, eq=False)
class Box3D:
    center: np.ndarray
    size: tuple
    yaw: float
    category: str
    agent_id: str
    frame: int

    def to_json(self) -> dict:
        return {"agent_id": self.agent_id, "category": self.category, "frame": self.frame,
                "center": [float(v) for v in self.center], "size": list(self.size),
                "yaw": float(self.yaw)}


def boxes_from_trajectories(trajs: Sequence[Trajectory], size_table: Mapping = SIZE_TABLE,
                            frames: Sequence[int] = range(CLIP_FRAMES)) -> list[list[Box3D]]:
    """Boxes per frame for every non-ego agent, resting on the ground."""
    out = []
    for f in frames:
        row = []
        for tr in trajs:
            if tr.agent_id == EGO:
                continue
            if tr.category not in size_table:
                raise KeyError(f"no size-table entry for category '{tr.category}'")
            if not 0 <= f < len(tr):
                raise IndexError(f"frame {f} outside {tr.agent_id}'s {len(tr)} waypoints")
            l, w, h = (float(v) for v in size_table[tr.category])
            x, y, yaw = tr.points[f, :3]
            row.append(Box3D(np.array([x, y, h / 2]), (l, w, h), float(yaw),
                             tr.category, tr.agent_id, int(f)))
        out.append(row)
    return out


def box_corners(box: Box3D) -> np.ndarray:
    """(8, 3) corners; bottom face first, counter-clockwise from front-left."""
    l, w, h = box.size
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    local = np.array([[l / 2, w / 2], [-l / 2, w / 2], [-l / 2, -w / 2], [l / 2, -w / 2]])
    xy = local @ np.array([[c, s], [-s, c]]) + box.center[:2]
    z0, z1 = box.center[2] - h / 2, box.center[2] + h / 2
    return np.concatenate([np.c_[xy, np.full(4, z0)], np.c_[xy, np.full(4, z1)]])


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Monotone-chain hull, counter-clockwise from the lowest (u, v)."""
    pts = sorted(set(map(tuple, np.asarray(points, dtype=float).tolist())))
    if len(pts) <= 2:
        return np.array(pts, dtype=float).reshape(-1, 2)

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower, upper = [], []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return np.array(lower[:-1] + upper[:-1], dtype=float)


@dataclass(frozen=True, eq=False)
class BoxPolygon:
    view: str
    agent_id: str
    category: str
    polygon: np.ndarray  # (M, 2) pixels
    visible: bool

    def to_json(self) -> dict:
        return {"view": self.view, "agent_id": self.agent_id, "category": self.category,
                "polygon": self.polygon.tolist(), "visible": self.visible}


def project_box(box: Box3D, view: CameraView, near: float = NEAR) -> BoxPolygon | None:
    """Hull of the projected corners in front of the near plane (None if none are)."""
    cam = box_corners(box) @ np.asarray(view.R).T + np.asarray(view.t)
    front = cam[cam[:, 2] > near]
    if len(front) == 0:
        return None
    hull = convex_hull(project_points(front, view))
    lo, hi = hull.min(axis=0), hull.max(axis=0)
    visible = bool(hi[0] >= 0 and lo[0] < view.width and hi[1] >= 0 and lo[1] < view.height)
    return BoxPolygon(view.name, box.agent_id, box.category, hull, visible)


# ------------------------------------------------------------ layout & masks

def unify_views(views, order: Sequence[str] = VIEW_ORDER) -> np.ndarray:
    """Side-by-side concatenation in the fixed view order.

    ``views`` is a mapping name -> (T, 3, H, W) array, or a sequence of
    (name, array) pairs that must already follow the fixed order.
    """
    if isinstance(views, Mapping):
        items = dict(views)
    else:
        pairs = list(views)
        if not all(isinstance(p, tuple) and len(p) == 2 and isinstance(p[0], str) for p in pairs):
            raise TypeError("views must be keyed by name")
        names = [n for n, _ in pairs]
        if names != list(order):
            raise ValueError(f"views out of order: got {names}, expected {list(order)}")
        items = dict(pairs)
    missing = [n for n in order if n not in items]
    extra = [n for n in items if n not in order]
    if missing or extra:
        raise ValueError(f"missing views {missing}" if missing else f"unknown views {extra}")
    arrays = [np.asarray(items[n]) for n in order]
    shape = arrays[0].shape
    if len(shape) != 4:
        raise ValueError("each view must be a (T, C, H, W) array")
    for n, a in zip(order, arrays):
        if a.shape != shape or a.dtype != arrays[0].dtype:
            raise ValueError(f"view {n}: shape {a.shape} does not match {shape}")
    return np.concatenate(arrays, axis=3)


def split_views(unified: np.ndarray, order: Sequence[str] = VIEW_ORDER) -> dict[str, np.ndarray]:
    k = len(order)
    if unified.ndim != 4 or unified.shape[3] % k:
        raise ValueError(f"unified width {unified.shape[-1]} is not divisible by {k} views")
    w = unified.shape[3] // k
    return {n: unified[..., i * w:(i + 1) * w].copy() for i, n in enumerate(order)}


@dataclass(frozen=True, eq=False)
class TaskMask:
    task: str
    cells: np.ndarray  # (T, K) uint8, 1 = observed

    def to_json(self) -> dict:
        return {"task": self.task, "polarity": "1=observed", "views": list(VIEW_ORDER),
                "cells": self.cells.tolist()}


def make_mask(task: str, T: int = CLIP_FRAMES, K: int = len(VIEW_ORDER)) -> TaskMask:
    if task not in TASKS:
        raise ValueError(f"unknown task '{task}' (expected one of {TASKS})")
    if T < 1 or K != len(VIEW_ORDER):
        raise ValueError(f"need T >= 1 and K = {len(VIEW_ORDER)}")
    cells = np.full((T, K), 1 - OBSERVED, dtype=np.uint8)
    if task == "future_prediction":
        cells[0, :] = OBSERVED
    elif task == "front_outpaint":
        cells[:, VIEW_ORDER.index("F")] = OBSERVED
    return TaskMask(task, cells)


# ----------------------------------------------------------------- drawing

def _draw_polyline(img: np.ndarray, uv: np.ndarray, color, closed: bool = False) -> None:
    """1-px DDA strokes into a (3, H, W) image; off-image samples dropped."""
    if closed and len(uv) > 2:
        uv = np.concatenate([uv, uv[:1]])
    if len(uv) < 2:
        return
    a, b = uv[:-1], uv[1:]
    n = np.ceil(np.max(np.abs(b - a), axis=1)).astype(np.int64) + 1
    n = np.minimum(n, 4096)
    seg = np.repeat(np.arange(len(a)), n)
    start = np.concatenate([[0], np.cumsum(n)[:-1]])
    s = (np.arange(n.sum()) - np.repeat(start, n)) / np.maximum(np.repeat(n, n) - 1, 1)
    p = a[seg] + s[:, None] * (b[seg] - a[seg])
    u = np.floor(p[:, 0] + 0.5).astype(np.int64)
    v = np.floor(p[:, 1] + 0.5).astype(np.int64)
    keep = (u >= 0) & (u < img.shape[2]) & (v >= 0) & (v < img.shape[1])
    img[:, v[keep], u[keep]] = np.asarray(color, dtype=np.uint8)[:, None]


def _to_ego(xy: np.ndarray, pose) -> np.ndarray:
    x0, y0, h = pose
    c, s = math.cos(h), math.sin(h)
    d = np.asarray(xy, dtype=float) - (x0, y0)
    return np.stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]], axis=1)


def _box_in_ego(box: Box3D, pose) -> Box3D:
    xy = _to_ego(box.center[None, :2], pose)[0]
    return Box3D(np.array([xy[0], xy[1], box.center[2]]), box.size, box.yaw - pose[2],
                 box.category, box.agent_id, box.frame)


# ------------------------------------------------------------------ bundle

@dataclass(eq=False)
class ConditionBundle:
    hdmap_cond: np.ndarray  # (T, 3, H, K*W) uint8
    boxes_cond: np.ndarray
    mask: TaskMask
    meta: dict
    polylines: list = field(default_factory=list)  # per frame: list of projected pieces (json)
    boxes: list = field(default_factory=list)  # per frame: list of box + polygons (json)


def next_start_index(b: ConditionBundle) -> int:
    """First waypoint of the following clip: this clip's last frame."""
    return int(b.meta["frame_indices"][-1])


def bundle(spec: ScenarioSpec, trajs: Sequence[Trajectory], lanes: Mapping[str, Sequence[np.ndarray]],
           rig: CameraRig, task: str = "full_generation", start_index: int = 0,
           T: int = CLIP_FRAMES, size_table: Mapping = SIZE_TABLE) -> ConditionBundle:
    """Condition images, mask and metadata for one clip.

    ``lanes`` are ego-start-frame polylines per map class, as extracted from
    the map raster.
    """
    ego = next((t for t in trajs if t.agent_id == EGO), None)
    if ego is None:
        raise ValueError("bundle needs the ego trajectory")
    dt = float(ego.t[1] - ego.t[0]) if len(ego) > 1 else 1.0 / FRAME_RATE
    stride = max(1, int(round(1.0 / (FRAME_RATE * dt))))
    frames = [start_index + k * stride for k in range(T)]
    if frames[-1] >= len(ego) or start_index < 0:
        raise IndexError(f"clip frames {frames[0]}..{frames[-1]} exceed {len(ego)} waypoints")
    mask = make_mask(task, T, len(rig.views))
    v0 = rig.views[0]
    H, W, K = v0.height, v0.width, len(rig.views)
    if any(v.height != H or v.width != W for v in rig.views):
        raise ValueError("all views must share one image size")
    hd_views = {v.name: np.zeros((T, 3, H, W), np.uint8) for v in rig.views}
    bx_views = {v.name: np.zeros((T, 3, H, W), np.uint8) for v in rig.views}
    all_boxes = boxes_from_trajectories(trajs, size_table, frames)
    poly_log, box_log = [], []
    for i, f in enumerate(frames):
        pose = tuple(ego.points[f, :3])
        local = {cls: [_to_ego(p, pose) for p in polys] for cls, polys in lanes.items()}
        pieces = project_lanes(local, rig)
        frame_polys = []
        for view in rig.views:
            for pc in pieces[view.name]:
                _draw_polyline(hd_views[view.name][i], pc.points, LANE_COLORS[pc.cls])
                frame_polys.append(pc.to_json())
        poly_log.append(frame_polys)
        frame_boxes = []
        for box in all_boxes[i]:
            eb = _box_in_ego(box, pose)
            polys = []
            for view in rig.views:
                bp = project_box(eb, view)
                if bp is None:
                    continue
                _draw_polyline(bx_views[view.name][i], bp.polygon, BOX_COLORS[box.category], closed=True)
                polys.append(bp.to_json())
            frame_boxes.append({"box": box.to_json(), "ego_frame": eb.to_json(), "projections": polys})
        box_log.append(frame_boxes)
    order = [v.name for v in rig.views]
    meta = {
        "scenario": spec.name,
        "seed": spec.seed,
        "environment": sorted(spec.environment),
        "task": task,
        "frame_indices": frames,
        "timestamps": [float(ego.t[f]) for f in frames],
        "frame_rate": FRAME_RATE,
        "views": order,
        "layout": [T, 3, H, K * W],
        "agents": [t.agent_id for t in trajs],
        "mask_polarity": "1=observed",
    }
    return ConditionBundle(unify_views(hd_views, order), unify_views(bx_views, order),
                           mask, meta, poly_log, box_log)


# ---------------------------------------------------------------- persistence

def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def save_bundle(b: ConditionBundle, directory: str) -> None:
    os.makedirs(directory, exist_ok=True)
    for name, arr in (("hdmap_cond.ppm", b.hdmap_cond), ("boxes_cond.ppm", b.boxes_cond)):
        with atomic_write(os.path.join(directory, name), "wb") as fh:
            write_ppm(fh, list(arr))
    write_text(os.path.join(directory, "mask.json"), _dump(b.mask.to_json()))
    write_text(os.path.join(directory, "meta.json"), _dump(b.meta))
    write_text(os.path.join(directory, "polylines.json"), _dump(b.polylines))
    write_text(os.path.join(directory, "boxes.json"), _dump(b.boxes))


def load_bundle(directory: str) -> ConditionBundle:
    """Read a bundle directory back, checking it is internally consistent."""
    def read_json(name):
        with open(os.path.join(directory, name), encoding="utf-8") as fh:
            return json.load(fh)

    meta = read_json("meta.json")
    m = read_json("mask.json")
    images = []
    for name in ("hdmap_cond.ppm", "boxes_cond.ppm"):
        with open(os.path.join(directory, name), "rb") as fh:
            frames = read_ppm(fh.read())
        if not frames:
            raise ValueError(f"{name}: no frames")
        images.append(np.stack(frames))
    T, C, H, KW = meta["layout"]
    for name, arr in zip(("hdmap_cond.ppm", "boxes_cond.ppm"), images):
        if list(arr.shape) != [T, C, H, KW]:
            raise ValueError(f"{name}: shape {list(arr.shape)} != layout {meta['layout']}")
    cells = np.asarray(m["cells"], dtype=np.uint8)
    if m["task"] not in TASKS or cells.shape != (T, len(meta["views"])):
        raise ValueError("mask.json does not match the bundle layout")
    if not np.array_equal(cells, make_mask(m["task"], T, len(meta["views"])).cells):
        raise ValueError("mask.json cells do not follow the task rule")
    return ConditionBundle(images[0], images[1], TaskMask(m["task"], cells), meta,
                           read_json("polylines.json"), read_json("boxes.json"))
