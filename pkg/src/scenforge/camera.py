"""Pinhole camera rig and ground-geometry projection.

Extrinsics map ego coordinates to camera coordinates, ``p_cam = R @ p_ego + t``,
with camera axes x right, y down, z forward (optical axis).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "CameraRig",
    "CameraView",
    "NEAR",
    "ProjectedPolyline",
    "VIEW_ORDER",
    "default_rig",
    "project_points",
    "project_to_view",
]

VIEW_ORDER = ("FL", "F", "FR", "BR", "B", "BL")
NEAR = 0.1
# Clipped points land this far beyond the near plane so every kept depth is > NEAR.
_CLIP_EPS = 1e-9

_AZIMUTH_DEG = {"FL": 60.0, "F": 0.0, "FR": -60.0, "BR": -120.0, "B": 180.0, "BL": 120.0}


@dataclass(frozen=True, eq=False)
class CameraView:
    name: str
    fx: float
    fy: float
    cx: float
    cy: float
    R: np.ndarray
    t: np.ndarray
    width: int = 448
    height: int = 256

    def to_json(self) -> dict:
        return {"name": self.name, "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": np.asarray(self.R).ravel().tolist(), "t": np.asarray(self.t).tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_json(cls, d: dict) -> "CameraView":
        return cls(d["name"], float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   np.asarray(d["R"], dtype=float).reshape(3, 3),
                   np.asarray(d["t"], dtype=float).reshape(3),
                   int(d.get("width", 448)), int(d.get("height", 256)))


@dataclass(frozen=True, eq=False)
class CameraRig:
    views: tuple = field(default_factory=tuple)

    def __post_init__(self):
        names = [v.name for v in self.views]
        if sorted(names) != sorted(VIEW_ORDER):
            raise ValueError(f"rig must hold exactly the views {VIEW_ORDER}, got {names}")
        for v in self.views:
            R = np.asarray(v.R, dtype=float)
            if R.shape != (3, 3) or np.max(np.abs(R.T @ R - np.eye(3))) > 1e-9:
                raise ValueError(f"view {v.name}: rotation is not orthonormal")
            if v.fx <= 0 or v.fy <= 0 or v.width < 1 or v.height < 1:
                raise ValueError(f"view {v.name}: bad intrinsics")
        # keep the fixed order regardless of file order
        object.__setattr__(self, "views", tuple(sorted(self.views, key=lambda v: VIEW_ORDER.index(v.name))))

    def __getitem__(self, name: str) -> CameraView:
        for v in self.views:
            if v.name == name:
                return v
        raise KeyError(name)

    def dumps(self) -> str:
        return json.dumps({"views": [v.to_json() for v in self.views]}, indent=1) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CameraRig":
        return cls(tuple(CameraView.from_json(d) for d in json.loads(text)["views"]))

    @classmethod
    def load(cls, path: str) -> "CameraRig":
        with open(path, encoding="utf-8") as fh:
            return cls.loads(fh.read())


def default_rig(height_m: float = 1.6, f: float = 500.0, width: int = 448,
                height: int = 256) -> CameraRig:
    """Six cameras at 60 degree azimuth spacing on a mast above the ego origin."""
    views = []
    c = np.array([0.0, 0.0, height_m])
    for name in VIEW_ORDER:
        a = math.radians(_AZIMUTH_DEG[name])
        fwd = np.array([math.cos(a), math.sin(a), 0.0])
        right = np.array([math.sin(a), -math.cos(a), 0.0])
        down = np.array([0.0, 0.0, -1.0])
        R = np.stack([right, down, fwd])
        views.append(CameraView(name, f, f, width / 2, height / 2, R, -R @ c, width, height))
    return CameraRig(tuple(views))


@dataclass(frozen=True, eq=False)
class ProjectedPolyline:
    view: str
    cls: str
    points: np.ndarray  # (M, 2) pixel (u, v)
    visible: np.ndarray  # (M,) inside the image

    def to_json(self) -> dict:
        return {"view": self.view, "class": self.cls, "points": self.points.tolist(),
                "visible": self.visible.astype(bool).tolist()}


def project_points(p_cam: np.ndarray, view: CameraView) -> np.ndarray:
    """Pinhole projection of camera-frame points (depth must be positive)."""
    p_cam = np.atleast_2d(p_cam)
    u = view.fx * p_cam[:, 0] / p_cam[:, 2] + view.cx
    v = view.fy * p_cam[:, 1] / p_cam[:, 2] + view.cy
    return np.stack([u, v], axis=1)


def _in_image(uv: np.ndarray, view: CameraView) -> np.ndarray:
    return (uv[:, 0] >= 0) & (uv[:, 0] < view.width) & (uv[:, 1] >= 0) & (uv[:, 1] < view.height)


def project_to_view(points: np.ndarray, view: CameraView, cls: str = "boundary",
                    near: float = NEAR) -> list[ProjectedPolyline]:
    """Project an ego-frame polyline into one view.

    Points at depth <= ``near`` are culled; segments crossing the near plane
    are cut at it first. A polyline that dips behind the camera therefore
    comes back as several pieces. Points outside the image are kept and
    flagged ``visible=False``.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[1] == 2:
        pts = np.concatenate([pts, np.zeros((len(pts), 1))], axis=1)
    cam = pts @ np.asarray(view.R).T + np.asarray(view.t)
    z_clip = near + _CLIP_EPS
    front = cam[:, 2] > near
    pieces: list[list[np.ndarray]] = []
    cur: list[np.ndarray] = []
    for i in range(len(cam)):
        if i > 0 and front[i] != front[i - 1]:
            a, b = cam[i - 1], cam[i]
            s = (z_clip - a[2]) / (b[2] - a[2])
            q = a + s * (b - a)
            q[2] = z_clip
            if front[i - 1]:
                cur.append(q)
                pieces.append(cur)
                cur = []
            else:
                cur = [q]
        if front[i]:
            cur.append(cam[i])
    if cur:
        pieces.append(cur)
    out = []
    for piece in pieces:
        arr = np.array(piece)
        uv = project_points(arr, view)
        out.append(ProjectedPolyline(view.name, cls, uv, _in_image(uv, view)))
    return out
