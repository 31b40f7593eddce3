"""Rule-based vector HDMap fitted to a set of trajectories.

The road follows the (smoothed, extended) ego path. Lane dividers sit at
``+-k * lane_width`` for ``1 <= k < lanes_per_side`` and road boundaries at
``+-lanes_per_side * lane_width`` plus a non-negative waviness, so boundaries
always lie strictly outside the dividers. Where another vehicle drives wider
than that (ego changed lane away from it, say) the boundary is pushed out
further to keep the vehicle inside. Pedestrian crossings are emitted
only at junction nodes:

* where a ``pedestrian_cross`` trajectory enters the drivable corridor, or
* where the ego heading turns by more than 30 degrees within 2 s.

All lane polylines are sampled at the centerline stations, so vertex ``i`` of
every divider and boundary is the offset of centerline vertex ``i``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .dsl import EGO
from .trajectory import Trajectory

__all__ = ["HdMap", "Violation", "junction_nodes", "project_onto", "synthesize", "validate"]

STATION_SPACING = 1.0
SMOOTH_WINDOW = 9
EXTEND_MIN = 60.0
TURN_ANGLE = math.radians(30.0)
TURN_WINDOW_S = 2.0
JUNCTION_RADIUS = 15.0
CROSSING_HALF_LENGTH = 2.0
LANE_WIDTH_JITTER = 0.2
MAX_WAVINESS = 0.3
CLEARANCE = 1.0  # min lateral room between a vehicle center and a boundary
CLEARANCE_TAPER = 0.1  # m of widening per m of station away from a vehicle

CLASSES = ("boundary", "divider", "crossing")


@dataclass(eq=False)
class HdMap:
    boundaries: list = field(default_factory=list)
    dividers: list = field(default_factory=list)
    crossings: list = field(default_factory=list)
    lane_width: float = 3.5
    lanes_per_side: int = 2
    centerline: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    junctions: list = field(default_factory=list)

    def elements(self):
        for cls, polys in zip(CLASSES, (self.boundaries, self.dividers, self.crossings)):
            for p in polys:
                yield cls, p

    def __eq__(self, other) -> bool:
        if not isinstance(other, HdMap):
            return NotImplemented
        mine, theirs = list(self.elements()), list(other.elements())
        return (self.lane_width == other.lane_width
                and self.lanes_per_side == other.lanes_per_side
                and len(mine) == len(theirs)
                and all(a[0] == b[0] and np.array_equal(a[1], b[1]) for a, b in zip(mine, theirs))
                and np.array_equal(self.centerline, other.centerline)
                and np.array_equal(np.asarray(self.junctions), np.asarray(other.junctions)))

    def to_json(self) -> dict:
        return {
            "lane_width": self.lane_width,
            "lanes_per_side": self.lanes_per_side,
            "centerline": self.centerline.tolist(),
            "junctions": [list(map(float, j)) for j in self.junctions],
            "elements": [{"class": c, "points": p.tolist()} for c, p in self.elements()],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1) + "\n"

    @classmethod
    def from_json(cls, d: dict) -> "HdMap":
        m = cls(lane_width=float(d["lane_width"]), lanes_per_side=int(d["lanes_per_side"]),
                centerline=np.asarray(d["centerline"], dtype=float).reshape(-1, 2),
                junctions=[tuple(j) for j in d.get("junctions", [])])
        buckets = {"boundary": m.boundaries, "divider": m.dividers, "crossing": m.crossings}
        for el in d["elements"]:
            if el["class"] not in buckets:
                raise ValueError(f"unknown map element class {el['class']!r}")
            pts = np.asarray(el["points"], dtype=float)
            if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
                raise ValueError("map polylines need at least two (x, y) points")
            buckets[el["class"]].append(pts)
        return m


@dataclass(frozen=True)
class Violation:
    rule: str  # corridor | ordering | crossing
    message: str
    agent_id: str | None = None
    step: int | None = None


# ------------------------------------------------------------------ geometry

def _resample(poly: np.ndarray, spacing: float) -> np.ndarray:
    seg = np.hypot(*np.diff(poly, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return poly[:1].copy()
    n = max(2, int(math.floor(s[-1] / spacing)) + 1)
    st = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(st, s, poly[:, 0]), np.interp(st, s, poly[:, 1])], axis=1)


def _smooth(xy: np.ndarray, window: int) -> np.ndarray:
    half = window // 2
    out = np.empty_like(xy)
    n = len(xy)
    for i in range(n):
        k = min(half, i, n - 1 - i)
        out[i] = xy[i - k:i + k + 1].mean(axis=0)
    return out


def _normals(line: np.ndarray) -> np.ndarray:
    tang = np.gradient(line, axis=0)
    tang /= np.maximum(np.hypot(*tang.T), 1e-12)[:, None]
    return np.stack([-tang[:, 1], tang[:, 0]], axis=1)


def _stations(line: np.ndarray) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(line, axis=0).T))])


def project_onto(points: np.ndarray, line: np.ndarray):
    """Nearest-point projection onto a polyline.

    Returns ``(station, signed_offset, beyond)`` per point; offsets are positive
    to the left of travel, ``beyond`` flags points past either end.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a = line[:-1]
    d = np.diff(line, axis=0)
    seg_len2 = np.maximum((d ** 2).sum(axis=1), 1e-18)
    rel = points[:, None, :] - a[None, :, :]
    u = (rel * d[None]).sum(axis=2) / seg_len2[None]
    uc = np.clip(u, 0.0, 1.0)
    foot = a[None] + uc[..., None] * d[None]
    dist2 = ((points[:, None, :] - foot) ** 2).sum(axis=2)
    k = np.argmin(dist2, axis=1)
    rows = np.arange(len(points))
    st = _stations(line)
    seg = np.sqrt(seg_len2)
    station = st[k] + uc[rows, k] * seg[k]
    cross = d[k, 0] * rel[rows, k, 1] - d[k, 1] * rel[rows, k, 0]
    offset = np.sign(cross) * np.sqrt(dist2[rows, k])
    beyond = ((k == 0) & (u[rows, k] < 0)) | ((k == len(d) - 1) & (u[rows, k] > 1))
    return station, offset, beyond


def _offset_profile(poly: np.ndarray, line: np.ndarray):
    """(station, signed offset) per vertex; vertex-aligned when lengths match."""
    if len(poly) == len(line):
        nrm = _normals(line)
        return _stations(line), ((poly - line) * nrm).sum(axis=1)
    station, offset, _ = project_onto(poly, line)
    return station, offset


def _centerline(ego: Trajectory, vehicles: Sequence[Trajectory]) -> np.ndarray:
    path = _smooth(ego.xy, SMOOTH_WINDOW)
    keep = np.concatenate([[True], np.hypot(*np.diff(path, axis=0).T) > 1e-9])
    path = path[keep]
    h = float(ego.yaw[0])
    if len(path) < 2:
        path = np.stack([path[0], path[0] + [math.cos(h), math.sin(h)]])
    d0 = path[1] - path[0]
    d0 /= np.linalg.norm(d0)
    d1 = path[-1] - path[-2]
    d1 /= np.linalg.norm(d1)
    pts = np.concatenate([v.xy for v in vehicles]) if vehicles else path
    back = max(EXTEND_MIN, float(np.max((path[0] - pts) @ d0)) + 20.0)
    ahead = max(EXTEND_MIN, float(np.max((pts - path[-1]) @ d1)) + 20.0)
    line = np.concatenate([[path[0] - back * d0], path, [path[-1] + ahead * d1]])
    return _resample(line, STATION_SPACING)


def _clearance(vehicles: Sequence[Trajectory], line: np.ndarray, st: np.ndarray,
               side: int) -> np.ndarray:
    """Boundary offset needed on one side so every vehicle keeps ``CLEARANCE``.

    Each vehicle point asks for ``|offset| + CLEARANCE`` at its station; the
    demand falls off linearly with station distance so widened stretches blend
    into the nominal road.
    """
    need = np.zeros(len(st))
    for v in vehicles:
        vs, off, _ = project_onto(v.xy, line)
        on = np.sign(off) == side
        if not on.any():
            continue
        req = np.abs(off[on]) + CLEARANCE
        need = np.maximum(need, np.max(req[None, :] - CLEARANCE_TAPER * np.abs(st[:, None] - vs[on][None, :]),
                                       axis=1))
    return need


def _turn_runs(ego: Trajectory) -> list[int]:
    """Mid indices of runs where the heading turns > 30 deg within 2 s."""
    n = len(ego)
    dt = float(ego.t[1] - ego.t[0]) if n > 1 else 1.0
    w = max(1, int(round(TURN_WINDOW_S / dt)))
    hits = []
    for i in range(n):
        d = ego.yaw[i + 1:i + 1 + w] - ego.yaw[i]
        if len(d) and np.max(np.abs(np.arctan2(np.sin(d), np.cos(d)))) > TURN_ANGLE:
            hits.append(i)
    runs, mids = [], []
    for i in hits:
        if runs and i == runs[-1][-1] + 1:
            runs[-1].append(i)
        else:
            runs.append([i])
    for r in runs:
        mids.append(r[len(r) // 2])
    return mids


def junction_nodes(trajs: Sequence[Trajectory], centerline: np.ndarray,
                   half_width: float) -> list[float]:
    """Centerline stations of junction nodes, merged within 15 m."""
    stations = []
    for tr in trajs:
        if tr.maneuver != "pedestrian_cross":
            continue
        st, off, beyond = project_onto(tr.xy, centerline)
        inside = (np.abs(off) <= half_width) & ~beyond
        if inside.any():
            idx = np.flatnonzero(inside)
            stations.append(float(st[idx[np.argmin(np.abs(off[idx]))]]))
    ego = next((t for t in trajs if t.agent_id == EGO), None)
    if ego is not None:
        for i in _turn_runs(ego):
            st, _, _ = project_onto(ego.xy[i:i + 1], centerline)
            stations.append(float(st[0]))
    merged: list[float] = []
    for s in sorted(stations):
        if not merged or s - merged[-1] > JUNCTION_RADIUS:
            merged.append(s)
    return merged


def _point_at(line: np.ndarray, station: float):
    st = _stations(line)
    p = np.array([np.interp(station, st, line[:, 0]), np.interp(station, st, line[:, 1])])
    k = int(np.clip(np.searchsorted(st, station) - 1, 0, len(line) - 2))
    t = line[k + 1] - line[k]
    return p, t / max(np.linalg.norm(t), 1e-12)


# ---------------------------------------------------------------- synthesis

def synthesize(trajectories: Sequence[Trajectory], lane_width: float = 3.5,
               lanes_per_side: int = 2, rng: np.random.Generator | None = None) -> HdMap:
    """Fit dividers, boundaries and crossings around the ego path.

    ``rng=None`` disables all jitter (lane width and boundary waviness).
    """
    ego = next((t for t in trajectories if t.agent_id == EGO), None)
    if ego is None:
        raise ValueError("synthesize needs the ego trajectory")
    if lanes_per_side < 1:
        raise ValueError("lanes_per_side must be >= 1")
    vehicles = [t for t in trajectories if t.category == "vehicle"]
    line = _centerline(ego, vehicles)
    nrm = _normals(line)
    st = _stations(line)
    w = lane_width
    if rng is not None:
        w = lane_width + float(rng.uniform(-LANE_WIDTH_JITTER, LANE_WIDTH_JITTER))

    dividers = []
    for k in range(1, lanes_per_side):
        for sgn in (1, -1):
            dividers.append(line + sgn * k * w * nrm)
    boundaries = []
    for sgn in (1, -1):
        off = np.full(len(line), lanes_per_side * w)
        if rng is not None:
            amp = rng.uniform(0.0, MAX_WAVINESS)
            lam = rng.uniform(20.0, 60.0)
            phi = rng.uniform(0.0, 2 * math.pi)
            off = off + amp * 0.5 * (1.0 + np.sin(2 * math.pi * st / lam + phi))
        off = np.maximum(off, _clearance(vehicles, line, st, sgn))
        boundaries.append(line + sgn * off[:, None] * nrm)

    half = lanes_per_side * w
    crossings, junctions = [], []
    for s in junction_nodes(trajectories, line, half):
        c, t = _point_at(line, s)
        n = np.array([-t[1], t[0]])
        a, b = CROSSING_HALF_LENGTH * t, half * n
        crossings.append(np.stack([c - a - b, c + a - b, c + a + b, c - a + b]))
        junctions.append((float(c[0]), float(c[1])))
    return HdMap(boundaries, dividers, crossings, float(w), lanes_per_side, line, junctions)


# ---------------------------------------------------------------- validation

def _side_profiles(polys: Sequence[np.ndarray], line: np.ndarray) -> dict:
    out: dict = {}
    for p in polys:
        st, off = _offset_profile(p, line)
        side = 1 if np.median(off) >= 0 else -1
        order = np.argsort(st, kind="stable")
        out.setdefault(side, []).append((st[order], np.abs(off[order])))
    return out


def _boundary_at(profiles: list, station: np.ndarray) -> np.ndarray:
    vals = [np.interp(station, st, off) for st, off in profiles]
    return np.min(vals, axis=0)


def validate(hd: HdMap, trajectories: Sequence[Trajectory]) -> list[Violation]:
    """Constraint violations; empty iff the map is consistent.

    Rules: ``corridor`` (vehicle waypoints strictly inside the boundaries),
    ``ordering`` (boundaries strictly outside dividers, per side and station)
    and ``crossing`` (crossing centroids within 15 m of a junction node).
    """
    out: list[Violation] = []
    line = hd.centerline
    if len(line) < 2:
        return [Violation("corridor", "map has no centerline")]
    bounds = _side_profiles(hd.boundaries, line)

    for tr in trajectories:
        if tr.category != "vehicle":
            continue
        st, off, beyond = project_onto(tr.xy, line)
        for side in (1, -1):
            mask = (np.sign(off) == side) | ((off == 0) & (side == 1))
            if not mask.any():
                continue
            if side not in bounds:
                k = int(np.flatnonzero(mask)[0])
                out.append(Violation("corridor", f"no boundary on side {side:+d}", tr.agent_id, k))
                break
            lim = _boundary_at(bounds[side], st)
            bad = mask & ((np.abs(off) >= lim) | beyond)
            if bad.any():
                k = int(np.flatnonzero(bad)[0])
                out.append(Violation(
                    "corridor", f"{tr.agent_id} leaves the corridor at step {k} "
                    f"(offset {off[k]:.2f} m, boundary {lim[k]:.2f} m)", tr.agent_id, k))
                break

    for i, div in enumerate(hd.dividers):
        st, off = _offset_profile(div, line)
        side = 1 if np.median(off) >= 0 else -1
        if side not in bounds:
            out.append(Violation("ordering", f"divider {i} has no boundary on its side"))
            continue
        lim = _boundary_at(bounds[side], st)
        bad = np.abs(off) >= lim
        if bad.any():
            k = int(np.flatnonzero(bad)[0])
            out.append(Violation("ordering", f"divider {i} reaches the boundary at station "
                                 f"{st[k]:.1f} m ({abs(off[k]):.2f} >= {lim[k]:.2f})"))

    if hd.crossings:
        half = hd.lanes_per_side * hd.lane_width
        nodes = [_point_at(line, s)[0] for s in junction_nodes(trajectories, line, half)]
        for i, poly in enumerate(hd.crossings):
            c = poly.mean(axis=0)
            if not nodes or min(np.linalg.norm(c - q) for q in nodes) > JUNCTION_RADIUS:
                out.append(Violation("crossing", f"crossing {i} is not at a junction"))
    return out
