"""Map raster to per-view lane geometry.

binarize -> Zhang-Suen thinning -> pixel polyline tracing -> metric
resampling -> camera projection.
"""

from __future__ import annotations

from collections import deque
from typing import Sequence

import numpy as np

from .bev import HDMAP_CHANNELS, BevRaster, RasterParams, meters_of
from .camera import CameraRig, ProjectedPolyline, project_to_view

__all__ = [
    "RESAMPLE_STEP",
    "binarize",
    "lane_polylines",
    "project_lanes",
    "resample",
    "skeletonize",
    "trace_polylines",
]

RESAMPLE_STEP = 0.5

_N8 = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def binarize(raster: BevRaster | np.ndarray, threshold: int = 128) -> list[np.ndarray]:
    """One boolean mask per channel, ``value >= threshold``."""
    data = raster.data if isinstance(raster, BevRaster) else np.asarray(raster)
    return [data[ch] >= threshold for ch in range(data.shape[0])]


# ------------------------------------------------------------------ thinning

def _neighbours(img: np.ndarray) -> list[np.ndarray]:
    """P2..P9 (N, NE, E, SE, S, SW, W, NW) as uint8 arrays, zero outside."""
    p = np.pad(img, 1).astype(np.uint8)
    h, w = img.shape
    return [p[1 + dr:1 + dr + h, 1 + dc:1 + dc + w] for dr, dc in _N8]


def _zs_pass(img: np.ndarray, first: bool) -> np.ndarray:
    P2, P3, P4, P5, P6, P7, P8, P9 = _neighbours(img)
    ring = (P2, P3, P4, P5, P6, P7, P8, P9, P2)
    B = P2 + P3 + P4 + P5 + P6 + P7 + P8 + P9
    A = sum(((ring[k] == 0) & (ring[k + 1] == 1)).astype(np.uint8) for k in range(8))
    if first:
        c = (P2 * P4 * P6 == 0) & (P4 * P6 * P8 == 0)
    else:
        c = (P2 * P4 * P8 == 0) & (P2 * P6 * P8 == 0)
    return img & (B >= 2) & (B <= 6) & (A == 1) & c


def _components(mask: np.ndarray) -> list[list[tuple[int, int]]]:
    seen = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    comps = []
    for r, c in zip(*np.nonzero(mask)):
        if seen[r, c]:
            continue
        comp, q = [], deque([(int(r), int(c))])
        seen[r, c] = True
        while q:
            a, b = q.popleft()
            comp.append((a, b))
            for dr, dc in _N8:
                y, x = a + dr, b + dc
                if 0 <= y < h and 0 <= x < w and mask[y, x] and not seen[y, x]:
                    seen[y, x] = True
                    q.append((y, x))
        comps.append(comp)
    return comps


def skeletonize(mask: np.ndarray, keep_components: bool = True) -> np.ndarray:
    """Zhang-Suen thinning (image border treated as background).

    Plain Zhang-Suen erases some shapes outright (a lone 2x2 block is the
    classic case). With ``keep_components`` a component that vanished gets its
    top-left pixel back, so the component count is preserved.
    """
    img = np.asarray(mask, dtype=bool).copy()
    while True:
        changed = False
        for first in (True, False):
            kill = _zs_pass(img, first)
            if kill.any():
                img &= ~kill
                changed = True
        if not changed:
            break
    if keep_components:
        for comp in _components(np.asarray(mask, dtype=bool)):
            if not any(img[r, c] for r, c in comp):
                r, c = min(comp)
                img[r, c] = True
    return img


# ------------------------------------------------------------------- tracing

def _adjacent(p, q) -> bool:
    return p != q and abs(p[0] - q[0]) <= 1 and abs(p[1] - q[1]) <= 1


def _step_key(p, q):
    # 4-neighbours first, then raster order
    return (abs(p[0] - q[0]) + abs(p[1] - q[1]), q)


def _cluster_path(src, dst, cluster: set) -> list:
    """Shortest path inside a junction cluster; ties prefer 4-neighbour steps."""
    prev = {src: None}
    q = deque([src])
    while q:
        p = q.popleft()
        if p == dst:
            break
        nbrs = [(p[0] + dr, p[1] + dc) for dr, dc in _N8]
        for n in sorted((n for n in nbrs if n in cluster), key=lambda n: _step_key(p, n)):
            if n not in prev:
                prev[n] = p
                q.append(n)
    path, p = [], dst
    while p is not None:
        path.append(p)
        p = prev[p]
    return path[::-1]


def trace_polylines(skeleton: np.ndarray) -> list[list[tuple[int, int]]]:
    """Pixel polylines (lists of (row, col)) of a unit-width skeleton.

    Pixels with three or more neighbours are junctions; touching junction
    pixels form one cluster represented by its anchor pixel (the member
    nearest the cluster centroid). Every branch runs between endpoints and/or
    anchors. Closed loops repeat their first pixel at the end. Open polylines
    are oriented so the first pixel sorts before the last, and the list is
    ordered by first pixel (topmost, then leftmost).
    """
    sk = np.asarray(skeleton, dtype=bool)
    pix = set(zip(*(a.tolist() for a in np.nonzero(sk))))
    if not pix:
        return []

    def nbrs(p):
        return [q for q in ((p[0] + dr, p[1] + dc) for dr, dc in _N8) if q in pix]

    junction = {p for p in pix if len(nbrs(p)) >= 3}
    cluster_of: dict = {}
    clusters: list[set] = []
    for j in sorted(junction):
        if j in cluster_of:
            continue
        members, q = {j}, deque([j])
        while q:
            p = q.popleft()
            for n in nbrs(p):
                if n in junction and n not in members:
                    members.add(n)
                    q.append(n)
        for m in members:
            cluster_of[m] = len(clusters)
        clusters.append(members)
    anchors = []
    for members in clusters:
        cen = np.mean(sorted(members), axis=0)
        anchors.append(min(members, key=lambda p: ((p[0] - cen[0]) ** 2 + (p[1] - cen[1]) ** 2, p)))
    dist_to_anchor: dict = {}
    for k, members in enumerate(clusters):
        for m in members:
            dist_to_anchor[m] = len(_cluster_path(m, anchors[k], members)) - 1

    def link(p):
        """Cluster pixel used to attach non-junction pixel ``p`` (or None)."""
        cand = [q for q in nbrs(p) if q in junction]
        if not cand:
            return None
        return min(cand, key=lambda q: (dist_to_anchor[q],) + _step_key(p, q))

    def into_cluster(contact):
        k = cluster_of[contact]
        return _cluster_path(contact, anchors[k], clusters[k])

    used = set()
    lines: list[list] = []
    plain = pix - junction

    def walk(start):
        path = [start]
        used.add(start)
        cur = start
        while True:
            step = sorted((q for q in nbrs(cur) if q in plain and q not in used),
                          key=lambda q: _step_key(cur, q))
            if not step:
                break
            cur = step[0]
            used.add(cur)
            path.append(cur)
        return path

    starts = sorted(p for p in plain if len([q for q in nbrs(p) if q in plain]) <= 1)
    for s in starts:
        if s in used:
            continue
        path = walk(s)
        head, tail = link(path[0]), link(path[-1])
        if len(path) == 1 and tail == head:
            tail = None
        if head is not None:
            path = into_cluster(head)[::-1] + path
        if tail is not None:
            path = path + into_cluster(tail)
        lines.append(path)
    # closed loops without junctions
    for s in sorted(plain - used):
        if s in used:
            continue
        path = walk(s)
        if len(path) > 2 and _adjacent(path[-1], path[0]):
            path.append(path[0])
        lines.append(path)
    covered = {p for line in lines for p in line}
    for k, members in enumerate(clusters):
        rest = sorted(members - covered)
        while rest:
            path = _cluster_path(anchors[k], rest[0], members)
            lines.append(path)
            covered.update(path)
            rest = sorted(members - covered)
    out = []
    for line in lines:
        closed = len(line) > 2 and line[0] == line[-1]
        if not closed and line[-1] < line[0]:
            line = line[::-1]
        out.append(line)
    out.sort(key=lambda l: (l[0], len(l), l))
    return out


# ----------------------------------------------------------- metric geometry

def resample(xy: np.ndarray, step: float = RESAMPLE_STEP) -> np.ndarray:
    """Arclength resampling, keeping both ends."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 2:
        return xy.copy()
    s = np.concatenate([[0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))])
    if s[-1] == 0.0:
        return xy[:1].copy()
    n = int(np.ceil(s[-1] / step)) + 1
    st = np.linspace(0.0, s[-1], n)
    return np.stack([np.interp(st, s, xy[:, 0]), np.interp(st, s, xy[:, 1])], axis=1)


def lane_polylines(raster: BevRaster, threshold: int = 128) -> dict[str, list[np.ndarray]]:
    """Class -> metric ego-frame polylines extracted from a map raster."""
    params = RasterParams(raster.height, raster.width, raster.mpp)
    masks = binarize(raster, threshold)
    out: dict[str, list[np.ndarray]] = {}
    for cls, ch in HDMAP_CHANNELS.items():
        polys = []
        for line in trace_polylines(skeletonize(masks[ch])):
            if len(line) < 2:
                continue
            r, c = np.array(line).T
            x, y = meters_of(r, c, params)
            polys.append(resample(np.stack([x, y], axis=1)))
        out[cls] = polys
    return out


def project_lanes(lanes: dict[str, Sequence[np.ndarray]], rig: CameraRig) -> dict[str, list[ProjectedPolyline]]:
    """View name -> projected pieces of every lane polyline."""
    out: dict[str, list[ProjectedPolyline]] = {}
    for view in rig.views:
        pieces = []
        for cls, polys in lanes.items():
            for poly in polys:
                pieces.extend(p for p in project_to_view(poly, view, cls) if len(p.points) >= 2)
        out[view.name] = pieces
    return out
