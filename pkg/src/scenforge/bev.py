"""Ego-centred bird's-eye rasters.

Frame convention: ego at the image centre, +x (forward) points up and +y
(left) points to the image left, so::

    row = H/2 - x/mpp      col = W/2 - y/mpp

rounded half away from zero. Strokes are integer Bresenham lines stamped with
a 2x2 brush; nothing is anti-aliased, so rasters are bit-reproducible.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from .dsl import EGO
from .hdmap import HdMap
from .io import atomic_write
from .trajectory import Trajectory

__all__ = [
    "BevRaster",
    "EGO_COLOR",
    "HDMAP_CHANNELS",
    "PEDESTRIAN_COLOR",
    "RasterParams",
    "VEHICLE_COLOR",
    "load_raster",
    "meters_of",
    "pixel_of",
    "rasterize_hdmap",
    "rasterize_trajectories",
    "read_ppm",
    "save_raster",
    "write_ppm",
]

EGO_COLOR = (255, 165, 0)
VEHICLE_COLOR = (255, 255, 0)
PEDESTRIAN_COLOR = (0, 255, 255)
# class -> channel (red boundaries, green crossings, blue dividers)
HDMAP_CHANNELS = {"boundary": 0, "crossing": 1, "divider": 2}


@dataclass(frozen=True)
class RasterParams:
    height: int = 512
    width: int = 512
    mpp: float = 0.2

    def __post_init__(self):
        if self.height < 1 or self.width < 1 or not self.mpp > 0:
            raise ValueError("raster needs positive size and meters-per-pixel")


@dataclass(eq=False)
class BevRaster:
    data: np.ndarray  # (3, H, W) uint8
    mpp: float
    warnings: list = field(default_factory=list)
    # channel -> set of (row, col) written, filled by the HDMap rasterizer
    draw_log: dict = field(default_factory=dict)

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def colors(self) -> set:
        px = self.data.reshape(3, -1).T
        return {tuple(int(v) for v in c) for c in np.unique(px, axis=0) if c.any()}

    def sidecar(self) -> dict:
        return {"meters_per_pixel": self.mpp, "origin": "center", "height": self.height,
                "width": self.width, "x_axis": "up", "y_axis": "left",
                "warnings": list(self.warnings)}


def _round_half_away(v):
    v = np.asarray(v, dtype=float)
    return (np.sign(v) * np.floor(np.abs(v) + 0.5)).astype(np.int64)


def pixel_of(x, y, params: RasterParams = RasterParams()):
    """(row, col, in_bounds) for ground points; out-of-range points are not clamped."""
    row = _round_half_away(params.height / 2 - np.asarray(x, dtype=float) / params.mpp)
    col = _round_half_away(params.width / 2 - np.asarray(y, dtype=float) / params.mpp)
    inb = (row >= 0) & (row < params.height) & (col >= 0) & (col < params.width)
    if row.ndim == 0:
        return int(row), int(col), bool(inb)
    return row, col, inb


def meters_of(row, col, params: RasterParams = RasterParams()):
    """Ground point at a pixel centre (inverse of :func:`pixel_of`)."""
    x = (params.height / 2 - np.asarray(row, dtype=float)) * params.mpp
    y = (params.width / 2 - np.asarray(col, dtype=float)) * params.mpp
    return x, y


# ------------------------------------------------------------------ drawing

def _clip(p0, p1, lo, hi):
    """Liang-Barsky clip of segment p0-p1 to the box [lo, hi]; None if outside."""
    t0, t1 = 0.0, 1.0
    d = (p1[0] - p0[0], p1[1] - p0[1])
    for axis in (0, 1):
        for p, q in ((-d[axis], p0[axis] - lo[axis]), (d[axis], hi[axis] - p0[axis])):
            if p == 0:
                if q < 0:
                    return None
                continue
            r = q / p
            if p < 0:
                t0 = max(t0, r)
            else:
                t1 = min(t1, r)
            if t0 > t1:
                return None
    return ((p0[0] + t0 * d[0], p0[1] + t0 * d[1]), (p0[0] + t1 * d[0], p0[1] + t1 * d[1]))


def _bresenham(r0: int, c0: int, r1: int, c1: int) -> list:
    out = []
    dr, dc = abs(r1 - r0), -abs(c1 - c0)
    sr = 1 if r0 < r1 else -1
    sc = 1 if c0 < c1 else -1
    err = dr + dc
    while True:
        out.append((r0, c0))
        if r0 == r1 and c0 == c1:
            return out
        e2 = 2 * err
        if e2 >= dc:
            err += dc
            r0 += sr
        if e2 <= dr:
            err += dr
            c0 += sc


def _polyline_pixels(xy: np.ndarray, params: RasterParams) -> set:
    """Pixels of a 2-px stroke along ``xy`` (in-bounds only)."""
    fr = params.height / 2 - xy[:, 0] / params.mpp
    fc = params.width / 2 - xy[:, 1] / params.mpp
    lo, hi = (-2.0, -2.0), (params.height + 1.0, params.width + 1.0)
    pts = set()
    pairs = zip(zip(fr[:-1], fc[:-1]), zip(fr[1:], fc[1:])) if len(xy) > 1 else [((fr[0], fc[0]),) * 2]
    for a, b in pairs:
        seg = _clip(a, b, lo, hi)
        if seg is None:
            continue
        (ra, ca), (rb, cb) = seg
        ra, ca, rb, cb = (int(v) for v in _round_half_away([ra, ca, rb, cb]))
        for r, c in _bresenham(ra, ca, rb, cb):
            pts.update(((r, c), (r + 1, c), (r, c + 1), (r + 1, c + 1)))
    return {(r, c) for r, c in pts if 0 <= r < params.height and 0 <= c < params.width}


def _polygon_fill(poly: np.ndarray, params: RasterParams) -> set:
    """Pixels whose centres fall inside ``poly`` (even-odd rule)."""
    rows, cols, _ = pixel_of(poly[:, 0], poly[:, 1], params)
    r0, r1 = max(int(rows.min()), 0), min(int(rows.max()), params.height - 1)
    c0, c1 = max(int(cols.min()), 0), min(int(cols.max()), params.width - 1)
    if r0 > r1 or c0 > c1:
        return set()
    rr, cc = np.mgrid[r0:r1 + 1, c0:c1 + 1]
    px, py = meters_of(rr.ravel(), cc.ravel(), params)
    inside = np.zeros(px.shape, dtype=bool)
    xs, ys = poly[:, 0], poly[:, 1]
    xj, yj = np.roll(xs, 1), np.roll(ys, 1)
    for xa, ya, xb, yb in zip(xs, ys, xj, yj):
        if ya == yb:
            continue
        crosses = (ya > py) != (yb > py)
        xint = xa + (py - ya) * (xb - xa) / (yb - ya)
        inside ^= crosses & (px < xint)
    return set(zip(rr.ravel()[inside].tolist(), cc.ravel()[inside].tolist()))


def _paint(img: np.ndarray, pixels: set, color) -> None:
    if not pixels:
        return
    r, c = np.array(sorted(pixels)).T
    img[:, r, c] = np.asarray(color, dtype=np.uint8)[:, None]


def rasterize_trajectories(trajs: Sequence[Trajectory],
                           params: RasterParams = RasterParams()) -> BevRaster:
    """Trajectory condition raster: pedestrians, then vehicles, ego on top."""
    if not any(t.agent_id == EGO for t in trajs):
        raise ValueError("rasterize_trajectories needs the ego trajectory")
    img = np.zeros((3, params.height, params.width), dtype=np.uint8)
    raster = BevRaster(img, params.mpp)

    def rank(t):
        return 2 if t.agent_id == EGO else (1 if t.category == "vehicle" else 0)

    for tr in sorted(trajs, key=rank):
        if tr.agent_id == EGO:
            color = EGO_COLOR
        else:
            color = VEHICLE_COLOR if tr.category == "vehicle" else PEDESTRIAN_COLOR
        pixels = _polyline_pixels(tr.xy, params)
        if not pixels:
            raster.warnings.append(f"{tr.agent_id}: trajectory entirely outside the raster, skipped")
            continue
        _paint(img, pixels, color)
    return raster


def rasterize_hdmap(hd: HdMap, params: RasterParams = RasterParams()) -> BevRaster:
    """Map raster; each element class owns one channel, drawn at 255.

    Where classes overlap the pixel keeps one class (boundary over divider
    over crossing), so every lit pixel is pure red, green or blue and never
    collides with the trajectory palette. ``draw_log`` holds the final pixel
    set per channel.
    """
    img = np.zeros((3, params.height, params.width), dtype=np.uint8)
    drawn = {ch: set() for ch in (0, 1, 2)}
    for cls, poly in hd.elements():
        ch = HDMAP_CHANNELS[cls]
        if cls == "crossing":
            closed = np.concatenate([poly, poly[:1]])
            drawn[ch] |= _polygon_fill(poly, params) | _polyline_pixels(closed, params)
        else:
            drawn[ch] |= _polyline_pixels(poly, params)
    b, c, d = HDMAP_CHANNELS["boundary"], HDMAP_CHANNELS["crossing"], HDMAP_CHANNELS["divider"]
    log = {b: drawn[b], d: drawn[d] - drawn[b], c: drawn[c] - drawn[b] - drawn[d]}
    for ch, pixels in sorted(log.items()):
        if pixels:
            r, cc = np.array(sorted(pixels)).T
            img[ch, r, cc] = 255
    return BevRaster(img, params.mpp, draw_log=dict(sorted(log.items())))


# ----------------------------------------------------------------------- I/O

def write_ppm(fh: BinaryIO, images: Sequence[np.ndarray]) -> None:
    """Binary P6, one image after another; each image is (3, H, W) uint8."""
    for im in images:
        im = np.asarray(im)
        if im.ndim != 3 or im.shape[0] != 3 or im.dtype != np.uint8:
            raise ValueError("PPM frames must be uint8 with shape (3, H, W)")
        fh.write(f"P6\n{im.shape[2]} {im.shape[1]}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(im.transpose(1, 2, 0)).tobytes())


def _token(buf: bytes, pos: int) -> tuple[bytes, int]:
    while True:
        while pos < len(buf) and buf[pos:pos + 1].isspace():
            pos += 1
        if buf[pos:pos + 1] == b"#":
            while pos < len(buf) and buf[pos:pos + 1] != b"\n":
                pos += 1
            continue
        break
    start = pos
    while pos < len(buf) and not buf[pos:pos + 1].isspace():
        pos += 1
    return buf[start:pos], pos


def read_ppm(data: bytes) -> list[np.ndarray]:
    """All P6 images in ``data`` as (3, H, W) uint8 arrays."""
    out, pos = [], 0
    while pos < len(data) and data[pos:].strip():
        magic, pos = _token(data, pos)
        if magic != b"P6":
            raise ValueError(f"not a binary PPM (magic {magic!r})")
        w, pos = _token(data, pos)
        h, pos = _token(data, pos)
        mx, pos = _token(data, pos)
        w, h = int(w), int(h)
        if int(mx) != 255:
            raise ValueError("only 8-bit PPM is supported")
        pos += 1
        n = w * h * 3
        if pos + n > len(data):
            raise ValueError("truncated PPM")
        out.append(np.frombuffer(data, np.uint8, n, pos).reshape(h, w, 3).transpose(2, 0, 1).copy())
        pos += n
    return out


def save_raster(raster: BevRaster, path: str) -> None:
    """``path`` (P6) plus a ``<path>.json`` sidecar, both written atomically."""
    with atomic_write(path, "wb") as fh:
        write_ppm(fh, [raster.data])
    with atomic_write(path + ".json", "w") as fh:
        json.dump(raster.sidecar(), fh, indent=1)
        fh.write("\n")


def load_raster(path: str) -> BevRaster:
    with open(path, "rb") as fh:
        frames = read_ppm(fh.read())
    if len(frames) != 1:
        raise ValueError(f"{path}: expected one image, found {len(frames)}")
    meta = {}
    if os.path.exists(path + ".json"):
        with open(path + ".json") as fh:
            meta = json.load(fh)
    return BevRaster(frames[0], float(meta.get("meters_per_pixel", 0.2)),
                     list(meta.get("warnings", [])))
