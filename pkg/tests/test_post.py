import numpy as np
import pytest
from scipy import ndimage

from scenforge import dsl
from scenforge.bev import rasterize_hdmap
from scenforge.camera import (NEAR, VIEW_ORDER, CameraRig, CameraView, default_rig, project_points,
                              project_to_view)
from scenforge.hdmap import synthesize
from scenforge.post import (binarize, lane_polylines, project_lanes, resample, skeletonize,
                            trace_polylines)
from scenforge.trajectory import generate_scene

from test_hdmap import straight_ego

EIGHT = np.ones((3, 3), dtype=int)


def zs_oracle(mask):
    """Textbook Zhang-Suen on a set of pixels, one neighbour lookup at a time."""
    on = {(int(r), int(c)) for r, c in zip(*np.nonzero(mask))}

    def p(r, c):
        return 1 if (r, c) in on else 0

    while True:
        changed = False
        for sub in (0, 1):
            kill = []
            for r, c in on:
                n = [p(r - 1, c), p(r - 1, c + 1), p(r, c + 1), p(r + 1, c + 1),
                     p(r + 1, c), p(r + 1, c - 1), p(r, c - 1), p(r - 1, c - 1)]
                b = sum(n)
                a = sum(1 for k in range(8) if n[k] == 0 and n[(k + 1) % 8] == 1)
                p2, p4, p6, p8 = n[0], n[2], n[4], n[6]
                if sub == 0:
                    ok = p2 * p4 * p6 == 0 and p4 * p6 * p8 == 0
                else:
                    ok = p2 * p4 * p8 == 0 and p2 * p6 * p8 == 0
                if 2 <= b <= 6 and a == 1 and ok:
                    kill.append((r, c))
            if kill:
                on.difference_update(kill)
                changed = True
        if not changed:
            break
    out = np.zeros(mask.shape, dtype=bool)
    for r, c in on:
        out[r, c] = True
    return out


def random_mask(rng, size=64):
    m = np.zeros((size, size), dtype=bool)
    for _ in range(rng.integers(1, 6)):
        kind = rng.integers(3)
        r, c = rng.integers(4, size - 4, 2)
        if kind == 0:
            h, w = rng.integers(1, 12, 2)
            m[r:r + h, c:c + w] = True
        elif kind == 1:
            rad = rng.integers(2, 9)
            yy, xx = np.ogrid[:size, :size]
            m |= (yy - r) ** 2 + (xx - c) ** 2 <= rad * rad
        else:
            r2, c2 = rng.integers(2, size - 2, 2)
            n = max(abs(r2 - r), abs(c2 - c)) + 1
            rr = np.round(np.linspace(r, r2, n)).astype(int)
            cc = np.round(np.linspace(c, c2, n)).astype(int)
            for dr in range(rng.integers(1, 4)):
                m[np.clip(rr + dr, 0, size - 1), cc] = True
    return m


def random_masks(n=50, seed=0):
    rng = np.random.default_rng(seed)
    return [random_mask(rng) for _ in range(n)]


def test_binarize_threshold():
    assert not any(m.any() for m in binarize(np.zeros((3, 4, 4), np.uint8)))
    data = np.zeros((3, 2, 2), np.uint8)
    data[0, 0, 0], data[1, 0, 0] = 128, 127
    r, g, b = binarize(data, 128)
    assert r[0, 0] and not g[0, 0] and not b.any()


def test_binarize_counts_match_draw_log():
    trs = generate_scene(dsl.parse("seed 3\nego: forward\nagent p1: pedestrian pedestrian_cross"))
    ras = rasterize_hdmap(synthesize(trs, rng=np.random.default_rng(1)))
    for ch, m in enumerate(binarize(ras)):
        assert m.sum() == len(ras.draw_log[ch])


def test_thin_line_unchanged():
    m = np.zeros((20, 30), bool)
    m[5, 3:25] = True
    assert np.array_equal(skeletonize(m), m)
    d = np.eye(15, dtype=bool)
    assert np.array_equal(skeletonize(d), d)


def test_stripe_on_full_grid_matches_oracle():
    m = np.zeros((512, 512), bool)
    m[10:13, :] = True
    sk = skeletonize(m)
    assert np.array_equal(sk, zs_oracle(m))
    rows, cols = np.nonzero(sk)
    assert set(rows.tolist()) == {11}
    # one pixel lost at the west end, two at the east end (first subiteration eats south-east)
    assert cols.tolist() == list(range(1, 510))


def test_matches_oracle_on_random_masks():
    for m in random_masks(30, seed=7):
        assert np.array_equal(skeletonize(m, keep_components=False), zs_oracle(m))


def test_idempotent_subset_and_connectivity():
    for m in random_masks(50):
        sk = skeletonize(m)
        assert np.array_equal(skeletonize(sk), sk)
        assert not (sk & ~m).any()
        n_in = ndimage.label(m, structure=EIGHT)[1]
        n_out = ndimage.label(sk, structure=EIGHT)[1]
        assert n_in == n_out


def test_component_guard_restores_2x2_block():
    m = np.zeros((6, 6), bool)
    m[2:4, 2:4] = True
    assert not skeletonize(m, keep_components=False).any()
    sk = skeletonize(m)
    assert sk.sum() == 1 and sk[2, 2]


def test_trace_empty_and_single_line():
    assert trace_polylines(np.zeros((5, 5), bool)) == []
    m = np.zeros((20, 30), bool)
    m[5, 3:25] = True
    (line,) = trace_polylines(m)
    cols = [c for _, c in line]
    assert cols == list(range(3, 25)) and all(r == 5 for r, _ in line)


def neighbour_count(sk, p):
    r, c = p
    return int(sk[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2].sum()) - 1


def test_trace_plus_sign():
    sk = np.zeros((21, 21), bool)
    sk[10, 3:18] = True
    sk[3:18, 10] = True
    assert neighbour_count(sk, (10, 10)) == 4
    lines = trace_polylines(sk)
    assert len(lines) == 4
    for line in lines:
        assert (10, 10) in (line[0], line[-1])
    ends = {line[0] if line[-1] == (10, 10) else line[-1] for line in lines}
    assert ends == {(10, 3), (10, 17), (3, 10), (17, 10)}


def test_trace_closed_loop():
    sk = np.zeros((10, 10), bool)
    ring = [(2, 3), (2, 4), (2, 5), (3, 6), (4, 6), (5, 5), (5, 4), (5, 3), (4, 2), (3, 2)]
    for p in ring:
        sk[p] = True
    (line,) = trace_polylines(sk)
    assert line[0] == line[-1] == (2, 3)
    assert set(line) == set(ring) and len(line) == len(ring) + 1


def test_trace_ordering_and_orientation():
    sk = np.zeros((30, 30), bool)
    sk[20, 2:12] = True
    sk[4:15, 25] = True
    lines = trace_polylines(sk)
    assert [l[0] for l in lines] == [(4, 25), (20, 2)]
    assert all(l[0] <= l[-1] for l in lines)


def covered(lines):
    return {p for line in lines for p in line}


def test_trace_covers_every_pixel():
    for m in random_masks(50, seed=3):
        sk = skeletonize(m)
        pix = set(zip(*(a.tolist() for a in np.nonzero(sk))))
        lines = trace_polylines(sk)
        assert covered(lines) == pix
        # non-junction pixels appear in exactly one polyline
        plain = {p for p in pix if neighbour_count(sk, p) < 3}
        seen = [p for line in lines for p in (line[:-1] if line[0] == line[-1] and len(line) > 2 else line)
                if p in plain]
        assert len(seen) == len(set(seen))
        for line in lines:
            for a, b in zip(line, line[1:]):
                assert max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1


def test_map_channels_fully_covered():
    trs = generate_scene(dsl.parse("seed 2\nego: u_turn\nagent p1: pedestrian pedestrian_cross"))
    ras = rasterize_hdmap(synthesize(trs, rng=np.random.default_rng(2)))
    for m in binarize(ras):
        sk = skeletonize(m)
        assert covered(trace_polylines(sk)) == set(zip(*(a.tolist() for a in np.nonzero(sk))))


def test_resample_spacing():
    xy = np.array([[0.0, 0.0], [3.0, 0.0], [3.0, 4.0]])
    out = resample(xy, 0.5)
    seg = np.hypot(*np.diff(out, axis=0).T)
    assert np.allclose(out[[0, -1]], xy[[0, -1]])
    assert len(out) == 15 and np.all(seg <= 0.5 + 1e-12)


def test_lane_polylines_straight_map():
    lanes = lane_polylines(rasterize_hdmap(synthesize([straight_ego()])))
    assert len(lanes["boundary"]) == 2 and len(lanes["divider"]) == 2 and lanes["crossing"] == []
    ys = sorted(float(np.median(p[:, 1])) for p in lanes["boundary"])
    assert ys == pytest.approx([-7.0, 7.0], abs=0.2)


# ------------------------------------------------------------------ camera

def homogeneous(view):
    K = np.array([[view.fx, 0, view.cx, 0], [0, view.fy, view.cy, 0], [0, 0, 1, 0]], dtype=float)
    E = np.eye(4)
    E[:3, :3] = view.R
    E[:3, 3] = view.t
    return K @ E


def test_default_rig_layout():
    rig = default_rig()
    assert tuple(v.name for v in rig.views) == VIEW_ORDER
    for v in rig.views:
        assert np.allclose(v.R.T @ v.R, np.eye(3), atol=1e-12)
        assert (v.width, v.height, v.fx, v.cx, v.cy) == (448, 256, 500.0, 224.0, 128.0)
    # F looks along +x: a ground point far ahead lands near the horizon row
    (pl,) = project_to_view(np.array([[1000.0, 0.0]]), rig["F"])
    assert pl.points[0, 0] == pytest.approx(224.0) and pl.points[0, 1] == pytest.approx(128.8, abs=0.01)


def test_principal_point():
    view = CameraView("F", 500, 500, 224, 128, np.eye(3), np.zeros(3))
    for d in (0.2, 5.0, 300.0):
        assert project_points(np.array([0.0, 0.0, d]), view)[0].tolist() == [224.0, 128.0]
    (pl,) = project_to_view(np.array([[0.0, 0.0, 5.0]]), view)
    assert pl.points.tolist() == [[224.0, 128.0]] and pl.visible.tolist() == [True]


def test_projection_matches_homogeneous_oracle():
    rig = default_rig()
    rng = np.random.default_rng(0)
    worst, n = 0.0, 0
    for v in rig.views:
        pts = rng.uniform(-50, 50, (2000, 2))
        P = homogeneous(v)
        hom = np.column_stack([pts, np.zeros(len(pts)), np.ones(len(pts))]) @ P.T
        front = hom[:, 2] > NEAR
        for i in np.flatnonzero(front):
            (pl,) = project_to_view(pts[i:i + 1], v)
            worst = max(worst, float(np.max(np.abs(pl.points[0] - hom[i, :2] / hom[i, 2]))))
            n += 1
        assert all(project_to_view(pts[i:i + 1], v) == [] for i in np.flatnonzero(~front)[:50])
    assert n >= 1000 and worst <= 1e-6


def test_projection_oracle_vectorised_10k():
    rig = default_rig()
    rng = np.random.default_rng(1)
    total = 0
    for v in rig.views:
        pts = rng.uniform(-50, 50, (20_000, 2))
        P = homogeneous(v)
        hom = np.column_stack([pts, np.zeros(len(pts)), np.ones(len(pts))]) @ P.T
        keep = hom[:, 2] > 1.0
        cam = np.column_stack([pts[keep], np.zeros(keep.sum())]) @ v.R.T + v.t
        uv = project_points(cam, v)
        assert np.max(np.abs(uv - hom[keep, :2] / hom[keep, 2:3])) <= 1e-6
        total += keep.sum()
    assert total >= 10_000


def test_near_plane_clipping():
    view = CameraView("F", 500, 500, 224, 128, np.eye(3), np.zeros(3))
    poly = np.array([[0.0, 0.0, -2.0], [0.0, 1.0, 2.0], [0.0, 1.0, 6.0]])
    (pl,) = project_to_view(poly, view)
    # first point is where the segment meets z = near
    s = (NEAR + 1e-9 + 2.0) / 4.0
    y = 1.0 * s
    z = NEAR + 1e-9
    assert pl.points[0] == pytest.approx([224.0, 500 * y / z + 128], rel=1e-9)
    assert len(pl.points) == 3
    # front -> behind -> front splits in two pieces
    poly = np.array([[0, 0, 3.0], [0, 0, -3.0], [1, 0, 4.0]])
    pieces = project_to_view(poly, view)
    assert len(pieces) == 2 and [len(p.points) for p in pieces] == [2, 2]
    assert project_to_view(np.array([[0, 0, -1.0], [0, 0, NEAR]]), view) == []


def test_offscreen_points_flagged():
    view = default_rig()["F"]
    (pl,) = project_to_view(np.array([[10.0, 0.0], [10.0, 40.0]]), view)
    assert pl.visible.tolist() == [True, False]


def test_rig_validation_and_round_trip(tmp_path):
    rig = default_rig()
    back = CameraRig.loads(rig.dumps())
    for a, b in zip(rig.views, back.views):
        assert a.name == b.name and np.array_equal(a.R, b.R) and np.array_equal(a.t, b.t)
    shuffled = CameraRig(tuple(reversed(rig.views)))
    assert tuple(v.name for v in shuffled.views) == VIEW_ORDER
    with pytest.raises(ValueError, match="exactly the views"):
        CameraRig(rig.views[:5])
    bad = CameraView("F", 500, 500, 224, 128, np.eye(3) * 1.01, np.zeros(3))
    with pytest.raises(ValueError, match="orthonormal"):
        CameraRig(tuple(bad if v.name == "F" else v for v in rig.views))
    p = tmp_path / "rig.json"
    p.write_text(rig.dumps())
    assert CameraRig.load(str(p)).dumps() == rig.dumps()


def test_project_lanes_keeps_multi_point_pieces():
    lanes = lane_polylines(rasterize_hdmap(synthesize([straight_ego()])))
    per_view = project_lanes(lanes, default_rig())
    assert list(per_view) == list(VIEW_ORDER)
    assert per_view["F"] and per_view["B"]
    for pieces in per_view.values():
        assert all(len(p.points) >= 2 for p in pieces)
