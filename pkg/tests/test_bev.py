import io
import json

import numpy as np
import pytest

from scenforge import dsl
from scenforge.bev import (EGO_COLOR, HDMAP_CHANNELS, PEDESTRIAN_COLOR, VEHICLE_COLOR, BevRaster,
                           RasterParams, load_raster, meters_of, pixel_of, rasterize_hdmap,
                           rasterize_trajectories, read_ppm, save_raster, write_ppm)
from scenforge.hdmap import HdMap, synthesize
from scenforge.trajectory import generate_scene

from conftest import cut_in_spec
from test_hdmap import line_traj, straight_ego

R = RasterParams()


def test_pixel_of_origin_and_edges():
    assert pixel_of(0.0, 0.0) == (256, 256, True)
    assert pixel_of(51.2, 0.0)[0] == 0
    assert pixel_of(51.2, 0.0)[2]
    assert pixel_of(-51.2, 0.0) == (512, 256, False)
    assert pixel_of(0.0, 10.0)[1] == 206
    r, c, inb = pixel_of(np.array([0.1, -0.1, 0.3]), np.array([0.0, 0.0, 0.0]))
    # 0.5 px rounds away from zero in both directions
    assert r.tolist() == [256, 257, 255] and inb.all()


def test_out_of_bounds_flagged_not_clamped():
    r, c, inb = pixel_of(100.0, -100.0)
    assert (r, c, inb) == (-244, 756, False)


def test_round_trip_exhaustive():
    rows, cols = np.mgrid[0:512, 0:512]
    x, y = meters_of(rows, cols)
    r2, c2, inb = pixel_of(x, y)
    assert np.array_equal(r2, rows) and np.array_equal(c2, cols) and inb.all()
    # any point within mpp/2 of a center maps back to that pixel
    rng = np.random.default_rng(0)
    jx = x + rng.uniform(-0.0999, 0.0999, x.shape)
    jy = y + rng.uniform(-0.0999, 0.0999, y.shape)
    r3, c3, _ = pixel_of(jx, jy)
    assert np.array_equal(r3, rows) and np.array_equal(c3, cols)


def test_single_ego_straight_stroke():
    ego = straight_ego(40.0)
    ras = rasterize_trajectories([ego])
    assert ras.colors() == {EGO_COLOR}
    lit = np.argwhere(ras.data.any(axis=0))
    assert set(lit[:, 1]) == {256, 257}
    assert lit[:, 0].min() == pixel_of(40.0, 0.0)[0] and lit[:, 0].max() == 257
    assert ras.data.dtype == np.uint8 and ras.data.shape == (3, 512, 512)


def test_category_colors_and_order():
    trs = generate_scene(dsl.parse("seed 1\nego: forward\nagent a1: vehicle cut_in target=ego\n"
                                   "agent p1: pedestrian pedestrian_cross"))
    ras = rasterize_trajectories(trs)
    assert ras.colors() == {EGO_COLOR, VEHICLE_COLOR, PEDESTRIAN_COLOR}
    with pytest.raises(ValueError, match="ego"):
        rasterize_trajectories(trs[1:])


def test_cut_in_enters_ego_band():
    for seed in range(10):
        ras = rasterize_trajectories(generate_scene(cut_in_spec(seed)))
        yellow = np.all(ras.data == np.array(VEHICLE_COLOR, np.uint8)[:, None, None], axis=0)
        cols = np.argwhere(yellow)[:, 1]
        band = np.abs(cols - 256) <= 1.75 / 0.2
        assert band.any() and (~band).any()


def test_out_of_bounds_trajectory_skipped_with_warning():
    far = line_traj("a9", [[200.0, 0.0], [260.0, 0.0]])
    ras = rasterize_trajectories([straight_ego(), far])
    assert ras.colors() == {EGO_COLOR}
    assert ras.warnings == ["a9: trajectory entirely outside the raster, skipped"]


def test_partially_visible_trajectory_is_clipped():
    long = line_traj("a1", [[-100.0, 3.0], [100.0, 3.0]])
    ras = rasterize_trajectories([straight_ego(), long])
    yellow = np.all(ras.data == np.array(VEHICLE_COLOR, np.uint8)[:, None, None], axis=0)
    rows = np.argwhere(yellow)[:, 0]
    assert rows.min() == 0 and rows.max() == 511 and not ras.warnings


def test_straight_map_columns():
    ras = rasterize_hdmap(synthesize([straight_ego()]))
    red_cols = set(np.argwhere(ras.data[0])[:, 1])
    blue_cols = set(np.argwhere(ras.data[2])[:, 1])
    assert red_cols == {221, 222, 291, 292}
    # 256 - 3.5/0.2 = 238.5 and 256 + 17.5 = 273.5 round away from zero; the brush adds +1
    assert blue_cols == {239, 240, 274, 275}
    assert not ras.data[1].any()


def test_map_palette_disjoint_from_trajectories():
    trs = generate_scene(dsl.parse("seed 3\nego: forward\nagent p1: pedestrian pedestrian_cross at=10"))
    hd = rasterize_hdmap(synthesize(trs))
    assert hd.colors() == {(255, 0, 0), (0, 255, 0), (0, 0, 255)}
    tb = rasterize_trajectories(trs)
    assert not (tb.colors() & hd.colors())


def test_crossing_fill_inside_bbox():
    poly = np.array([[8.0, -7.0], [12.0, -7.0], [12.0, 7.0], [8.0, 7.0]])
    hd = HdMap(crossings=[poly], centerline=np.array([[0.0, 0.0], [1.0, 0.0]]))
    ras = rasterize_hdmap(hd)
    g = np.argwhere(ras.data[HDMAP_CHANNELS["crossing"]])
    assert len(g) > 0
    r0, c0, _ = pixel_of(12.0, 7.0)
    r1, c1, _ = pixel_of(8.0, -7.0)
    assert g[:, 0].min() >= r0 and g[:, 0].max() <= r1 + 1
    assert g[:, 1].min() >= c0 and g[:, 1].max() <= c1 + 1
    # filled: the interior is solid
    assert ras.data[1, r0 + 1:r1, c0 + 1:c1].all()


def test_empty_map_all_zero():
    assert not rasterize_hdmap(HdMap()).data.any()


def test_draw_log_matches_pixels():
    trs = generate_scene(dsl.parse("seed 3\nego: forward\nagent p1: pedestrian pedestrian_cross"))
    ras = rasterize_hdmap(synthesize(trs, rng=np.random.default_rng(0)))
    for ch, pixels in ras.draw_log.items():
        assert np.count_nonzero(ras.data[ch]) == len(pixels)
    assert sum(len(p) for p in ras.draw_log.values()) == np.count_nonzero(ras.data.any(axis=0))


def test_deterministic():
    trs = generate_scene(cut_in_spec(9))
    a, b = rasterize_trajectories(trs), rasterize_trajectories(trs)
    assert np.array_equal(a.data, b.data)


def test_ppm_round_trip(tmp_path):
    ras = rasterize_trajectories(generate_scene(cut_in_spec(2)))
    p = tmp_path / "t_b.ppm"
    save_raster(ras, str(p))
    assert p.read_bytes().startswith(b"P6\n512 512\n255\n")
    back = load_raster(str(p))
    assert np.array_equal(back.data, ras.data) and back.mpp == 0.2
    side = json.loads((tmp_path / "t_b.ppm.json").read_text())
    assert side["meters_per_pixel"] == 0.2 and side["origin"] == "center"


def test_multi_image_ppm_and_errors():
    rng = np.random.default_rng(0)
    ims = [rng.integers(0, 256, (3, 4, 5), dtype=np.uint8) for _ in range(3)]
    buf = io.BytesIO()
    write_ppm(buf, ims)
    back = read_ppm(buf.getvalue())
    assert len(back) == 3 and all(np.array_equal(a, b) for a, b in zip(ims, back))
    with pytest.raises(ValueError, match="truncated"):
        read_ppm(buf.getvalue()[:-1])
    with pytest.raises(ValueError, match="magic"):
        read_ppm(b"P3\n1 1\n255\n000")
    with pytest.raises(ValueError):
        write_ppm(io.BytesIO(), [np.zeros((3, 2, 2), dtype=np.float32)])


def test_raster_params_validation():
    with pytest.raises(ValueError):
        RasterParams(mpp=0)
    small = RasterParams(64, 32, 0.5)
    assert pixel_of(0.0, 0.0, small) == (32, 16, True)
    ras = rasterize_trajectories([straight_ego(10.0)], small)
    assert isinstance(ras, BevRaster) and ras.data.shape == (3, 64, 32)
