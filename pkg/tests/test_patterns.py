"""Rasterization contracts: snapped line geometry, fractions, round trips."""

import numpy as np
import pytest

from topocell.patterns import (
    FrameConfig,
    TopographySpec,
    load_raster_png,
    load_specs_jsonl,
    machined_fraction,
    rasterize,
    realized_line_geometry,
    save_raster_png,
    save_specs_jsonl,
    snapped_line_px,
)

F256 = FrameConfig()
F64 = FrameConfig(resolution=64)


def run_lengths(profile):
    """(starts, lengths) of 1-runs in a binary 1-D profile."""
    d = np.diff(np.concatenate([[0], profile.astype(int), [0]]))
    starts = np.flatnonzero(d == 1)
    return starts, np.flatnonzero(d == -1) - starts


def test_blank_is_all_zero():
    r = rasterize(TopographySpec("blank"), F256)
    assert r.array.shape == (256, 256)
    assert not r.array.any()
    assert machined_fraction(r) == 0.0


def test_line_stripes_are_whole_pixel_and_evenly_spaced():
    # 25 um strokes, 90 um gaps, 500 um / 256 px frame
    r = rasterize(TopographySpec("parallel_lines", 25.0, 90.0, 0.0), F256)
    arr = r.array
    assert set(np.unique(arr)) <= {0.0, 1.0}
    # horizontal lines: every column carries the same stripe profile
    assert (arr == arr[:, :1]).all()
    starts, lengths = run_lengths(arr[:, 0])
    assert lengths.tolist() == [13, 13, 13, 13, 13]
    assert starts.tolist() == [3, 62, 121, 180, 239]
    assert np.diff(starts).tolist() == [59, 59, 59, 59]
    assert snapped_line_px(25.0, 90.0, F256.scale) == (13, 59)


def test_machined_fraction_tracks_duty_cycle():
    for w, sep in [(25.0, 90.0), (12.0, 50.0), (25.0, 150.0), (7.5, 30.0)]:
        r = rasterize(TopographySpec("parallel_lines", w, sep, 0.0), F256)
        frac = machined_fraction(r)
        assert frac == pytest.approx(r.array.sum() / 256 ** 2)
        assert abs(frac - w / (w + sep)) < 0.05


def test_machined_fraction_monotone_in_width():
    fracs = [machined_fraction(rasterize(TopographySpec("parallel_lines", w, 50.0, 0.0), F256))
             for w in (5.0, 10.0, 15.0, 20.0, 30.0, 40.0)]
    assert all(b >= a for a, b in zip(fracs, fracs[1:]))
    assert fracs == pytest.approx(
        [0.10546875, 0.17578125, 0.21875, 0.2734375, 0.390625, 0.390625])


def test_vertical_lines_are_transposed_horizontal_lines():
    for w, sep in [(25.0, 90.0), (10.0, 20.0)]:
        h = rasterize(TopographySpec("parallel_lines", w, sep, 0.0), F256).array
        v = rasterize(TopographySpec("parallel_lines", w, sep, 90.0), F256).array
        assert (v == h.T).all()


def test_oblique_lines_keep_duty_cycle():
    r = rasterize(TopographySpec("parallel_lines", 25.0, 90.0, 30.0), F256)
    assert abs(machined_fraction(r) - 25.0 / 115.0) < 0.05
    # oblique strokes are not constant along rows or columns
    arr = r.array
    assert not (arr == arr[:, :1]).all()
    assert not (arr == arr[:1, :]).all()


def test_subpixel_stroke_rejected():
    with pytest.raises(ValueError, match="sub-pixel"):
        rasterize(TopographySpec("parallel_lines", 0.5, 90.0, 0.0), F256)
    # the same width is fine on a coarser physical box
    fine = FrameConfig(resolution=256, box_side_um=100.0)
    rasterize(TopographySpec("parallel_lines", 0.5, 2.0, 0.0), fine)


def test_realized_separation_reports_snapped_gap():
    angle, sep = realized_line_geometry(TopographySpec("parallel_lines", 25.0, 90.0, 0.0), F256)
    assert angle == 0.0
    assert sep == pytest.approx(89.84375)
    # at 64 px the narrow ladder collapses: 10/12 um realizes a 15.625 um gap
    angle, sep = realized_line_geometry(TopographySpec("parallel_lines", 10.0, 12.0, 0.0), F64)
    assert sep == pytest.approx(15.625)
    # oblique lines are not snapped
    angle, sep = realized_line_geometry(TopographySpec("parallel_lines", 10.0, 12.0, 30.0), F64)
    assert (angle, sep) == (30.0, 12.0)
    assert realized_line_geometry(TopographySpec("blank"), F64) is None


def test_crossed_lines_union_of_both_orientations():
    spec = TopographySpec("crossed_lines", 25.0, 90.0, 0.0)
    crossed = rasterize(spec, F256).array
    h = rasterize(TopographySpec("parallel_lines", 25.0, 90.0, 0.0), F256).array
    v = rasterize(TopographySpec("parallel_lines", 25.0, 90.0, 90.0), F256).array
    assert (crossed == np.maximum(h, v)).all()


def test_border_box_touches_every_edge():
    r = rasterize(TopographySpec("border_box", width_um=10.0), F256).array
    assert r[0, :].all() and r[-1, :].all()
    assert r[:, 0].all() and r[:, -1].all()
    assert r[128, 128] == 0.0


def test_concentric_circles_stay_on_their_radii():
    spec = TopographySpec("concentric_circles", width_um=20.0,
                          params={"radii_um": [100.0]})
    r = rasterize(spec, F256)
    arr = r.array
    assert arr.any()
    centers = F256.pixel_centers()
    xx, yy = np.meshgrid(centers, centers)
    d = np.hypot(xx - 250.0, yy - 250.0)
    on = d[arr == 1.0]
    assert on.min() >= 90.0 and on.max() <= 110.0


def test_filled_circle_area_matches_geometry():
    spec = TopographySpec("filled_circles", params={"radii_um": [100.0]})
    r = rasterize(spec, F256)
    assert machined_fraction(r) == pytest.approx(np.pi * 100.0 ** 2 / 500.0 ** 2, abs=0.01)


def test_glyphs_render_inside_frame():
    r = rasterize(TopographySpec("glyphs", width_um=10.0, params={"text": "AB 7"}), F256)
    arr = r.array
    assert arr.any()
    assert not arr[0, :].any() and not arr[-1, :].any()
    assert not arr[:, 0].any() and not arr[:, -1].any()
    with pytest.raises(ValueError, match="unsupported"):
        rasterize(TopographySpec("glyphs", params={"text": "A?"}), F256)
    with pytest.raises(ValueError, match="non-empty"):
        rasterize(TopographySpec("glyphs", params={"text": ""}), F256)


def test_curves_render_inside_frame():
    r = rasterize(TopographySpec("curves", width_um=20.0), F256)
    arr = r.array
    assert arr.any()
    assert not arr[0, :].any() and not arr[-1, :].any()


def test_compose_is_union_of_parts():
    parts = [TopographySpec("parallel_lines", 25.0, 90.0, 0.0),
             TopographySpec("filled_circles", params={"radii_um": [60.0]})]
    spec = TopographySpec("compose", parts=parts)
    arr = rasterize(spec, F256).array
    for part in parts:
        assert (arr >= rasterize(part, F256).array).all()
    assert machined_fraction(rasterize(spec, F256)) <= sum(
        machined_fraction(rasterize(p, F256)) for p in parts)


def test_antialiased_mode_gives_fractional_coverage():
    spec = TopographySpec("parallel_lines", 25.0, 90.0, 30.0)
    r = rasterize(spec, F256, mode="antialiased")
    arr = r.array
    assert arr.min() >= 0.0 and arr.max() <= 1.0
    assert ((arr > 0.0) & (arr < 1.0)).any()
    assert abs(machined_fraction(r) - 25.0 / 115.0) < 0.01
    with pytest.raises(ValueError, match="mode"):
        rasterize(spec, F256, mode="fancy")


def test_frame_validation():
    with pytest.raises(ValueError):
        FrameConfig(resolution=100)
    with pytest.raises(ValueError):
        FrameConfig(resolution=4)
    with pytest.raises(ValueError):
        FrameConfig(box_side_um=-1.0)
    assert F64.scale == pytest.approx(500.0 / 64)


def test_spec_validation():
    with pytest.raises(ValueError, match="unknown topography kind"):
        TopographySpec("zigzag")
    with pytest.raises(ValueError, match="unknown params"):
        TopographySpec("parallel_lines", params={"wobble": 3})
    with pytest.raises(ValueError, match="at least one part"):
        TopographySpec("compose")
    with pytest.raises(ValueError, match="unknown spec keys"):
        TopographySpec.from_dict({"kind": "blank", "color": "red"})
    with pytest.raises(ValueError):
        TopographySpec("parallel_lines", width_um=-1.0)


def test_png_round_trip_is_exact_for_binary(tmp_path):
    r = rasterize(TopographySpec("crossed_lines", 25.0, 90.0, 0.0), F256)
    path = tmp_path / "topo.png"
    save_raster_png(r, path)
    back = load_raster_png(path)
    assert back.frame.resolution == 256
    assert (back.array == r.array).all()


def test_specs_jsonl_round_trip(tmp_path):
    specs = [
        TopographySpec("blank"),
        TopographySpec("parallel_lines", 7.5, 30.0, 45.0),
        TopographySpec("glyphs", width_um=12.0, params={"text": "OK"}),
        TopographySpec("compose", parts=[
            TopographySpec("border_box", width_um=5.0),
            TopographySpec("concentric_circles", 10.0, 40.0),
        ]),
    ]
    path = tmp_path / "specs.jsonl"
    save_specs_jsonl(specs, path)
    assert load_specs_jsonl(path) == specs
