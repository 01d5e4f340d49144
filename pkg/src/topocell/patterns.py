"""Topography specs and their rasterization.

A spec describes machined geometry in physical micrometers inside a square
frame (default 500 um across, 256 px, so ~1.953 um/px). Rasters are binary
by default: machined pixels 1.0, smooth 0.0. An anti-aliased mode with
fractional edge coverage exists for display purposes.

Axis-aligned parallel lines snap stroke and period to whole pixels
(t = round(width/scale), P = round((width+separation)/scale)), so every
stripe is exactly t px thick and stripe starts are exactly P px apart; the
separation such a raster realizes is (P - t) * scale, which is what the
simulator responds to. All other geometry, including lines at oblique
angles, is sampled at pixel centers (center inside stroke -> machined).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write, load_png, read_jsonl, save_png, write_jsonl
from .grid import Grid

KINDS = (
    "blank",
    "parallel_lines",
    "crossed_lines",
    "concentric_circles",
    "filled_circles",
    "curves",
    "glyphs",
    "border_box",
    "compose",
)

# kinds whose geometry is a stroke of width_um
_STROKE_KINDS = {"parallel_lines", "crossed_lines", "concentric_circles",
                 "curves", "glyphs", "border_box"}

_PARAM_KEYS = {
    "concentric_circles": {"radii_um"},
    "filled_circles": {"radii_um", "centers_um"},
    "curves": {"points_um"},
    "glyphs": {"text"},
    "border_box": {"side_um"},
}


@dataclass(frozen=True)
class FrameConfig:
    """Square imaging frame: resolution in px and physical box side in um."""

    resolution: int = 256
    box_side_um: float = 500.0

    def __post_init__(self):
        r = self.resolution
        if r < 8 or (r & (r - 1)) != 0:
            raise ValueError(f"resolution must be a power of two >= 8, got {r}")
        if self.box_side_um <= 0:
            raise ValueError("box_side_um must be positive")

    @property
    def scale(self) -> float:
        """Micrometers per pixel."""
        s = self.box_side_um / self.resolution
        assert abs(self.resolution * s - self.box_side_um) <= 0.005 * self.box_side_um
        return s

    def pixel_centers(self):
        """1-D physical coordinates of pixel centers along one axis."""
        return (np.arange(self.resolution) + 0.5) * self.scale


@dataclass
class TopographySpec:
    """One machined motif; `compose` unions the rasters of its parts."""

    kind: str
    width_um: float = 25.0
    separation_um: float = 90.0
    angle_deg: float = 0.0
    params: dict = field(default_factory=dict)
    parts: list["TopographySpec"] = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown topography kind {self.kind!r}; expected one of {KINDS}")
        if self.kind != "compose" and self.parts:
            raise ValueError("only compose specs may carry parts")
        if self.kind == "compose" and not self.parts:
            raise ValueError("compose spec needs at least one part")
        if self.width_um <= 0 or self.separation_um < 0:
            raise ValueError("width_um must be positive and separation_um non-negative")
        allowed = _PARAM_KEYS.get(self.kind, set())
        unknown = set(self.params) - allowed
        if unknown:
            raise ValueError(f"unknown params for kind {self.kind!r}: {sorted(unknown)}")

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "width_um": self.width_um,
             "separation_um": self.separation_um, "angle_deg": self.angle_deg}
        if self.params:
            d["params"] = self.params
        if self.parts:
            d["parts"] = [p.to_dict() for p in self.parts]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TopographySpec":
        known = {"kind", "width_um", "separation_um", "angle_deg", "params", "parts"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec keys: {sorted(unknown)}")
        if "kind" not in d:
            raise ValueError("spec needs a 'kind'")
        parts = [cls.from_dict(p) for p in d.get("parts", [])]
        return cls(kind=d["kind"],
                   width_um=float(d.get("width_um", 25.0)),
                   separation_um=float(d.get("separation_um", 90.0)),
                   angle_deg=float(d.get("angle_deg", 0.0)),
                   params=dict(d.get("params", {})),
                   parts=parts)


@dataclass
class TopographyRaster:
    values: Grid                 # (1, R, R), machined=1 smooth=0
    frame: FrameConfig
    spec: TopographySpec | None = None

    @property
    def array(self) -> np.ndarray:
        return self.values.data[0]


# ---------------------------------------------------------------------------
# snapped geometry helpers


def snapped_line_px(width_um: float, separation_um: float, scale: float) -> tuple[int, int]:
    """(stroke px, period px) for axis-aligned lines."""
    t = max(1, int(round(width_um / scale)))
    p = max(t, int(round((width_um + separation_um) / scale)))
    return t, p


def realized_line_geometry(spec: TopographySpec, frame: FrameConfig):
    """(angle_deg, realized separation um) for a parallel_lines spec, else None.

    Axis-aligned lines realize the snapped gap (P - t) * scale; oblique
    lines realize the requested separation.
    """
    if spec.kind != "parallel_lines":
        return None
    angle = spec.angle_deg % 180.0
    if _is_axis_aligned(angle):
        t, p = snapped_line_px(spec.width_um, spec.separation_um, frame.scale)
        return angle, (p - t) * frame.scale
    return angle, spec.separation_um


def _is_axis_aligned(angle_deg: float) -> bool:
    return min(angle_deg % 90.0, 90.0 - angle_deg % 90.0) < 1e-9


# ---------------------------------------------------------------------------
# per-kind painters (binary, evaluated at arbitrary coordinate arrays)


def _paint_parallel_lines(spec, frame, xx, yy):
    c = frame.box_side_um / 2.0
    a = math.radians(spec.angle_deg)
    period = spec.width_um + spec.separation_um
    u = -(xx - c) * math.sin(a) + (yy - c) * math.cos(a)
    umod = np.mod(u + period / 2.0, period) - period / 2.0
    return np.abs(umod) <= spec.width_um / 2.0


def _snapped_lines_array(spec, frame) -> np.ndarray:
    """Pixel-snapped axis-aligned stripes, one stripe centered in the frame."""
    r = frame.resolution
    t, p = snapped_line_px(spec.width_um, spec.separation_um, frame.scale)
    idx = np.arange(r)
    start = (r - t) // 2
    stripe = ((idx - start) % p) < t
    horizontal = abs(spec.angle_deg % 180.0) < 1e-9  # angle 0: lines along x, vary over rows
    out = np.zeros((r, r), dtype=bool)
    if horizontal:
        out[stripe, :] = True
    else:
        out[:, stripe] = True
    return out


def _paint_concentric_circles(spec, frame, xx, yy):
    c = frame.box_side_um / 2.0
    radii = spec.params.get("radii_um")
    if radii is None:
        step = spec.width_um + spec.separation_um
        rmax = frame.box_side_um / 2.0 - spec.width_um / 2.0
        radii = [k * step for k in range(1, int(rmax / step) + 1)]
    if not radii:
        raise ValueError("concentric_circles: no radii fit in the frame")
    d = np.hypot(xx - c, yy - c)
    out = np.zeros(xx.shape, dtype=bool)
    for rad in radii:
        out |= np.abs(d - rad) <= spec.width_um / 2.0
    return out


def _paint_filled_circles(spec, frame, xx, yy):
    c = frame.box_side_um / 2.0
    radii = spec.params.get("radii_um", [frame.box_side_um / 6.0])
    centers = spec.params.get("centers_um", [[c, c]] * len(radii))
    if len(centers) != len(radii):
        raise ValueError("filled_circles: radii_um and centers_um lengths differ")
    out = np.zeros(xx.shape, dtype=bool)
    for (cx, cy), rad in zip(centers, radii):
        out |= np.hypot(xx - cx, yy - cy) <= rad
    return out


def _catmull_rom(points: np.ndarray, samples_per_seg: int = 48) -> np.ndarray:
    """Centripetal-free Catmull-Rom polyline through the control points."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise ValueError("curves: points_um must be a list of >= 2 [x, y] pairs")
    ext = np.vstack([2 * pts[0] - pts[1], pts, 2 * pts[-1] - pts[-2]])
    ts = np.linspace(0.0, 1.0, samples_per_seg, endpoint=False)
    chunks = []
    for i in range(len(pts) - 1):
        p0, p1, p2, p3 = ext[i], ext[i + 1], ext[i + 2], ext[i + 3]
        t, t2, t3 = ts[:, None], (ts ** 2)[:, None], (ts ** 3)[:, None]
        chunk = 0.5 * ((2 * p1) + (-p0 + p2) * t + (2 * p0 - 5 * p1 + 4 * p2 - p3) * t2
                       + (-p0 + 3 * p1 - 3 * p2 + p3) * t3)
        chunks.append(chunk)
    chunks.append(pts[-1:])
    return np.vstack(chunks)


def _default_curve_points(frame) -> list:
    b = frame.box_side_um
    return [[0.1 * b, 0.5 * b], [0.3 * b, 0.25 * b], [0.5 * b, 0.75 * b],
            [0.7 * b, 0.25 * b], [0.9 * b, 0.5 * b]]


def _paint_curves(spec, frame, xx, yy):
    points = spec.params.get("points_um", _default_curve_points(frame))
    poly = _catmull_rom(points)
    half = spec.width_um / 2.0
    p = np.stack([xx.ravel(), yy.ravel()], axis=1)
    dmin = np.full(p.shape[0], np.inf)
    for s0, s1 in zip(poly[:-1], poly[1:]):
        seg = s1 - s0
        L2 = float(seg @ seg)
        if L2 == 0.0:
            d = np.hypot(*(p - s0).T)
        else:
            tpar = np.clip(((p - s0) @ seg) / L2, 0.0, 1.0)
            proj = s0 + tpar[:, None] * seg
            d = np.hypot(*(p - proj).T)
        np.minimum(dmin, d, out=dmin)
    return (dmin <= half).reshape(xx.shape)


# 5x7 stroke font, rows top to bottom, bit 4 = leftmost column
_FONT = {
    "A": (0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "B": (0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110),
    "C": (0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110),
    "D": (0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110),
    "E": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111),
    "F": (0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000),
    "G": (0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111),
    "H": (0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001),
    "I": (0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "J": (0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100),
    "K": (0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001),
    "L": (0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111),
    "M": (0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001),
    "N": (0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001),
    "O": (0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110),
    "P": (0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000),
    "Q": (0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101),
    "R": (0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001),
    "S": (0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110),
    "T": (0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100),
    "U": (0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110),
    "V": (0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100),
    "W": (0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b11011, 0b10001),
    "X": (0b10001, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b10001),
    "Y": (0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100),
    "Z": (0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111),
    "0": (0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110),
    "1": (0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110),
    "2": (0b01110, 0b10001, 0b00001, 0b00010, 0b00100, 0b01000, 0b11111),
    "3": (0b11111, 0b00010, 0b00100, 0b00010, 0b00001, 0b10001, 0b01110),
    "4": (0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010),
    "5": (0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110),
    "6": (0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110),
    "7": (0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000),
    "8": (0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110),
    "9": (0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100),
    " ": (0, 0, 0, 0, 0, 0, 0),
}


def _paint_glyphs(spec, frame, xx, yy):
    text = str(spec.params.get("text", "TOPO")).upper()
    if not text:
        raise ValueError("glyphs: text must be non-empty")
    bad = [ch for ch in text if ch not in _FONT]
    if bad:
        raise ValueError(f"glyphs: unsupported characters {bad!r} (A-Z, 0-9, space)")
    cell = spec.width_um
    ncols = 6 * len(text) - 1  # 5 columns per glyph + 1 gap column
    total_w, total_h = ncols * cell, 7 * cell
    if total_w > frame.box_side_um or total_h > frame.box_side_um:
        raise ValueError(f"glyphs: text {text!r} at width {cell} um does not fit the frame")
    x0 = (frame.box_side_um - total_w) / 2.0
    y0 = (frame.box_side_um - total_h) / 2.0
    col = np.floor((xx - x0) / cell).astype(np.int64)
    row = np.floor((yy - y0) / cell).astype(np.int64)
    valid = (col >= 0) & (col < ncols) & (row >= 0) & (row < 7)
    out = np.zeros(xx.shape, dtype=bool)
    ch_idx = np.where(valid, col // 6, 0)
    in_col = np.where(valid, col % 6, 5)
    lut = np.zeros((len(text), 7, 6), dtype=bool)
    for k, ch in enumerate(text):
        for r, bits in enumerate(_FONT[ch]):
            for c in range(5):
                lut[k, r, c] = bool(bits & (1 << (4 - c)))
    out[valid] = lut[ch_idx[valid], row[valid].clip(0, 6), in_col[valid]]
    return out


def _paint_border_box(spec, frame, xx, yy):
    side = spec.params.get("side_um", frame.box_side_um)
    if side > frame.box_side_um:
        raise ValueError("border_box: side_um exceeds the frame")
    c = frame.box_side_um / 2.0
    d = np.maximum(np.abs(xx - c), np.abs(yy - c))
    return (d <= side / 2.0) & (d >= side / 2.0 - spec.width_um)


_PAINTERS = {
    "concentric_circles": _paint_concentric_circles,
    "filled_circles": _paint_filled_circles,
    "curves": _paint_curves,
    "glyphs": _paint_glyphs,
    "border_box": _paint_border_box,
}


def _render_binary(spec: TopographySpec, frame: FrameConfig, xx, yy) -> np.ndarray:
    if spec.kind == "blank":
        return np.zeros(xx.shape, dtype=bool)
    if spec.kind == "compose":
        out = np.zeros(xx.shape, dtype=bool)
        for part in spec.parts:
            out |= _render_binary(part, frame, xx, yy)
        return out
    if spec.kind == "parallel_lines":
        return _paint_parallel_lines(spec, frame, xx, yy)
    if spec.kind == "crossed_lines":
        a = _paint_parallel_lines(spec, frame, xx, yy)
        rot = TopographySpec("parallel_lines", spec.width_um, spec.separation_um,
                             spec.angle_deg + 90.0)
        return a | _paint_parallel_lines(rot, frame, xx, yy)
    return _PAINTERS[spec.kind](spec, frame, xx, yy)


def _check_stroke_widths(spec: TopographySpec, frame: FrameConfig) -> None:
    if spec.kind == "compose":
        for part in spec.parts:
            _check_stroke_widths(part, frame)
        return
    if spec.kind in _STROKE_KINDS and spec.width_um < 0.5 * frame.scale:
        raise ValueError(
            f"sub-pixel stroke: width {spec.width_um} um < half a pixel "
            f"({frame.scale:.4g} um/px) for kind {spec.kind!r}")
    if spec.kind == "filled_circles":
        radii = spec.params.get("radii_um", [frame.box_side_um / 6.0])
        if min(radii) < 0.5 * frame.scale:
            raise ValueError("sub-pixel circle radius")


def _snapped_axis_lines(spec: TopographySpec, frame: FrameConfig):
    """Pixel-snapped array when every line family in `spec` is axis-aligned."""
    if spec.kind == "parallel_lines" and _is_axis_aligned(spec.angle_deg):
        return _snapped_lines_array(spec, frame)
    if spec.kind == "crossed_lines" and _is_axis_aligned(spec.angle_deg):
        a = _snapped_lines_array(
            TopographySpec("parallel_lines", spec.width_um, spec.separation_um,
                           spec.angle_deg % 180.0), frame)
        b = _snapped_lines_array(
            TopographySpec("parallel_lines", spec.width_um, spec.separation_um,
                           (spec.angle_deg + 90.0) % 180.0), frame)
        return a | b
    return None


def rasterize(spec: TopographySpec, frame: FrameConfig | None = None,
              mode: str = "binary") -> TopographyRaster:
    """Render a spec to a (1, R, R) raster in [0, 1].

    mode="binary" (default): machined pixels exactly 1.0. Axis-aligned line
    families snap to whole pixels; everything else samples pixel centers.
    mode="antialiased": 4x4 supersampled fractional coverage, no snapping.
    """
    frame = frame or FrameConfig()
    if mode not in ("binary", "antialiased"):
        raise ValueError(f"unknown rendering mode {mode!r}")
    _check_stroke_widths(spec, frame)
    r = frame.resolution

    if mode == "antialiased":
        sub = 4
        step = frame.scale / sub
        coords = (np.arange(r * sub) + 0.5) * step
        xx, yy = np.meshgrid(coords, coords)
        fine = _render_binary(spec, frame, xx, yy).astype(np.float64)
        arr = fine.reshape(r, sub, r, sub).mean(axis=(1, 3))
        return TopographyRaster(Grid(arr[None]), frame, spec)

    centers = frame.pixel_centers()
    xx, yy = np.meshgrid(centers, centers)

    def render(s: TopographySpec) -> np.ndarray:
        if s.kind in ("parallel_lines", "crossed_lines") and _is_axis_aligned(s.angle_deg):
            return _snapped_axis_lines(s, frame)
        if s.kind == "compose":
            out = np.zeros((r, r), dtype=bool)
            for part in s.parts:
                out |= render(part)
            return out
        return _render_binary(s, frame, xx, yy)

    arr = render(spec).astype(np.float64)
    return TopographyRaster(Grid(arr[None]), frame, spec)


def machined_fraction(raster: TopographyRaster) -> float:
    """Fraction of the frame that is machined (area-weighted when fractional)."""
    return float(raster.array.mean())


# ---------------------------------------------------------------------------
# I/O


def save_raster_png(raster: TopographyRaster, path) -> None:
    """8-bit grayscale PNG, 0 = smooth, 255 = machined; exact for binary rasters."""
    save_png(path, raster.array)


def load_raster_png(path, frame: FrameConfig | None = None,
                    spec: TopographySpec | None = None) -> TopographyRaster:
    arr = load_png(path)
    if arr.shape[0] != arr.shape[1]:
        raise ValueError(f"topography PNG must be square, got {arr.shape}")
    if frame is None:
        frame = FrameConfig(resolution=arr.shape[0])
    elif frame.resolution != arr.shape[0]:
        raise ValueError(f"PNG size {arr.shape[0]} != frame resolution {frame.resolution}")
    return TopographyRaster(Grid(arr[None]), frame, spec)


def save_specs_jsonl(specs: list[TopographySpec], path) -> None:
    write_jsonl(path, [s.to_dict() for s in specs])


def load_specs_jsonl(path) -> list[TopographySpec]:
    return [TopographySpec.from_dict(d) for d in read_jsonl(path)]
