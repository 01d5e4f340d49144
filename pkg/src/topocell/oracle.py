"""Synthetic cell-response simulator.

Generates ground-truth fluorescence-like images for a topography, culture
day and seeding density. The behavioral rules are simple and explicit so
that a learned predictor can be validated against a known data-generating
process:

  * adhesion: machined pixels attract cells with a fixed weight ratio over
    smooth ones, so the chance a cell sits on machined area is
    bias*f / (1 + (bias-1)*f) for machined fraction f
  * contact guidance: on line patterns whose realized edge-to-edge gap is
    at least theta_align_um, cells on the lines orient within a +/-10 deg
    cone of the line direction; off-line cells follow with a smaller
    probability; below the gap threshold (or on day 0) orientation is
    isotropic
  * growth: spreading radius and elongation increase with culture day
    while per-cell brightness drops as cells flatten
  * crowding: expected cell count is density * base capacity * a per-day
    expansion factor, with Poisson jitter

Each cell is rendered as a rotated anisotropic Gaussian blob; images are
accumulated and clipped to [0, 1].
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .fileio import atomic_write, save_png
from .patterns import (FrameConfig, TopographyRaster, TopographySpec,
                       rasterize, realized_line_geometry, save_raster_png)
from .seeds import DATASET, stream_seed

DAYS = (0, 1, 8, 30)

# every render lives in [BACKGROUND_LEVEL, CEILING_LEVEL]: real fluorescence
# neither reads exactly zero nor rails the camera, and targets that touch 0
# or 1 exactly invite a predictor to saturate its output range
BACKGROUND_LEVEL = 0.03
CEILING_LEVEL = 0.97


@dataclass(frozen=True)
class CellProfile:
    radius_um: float
    elongation: float
    brightness: float


def _default_profiles():
    return {
        0: CellProfile(8.0, 1.0, 0.95),
        1: CellProfile(10.0, 1.8, 0.80),
        8: CellProfile(12.0, 2.6, 0.65),
        30: CellProfile(14.0, 3.2, 0.55),
    }


def _default_expansion():
    return {0: 1.0, 1: 1.15, 8: 1.8, 30: 3.0}


@dataclass(frozen=True)
class OracleRules:
    adhesion_bias: float = 4.0          # machined : smooth per-pixel weight
    theta_align_um: float = 12.0        # minimum realized gap for guidance
    align_cone_deg: float = 10.0
    parallel_influence: float = 0.3     # off-line cells following the cone
    capacity_fill: float = 0.9          # packing efficiency at density 1
    day_profiles: dict = field(default_factory=_default_profiles)
    expansion: dict = field(default_factory=_default_expansion)

    def profile(self, day: int) -> CellProfile:
        if day not in self.day_profiles:
            raise ValueError(f"unknown culture day {day}; expected one of {sorted(self.day_profiles)}")
        return self.day_profiles[day]

    def base_capacity(self, frame: FrameConfig) -> int:
        r0 = self.day_profiles[0].radius_um
        return int(self.capacity_fill * frame.box_side_um ** 2 / (math.pi * r0 ** 2))

    def expected_count(self, day: int, density: float, frame: FrameConfig) -> float:
        self.profile(day)
        if not 0.0 <= density <= 1.0:
            raise ValueError(f"density must lie in [0, 1], got {density}")
        return density * self.base_capacity(frame) * self.expansion[day]


@dataclass
class CellSet:
    """Cells in physical coordinates, plus the condition they grew under."""

    x_um: np.ndarray
    y_um: np.ndarray
    angle_deg: np.ndarray
    elongation: np.ndarray
    radius_um: np.ndarray
    brightness: np.ndarray
    aligned: np.ndarray      # bool: orientation drawn from the guidance cone
    day: int = 0
    density: float = 0.0

    def __len__(self) -> int:
        return self.x_um.size

    @classmethod
    def empty(cls, day: int = 0, density: float = 0.0) -> "CellSet":
        z = np.zeros(0)
        return cls(z, z.copy(), z.copy(), z.copy(), z.copy(), z.copy(),
                   np.zeros(0, dtype=bool), day, density)

    # CSV columns are stable; aligned stored as 0/1
    _COLUMNS = ("x_um", "y_um", "angle_deg", "elongation", "radius_um",
                "brightness", "aligned")

    def to_csv(self, path) -> None:
        with atomic_write(path, "w") as fh:
            w = csv.writer(fh)
            w.writerow(self._COLUMNS)
            for i in range(len(self)):
                w.writerow([repr(float(self.x_um[i])), repr(float(self.y_um[i])),
                            repr(float(self.angle_deg[i])), repr(float(self.elongation[i])),
                            repr(float(self.radius_um[i])), repr(float(self.brightness[i])),
                            int(self.aligned[i])])

    @classmethod
    def from_csv(cls, path, day: int = 0, density: float = 0.0) -> "CellSet":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or tuple(rows[0]) != cls._COLUMNS:
            raise ValueError(f"unexpected cell CSV header in {path}")
        body = rows[1:]
        cols = list(zip(*body)) if body else [[]] * 7
        return cls(*(np.array([float(v) for v in cols[j]]) for j in range(6)),
                   np.array([bool(int(v)) for v in cols[6]], dtype=bool),
                   day, density)

    def render(self, frame: FrameConfig | None = None, *,
               background: float = BACKGROUND_LEVEL) -> np.ndarray:
        """Accumulated Gaussian blobs, (R, R) float in [0, 1].

        A small constant background mimics the nonzero floor of real
        fluorescence images, and dense overlaps rail at CEILING_LEVEL the
        way a camera rails below full scale. Percentile normalization
        downstream maps the pair back to [0, 1], but a predictor trained
        on these targets never has to drive its output into hard
        saturation to match empty or crowded regions.
        """
        frame = frame or FrameConfig()
        r = frame.resolution
        img = np.full((r, r), float(background))
        scale = frame.scale
        for i in range(len(self)):
            rad, e, b = self.radius_um[i], self.elongation[i], self.brightness[i]
            sa = rad * math.sqrt(e) / 2.0          # sigma along the major axis
            sb = rad / math.sqrt(e) / 2.0
            cx, cy = self.x_um[i], self.y_um[i]
            ext = 3.0 * sa
            j0 = max(0, int((cx - ext) / scale))
            j1 = min(r, int((cx + ext) / scale) + 1)
            i0 = max(0, int((cy - ext) / scale))
            i1 = min(r, int((cy + ext) / scale) + 1)
            if j0 >= j1 or i0 >= i1:
                continue
            xs = (np.arange(j0, j1) + 0.5) * scale - cx
            ys = (np.arange(i0, i1) + 0.5) * scale - cy
            dx, dy = np.meshgrid(xs, ys)
            a = math.radians(self.angle_deg[i])
            u = dx * math.cos(a) + dy * math.sin(a)
            v = -dx * math.sin(a) + dy * math.cos(a)
            img[i0:i1, j0:j1] += b * np.exp(-0.5 * ((u / sa) ** 2 + (v / sb) ** 2))
        return np.clip(img, 0.0, CEILING_LEVEL)


def _line_families(spec: TopographySpec, frame: FrameConfig, rules: OracleRules):
    """Line directions whose realized gap clears the guidance threshold."""
    if spec.kind == "parallel_lines":
        angle, sep = realized_line_geometry(spec, frame)
        return [angle] if sep >= rules.theta_align_um else []
    if spec.kind == "crossed_lines":
        base = TopographySpec("parallel_lines", spec.width_um, spec.separation_um,
                              spec.angle_deg)
        fams = _line_families(base, frame, rules)
        return fams + [(a + 90.0) % 180.0 for a in fams]
    if spec.kind == "compose":
        out = []
        for p in spec.parts:
            out.extend(_line_families(p, frame, rules))
        return out
    return []


def _wrap180(a):
    return np.mod(a, 180.0)


def simulate(spec: TopographySpec | TopographyRaster, day: int, density: float,
             *, frame: FrameConfig | None = None, rules: OracleRules | None = None,
             seed: int = 0, rng: np.random.Generator | None = None) -> CellSet:
    """Draw one simulated cell population for (topography, day, density)."""
    rules = rules or OracleRules()
    if isinstance(spec, TopographyRaster):
        raster, frame = spec, spec.frame
        spec = raster.spec
    else:
        frame = frame or FrameConfig()
        raster = rasterize(spec, frame)
    rng = rng if rng is not None else np.random.default_rng(seed)

    lam = rules.expected_count(day, density, frame)
    n = int(rng.poisson(lam)) if lam > 0 else 0
    if n == 0:
        return CellSet.empty(day, density)

    mask = raster.array >= 0.5
    w = np.where(mask, rules.adhesion_bias, 1.0).ravel()
    idx = rng.choice(mask.size, size=n, p=w / w.sum())
    on_machined = mask.ravel()[idx]
    r = frame.resolution
    jitter = rng.uniform(-0.5, 0.5, size=(n, 2))
    x = (idx % r + 0.5 + jitter[:, 0]) * frame.scale
    y = (idx // r + 0.5 + jitter[:, 1]) * frame.scale

    prof = rules.profile(day)
    radius = prof.radius_um * np.exp(rng.normal(0.0, 0.10, n))
    elong = np.maximum(1.0, prof.elongation + rng.normal(0.0, 0.1, n) * (prof.elongation - 1.0))
    bright = np.clip(prof.brightness + rng.normal(0.0, 0.04, n), 0.15, 1.0)

    families = _line_families(spec, frame, rules) if spec is not None else []
    angle = rng.uniform(0.0, 180.0, n)
    aligned = np.zeros(n, dtype=bool)
    if families and day != 0:
        follow = rng.uniform(size=n) < rules.parallel_influence
        aligned = on_machined | follow
        fam = np.asarray(families)[rng.integers(0, len(families), size=n)]
        cone = rng.uniform(-rules.align_cone_deg, rules.align_cone_deg, n)
        angle = np.where(aligned, _wrap180(fam + cone), angle)

    return CellSet(x, y, angle, elong, radius, bright, aligned, day, density)


# ---------------------------------------------------------------------------
# training corpus


_WIDTHS_UM = (7.5, 10.0, 12.0, 25.0)
_SEPS_UM = (8.0, 10.0, 12.0, 16.0, 20.0, 30.0, 50.0, 90.0, 120.0, 150.0)
_ANGLES = (0.0, 30.0, 45.0, 60.0, 90.0, 120.0, 135.0, 150.0)


def sample_training_spec(rng: np.random.Generator, frame: FrameConfig) -> TopographySpec:
    """One random topography from the training mix (blanks included)."""
    kind = str(rng.choice(
        ["parallel_lines", "crossed_lines", "concentric_circles",
         "filled_circles", "curves", "border_box", "blank"],
        p=[0.45, 0.15, 0.10, 0.05, 0.05, 0.05, 0.15]))
    # coarse frames make narrow strokes unresolvable; keep every draw legal
    floor_w = 0.5 * frame.scale
    w = max(float(rng.choice(_WIDTHS_UM)), floor_w)
    sep = float(rng.choice(_SEPS_UM))
    ang = float(rng.choice(_ANGLES))
    if kind == "blank":
        return TopographySpec("blank")
    if kind in ("parallel_lines", "crossed_lines"):
        return TopographySpec(kind, w, sep, ang)
    if kind == "concentric_circles":
        return TopographySpec(kind, max(w, 10.0, floor_w),
                              float(rng.choice([30.0, 50.0, 90.0])))
    if kind == "filled_circles":
        b = frame.box_side_um
        k = int(rng.integers(1, 4))
        radii = [float(rng.uniform(0.05 * b, 0.15 * b)) for _ in range(k)]
        centers = [[float(rng.uniform(0.2 * b, 0.8 * b)), float(rng.uniform(0.2 * b, 0.8 * b))]
                   for _ in range(k)]
        return TopographySpec(kind, params={"radii_um": radii, "centers_um": centers})
    if kind == "curves":
        return TopographySpec(kind, max(w, 10.0, floor_w))
    return TopographySpec("border_box", max(w, 10.0, floor_w))


def build_dataset(out_dir, n_images: int = 256, *,
                  frame: FrameConfig | None = None,
                  rules: OracleRules | None = None,
                  seed: int = 0,
                  days=DAYS,
                  density_range=(0.05, 0.6)) -> list[dict]:
    """Write a paired (topography, response) corpus plus a manifest.

    Files per record i: topo_%04d.png, cells_%04d.csv, target_%04d.png.
    Every record is reproducible from (seed, i) alone.
    """
    import os

    frame = frame or FrameConfig()
    rules = rules or OracleRules()
    os.makedirs(out_dir, exist_ok=True)
    ds_seed = stream_seed(seed, DATASET)
    records = []
    for i in range(n_images):
        rng = np.random.default_rng([ds_seed, i])
        spec = sample_training_spec(rng, frame)
        day = int(rng.choice(days))
        density = float(rng.uniform(*density_range))
        raster = rasterize(spec, frame)
        cells = simulate(raster, day, density, rules=rules, rng=rng)
        target = cells.render(frame)
        names = {k: f"{k}_{i:04d}.{'csv' if k == 'cells' else 'png'}"
                 for k in ("topo", "cells", "target")}
        save_raster_png(raster, os.path.join(out_dir, names["topo"]))
        cells.to_csv(os.path.join(out_dir, names["cells"]))
        save_png(os.path.join(out_dir, names["target"]), target)
        records.append({
            "index": i, "spec": spec.to_dict(), "day": day,
            "density": density, "seed": [ds_seed, i],
            "topography": names["topo"], "cells": names["cells"],
            "target": names["target"],
        })
    from .fileio import write_jsonl
    write_jsonl(f"{out_dir}/manifest.jsonl", records)
    return records


def load_manifest(out_dir) -> list[dict]:
    from .fileio import read_jsonl
    return read_jsonl(f"{out_dir}/manifest.jsonl")
