"""Alignment scoring and minimum-separation sweeps.

A response image is reduced to connected components; each component's
orientation and elongation come from its second central moments (with the
1/12 pixel-extent correction, so one-pixel-thin shapes stay finite). A
component is "oriented" if its elongation reaches elong_min, and counts as
aligned when its major axis lies within cone_deg of the line direction.
The alignment fraction is aligned / oriented; images with too few oriented
components (day-0 round cells, near-blank frames) are flagged invalid
rather than scored.

A sweep renders line topographies over a separation ladder for each stroke
width, scores each image, and reports the smallest separation whose mean
fraction clears the aligned threshold. The recovered minimum separation is
the mean crossing over widths; a straight-line fit of crossing against
width exposes any width dependence (there should be none).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .grid import Grid
from .patterns import FrameConfig, TopographySpec, rasterize
from .stats import cell_mask


@dataclass
class AlignmentScore:
    valid: bool
    fraction: float            # nan when invalid
    n_components: int
    n_oriented: int
    n_aligned: int
    angles_deg: np.ndarray
    elongations: np.ndarray


def component_moments(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(angles_deg, elongations) of every 8-connected component."""
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    angles, elongs = [], []
    for sl in ndimage.find_objects(labels):
        sub = labels[sl]
        ys, xs = np.nonzero(sub)
        xs = xs.astype(np.float64)
        ys = ys.astype(np.float64)
        xs -= xs.mean()
        ys -= ys.mean()
        # 1/12 is the variance of a unit pixel, keeping thin shapes finite
        mxx = (xs * xs).mean() + 1.0 / 12.0
        myy = (ys * ys).mean() + 1.0 / 12.0
        mxy = (xs * ys).mean()
        half_sum = 0.5 * (mxx + myy)
        half_diff = math.hypot(0.5 * (mxx - myy), mxy)
        lam_hi = half_sum + half_diff
        lam_lo = max(half_sum - half_diff, 1e-12)
        angles.append(math.degrees(0.5 * math.atan2(2.0 * mxy, mxx - myy)) % 180.0)
        elongs.append(math.sqrt(lam_hi / lam_lo))
    return np.asarray(angles), np.asarray(elongs)


def _angle_dist(a, b):
    d = np.abs((np.asarray(a) - b) % 180.0)
    return np.minimum(d, 180.0 - d)


def alignment_score(img, line_angle_deg: float, *, frame: FrameConfig | None = None,
                    elong_min: float = 1.5, cone_deg: float = 20.0,
                    min_components: int = 3, tau: float = 0.25,
                    min_feature_um: float = 5.0) -> AlignmentScore:
    """Fraction of oriented components aligned with a line direction."""
    arr = img.data if isinstance(img, Grid) else np.asarray(img)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.dtype == bool:
        mask = arr
    else:
        mask = cell_mask(arr, frame, tau=tau, min_feature_um=min_feature_um)
    angles, elongs = component_moments(mask)
    oriented = elongs >= elong_min if len(elongs) else np.zeros(0, dtype=bool)
    n_oriented = int(oriented.sum())
    if n_oriented < min_components:
        return AlignmentScore(False, float("nan"), len(angles), n_oriented, 0,
                              angles, elongs)
    hits = _angle_dist(angles[oriented], line_angle_deg) <= cone_deg
    return AlignmentScore(True, float(hits.mean()), len(angles), n_oriented,
                          int(hits.sum()), angles, elongs)


def fit_line(xs, ys) -> tuple[float, float]:
    """Least-squares (slope, intercept) of y against x."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ValueError(f"fit_line needs equal 1-D arrays, got {xs.shape} and {ys.shape}")
    if xs.size < 2:
        raise ValueError("fit_line needs at least two points")
    dx = xs - xs.mean()
    sxx = float(dx @ dx)
    if sxx == 0.0:
        raise ValueError("fit_line needs at least two distinct x values")
    slope = float(dx @ (ys - ys.mean())) / sxx
    return slope, float(ys.mean() - slope * xs.mean())


# ---------------------------------------------------------------------------
# separation sweep


@dataclass(frozen=True)
class SweepConfig:
    widths_um: tuple = (7.5, 10.0, 12.0, 25.0)
    separations_um: tuple = (4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 20.0, 24.0, 28.0)
    line_angle_deg: float = 0.0
    day: int = 8
    density: float = 0.3
    n_reps: int = 3
    aligned_threshold: float = 0.6   # mean fraction that counts as guided
    seed: int = 0


@dataclass
class SweepResult:
    rows: list[dict] = field(default_factory=list)   # width, separation, fraction, n_valid
    crossings: dict = field(default_factory=dict)    # width -> separation or None
    recovered_separation_um: float = float("nan")    # mean crossing over widths
    fit: tuple[float, float] | None = None           # crossing vs width (slope, intercept)


def sweep_alignment(predict, cfg: SweepConfig | None = None, *,
                    frame: FrameConfig | None = None) -> SweepResult:
    """Recover the guidance threshold from a predictor.

    `predict(spec, day, density, seed) -> image` supplies response images;
    use oracle_predictor or model_predictor, or any callable with that
    shape. Per width, the crossing is the smallest ladder separation from
    which the mean alignment fraction stays above the threshold.
    """
    cfg = cfg or SweepConfig()
    frame = frame or FrameConfig()
    result = SweepResult()
    crossings = {}
    for w in cfg.widths_um:
        fractions = []
        for sep in cfg.separations_um:
            spec = TopographySpec("parallel_lines", w, sep, cfg.line_angle_deg)
            vals = []
            for rep in range(cfg.n_reps):
                seed = (cfg.seed * 1000003
                        + (int(w * 8) << 40) + (int(sep * 8) << 16) + rep) & 0x7FFFFFFFFFFF
                img = predict(spec, cfg.day, cfg.density, seed)
                score = alignment_score(img, cfg.line_angle_deg, frame=frame)
                if score.valid:
                    vals.append(score.fraction)
            mean_frac = float(np.mean(vals)) if vals else float("nan")
            fractions.append(mean_frac)
            result.rows.append({"width_um": w, "separation_um": sep,
                                "fraction": mean_frac, "n_valid": len(vals)})
        crossings[w] = _crossing(cfg.separations_um, fractions, cfg.aligned_threshold)
    result.crossings = crossings
    found = [c for c in crossings.values() if c is not None]
    if found:
        result.recovered_separation_um = float(np.mean(found))
    widths = [w for w, c in crossings.items() if c is not None]
    if len(set(widths)) >= 2:
        result.fit = fit_line(widths, [crossings[w] for w in widths])
    return result


def _crossing(separations, fractions, threshold):
    """Smallest separation from which the fraction stays at/above threshold."""
    above = [f >= threshold if np.isfinite(f) else False for f in fractions]
    crossing = None
    for sep, ok in zip(separations, above):
        if ok and crossing is None:
            crossing = sep
        elif not ok:
            crossing = None
    return crossing


def min_separation(predict, cfg: SweepConfig | None = None, *,
                   frame: FrameConfig | None = None) -> float:
    """Just the recovered threshold from sweep_alignment."""
    return sweep_alignment(predict, cfg, frame=frame).recovered_separation_um


# ---------------------------------------------------------------------------
# ready-made predictors


def oracle_predictor(*, frame: FrameConfig | None = None, rules=None):
    """Simulator-backed predictor (ground-truth calibration)."""
    from .oracle import OracleRules, simulate

    frame = frame or FrameConfig()
    rules = rules or OracleRules()

    def predict(spec, day, density, seed):
        raster = rasterize(spec, frame)
        return simulate(raster, day, density, rules=rules, seed=seed).render(frame)

    return predict


def model_predictor(gen, *, frame: FrameConfig | None = None):
    """Trained-generator predictor."""
    from .wnet import generate

    frame = frame or FrameConfig(resolution=gen.cfg.resolution)

    def predict(spec, day, density, seed):
        raster = rasterize(spec, frame)
        return generate(gen, raster, day, density, seed=seed).data[0]

    return predict
