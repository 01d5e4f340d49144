"""Image comparison statistics.

The validation pipeline reduces a predicted and an observed image to
per-section occupancy and asks whether they co-locate more than chance
would allow:

    normalize -> threshold mask -> drop sub-cellular specks ->
    16 x 16 section occupancy -> one-sided hypergeometric overlap test

With N sections total, K occupied in one image, n in the other and k in
both, the p-value is P[X >= k] for X hypergeometric(N, K, n): the chance
that two independent random section sets of the same sizes would overlap
at least as much. Small N uses exact rational arithmetic; larger N moves
to log-space gamma functions; above ten thousand units the binomial
approximation is reported instead (and labeled as such).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage
from scipy.special import gammaln, logsumexp

from .patterns import FrameConfig

_EXACT_MAX_N = 512
_BINOMIAL_MIN_N = 10_000


# ---------------------------------------------------------------------------
# image reduction


def normalize_image(arr: np.ndarray) -> np.ndarray:
    """Map the 1st/99th intensity percentiles to 0/1 and clip.

    A constant image normalizes to all zeros rather than dividing by zero.
    """
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = np.percentile(arr, [1.0, 99.0])
    if hi <= lo:
        return np.zeros_like(arr)
    return np.clip((arr - lo) / (hi - lo), 0.0, 1.0)


def crop_resize(arr: np.ndarray, crop: int = 512, out: int = 256, *,
                offset: tuple[int, int] | None = None,
                rng: np.random.Generator | None = None,
                seed: int = 0):
    """Cut a crop x crop window from a micrograph and box-average to out x out.

    Returns (image, (row0, col0)). The window position is uniform random
    unless `offset` pins it.
    """
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D micrograph, got shape {arr.shape}")
    h, w = arr.shape
    if h < crop or w < crop:
        raise ValueError(f"image {arr.shape} smaller than crop window {crop}")
    if crop % out != 0:
        raise ValueError(f"crop {crop} is not a multiple of output size {out}")
    if offset is None:
        if rng is None:
            from .seeds import CROPPING, stream_seed
            rng = np.random.default_rng(stream_seed(seed, CROPPING))
        offset = (int(rng.integers(0, h - crop + 1)), int(rng.integers(0, w - crop + 1)))
    r0, c0 = offset
    if not (0 <= r0 <= h - crop and 0 <= c0 <= w - crop):
        raise ValueError(f"offset {offset} puts the window outside {arr.shape}")
    win = arr[r0:r0 + crop, c0:c0 + crop]
    k = crop // out
    return win.reshape(out, k, out, k).mean(axis=(1, 3)), (r0, c0)


def cell_mask(img: np.ndarray, frame: FrameConfig | None = None, *,
              tau: float = 0.25, min_feature_um: float = 5.0) -> np.ndarray:
    """Boolean cell-coverage mask.

    Thresholds the normalized image at `tau`, then discards connected
    components smaller than a disc of diameter `min_feature_um` (debris
    and single hot pixels, not cells).
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 3 and img.shape[0] == 1:
        img = img[0]
    frame = frame or FrameConfig(resolution=img.shape[0])
    mask = normalize_image(img) >= tau
    min_px = max(1, round(math.pi * (min_feature_um / 2.0) ** 2 / frame.scale ** 2))
    labels, n = ndimage.label(mask, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return mask
    sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=np.arange(1, n + 1))
    keep = np.flatnonzero(sizes >= min_px) + 1
    return np.isin(labels, keep)


def section_occupancy(mask: np.ndarray, sections: int = 16) -> np.ndarray:
    """(sections, sections) grid; a section is occupied if any pixel is set."""
    mask = np.asarray(mask, dtype=bool)
    r = mask.shape[0]
    if mask.shape != (r, r) or r % sections != 0:
        raise ValueError(f"mask {mask.shape} does not tile into {sections} sections")
    k = r // sections
    return mask.reshape(sections, k, sections, k).any(axis=(1, 3))


def permute_sections(occ: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random rearrangement of the occupancy grid (same count, new layout)."""
    flat = occ.ravel()
    return rng.permutation(flat).reshape(occ.shape)


# ---------------------------------------------------------------------------
# hypergeometric overlap test


def _check_hg(n_total, n_a, n_b, k):
    if not (0 <= n_a <= n_total and 0 <= n_b <= n_total):
        raise ValueError(f"occupancy counts ({n_a}, {n_b}) exceed total {n_total}")
    if k < 0:
        raise ValueError("overlap count must be non-negative")


def _support(n_total, n_a, n_b):
    return max(0, n_a + n_b - n_total), min(n_a, n_b)


def hypergeom_pmf(k: int, n_total: int, n_a: int, n_b: int) -> float:
    """P[X = k] overlapping sections, X hypergeometric."""
    _check_hg(n_total, n_a, n_b, k)
    lo, hi = _support(n_total, n_a, n_b)
    if not lo <= k <= hi:
        return 0.0
    if n_total <= _EXACT_MAX_N:
        num = math.comb(n_a, k) * math.comb(n_total - n_a, n_b - k)
        return float(Fraction(num, math.comb(n_total, n_b)))
    return float(np.exp(_log_pmf(np.array([k]), n_total, n_a, n_b)[0]))


def _log_comb(a, b):
    return gammaln(a + 1.0) - gammaln(b + 1.0) - gammaln(a - b + 1.0)


def _log_pmf(ks, n_total, n_a, n_b):
    return (_log_comb(n_a, ks) + _log_comb(n_total - n_a, n_b - ks)
            - _log_comb(n_total, n_b))


def hypergeom_tail(k: int, n_total: int, n_a: int, n_b: int) -> float:
    """P[X >= k]: the one-sided enrichment p-value."""
    _check_hg(n_total, n_a, n_b, k)
    lo, hi = _support(n_total, n_a, n_b)
    if k <= lo:
        return 1.0
    if k > hi:
        return 0.0
    if n_total <= _EXACT_MAX_N:
        denom = math.comb(n_total, n_b)
        num = sum(math.comb(n_a, j) * math.comb(n_total - n_a, n_b - j)
                  for j in range(k, hi + 1))
        return float(Fraction(num, denom))
    ks = np.arange(k, hi + 1, dtype=np.float64)
    return float(np.exp(logsumexp(_log_pmf(ks, n_total, n_a, n_b))))


def binomial_tail(k: int, n: int, p: float) -> float:
    """P[X >= k] for X ~ Binomial(n, p), in log space."""
    if k <= 0:
        return 1.0
    if k > n:
        return 0.0
    if p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    js = np.arange(k, n + 1, dtype=np.float64)
    logpmf = _log_comb(n, js) + js * math.log(p) + (n - js) * math.log1p(-p)
    return float(min(1.0, np.exp(logsumexp(logpmf))))


@dataclass(frozen=True)
class OverlapTest:
    n_total: int
    n_a: int
    n_b: int
    n_overlap: int
    p_value: float
    method: str


def overlap_test(occ_a: np.ndarray, occ_b: np.ndarray) -> OverlapTest:
    """One-sided co-location test between two occupancy grids."""
    a = np.asarray(occ_a, dtype=bool)
    b = np.asarray(occ_b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"occupancy shapes differ: {a.shape} vs {b.shape}")
    n_total = a.size
    n_a, n_b = int(a.sum()), int(b.sum())
    k = int((a & b).sum())
    if n_total > _BINOMIAL_MIN_N:
        p = binomial_tail(k, n_b, n_a / n_total) if n_b else 1.0
        method = "binomial"
    else:
        p = hypergeom_tail(k, n_total, n_a, n_b)
        method = "hypergeometric-exact" if n_total <= _EXACT_MAX_N else "hypergeometric-log"
    return OverlapTest(n_total, n_a, n_b, k, p, method)


# ---------------------------------------------------------------------------
# full comparison


@dataclass
class CompareResult:
    pred_mask: np.ndarray
    exp_mask: np.ndarray
    pred_occ: np.ndarray
    exp_occ: np.ndarray
    test: OverlapTest
    composite: np.ndarray     # (R, R, 3) uint8

    @property
    def p_value(self) -> float:
        return self.test.p_value


def composite_image(pred_mask: np.ndarray, exp_mask: np.ndarray) -> np.ndarray:
    """Color-coded agreement map: overlap green, prediction-only blue,
    observation-only red, background black."""
    r = pred_mask.shape[0]
    img = np.zeros((r, pred_mask.shape[1], 3), dtype=np.uint8)
    both = pred_mask & exp_mask
    img[pred_mask & ~both, 2] = 255
    img[exp_mask & ~both, 0] = 255
    img[both, 1] = 255
    return img


def _as_plane(img) -> np.ndarray:
    from .grid import Grid

    arr = img.data if isinstance(img, Grid) else np.asarray(img)
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"expected an image plane, got shape {arr.shape}")
    return arr


def compare(pred, exp, *, frame: FrameConfig | None = None, sections: int = 16,
            tau: float = 0.25, min_feature_um: float = 5.0,
            granularity: str = "sections") -> CompareResult:
    """Full predicted-vs-observed comparison.

    granularity "sections" tests 16 x 16 section occupancy (the default);
    "pixels" tests the raw masks, switching to the binomial approximation
    once the unit count passes ten thousand.
    """
    p_arr, e_arr = _as_plane(pred), _as_plane(exp)
    if p_arr.shape != e_arr.shape:
        raise ValueError(f"image shapes differ: {p_arr.shape} vs {e_arr.shape}")
    frame = frame or FrameConfig(resolution=p_arr.shape[0])
    pm = cell_mask(p_arr, frame, tau=tau, min_feature_um=min_feature_um)
    em = cell_mask(e_arr, frame, tau=tau, min_feature_um=min_feature_um)
    if granularity == "sections":
        po, eo = section_occupancy(pm, sections), section_occupancy(em, sections)
    elif granularity == "pixels":
        po, eo = pm, em
    else:
        raise ValueError(f"unknown granularity {granularity!r}")
    return CompareResult(pm, em, po, eo, overlap_test(po, eo),
                         composite_image(pm, em))
