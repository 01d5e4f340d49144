"""topocell: predicting stem cell growth on laser-machined surface topographies.

The package is organized as a small numpy library:

    grid      dense float64 tensors, reverse-mode autodiff, conv primitives
    patterns  topography specs and binary rasterization
    oracle    synthetic cell-response simulator (ground-truth generator)
    wnet      W-Net generator / convolutional discriminator
    trainer   adversarial + reconstruction training loop, checkpoints
    stats     masking, section occupancy, exact hypergeometric overlap test
    sweep     alignment metric, minimum-separation sweep, trend fit
    cli       command-line front end (also `python -m topocell`)
"""

from .grid import Grid, Tape, backward
from .patterns import FrameConfig, TopographySpec, TopographyRaster, rasterize
from .oracle import OracleRules, CellSet, simulate, build_dataset
from .wnet import NetConfig, build_generator, build_discriminator, assemble_input, generate
from .trainer import TrainConfig, train, save_checkpoint, load_checkpoint
from .stats import (
    normalize_image,
    crop_resize,
    cell_mask,
    section_occupancy,
    hypergeom_pmf,
    hypergeom_tail,
    compare,
)
from .sweep import SweepConfig, alignment_score, min_separation, fit_line

__version__ = "0.1.0"

__all__ = [
    "Grid", "Tape", "backward",
    "FrameConfig", "TopographySpec", "TopographyRaster", "rasterize",
    "OracleRules", "CellSet", "simulate", "build_dataset",
    "NetConfig", "build_generator", "build_discriminator", "assemble_input", "generate",
    "TrainConfig", "train", "save_checkpoint", "load_checkpoint",
    "normalize_image", "crop_resize", "cell_mask", "section_occupancy",
    "hypergeom_pmf", "hypergeom_tail", "compare",
    "SweepConfig", "alignment_score", "min_separation", "fit_line",
    "__version__",
]
