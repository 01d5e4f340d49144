"""Deterministic seed derivation.

Every run owns one global seed; each consumer (dataset build, weight init,
shuffling, plane-C noise, cropping) draws from its own named stream so that
adding a consumer never perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

# canonical stream names used across the package
DATASET = "dataset"
INIT = "init"
TRAINING = "training"
PLANE_C = "plane-C"
CROPPING = "cropping"


def stream_seed(global_seed: int, purpose: str) -> int:
    """Derive a 63-bit stream seed from (global_seed, purpose)."""
    if not isinstance(global_seed, (int, np.integer)):
        raise TypeError(f"global_seed must be an int, got {type(global_seed).__name__}")
    digest = hashlib.sha256(f"{int(global_seed)}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & (2**63 - 1)


def stream_rng(global_seed: int, purpose: str) -> np.random.Generator:
    """Generator seeded from the named stream."""
    return np.random.default_rng(stream_seed(global_seed, purpose))
