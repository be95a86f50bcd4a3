"""Input validation helpers shared across modules."""
from __future__ import annotations

import numbers

import numpy as np


class DyncomplexError(Exception):
    """Base class for all package errors."""


class StimulusError(DyncomplexError, ValueError):
    """Invalid stimulus parameters or malformed stimulus file."""


class ModelError(DyncomplexError, ValueError):
    """Invalid model input, parameters or state."""


class FitError(ModelError):
    """The decoding-parameter fit cannot be carried out."""


class ArenaError(DyncomplexError, ValueError):
    """Invalid arena geometry or robot state."""


def check_frame(frame, shape=None):
    """Return ``frame`` as a 2-D float64 array with values in [0, 1]."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise StimulusError(f"frame must be a non-empty 2-D array, got shape {arr.shape}")
    if shape is not None and arr.shape != tuple(shape):
        raise ModelError(f"frame shape {arr.shape} does not match expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise StimulusError("frame contains non-finite values")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise StimulusError(
            f"frame values must lie in [0, 1], got [{arr.min():.6g}, {arr.max():.6g}]"
        )
    return arr


def check_positive(name, value, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ModelError(f"{name} must be a finite real number, got {value!r}")
    if strict and not value > 0:
        raise ModelError(f"{name} must be > 0, got {value}")
    if not strict and not value >= 0:
        raise ModelError(f"{name} must be >= 0, got {value}")
    return float(value)
