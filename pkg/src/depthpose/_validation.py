"""Input validation helpers shared by the public functions and estimators."""

import numbers

import numpy as np

from .exceptions import DimensionError


def check_image(img, name="image"):
    img = np.asarray(img, dtype=float)
    if img.ndim not in (2, 3) or (img.ndim == 3 and img.shape[2] not in (1, 3)):
        raise DimensionError(f"{name} must be (H, W) or (H, W, 3), got {img.shape}")
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[..., 0]
    if not np.all(np.isfinite(img)):
        raise ValueError(f"{name} contains non-finite values")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return img


def check_depth_map(depth, name="depth"):
    depth = np.asarray(depth, dtype=float)
    if depth.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got {depth.shape}")
    if not np.all(np.isfinite(depth)) or np.any(depth <= 0):
        raise ValueError(f"{name} must be finite and strictly positive")
    return depth


def check_same_shape(*arrays, names=None):
    shapes = {np.shape(a)[:2] for a in arrays}
    if len(shapes) > 1:
        label = ", ".join(names) if names else "inputs"
        raise DimensionError(f"{label} have mismatched shapes {sorted(shapes)}")


def check_fraction(x, name, low_open=False, low=0.0, high=1.0):
    if not isinstance(x, numbers.Real) or not np.isfinite(x):
        raise ValueError(f"{name} must be a finite real number")
    bad_low = x <= low if low_open else x < low
    if bad_low or x > high:
        raise ValueError(f"{name}={x} outside the allowed range")
    return float(x)


def check_positive_int(x, name, minimum=1):
    if isinstance(x, bool) or not isinstance(x, numbers.Integral) or x < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {x!r}")
    return int(x)
