"""Grayscale PNG and CSV output for 2-D maps."""

from __future__ import annotations

import numpy as np
from PIL import Image

from spn.errors import InputError
from spn.localization import upscale_map


def normalize(m) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes 0.5 everywhere."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)):
        raise InputError("map contains non-finite values")
    lo, hi = m.min(), m.max()
    if hi == lo:
        return np.full(m.shape, 0.5)
    return (m - lo) / (hi - lo)


def emit_heatmap(m, path, size=None, csv_path=None) -> np.ndarray:
    """Write ``m`` as an 8-bit grayscale PNG, optionally upscaled to ``size`` (h, w).

    When ``csv_path`` is given the raw (not normalized, not upscaled) values
    are written there with enough digits to round-trip exactly. Returns the
    uint8 image that was written.
    """
    m = np.asarray(m, dtype=np.float64)
    img = normalize(m)
    if size is not None:
        h, w = (size, size) if np.isscalar(size) else size
        img = upscale_map(img, int(h), int(w))
    u8 = np.round(img * 255.0).astype(np.uint8)
    Image.fromarray(u8, mode="L").save(path)
    if csv_path is not None:
        np.savetxt(csv_path, m, delimiter=",", fmt="%.17g")
    return u8


def read_csv_map(path) -> np.ndarray:
    return np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=np.float64))
