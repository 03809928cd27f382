"""Class response maps and weakly supervised localization metrics.

Boxes use pixel coordinates with exclusive upper bounds: a box covers
columns ``x0 .. x1-1`` and rows ``y0 .. y1-1``. Maps are indexed ``[row, col]``.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from spn.errors import ConfigError, InputError


@dataclass(frozen=True)
class Box:
    x0: int
    y0: int
    x1: int
    y1: int
    class_id: int = 0

    def __post_init__(self):
        if not (self.x0 < self.x1 and self.y0 < self.y1):
            raise InputError(f"empty box {self}")

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)

    def within(self, height: int, width: int) -> bool:
        return self.x0 >= 0 and self.y0 >= 0 and self.x1 <= width and self.y1 <= height

    def contains(self, row: int, col: int, tolerance: int = 0) -> bool:
        return (self.x0 - tolerance <= col <= self.x1 - 1 + tolerance
                and self.y0 - tolerance <= row <= self.y1 - 1 + tolerance)

    def to_dict(self) -> dict:
        return {"x0": self.x0, "y0": self.y0, "x1": self.x1, "y1": self.y1,
                "class_id": self.class_id}


@dataclass(frozen=True)
class ResponseMap:
    data: np.ndarray
    class_id: int


def response_map(features, proposal, fc_weight, class_id: int) -> ResponseMap:
    """``R[i, j] = sum_k w[class_id, k] * U[k, i, j] * M[i, j]``.

    ``features`` are the maps entering the proposal layer (before coupling).
    """
    U = np.asarray(features, dtype=np.float64)
    M = getattr(proposal, "data", proposal)
    w = np.asarray(fc_weight, dtype=np.float64)
    if not 0 <= class_id < w.shape[0]:
        raise InputError(f"class {class_id} out of range for {w.shape[0]} classes")
    if w.shape[1] != U.shape[0]:
        raise InputError(f"fc weight {w.shape} does not match {U.shape[0]} feature maps")
    return ResponseMap(np.tensordot(w[class_id], U, axes=1) * M, class_id)


def upscale_map(m, height: int, width: int) -> np.ndarray:
    """Bilinear resize with corner-aligned sampling (corner pixels map to corner cells)."""
    m = np.asarray(m, dtype=np.float64)
    h0, w0 = m.shape
    if height < h0 or width < w0:
        raise ConfigError(f"cannot upscale {h0}x{w0} to smaller {height}x{width}")

    def coords(n_out, n_in):
        if n_out == 1 or n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
        lo = np.minimum(np.floor(pos).astype(int), n_in - 1)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, pos - lo

    r0, r1, fr = coords(height, h0)
    c0, c1, fc = coords(width, w0)
    top = m[r0][:, c0] * (1 - fc) + m[r0][:, c1] * fc
    bottom = m[r1][:, c0] * (1 - fc) + m[r1][:, c1] * fc
    return top * (1 - fr[:, None]) + bottom * fr[:, None]


def box_mask(boxes, height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        mask[max(b.y0, 0):b.y1, max(b.x0, 0):b.x1] = True
    return mask


def object_energy(energy, gt_boxes) -> float:
    """Share of the normalized energy map covered by the union of the boxes."""
    e = np.asarray(energy, dtype=np.float64)
    if np.any(e < 0):
        raise InputError("energy map must be non-negative")
    total = e.sum()
    if total <= 0:
        return 0.0
    inside = e[box_mask(gt_boxes, *e.shape)].sum()
    return float(min(inside / total, 1.0))


def energy_from_proposals(boxes, scores, height: int, width: int) -> np.ndarray:
    """Energy map of scored proposal boxes: each pixel sums the scores of boxes covering it."""
    e = np.zeros((height, width))
    for b, s in zip(boxes, scores):
        e[max(b.y0, 0):b.y1, max(b.x0, 0):b.x1] += s
    return e


def _argmax_pixel(m: np.ndarray) -> tuple[int, int]:
    # np.argmax returns the first maximum in row-major order
    r, c = np.unravel_index(int(np.argmax(m)), m.shape)
    return int(r), int(c)


def pointing_hit(response, image_size, gt_boxes, tolerance_px: int = 15):
    """Whether the peak of the upscaled response falls in a box (within tolerance).

    Returns ``None`` when there is no ground-truth box for the class: the image
    is then skipped rather than counted.
    """
    if not gt_boxes:
        return None
    h, w = _hw(image_size)
    data = getattr(response, "data", response)
    row, col = _argmax_pixel(upscale_map(data, h, w))
    return point_hit((row, col), gt_boxes, tolerance_px)


def point_hit(point, gt_boxes, tolerance_px: int) -> bool:
    row, col = point
    return any(b.contains(row, col, tolerance_px) for b in gt_boxes)


def center_point(image_size) -> tuple[int, int]:
    """Image-center guess used as the pointing baseline."""
    h, w = _hw(image_size)
    return h // 2, w // 2


def pointing_accuracy(records) -> dict:
    """Per-class ``hits / (hits + misses)`` and their mean.

    ``records`` is an iterable of ``(class_id, hit)``; ``hit is None`` entries
    are skipped.
    """
    hits, counts = defaultdict(int), defaultdict(int)
    for cls, hit in records:
        if hit is None:
            continue
        counts[cls] += 1
        hits[cls] += bool(hit)
    per_class = {c: hits[c] / counts[c] for c in sorted(counts)}
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return {"per_class": per_class, "mean": mean}


def extract_bbox(response, image_size, class_id: int | None = None) -> Box:
    """Tightest box around pixels strictly above the mean of the upscaled map."""
    h, w = _hw(image_size)
    data = getattr(response, "data", response)
    if class_id is None:
        class_id = getattr(response, "class_id", 0)
    up = upscale_map(data, h, w)
    fg = up > up.mean()
    if not fg.any():
        return Box(0, 0, w, h, class_id)
    rows = np.flatnonzero(fg.any(axis=1))
    cols = np.flatnonzero(fg.any(axis=0))
    return Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1, class_id)


def iou(a: Box, b: Box) -> float:
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def corloc(records, threshold: float = 0.5) -> dict:
    """Fraction of positive images whose box hits a ground truth at IoU >= threshold.

    ``records`` is an iterable of ``(class_id, predicted_box, gt_boxes)``, one
    per positive image and class. Classes without positives do not appear.
    """
    hits, counts = defaultdict(int), defaultdict(int)
    for cls, pred, gts in records:
        counts[cls] += 1
        hits[cls] += any(iou(pred, g) >= threshold for g in gts)
    per_class = {c: hits[c] / counts[c] for c in sorted(counts)}
    mean = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return {"per_class": per_class, "mean": mean}


def _hw(image_size) -> tuple[int, int]:
    if np.isscalar(image_size):
        return int(image_size), int(image_size)
    h, w = image_size[:2]
    return int(h), int(w)
