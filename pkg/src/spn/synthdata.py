"""Shapes-on-clutter images with image-level labels and evaluation boxes.

Every image holds one class-defining shape (two in multi-label mode) on a
noisy background. With probability ``co_occur_prob`` a striped patch whose
orientation depends on the class is painted outside the shape's box, so a
classifier can also pick up a co-occurring cue that is not the object.

On-disk layout of one split::

    <dir>/images/00000.png      8-bit RGB
    <dir>/annotations.jsonl     {"file", "labels", "boxes": [{x0,y0,x1,y1,class_id}]}
    <dir>/classes.json          {"0": "disc", ...}
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from spn.errors import ConfigError, DatasetError
from spn.localization import Box

SHAPE_NAMES = ("disc", "square", "triangle", "cross", "diamond")
MAX_RETRIES = 100
DISTRACTOR_AMPLITUDE = 0.15


@dataclass(frozen=True)
class SynthConfig:
    image_size: int = 32
    class_count: int = 3
    train_count: int = 600
    test_count: int = 150
    clutter_level: float = 0.5
    co_occur_prob: float = 0.5
    seed: int = 0
    multi_label: bool = False
    min_shape: int = 7
    max_shape: int = 12

    def __post_init__(self):
        if self.image_size < 16:
            raise ConfigError("image_size must be >= 16")
        if self.train_count < 1 or self.test_count < 1:
            raise ConfigError("train_count and test_count must be >= 1")
        if not 1 <= self.class_count <= len(SHAPE_NAMES):
            raise ConfigError(f"class_count must be in 1..{len(SHAPE_NAMES)}")
        if self.multi_label and self.class_count < 2:
            raise ConfigError("multi-label mode needs at least two classes")
        if not (0 <= self.clutter_level <= 1 and 0 <= self.co_occur_prob <= 1):
            raise ConfigError("clutter_level and co_occur_prob must lie in [0, 1]")
        if not 3 <= self.min_shape <= self.max_shape <= self.image_size:
            raise ConfigError("shape size range does not fit the image")


@dataclass
class AnnotatedSample:
    pixels: np.ndarray  # (H, W, 3) float64, multiples of 1/255
    labels: tuple
    boxes: list = field(default_factory=list)  # evaluation only
    distractors: list = field(default_factory=list)  # co-occurring patches, evaluation only

    def chw(self) -> np.ndarray:
        return np.ascontiguousarray(self.pixels.transpose(2, 0, 1))


@dataclass
class Dataset:
    samples: list
    class_names: list
    file_names: list = field(default_factory=list)

    def __len__(self):
        return len(self.samples)

    def images(self) -> np.ndarray:
        """All images as an (n, 3, H, W) float64 array."""
        return np.stack([s.chw() for s in self.samples])

    def targets(self, mode: str = "softmax") -> list:
        if mode == "softmax":
            return [s.labels[0] for s in self.samples]
        out = []
        for s in self.samples:
            t = np.zeros(len(self.class_names))
            t[list(s.labels)] = 1.0
            out.append(t)
        return out


def shape_mask(kind: int, size: int) -> np.ndarray:
    """Binary ``size x size`` mask of a shape that touches all four sides."""
    c = (size - 1) / 2.0
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    name = SHAPE_NAMES[kind]
    if name == "disc":
        m = (yy - c) ** 2 + (xx - c) ** 2 <= (size / 2.0) ** 2
    elif name == "square":
        m = np.ones((size, size), dtype=bool)
    elif name == "triangle":
        # apex at the top centre, base along the bottom row
        half = (yy + 1) / size * (size / 2.0)
        m = np.abs(xx - c) <= half
    elif name == "cross":
        t = max(size // 4, 1)
        lo = int(round(c - t / 2.0 + 0.5))
        m = np.zeros((size, size), dtype=bool)
        m[lo:lo + t + 1, :] = True
        m[:, lo:lo + t + 1] = True
    else:
        m = np.abs(yy - c) + np.abs(xx - c) <= size / 2.0
    return m


def _stripes(kind: int, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size]
    phase = (yy, xx, yy + xx, yy - xx, yy * xx)[kind % 5]
    return (phase // 2) % 2 == 0


def _background(rng, s: int, clutter: float) -> np.ndarray:
    base = rng.uniform(0.35, 0.65)
    img = np.full((s, s, 3), base)
    if clutter > 0:
        coarse = rng.uniform(-1, 1, (s // 4, s // 4, 3))
        blobs = np.kron(coarse, np.ones((4, 4, 1)))
        fine = rng.uniform(-1, 1, (s, s, 3))
        img = img + clutter * (0.25 * blobs + 0.15 * fine)
    return img


def _place(rng, s: int, size: int, avoid: list) -> tuple[int, int]:
    for _ in range(MAX_RETRIES):
        y, x = (int(v) for v in rng.integers(0, s - size + 1, size=2))
        cand = Box(x, y, x + size, y + size)
        if all(_disjoint(cand, a) for a in avoid):
            return y, x
    raise DatasetError(f"could not place a {size}px region after {MAX_RETRIES} attempts")


def _disjoint(a: Box, b: Box) -> bool:
    return a.x1 <= b.x0 or b.x1 <= a.x0 or a.y1 <= b.y0 or b.y1 <= a.y0


def _contrast_color(rng, background: float) -> np.ndarray:
    # keep the shape clearly separated from the mean background level
    if rng.random() < 0.5:
        return rng.uniform(0.0, max(background - 0.3, 0.05), 3)
    return rng.uniform(min(background + 0.3, 0.95), 1.0, 3)


def make_sample(rng, cfg: SynthConfig, classes) -> AnnotatedSample:
    s = cfg.image_size
    img = _background(rng, s, cfg.clutter_level)
    level = float(img.mean())
    boxes, occupied, distractors = [], [], []
    for cls in classes:
        size = int(rng.integers(cfg.min_shape, cfg.max_shape + 1))
        mask = shape_mask(cls, size)
        y, x = _place(rng, s, size, occupied)
        img[y:y + size, x:x + size][mask] = _contrast_color(rng, level)
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        box = Box(x + int(cols[0]), y + int(rows[0]), x + int(cols[-1]) + 1,
                  y + int(rows[-1]) + 1, int(cls))
        boxes.append(box)
        occupied.append(box)
    for cls in classes:
        if rng.random() < cfg.co_occur_prob:
            size = int(rng.integers(6, 9))
            y, x = _place(rng, s, size, occupied)
            # a low-contrast texture: context, not a second object
            sign = np.where(_stripes(cls, size), 1.0, -1.0)[..., None]
            img[y:y + size, x:x + size] += DISTRACTOR_AMPLITUDE * sign
            patch_box = Box(x, y, x + size, y + size, int(cls))
            occupied.append(patch_box)
            distractors.append(patch_box)
    u8 = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    return AnnotatedSample(u8.astype(np.float64) / 255.0, tuple(sorted(int(c) for c in classes)),
                          boxes, distractors)


def _split(rng, cfg: SynthConfig, count: int) -> Dataset:
    c = cfg.class_count
    primary = rng.permutation(np.arange(count) % c)
    samples = []
    for first in primary:
        classes = [int(first)]
        if cfg.multi_label:
            other = int(rng.integers(0, c - 1))
            classes.append(other + (other >= first))
        samples.append(make_sample(rng, cfg, classes))
    names = [f"{i:05d}.png" for i in range(count)]
    return Dataset(samples, list(SHAPE_NAMES[:c]), names)


def generate_dataset(cfg: SynthConfig) -> tuple[Dataset, Dataset]:
    """Deterministic ``(train, test)`` splits for ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    train = _split(rng, cfg, cfg.train_count)
    test = _split(rng, cfg, cfg.test_count)
    return train, test


def validate_sample(sample: AnnotatedSample, class_count: int) -> None:
    h, w = sample.pixels.shape[:2]
    for b in sample.boxes:
        if not b.within(h, w):
            raise DatasetError(f"box {b} outside {w}x{h} image")
        if b.class_id not in sample.labels:
            raise DatasetError(f"box class {b.class_id} not among labels {sample.labels}")
    for lab in sample.labels:
        if not 0 <= lab < class_count:
            raise DatasetError(f"label {lab} out of range")
        if not any(b.class_id == lab for b in sample.boxes):
            raise DatasetError(f"label {lab} has no box")
    for b in sample.distractors:
        if not b.within(h, w):
            raise DatasetError(f"distractor {b} outside {w}x{h} image")


def save_dataset(ds: Dataset, path) -> None:
    path = Path(path)
    (path / "images").mkdir(parents=True, exist_ok=True)
    names = ds.file_names or [f"{i:05d}.png" for i in range(len(ds))]
    with open(path / "annotations.jsonl", "w", encoding="utf-8") as fh:
        for name, s in zip(names, ds.samples):
            u8 = np.round(s.pixels * 255.0).astype(np.uint8)
            Image.fromarray(u8, mode="RGB").save(path / "images" / name)
            rec = {"file": name, "labels": list(s.labels), "boxes": [b.to_dict() for b in s.boxes]}
            if s.distractors:
                rec["distractors"] = [b.to_dict() for b in s.distractors]
            fh.write(json.dumps(rec) + "\n")
    with open(path / "classes.json", "w", encoding="utf-8") as fh:
        json.dump({str(i): n for i, n in enumerate(ds.class_names)}, fh, indent=1)


def _box(b: dict) -> Box:
    return Box(int(b["x0"]), int(b["y0"]), int(b["x1"]), int(b["y1"]), int(b["class_id"]))


def load_dataset(path) -> Dataset:
    path = Path(path)
    classes_file = path / "classes.json"
    ann_file = path / "annotations.jsonl"
    for f in (classes_file, ann_file):
        if not f.is_file():
            raise DatasetError(f"{f}: missing")
    try:
        raw = json.loads(classes_file.read_text(encoding="utf-8"))
        class_names = [raw[str(i)] for i in range(len(raw))]
    except (ValueError, KeyError) as exc:
        raise DatasetError(f"{classes_file}: malformed class table ({exc})") from None
    records = []
    with open(ann_file, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            where = f"{ann_file}:{lineno}"
            try:
                rec = json.loads(line)
                name = rec["file"]
                labels = tuple(int(v) for v in rec["labels"])
                boxes = [_box(b) for b in rec["boxes"]]
                distractors = [_box(b) for b in rec.get("distractors", [])]
            except (ValueError, KeyError, TypeError) as exc:
                raise DatasetError(f"{where}: malformed record ({exc})") from None
            img_path = path / "images" / name
            if not img_path.is_file():
                raise DatasetError(f"{where}: missing image file {img_path}")
            with Image.open(img_path) as im:
                u8 = np.asarray(im.convert("RGB"), dtype=np.uint8)
            sample = AnnotatedSample(u8.astype(np.float64) / 255.0, labels, boxes, distractors)
            try:
                validate_sample(sample, len(class_names))
            except DatasetError as exc:
                raise DatasetError(f"{where}: {exc}") from None
            records.append((name, sample))
    records.sort(key=lambda r: r[0])
    return Dataset([s for _, s in records], class_names, [n for n, _ in records])
