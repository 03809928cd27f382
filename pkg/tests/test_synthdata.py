import json

import numpy as np
import pytest
from PIL import Image

from spn.errors import ConfigError, DatasetError
from spn.localization import Box
from spn.synthdata import (SHAPE_NAMES, SynthConfig, generate_dataset, load_dataset, make_sample,
                           save_dataset, shape_mask, validate_sample)


def small(**kw):
    base = dict(train_count=30, test_count=12, seed=3)
    base.update(kw)
    return SynthConfig(**base)


def same(a, b):
    assert len(a) == len(b)
    for s, t in zip(a.samples, b.samples):
        assert np.array_equal(s.pixels, t.pixels)
        assert s.labels == t.labels and s.boxes == t.boxes and s.distractors == t.distractors


def test_seed_determinism():
    a_train, a_test = generate_dataset(small())
    b_train, b_test = generate_dataset(small())
    same(a_train, b_train)
    same(a_test, b_test)
    c_train, _ = generate_dataset(small(seed=4))
    assert not np.array_equal(a_train.samples[0].pixels, c_train.samples[0].pixels)


def test_clean_case():
    train, _ = generate_dataset(small(clutter_level=0.0, co_occur_prob=0.0))
    for s in train.samples:
        px = s.pixels
        (box,) = s.boxes
        bg = px[0, 0] if not box.contains(0, 0) else px[-1, -1]
        differs = np.any(px != bg, axis=2)
        outside = np.ones(differs.shape, dtype=bool)
        outside[box.y0:box.y1, box.x0:box.x1] = False
        assert not differs[outside].any()
        rows, cols = np.flatnonzero(differs.any(axis=1)), np.flatnonzero(differs.any(axis=0))
        assert Box(int(cols[0]), int(rows[0]), int(cols[-1]) + 1, int(rows[-1]) + 1,
                   box.class_id) == box
        assert not s.distractors


def test_thousand_samples_pass_invariants():
    cfg = SynthConfig(train_count=700, test_count=300, seed=11)
    train, test = generate_dataset(cfg)
    for ds in (train, test):
        for s in ds.samples:
            validate_sample(s, cfg.class_count)
            assert s.pixels.shape == (32, 32, 3)
            assert s.pixels.min() >= 0 and s.pixels.max() <= 1
            assert np.array_equal(np.round(s.pixels * 255) / 255, s.pixels)
            for d in s.distractors:
                assert all(d.x1 <= b.x0 or b.x1 <= d.x0 or d.y1 <= b.y0 or b.y1 <= d.y0
                           for b in s.boxes)


def test_distractor_rate_follows_probability():
    train, _ = generate_dataset(SynthConfig(train_count=600, test_count=1, seed=2))
    rate = np.mean([bool(s.distractors) for s in train.samples])
    assert 0.44 < rate < 0.56


@pytest.mark.parametrize("count,classes", [(600, 3), (31, 3), (17, 5)])
def test_class_balance(count, classes):
    train, test = generate_dataset(SynthConfig(train_count=count, test_count=count + 1,
                                               class_count=classes, seed=0))
    for ds in (train, test):
        counts = np.bincount([s.labels[0] for s in ds.samples], minlength=classes)
        assert np.all(np.abs(counts - counts.mean()) <= 1)


def test_multi_label_mode():
    train, _ = generate_dataset(small(multi_label=True))
    for s in train.samples:
        assert len(s.labels) == 2 and s.labels[0] != s.labels[1]
        assert sorted(b.class_id for b in s.boxes) == list(s.labels)
    t = train.targets("sigmoid")[0]
    assert t.sum() == 2


def test_shape_masks_touch_all_sides():
    for kind in range(len(SHAPE_NAMES)):
        for size in (7, 9, 12):
            m = shape_mask(kind, size)
            assert m[0].any() and m[-1].any() and m[:, 0].any() and m[:, -1].any()


def test_placement_retry_limit():
    cfg = SynthConfig(image_size=16, min_shape=16, max_shape=16, co_occur_prob=1.0)
    with pytest.raises(DatasetError):
        make_sample(np.random.default_rng(0), cfg, [0])


@pytest.mark.parametrize("bad", [dict(image_size=8), dict(train_count=0), dict(class_count=6),
                                 dict(clutter_level=1.5), dict(min_shape=13, max_shape=12)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SynthConfig(**bad)


def test_save_load_roundtrip(tmp_path):
    train, _ = generate_dataset(small())
    save_dataset(train, tmp_path / "d")
    same(train, load_dataset(tmp_path / "d"))
    images = train.images()
    assert images.shape == (30, 3, 32, 32) and images.dtype == np.float64


def test_missing_image_names_file(tmp_path):
    train, _ = generate_dataset(small(train_count=3))
    save_dataset(train, tmp_path)
    (tmp_path / "images" / "00001.png").unlink()
    with pytest.raises(DatasetError, match="00001.png"):
        load_dataset(tmp_path)


def test_bad_records_report_line(tmp_path):
    train, _ = generate_dataset(small(train_count=3))
    save_dataset(train, tmp_path)
    lines = (tmp_path / "annotations.jsonl").read_text().splitlines()
    rec = json.loads(lines[2])
    rec["boxes"][0]["x1"] = 40
    (tmp_path / "annotations.jsonl").write_text("\n".join(lines[:2] + [json.dumps(rec)]) + "\n")
    with pytest.raises(DatasetError, match=r"annotations.jsonl:3"):
        load_dataset(tmp_path)
    (tmp_path / "annotations.jsonl").write_text(lines[0] + "\n{not json\n")
    with pytest.raises(DatasetError, match=r"annotations.jsonl:2"):
        load_dataset(tmp_path)


def test_missing_class_table(tmp_path):
    with pytest.raises(DatasetError, match="classes.json"):
        load_dataset(tmp_path)


def test_hand_written_fixture(tmp_path):
    (tmp_path / "images").mkdir()
    a = np.zeros((16, 16, 3), dtype=np.uint8)
    a[2:6, 3:9] = (255, 0, 0)
    b = np.full((16, 16, 3), 128, dtype=np.uint8)
    b[10:14, 0:4] = 7
    Image.fromarray(a).save(tmp_path / "images" / "b.png")
    Image.fromarray(b).save(tmp_path / "images" / "a.png")
    (tmp_path / "classes.json").write_text('{"0": "disc", "1": "square"}')
    (tmp_path / "annotations.jsonl").write_text(
        '{"file": "b.png", "labels": [0], "boxes": [{"x0": 3, "y0": 2, "x1": 9, "y1": 6, "class_id": 0}]}\n'
        '{"file": "a.png", "labels": [1], "boxes": [{"x0": 0, "y0": 10, "x1": 4, "y1": 14, "class_id": 1}],'
        ' "distractors": [{"x0": 8, "y0": 8, "x1": 12, "y1": 12, "class_id": 1}]}\n')
    ds = load_dataset(tmp_path)
    assert ds.file_names == ["a.png", "b.png"]
    assert ds.class_names == ["disc", "square"]
    first, second = ds.samples
    assert first.labels == (1,) and first.boxes == [Box(0, 10, 4, 14, 1)]
    assert first.distractors == [Box(8, 8, 12, 12, 1)]
    assert second.labels == (0,) and second.boxes == [Box(3, 2, 9, 6, 0)]
    assert first.pixels[0, 0, 0] == 128 / 255 and first.pixels[11, 2, 1] == 7 / 255
    assert np.array_equal(second.pixels[3, 4], [1.0, 0.0, 0.0])
    assert ds.targets() == [1, 0]
