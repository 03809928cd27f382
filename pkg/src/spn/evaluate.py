"""Evaluate a trained network on an annotated split.

Metrics: classification accuracy, pointing accuracy (with the image-centre
baseline), CorLoc of mean-threshold boxes, and Object Energy of the
upscaled proposal maps. Ground-truth boxes are read only here.
"""

from __future__ import annotations

import json

import numpy as np

from spn.localization import (center_point, corloc, extract_bbox, object_energy, point_hit,
                              pointing_accuracy, pointing_hit, response_map, upscale_map)
from spn.network import Network, spn_forward

ALL_METRICS = ("cls", "pointing", "corloc", "energy")


def evaluate(net: Network, dataset, metrics=ALL_METRICS, tolerance_px: int = 3,
             iou_threshold: float = 0.5, batch: int = 50) -> dict:
    metrics = tuple(metrics)
    point_recs, center_recs, box_recs, energies = [], [], [], []
    correct = 0
    images = dataset.images()
    fc_w = net.params["fc.weight"]
    for start in range(0, len(images), batch):
        logits, cache = spn_forward(net, images[start:start + batch])
        for off, sample in enumerate(dataset.samples[start:start + batch]):
            h, w = sample.pixels.shape[:2]
            if net.spec.loss_mode == "softmax":
                correct += int(np.argmax(logits[off]) == sample.labels[0])
            else:
                correct += int(set(np.flatnonzero(logits[off] > 0)) == set(sample.labels))
            U, M = cache.features[off], cache.proposals[off]
            for cls in sample.labels:
                gts = [b for b in sample.boxes if b.class_id == cls]
                if not gts:
                    continue
                R = response_map(U, M, fc_w, cls)
                if "pointing" in metrics:
                    point_recs.append((cls, pointing_hit(R, (h, w), gts, tolerance_px)))
                    center_recs.append((cls, point_hit(center_point((h, w)), gts, tolerance_px)))
                if "corloc" in metrics:
                    box_recs.append((cls, extract_bbox(R, (h, w)), gts))
            if "energy" in metrics:
                energies.append(object_energy(upscale_map(M.data, h, w), sample.boxes))
    report = {"n_images": len(images)}
    if "cls" in metrics:
        report["cls_accuracy"] = correct / len(images)
    if "pointing" in metrics:
        report["pointing"] = pointing_accuracy(point_recs)
        report["pointing_center"] = pointing_accuracy(center_recs)
    if "corloc" in metrics:
        report["corloc"] = corloc(box_recs, iou_threshold)
    if "energy" in metrics:
        report["object_energy"] = float(np.mean(energies))
    return report


def report_lines(report: dict, class_names) -> list:
    """One JSON record per class and metric plus a mean record."""
    lines = []

    def emit(metric, value, cls=None):
        rec = {"metric": metric}
        if cls is None:
            rec["class"] = "mean"
        else:
            rec["class"] = int(cls)
            rec["name"] = class_names[cls] if cls < len(class_names) else str(cls)
        rec["value"] = round(float(value), 6)
        lines.append(json.dumps(rec))

    if "cls_accuracy" in report:
        emit("cls_accuracy", report["cls_accuracy"])
    for key in ("pointing", "pointing_center", "corloc"):
        if key in report:
            for cls, v in report[key]["per_class"].items():
                emit(key, v, cls)
            emit(key, report[key]["mean"])
    if "object_energy" in report:
        emit("object_energy", report["object_energy"])
    return lines
