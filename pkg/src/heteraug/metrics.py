"""Confusion matrices, IoU/F1 scores and corruption-averaged aggregates.

Scores are dataset-level: one confusion matrix per benchmark cell, not an
average of per-image scores. ``counts[g, p]`` counts pixels with ground truth
``g`` predicted as ``p``.
"""
import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ImageIOError, load_labels
from .corruptions import SEVERITIES, Corruption, Family, constants_digest

__all__ = [
    "IntegrityError",
    "ConfusionMatrix",
    "MetricGrid",
    "Report",
    "accumulate",
    "iou_per_class",
    "miou",
    "f1_per_class",
    "mean_f1",
    "aggregate_c",
    "evaluate_benchmark",
    "evaluate_predictor",
    "REPORT_SCHEMA",
    "ABSENT_F1",
]


class IntegrityError(RuntimeError):
    """Benchmark and predictions were produced under different schedules."""


class ConfusionMatrix:
    def __init__(self, num_classes, counts=None):
        self.num_classes = int(num_classes)
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if counts is None:
            counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)
        counts = np.asarray(counts, dtype=np.int64)
        if counts.shape != (self.num_classes, self.num_classes) or (counts < 0).any():
            raise ValueError("counts must be a non-negative num_classes x num_classes matrix")
        self.counts = counts

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        if other.num_classes != self.num_classes:
            raise ValueError("class count mismatch")
        return ConfusionMatrix(self.num_classes, self.counts + other.counts)

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and other.num_classes == self.num_classes
                and np.array_equal(self.counts, other.counts))

    def __repr__(self):
        return f"ConfusionMatrix(num_classes={self.num_classes}, total={self.total})"


def accumulate(cm, pred, gt, ignore_id=None):
    """Return a new matrix with the pixels of one (pred, gt) pair added."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    keep = np.ones(gt.shape, dtype=bool) if ignore_id is None else gt != ignore_id
    p, g = pred[keep].astype(np.int64), gt[keep].astype(np.int64)
    n = cm.num_classes
    for name, arr in (("prediction", p), ("ground truth", g)):
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise ValueError(f"{name} id out of range [0, {n})")
    counts = np.bincount(g * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(n, cm.counts + counts)


def _parts(cm):
    if cm.total == 0:
        raise ValueError("empty confusion matrix")
    c = cm.counts.astype(np.float64)
    tp = np.diag(c)
    fp = c.sum(axis=0) - tp
    fn = c.sum(axis=1) - tp
    return tp, fp, fn


def iou_per_class(cm):
    """Per-class IoU; NaN for classes absent from both prediction and truth."""
    tp, fp, fn = _parts(cm)
    denom = tp + fp + fn
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(denom > 0, tp / denom, np.nan)


def miou(cm):
    """Mean IoU over classes that occur in the prediction or the ground truth."""
    return float(np.nanmean(iou_per_class(cm)))


def f1_per_class(cm):
    """Per-class F1 with 0/0 taken as 0, and a mask of classes absent everywhere."""
    tp, fp, fn = _parts(cm)
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        rec = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f1 = np.where(prec + rec > 0, 2 * prec * rec / (prec + rec), 0.0)
    absent = (tp + fp + fn) == 0
    return f1, absent


ABSENT_F1 = ("zero", "exclude")


def mean_f1(cm, include_background=False, background=0, absent="zero"):
    """Mean per-class F1. Background is left out unless asked for.

    Classes absent from both truth and prediction score 0 (``absent="zero"``)
    or are dropped from the mean (``absent="exclude"``, as mIoU does).
    """
    if absent not in ABSENT_F1:
        raise ValueError(f"absent must be one of {ABSENT_F1}")
    f1, missing = f1_per_class(cm)
    keep = np.ones(cm.num_classes, bool)
    if not include_background:
        keep[background] = False
    if absent == "exclude":
        keep &= ~missing
    if not keep.any():
        raise ValueError("no classes left to average")
    return float(f1[keep].mean())


@dataclass
class MetricGrid:
    """Scores indexed by (corruption, severity); NaN marks an empty cell."""

    corruptions: list = field(default_factory=lambda: list(Corruption))
    severities: list = field(default_factory=lambda: list(SEVERITIES))
    scores: np.ndarray = None

    def __post_init__(self):
        self.corruptions = [Corruption(c) for c in self.corruptions]
        self.severities = [int(s) for s in self.severities]
        shape = (len(self.corruptions), len(self.severities))
        if self.scores is None:
            self.scores = np.full(shape, np.nan)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != shape:
            raise ValueError(f"scores must have shape {shape}")

    def set(self, corruption, severity, value):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"score {value} outside [0, 1]")
        i = self.corruptions.index(Corruption(corruption))
        j = self.severities.index(int(severity))
        self.scores[i, j] = value

    def get(self, corruption, severity):
        return float(self.scores[self.corruptions.index(Corruption(corruption)),
                                 self.severities.index(int(severity))])


def aggregate_c(grid):
    """Mean over corruptions of the mean over severities."""
    scores = grid.scores if isinstance(grid, MetricGrid) else np.asarray(grid, dtype=np.float64)
    if scores.ndim != 2 or scores.size == 0:
        raise ValueError("metric grid must be a non-empty 2-D table")
    if np.isnan(scores).any():
        i, j = np.argwhere(np.isnan(scores))[0]
        raise ValueError(f"metric grid cell ({i}, {j}) is not populated")
    return float(np.mean([np.mean(row) for row in scores]))


# ---------------------------------------------------------------------------
# benchmark evaluation


@dataclass
class Report:
    corruptions: list
    severities: list
    miou_grid: MetricGrid
    f1_grid: MetricGrid
    miou_c: float
    f1_c: float
    clean_miou: float = None
    clean_f1: float = None
    absent_classes: list = field(default_factory=list)
    num_classes: int = 0

    def per_corruption(self, grid=None):
        grid = grid or self.miou_grid
        return {c.value: float(np.mean(row)) for c, row in zip(grid.corruptions, grid.scores)}

    def per_family(self, grid=None):
        grid = grid or self.miou_grid
        out = {}
        for fam in Family:
            rows = [row for c, row in zip(grid.corruptions, grid.scores) if c.family is fam]
            if rows:
                out[fam.value] = float(np.mean(rows))
        return out

    def to_dict(self):
        cells = []
        for c in self.corruptions:
            for s in self.severities:
                cells.append({
                    "corruption": c.value,
                    "severity": s,
                    "miou": self.miou_grid.get(c, s),
                    "mf1": self.f1_grid.get(c, s),
                })
        return {
            "schema_version": 1,
            "num_classes": self.num_classes,
            "clean": {"miou": self.clean_miou, "mf1": self.clean_f1},
            "cells": cells,
            "per_corruption": {
                "miou": self.per_corruption(self.miou_grid),
                "mf1": self.per_corruption(self.f1_grid),
            },
            "per_family": {
                "miou": self.per_family(self.miou_grid),
                "mf1": self.per_family(self.f1_grid),
            },
            "miou_c": self.miou_c,
            "f1_c": self.f1_c,
            "absent_classes": sorted(self.absent_classes),
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["corruption", "severity", "mIoU", "mF1"])
        if self.clean_miou is not None:
            w.writerow(["clean", "", _fmt(self.clean_miou), _fmt(self.clean_f1)])
        for c in self.corruptions:
            for s in self.severities:
                w.writerow([c.value, s, _fmt(self.miou_grid.get(c, s)), _fmt(self.f1_grid.get(c, s))])
        pm, pf = self.per_corruption(self.miou_grid), self.per_corruption(self.f1_grid)
        for c in self.corruptions:
            w.writerow([c.value, "mean", _fmt(pm[c.value]), _fmt(pf[c.value])])
        fm, ff = self.per_family(self.miou_grid), self.per_family(self.f1_grid)
        for fam in fm:
            w.writerow([fam, "family", _fmt(fm[fam]), _fmt(ff[fam])])
        w.writerow(["corrupted_mean", "all", _fmt(self.miou_c), _fmt(self.f1_c)])
        return buf.getvalue()

    def to_table(self):
        """Single-row layout: clean | one column per corruption | mIoU_c."""
        names = [c.value for c in self.corruptions]
        headers = ["clean"] + names + ["mIoU_c"]
        pm = self.per_corruption()
        values = [self.clean_miou] + [pm[n] for n in names] + [self.miou_c]
        cells = ["-" if v is None else f"{v:.3f}" for v in values]
        widths = [max(len(h), len(c)) for h, c in zip(headers, cells)]
        line1 = " | ".join(h.rjust(w) for h, w in zip(headers, widths))
        line2 = " | ".join(c.rjust(w) for c, w in zip(cells, widths))
        return f"{line1}\n{'-' * len(line1)}\n{line2}\n"


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


REPORT_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["schema_version", "num_classes", "clean", "cells", "per_corruption",
                 "per_family", "miou_c", "f1_c", "absent_classes"],
    "properties": {
        "schema_version": {"const": 1},
        "num_classes": {"type": "integer", "minimum": 1},
        "clean": {
            "type": "object",
            "properties": {
                "miou": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
                "mf1": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
            },
        },
        "cells": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["corruption", "severity", "miou", "mf1"],
                "properties": {
                    "corruption": {"enum": [c.value for c in Corruption]},
                    "severity": {"type": "integer", "minimum": 1, "maximum": 5},
                    "miou": {"type": "number", "minimum": 0, "maximum": 1},
                    "mf1": {"type": "number", "minimum": 0, "maximum": 1},
                },
            },
        },
        "per_corruption": {"type": "object"},
        "per_family": {"type": "object"},
        "miou_c": {"type": "number", "minimum": 0, "maximum": 1},
        "f1_c": {"type": "number", "minimum": 0, "maximum": 1},
        "absent_classes": {"type": "array", "items": {"type": "integer"}},
    },
}


def check_digest(manifest, pred_dir=None):
    """Refuse to score when schedules or benchmark digests disagree."""
    if manifest.digest != constants_digest():
        raise IntegrityError(
            "benchmark was generated with a different corruption schedule "
            f"(manifest digest {manifest.digest[:12]}..., library {constants_digest()[:12]}...)"
        )
    if pred_dir is not None:
        stamp = Path(pred_dir) / "predictions.json"
        if stamp.is_file():
            meta = json.loads(stamp.read_text(encoding="utf-8"))
            if meta.get("benchmark_digest") != manifest.digest:
                raise IntegrityError(f"{stamp}: predictions belong to a different benchmark")


def evaluate_predictor(predict, manifest, predict_clean=None, ignore_id=None,
                       include_background_f1=False, absent_f1="zero"):
    """Score a benchmark given callables that return predicted label maps.

    ``predict(record, corruption, severity)`` and ``predict_clean(record)``
    receive :class:`~heteraug.pipeline.Record` objects. Ground truth comes
    from ``record.label`` resolved against the manifest root.
    """
    check_digest(manifest)
    n = manifest.num_classes
    corruptions, severities = manifest.corruptions, manifest.severities
    cells = {(c, s): ConfusionMatrix(n) for c in corruptions for s in severities}
    clean_cm = ConfusionMatrix(n) if predict_clean is not None else None
    for rec in manifest.records:
        gt = load_labels(manifest.resolve(rec.label))
        for c in corruptions:
            for s in severities:
                cells[c, s] = accumulate(cells[c, s], predict(rec, c, s), gt, ignore_id)
        if clean_cm is not None:
            clean_cm = accumulate(clean_cm, predict_clean(rec), gt, ignore_id)
    return _build_report(cells, clean_cm, manifest, include_background_f1, absent_f1)


def _build_report(cells, clean_cm, manifest, include_background_f1, absent_f1):
    corruptions, severities = manifest.corruptions, manifest.severities
    mg = MetricGrid(corruptions, severities)
    fg = MetricGrid(corruptions, severities)
    absent = set()
    for (c, s), cm in cells.items():
        mg.set(c, s, miou(cm))
        fg.set(c, s, mean_f1(cm, include_background_f1, absent=absent_f1))
        absent.update(int(i) for i in np.flatnonzero(f1_per_class(cm)[1]))
    report = Report(corruptions, severities, mg, fg, aggregate_c(mg), aggregate_c(fg),
                    absent_classes=sorted(absent), num_classes=manifest.num_classes)
    if clean_cm is not None:
        report.clean_miou = miou(clean_cm)
        report.clean_f1 = mean_f1(clean_cm, include_background_f1, absent=absent_f1)
    return report


def prediction_path(pred_dir, rec_id, corruption, severity):
    return Path(pred_dir) / Corruption(corruption).value / str(severity) / f"{rec_id}.png"


def evaluate_benchmark(pred_dir, manifest, clean_pred_dir=None, ignore_id=None,
                       include_background_f1=False, absent_f1="zero"):
    """Score predictions stored as ``pred_dir/<corruption>/<severity>/<id>.png``.

    Raises:
        IntegrityError: schedule or benchmark digest mismatch.
        FileNotFoundError: a prediction is missing; the message names the
            (image, corruption, severity) triple.
    """
    check_digest(manifest, pred_dir)

    def load(path, what):
        try:
            return load_labels(path)
        except ImageIOError as exc:
            raise FileNotFoundError(f"missing or unreadable prediction for {what}: {exc}") from exc

    def predict(rec, c, s):
        what = f"(image={rec.id}, corruption={c.value}, severity={s})"
        return load(prediction_path(pred_dir, rec.id, c, s), what)

    predict_clean = None
    if clean_pred_dir is not None:
        def predict_clean(rec):
            return load(Path(clean_pred_dir) / f"{rec.id}.png", f"(image={rec.id}, clean)")

    return evaluate_predictor(predict, manifest, predict_clean, ignore_id, include_background_f1,
                              absent_f1)
