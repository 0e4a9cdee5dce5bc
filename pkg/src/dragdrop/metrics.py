"""Pixel-, lesion-, and patient-level detection metrics and FROC analysis.

Undefined ratios (0/0) are reported as None and serialized as "undefined" --
except F1 with TP=0 and FP+FN>0, which the formula 2TP/(2TP+FN+FP) makes 0.

Lesion-level TN is the number of negative cases (no ground-truth lesion) that
produced zero predicted components; instance-level true negatives are not
countable per voxel, so lesion-level specificity is a per-negative-case
quantity and reports say so.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .components import connected_components


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise ValueError("confusion counts must be non-negative")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp,
            self.fp + other.fp,
            self.fn + other.fn,
            self.tn + other.tn,
        )


@dataclass(frozen=True)
class MatchCriterion:
    mode: str = "any_overlap"  # any_overlap | iou_threshold
    tau: float | None = None

    def __post_init__(self):
        if self.mode not in ("any_overlap", "iou_threshold"):
            raise ValueError(f"unknown match mode {self.mode!r}")
        if self.mode == "iou_threshold":
            if self.tau is None or not 0 < self.tau <= 1:
                raise ValueError("iou_threshold requires tau in (0, 1]")

    @classmethod
    def parse(cls, text: str) -> "MatchCriterion":
        if text == "any_overlap":
            return cls("any_overlap")
        if text.startswith("iou:"):
            return cls("iou_threshold", float(text[4:]))
        raise ValueError(f"cannot parse match criterion {text!r}")


def _ratio(num: int, den: int) -> float | None:
    return None if den == 0 else num / den


@dataclass(frozen=True)
class DetectionReport:
    level: str  # pixel | lesion | patient
    counts: ConfusionCounts
    sensitivity: float | None
    specificity: float | None
    precision: float | None
    f1: float | None
    dice: float | None = None  # pixel level only

    @classmethod
    def from_counts(cls, level: str, c: ConfusionCounts,
                    with_dice: bool = False) -> "DetectionReport":
        f1_den = 2 * c.tp + c.fn + c.fp
        return cls(
            level=level,
            counts=c,
            sensitivity=_ratio(c.tp, c.tp + c.fn),
            specificity=_ratio(c.tn, c.tn + c.fp),
            precision=_ratio(c.tp, c.tp + c.fp),
            f1=_ratio(2 * c.tp, f1_den),
            dice=_ratio(2 * c.tp, f1_den) if with_dice else None,
        )

    def as_dict(self) -> dict:
        def enc(v):
            return "undefined" if v is None else v

        d = {
            "level": self.level,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "tn": self.counts.tn,
            "sensitivity": enc(self.sensitivity),
            "specificity": enc(self.specificity),
            "precision": enc(self.precision),
            "f1": enc(self.f1),
        }
        d["dice"] = enc(self.dice) if self.level == "pixel" else ""
        return d


# ---------------------------------------------------------------------------
# pixel level

def pixel_metrics(
    pred: np.ndarray, gt: np.ndarray, ignore: np.ndarray | None = None
) -> DetectionReport:
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise ValueError(f"dims mismatch: pred {pred.shape} vs gt {gt.shape}")
    if ignore is not None:
        ignore = np.asarray(ignore, dtype=bool)
        if ignore.shape != pred.shape:
            raise ValueError(f"dims mismatch: ignore {ignore.shape}")
        keep = ~ignore
        pred, gt = pred[keep], gt[keep]
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    tn = int(np.count_nonzero(~pred & ~gt))
    return DetectionReport.from_counts(
        "pixel", ConfusionCounts(tp, fp, fn, tn), with_dice=True
    )


# ---------------------------------------------------------------------------
# lesion level

def _is_hit(pred_mask: np.ndarray, gt_mask: np.ndarray, crit: MatchCriterion) -> bool:
    inter = int(np.count_nonzero(pred_mask & gt_mask))
    if crit.mode == "any_overlap":
        return inter > 0
    union = int(np.count_nonzero(pred_mask | gt_mask))
    return union > 0 and inter / union >= crit.tau


def match_lesions(
    pred_labels: np.ndarray, gt_labels: np.ndarray, crit: MatchCriterion
) -> tuple[dict[int, list[int]], list[int]]:
    """Map each ground-truth lesion id to the predicted component ids that hit
    it, plus the predicted ids that hit nothing (false positives)."""
    pred_labels = np.asarray(pred_labels)
    gt_labels = np.asarray(gt_labels)
    pred_ids = [int(i) for i in np.unique(pred_labels) if i > 0]
    gt_ids = [int(i) for i in np.unique(gt_labels) if i > 0]
    hits: dict[int, list[int]] = {g: [] for g in gt_ids}
    matched_preds = set()
    for g in gt_ids:
        gmask = gt_labels == g
        for p in pred_ids:
            if _is_hit(pred_labels == p, gmask, crit):
                hits[g].append(p)
                matched_preds.add(p)
    unmatched = [p for p in pred_ids if p not in matched_preds]
    return hits, unmatched


@dataclass(frozen=True)
class Case:
    """One evaluation unit: instance-labeled prediction and ground truth."""

    pred_labels: np.ndarray
    gt_labels: np.ndarray

    @property
    def is_negative(self) -> bool:
        return not np.any(np.asarray(self.gt_labels) > 0)


def _relabel(mask_or_labels: np.ndarray, connectivity: int = 26) -> np.ndarray:
    lv, _ = connected_components(np.asarray(mask_or_labels) > 0, connectivity)
    return lv.labels


def lesion_counts(case: Case, crit: MatchCriterion) -> ConfusionCounts:
    pred = _relabel(case.pred_labels)
    gt = _relabel(case.gt_labels)
    hits, unmatched = match_lesions(pred, gt, crit)
    tp = sum(1 for g in hits if hits[g])
    fn = sum(1 for g in hits if not hits[g])
    fp = len(unmatched)
    tn = 1 if case.is_negative and pred.max(initial=0) == 0 else 0
    return ConfusionCounts(tp, fp, fn, tn)


def lesion_level_metrics(cases: list[Case], crit: MatchCriterion) -> DetectionReport:
    total = ConfusionCounts()
    for case in cases:
        total = total + lesion_counts(case, crit)
    return DetectionReport.from_counts("lesion", total)


def lesion_wise_validation_score(
    cases: list[Case], crit: MatchCriterion
) -> float:
    """Lesion-level F1 as a single validation scalar (0 when nothing is hit)."""
    rep = lesion_level_metrics(cases, crit)
    return 0.0 if rep.f1 is None else rep.f1


# ---------------------------------------------------------------------------
# patient level

def patient_level_metrics(cases: list[Case]) -> DetectionReport:
    c = ConfusionCounts()
    for case in cases:
        pred_pos = bool(np.any(np.asarray(case.pred_labels) > 0))
        gt_pos = not case.is_negative
        c = c + ConfusionCounts(
            tp=int(pred_pos and gt_pos),
            fp=int(pred_pos and not gt_pos),
            fn=int(not pred_pos and gt_pos),
            tn=int(not pred_pos and not gt_pos),
        )
    return DetectionReport.from_counts("patient", c)


# ---------------------------------------------------------------------------
# FROC

@dataclass
class FrocCurve:
    thresholds: list[float]  # descending
    fp_per_case: list[float]
    sensitivity: list[float]
    degenerate: bool = False
    levels: list[tuple[float, float]] = field(default_factory=list)  # (fp, sen)

    def as_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["threshold", "fp_per_case", "sensitivity"])
        for t, f, s in zip(self.thresholds, self.fp_per_case, self.sensitivity):
            w.writerow([repr(t), repr(f), repr(s)])
        return buf.getvalue()


def _local_maxima(conf: np.ndarray) -> np.ndarray:
    """26-connected local maxima: voxels not smaller than any neighbor."""
    foot = np.ones((3, 3, 3), dtype=bool)
    mx = ndimage.maximum_filter(conf, footprint=foot, mode="nearest")
    return conf >= mx


def froc(
    cases: list[tuple[np.ndarray, np.ndarray]],
    crit: MatchCriterion,
    levels: list[float] | None = None,
) -> FrocCurve:
    """Sweep the distinct local-maximum confidence scores from highest to
    lowest; at each threshold the predicted components are the connected
    components of {confidence >= threshold}."""
    scores: list[float] = []
    prepared = []
    for conf, gt_labels in cases:
        conf = np.asarray(conf, dtype=np.float64)
        if not np.all(np.isfinite(conf)):
            raise ValueError("confidence volume contains non-finite values")
        scores.extend(float(s) for s in np.unique(conf[_local_maxima(conf)]))
        prepared.append((conf, _relabel(gt_labels)))
    thresholds = sorted(set(scores), reverse=True)
    n_gt = sum(int(gt.max(initial=0)) for _, gt in prepared)
    fp_per_case: list[float] = []
    sens: list[float] = []
    for t in thresholds:
        tp = fp = 0
        for conf, gt in prepared:
            pred = _relabel(conf >= t)
            hits, unmatched = match_lesions(pred, gt, crit)
            tp += sum(1 for g in hits if hits[g])
            fp += len(unmatched)
        fp_per_case.append(fp / len(prepared))
        sens.append(tp / n_gt if n_gt else 0.0)
    curve = FrocCurve(
        thresholds=thresholds,
        fp_per_case=fp_per_case,
        sensitivity=sens,
        degenerate=len(thresholds) <= 1,
    )
    if levels:
        xs = list(reversed(fp_per_case))
        ys = list(reversed(sens))
        for lv in levels:
            curve.levels.append((lv, float(np.interp(lv, xs, ys))))
    return curve


# ---------------------------------------------------------------------------
# report output

def reports_to_json(reports: list[DetectionReport], extra: dict | None = None) -> str:
    doc = {"reports": [r.as_dict() for r in reports]}
    doc.update(extra or {})
    return json.dumps(doc, sort_keys=True, separators=(",", ":")) + "\n"


def reports_to_csv(reports: list[DetectionReport]) -> str:
    buf = io.StringIO()
    cols = ["level", "tp", "fp", "fn", "tn",
            "sensitivity", "specificity", "precision", "f1", "dice"]
    w = csv.DictWriter(buf, fieldnames=cols)
    w.writeheader()
    for r in reports:
        w.writerow(r.as_dict())
    return buf.getvalue()
