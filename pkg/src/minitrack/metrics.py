"""One-pass evaluation metrics: precision vs center error, success vs IoU.

Conventions (fixed here because the benchmark protocol leaves them implicit):
precision counts frames with center error <= threshold; success counts frames
with IoU strictly greater than the threshold, so success(1.0) is 0 even for
perfect boxes and the all-perfect AUC is 50/51. Multi-sequence aggregates are
unweighted means of per-sequence curves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sampling import iou

PRECISION_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 51)


def center_errors(pred_boxes, gt_boxes) -> np.ndarray:
    pred = np.asarray(pred_boxes, dtype=np.float64)
    gt = np.asarray(gt_boxes, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"box list shapes differ: {pred.shape} vs {gt.shape}")
    pc = pred[:, :2] + pred[:, 2:] / 2.0
    gc = gt[:, :2] + gt[:, 2:] / 2.0
    return np.sqrt(((pc - gc) ** 2).sum(axis=1))


def precision_curve(pred_boxes, gt_boxes) -> tuple[np.ndarray, np.ndarray, float]:
    """(thresholds 0..50 px, fraction of frames with error <= t, precision@20)."""
    err = center_errors(pred_boxes, gt_boxes)
    if err.size == 0:
        raise ValueError("empty box lists")
    values = np.array([(err <= t).mean() for t in PRECISION_THRESHOLDS])
    return PRECISION_THRESHOLDS.copy(), values, float(values[20])


def success_auc(pred_boxes, gt_boxes) -> tuple[np.ndarray, np.ndarray, float]:
    """(thresholds 0..1, fraction of frames with IoU > t, mean of the curve)."""
    pred = np.asarray(pred_boxes, dtype=np.float64)
    gt = np.asarray(gt_boxes, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"box list shapes differ: {pred.shape} vs {gt.shape}")
    if pred.shape[0] == 0:
        raise ValueError("empty box lists")
    ious = np.array([iou(tuple(p), tuple(g)) for p, g in zip(pred, gt)])
    values = np.array([(ious > t).mean() for t in SUCCESS_THRESHOLDS])
    return SUCCESS_THRESHOLDS.copy(), values, float(values.mean())


@dataclass
class SequenceMetrics:
    name: str
    n_frames: int
    precision_values: np.ndarray
    precision_at_20: float
    success_values: np.ndarray
    auc: float
    attributes: list[str] = field(default_factory=list)


@dataclass
class MetricReport:
    overall_precision: np.ndarray
    precision_at_20: float
    overall_success: np.ndarray
    auc: float
    per_sequence: list[SequenceMetrics]
    per_attribute: dict[str, dict[str, float]]

    def to_dict(self) -> dict:
        return {
            "n_sequences": len(self.per_sequence),
            "precision_thresholds": PRECISION_THRESHOLDS.tolist(),
            "precision_curve": self.overall_precision.tolist(),
            "precision_at_20": self.precision_at_20,
            "success_thresholds": SUCCESS_THRESHOLDS.tolist(),
            "success_curve": self.overall_success.tolist(),
            "auc": self.auc,
            "per_sequence": {
                s.name: {
                    "n_frames": s.n_frames,
                    "precision_at_20": s.precision_at_20,
                    "auc": s.auc,
                    "attributes": sorted(s.attributes),
                }
                for s in self.per_sequence
            },
            "per_attribute": self.per_attribute,
        }


def evaluate_sequences(entries: list[dict]) -> MetricReport:
    """Aggregate metrics over sequences.

    Each entry: {"name", "pred_boxes", "gt_boxes", "attributes"}. Attribute
    slices average only the sequences carrying the tag.
    """
    if not entries:
        raise ValueError("no sequences to evaluate")
    per_seq = []
    for e in entries:
        _, pvals, p20 = precision_curve(e["pred_boxes"], e["gt_boxes"])
        _, svals, auc = success_auc(e["pred_boxes"], e["gt_boxes"])
        per_seq.append(
            SequenceMetrics(
                name=e["name"],
                n_frames=len(e["gt_boxes"]),
                precision_values=pvals,
                precision_at_20=p20,
                success_values=svals,
                auc=auc,
                attributes=list(e.get("attributes", [])),
            )
        )
    overall_p = np.mean([s.precision_values for s in per_seq], axis=0)
    overall_s = np.mean([s.success_values for s in per_seq], axis=0)

    per_attribute: dict[str, dict[str, float]] = {}
    tags = sorted({t for s in per_seq for t in s.attributes})
    for tag in tags:
        subset = [s for s in per_seq if tag in s.attributes]
        per_attribute[tag] = {
            "n_sequences": float(len(subset)),
            "precision_at_20": float(np.mean([s.precision_at_20 for s in subset])),
            "auc": float(np.mean([s.auc for s in subset])),
        }
    return MetricReport(
        overall_precision=overall_p,
        precision_at_20=float(overall_p[20]),
        overall_success=overall_s,
        auc=float(overall_s.mean()),
        per_sequence=per_seq,
        per_attribute=per_attribute,
    )
