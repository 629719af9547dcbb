"""Scene flow evaluation: EPE, strict/relaxed accuracy, angle error, class-normalized EPE."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .errors import LengthMismatch, MissingGroundTruth, MissingLabels

DYNAMIC_THRESHOLD = 0.05      # m/frame
OBJECT_SPEED_THRESHOLD = 0.5  # m/s
NEAR_ZERO = 1e-6
NORMALIZATION_FLOOR = 0.05    # m/frame


@dataclass
class FlowEval:
    count: int
    epe_mean: Optional[float] = None
    acc5: Optional[float] = None
    acc10: Optional[float] = None
    angle_error_mean: Optional[float] = None

    def to_json(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


@dataclass
class BucketedEval:
    per_class: dict[int, float]
    mdnEPE: Optional[float]

    def to_json(self) -> dict:
        out = {"per_class_dnEPE": {str(k): v for k, v in sorted(self.per_class.items())}}
        if self.mdnEPE is not None:
            out["mdnEPE"] = self.mdnEPE
        return out


def _as_flow(a, name: str) -> np.ndarray:
    if a is None:
        raise MissingGroundTruth(f"{name} is required")
    return np.asarray(a, dtype=np.float64).reshape(-1, 3)


def split_dynamic(gt_flow, threshold: float = DYNAMIC_THRESHOLD) -> np.ndarray:
    """Per-point dynamic mask: ground-truth motion strictly above ``threshold`` m/frame."""
    gt = _as_flow(gt_flow, "gt_flow")
    return np.linalg.norm(gt, axis=1) > threshold


def split_dynamic_by_object(gt_flow, object_ids, frame_dt: float = 0.1,
                            threshold: float = OBJECT_SPEED_THRESHOLD) -> np.ndarray:
    """Object-level labeling: all points of an object are dynamic when the
    object's mean motion exceeds ``threshold`` m/s. Negative ids are never dynamic.
    """
    gt = _as_flow(gt_flow, "gt_flow")
    ids = np.asarray(object_ids).reshape(-1)
    if len(ids) != len(gt):
        raise LengthMismatch("object ids and gt_flow differ in length")
    mask = np.zeros(len(gt), dtype=bool)
    for obj in np.unique(ids[ids >= 0]):
        sel = ids == obj
        speed = np.linalg.norm(gt[sel].mean(axis=0)) / frame_dt
        mask[sel] = speed > threshold
    return mask


def angle_errors(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Per-point angle between flows in radians.

    Uses atan2(|a x b|, a . b), which equals the arccos of the normalized dot
    product but stays exact for parallel vectors (the epsilon-guarded arccos
    reports ~sqrt(2e-9)/|gt| for a perfect prediction). Both vectors near
    zero gives 0, exactly one near zero gives pi/2.
    """
    pn = np.linalg.norm(pred, axis=1)
    gn = np.linalg.norm(gt, axis=1)
    cross = np.linalg.norm(np.cross(pred, gt), axis=1)
    ang = np.arctan2(cross, np.einsum("nd,nd->n", pred, gt))
    pz, gz = pn < NEAR_ZERO, gn < NEAR_ZERO
    ang[pz & gz] = 0.0
    ang[pz ^ gz] = np.pi / 2
    return ang


def eval_flow(pred, gt, mask=None) -> FlowEval:
    pred = _as_flow(pred, "pred")
    gt = _as_flow(gt, "gt_flow")
    if len(pred) != len(gt):
        raise LengthMismatch(f"{len(pred)} predicted flows for {len(gt)} ground-truth flows")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool).reshape(-1)
        if len(mask) != len(gt):
            raise LengthMismatch("mask length differs from flow length")
        pred, gt = pred[mask], gt[mask]
    n = len(gt)
    if n == 0:
        return FlowEval(0)
    epe = np.linalg.norm(pred - gt, axis=1)
    gn = np.linalg.norm(gt, axis=1)
    rel = np.divide(epe, gn, out=np.full(n, np.inf), where=gn > 0)
    acc5 = (epe < 0.05) | (rel < 0.05)
    acc10 = (epe < 0.1) | (rel < 0.1)
    return FlowEval(
        count=n,
        epe_mean=float(epe.mean()),
        acc5=float(acc5.mean()),
        acc10=float(acc10.mean()),
        angle_error_mean=float(angle_errors(pred, gt).mean()),
    )


def eval_bucketed(pred, gt, labels, dynamic_mask,
                  floor: float = NORMALIZATION_FLOOR) -> BucketedEval:
    """Per-class mean of EPE / max(|gt|, floor) over dynamic points, and its class mean."""
    pred = _as_flow(pred, "pred")
    gt = _as_flow(gt, "gt_flow")
    if labels is None:
        raise MissingLabels("class labels are required for bucketed evaluation")
    labels = np.asarray(labels).reshape(-1)
    dyn = np.asarray(dynamic_mask, dtype=bool).reshape(-1)
    if not (len(pred) == len(gt) == len(labels) == len(dyn)):
        raise LengthMismatch("pred, gt, labels and dynamic mask differ in length")
    epe = np.linalg.norm(pred - gt, axis=1)
    nepe = epe / np.maximum(np.linalg.norm(gt, axis=1), floor)
    per_class = {}
    for c in np.unique(labels[dyn]):
        sel = dyn & (labels == c)
        per_class[int(c)] = float(nepe[sel].mean())
    mdn = float(np.mean(list(per_class.values()))) if per_class else None
    return BucketedEval(per_class, mdn)
