"""Arithmetic cores of the evaluation metrics.

Detector outputs are inputs here: grounding quality is the mean IoU between
predicted and ground-truth boxes keyed by (ref_id, frame) over keyframes,
and cut placement is scored by optimally aligning predicted transition
frames to ground truth in order and averaging the frame error, with a
configurable penalty for unmatched transitions on either side.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class DetBox:
    """Detected or ground-truth box of reference `ref_id` at `frame`."""

    ref_id: int
    frame: int
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError(
                f"degenerate box ({self.x1}, {self.y1}, {self.x2}, {self.y2})"
            )

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)


def iou(a: DetBox, b: DetBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def _keyed(boxes, label):
    out = {}
    for box in boxes:
        key = (box.ref_id, box.frame)
        if key in out:
            raise ValueError(
                f"duplicate {label} box for ref {box.ref_id} at frame "
                f"{box.frame}"
            )
        out[key] = box
    return out


def grounding_miou(pred, gt, keyframes) -> float:
    """Mean IoU over ground-truth (ref_id, frame) pairs at the keyframes.

    A ground-truth pair with no matching prediction contributes 0, so
    dropping hard subjects cannot inflate the score.
    """
    frames = set(keyframes)
    pred_by_key = _keyed(pred, "predicted")
    gt_by_key = _keyed(gt, "ground-truth")
    scores = []
    for key, box in sorted(gt_by_key.items()):
        if box.frame not in frames:
            continue
        match = pred_by_key.get(key)
        scores.append(iou(match, box) if match is not None else 0.0)
    if not scores:
        raise ValueError("no ground-truth boxes at the given keyframes")
    return float(np.mean(scores))


def _check_transitions(frames, label):
    frames = [int(f) for f in frames]
    if any(f < 1 for f in frames):
        raise ValueError(f"{label} transition frames must be >= 1")
    if any(b <= a for a, b in zip(frames, frames[1:])):
        raise ValueError(f"{label} transitions must be strictly increasing")
    return frames


def default_miss_cost(gt) -> float:
    """Half the mean ground-truth shot length.

    Shot lengths are the gaps between consecutive transitions with frame 0
    as the opening boundary, so the mean is max(gt) / len(gt).
    """
    return max(gt) / (2.0 * len(gt))


def transition_deviation(pred, gt, miss_cost=None) -> float:
    """Mean frame deviation under the best order-preserving matching.

    Dynamic program over monotone one-to-one alignments: matching predicted
    transition p to ground-truth g costs |p - g|; every unmatched transition
    on either side costs `miss_cost` (default: half the mean ground-truth
    shot length). The total is divided by the ground-truth count.
    """
    gt = _check_transitions(gt, "ground-truth")
    if not gt:
        raise ValueError("ground-truth transition list is empty")
    pred = _check_transitions(pred, "predicted")
    if miss_cost is None:
        miss_cost = default_miss_cost(gt)
    if miss_cost < 0:
        raise ValueError(f"miss cost must be >= 0, got {miss_cost}")

    np_, ng = len(pred), len(gt)
    cost = np.empty((np_ + 1, ng + 1))
    cost[0, :] = miss_cost * np.arange(ng + 1)
    cost[:, 0] = miss_cost * np.arange(np_ + 1)
    for i in range(1, np_ + 1):
        for j in range(1, ng + 1):
            cost[i, j] = min(
                cost[i - 1, j - 1] + abs(pred[i - 1] - gt[j - 1]),
                cost[i - 1, j] + miss_cost,
                cost[i, j - 1] + miss_cost,
            )
    return float(cost[np_, ng] / ng)


def load_detection_file(path):
    """Parse a JSONL detection file into (boxes, transitions).

    Each line is either a box record {ref_id, frame, box: [x1, y1, x2, y2]}
    or a transition record {frame}.
    """
    boxes = []
    transitions = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") \
                from None
        if not isinstance(rec, dict):
            raise ValueError(f"{path}:{lineno}: record must be an object")
        try:
            if "box" in rec:
                x1, y1, x2, y2 = rec["box"]
                boxes.append(DetBox(ref_id=int(rec["ref_id"]),
                                    frame=int(rec["frame"]),
                                    x1=float(x1), y1=float(y1),
                                    x2=float(x2), y2=float(y2)))
            elif "frame" in rec:
                transitions.append(int(rec["frame"]))
            else:
                raise ValueError("record needs either 'box' or 'frame'")
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from None
    return boxes, sorted(transitions)


def metric_report(pred_boxes, gt_boxes, pred_transitions, gt_transitions,
                  keyframes=None, miss_cost=None) -> dict:
    """Combined report: mIoU, transition deviation, per-case breakdown.

    Keyframes default to every frame carrying a ground-truth box.
    """
    if keyframes is None:
        keyframes = sorted({b.frame for b in gt_boxes})
    per_box = {}
    pred_by_key = _keyed(pred_boxes, "predicted")
    for key, box in sorted(_keyed(gt_boxes, "ground-truth").items()):
        if box.frame not in set(keyframes):
            continue
        match = pred_by_key.get(key)
        per_box[f"ref{key[0]}@frame{key[1]}"] = (
            iou(match, box) if match is not None else 0.0
        )
    return {
        "miou": grounding_miou(pred_boxes, gt_boxes, keyframes),
        "transition_deviation": transition_deviation(
            pred_transitions, gt_transitions, miss_cost=miss_cost),
        "per_case": {
            "iou": per_box,
            "gt_transitions": list(gt_transitions),
            "pred_transitions": list(pred_transitions),
        },
    }
