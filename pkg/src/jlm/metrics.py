"""Evaluation metrics: accuracy, smoothness and physical plausibility.

Units: degrees (MPJRE), cm (MPJPE and subsets, Ground, Skate), cm/s (MPJVE),
and 10^2 m/s^3 (Jitter). Position inputs are meters, (t, 22, 3), z up.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .dataio import MotionSequence, contact_mask_from_positions
from .errors import LengthMismatch, WindowTooShort
from .rotmath import geodesic_angle_deg
from .skeleton import FEET, HANDS, HEAD, LOWER_BODY, NUM_JOINTS, UPPER_BODY, SkeletonTemplate, head_align

SUBSETS = {
    "full": tuple(range(NUM_JOINTS)),
    "hands": HANDS,
    "upper": UPPER_BODY,
    "lower": LOWER_BODY,
}
METRIC_NAMES = ("MPJRE", "MPJPE", "MPJVE", "Jitter", "Ground", "Skate", "H-PE", "U-PE", "L-PE")
REPORT_VERSION = 1


def _arr(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def _same_length(a, b):
    if a.shape[0] != b.shape[0]:
        raise LengthMismatch(f"{a.shape[0]} vs {b.shape[0]} frames")
    if a.shape != b.shape:
        raise LengthMismatch(f"shape {a.shape} vs {b.shape}")


def mpjpe(pred, gt, subset="full") -> float:
    pred, gt = _arr(pred), _arr(gt)
    _same_length(pred, gt)
    idx = list(SUBSETS[subset] if isinstance(subset, str) else subset)
    return float(np.linalg.norm(pred[:, idx] - gt[:, idx], axis=-1).mean() * 100)


def mpjre(pred_rot, gt_rot) -> float:
    """Mean geodesic angle between local joint rotations (t, 22, 3, 3)."""
    pred_rot = torch.as_tensor(_arr(pred_rot))
    gt_rot = torch.as_tensor(_arr(gt_rot))
    _same_length(pred_rot, gt_rot)
    return float(geodesic_angle_deg(pred_rot, gt_rot).mean())


def mpjve(pred, gt, fps: float) -> float:
    pred, gt = _arr(pred), _arr(gt)
    _same_length(pred, gt)
    if pred.shape[0] < 2:
        raise WindowTooShort("MPJVE needs at least 2 frames")
    v_err = (np.diff(pred, axis=0) - np.diff(gt, axis=0)) * fps
    return float(np.linalg.norm(v_err, axis=-1).mean() * 100)


def jitter(pred, fps: float) -> float:
    """Mean jerk magnitude from third forward differences, in 10^2 m/s^3."""
    pred = _arr(pred)
    if pred.shape[0] < 4:
        raise WindowTooShort("jitter needs at least 4 frames")
    jerk = np.diff(pred, n=3, axis=0) * fps**3
    return float(np.linalg.norm(jerk, axis=-1).mean() / 100)


def ground_metric(pred, gt) -> float:
    pred, gt = _arr(pred), _arr(gt)
    _same_length(pred, gt)
    return float(np.abs(pred[..., 2].min(-1) - gt[..., 2].min(-1)).mean() * 100)


def skate_metric(pred, contact) -> tuple[float, int]:
    """Mean horizontal step of predicted feet over (frame, foot) pairs in contact.

    Frame 0 has no previous frame and is skipped. Returns (cm, number of pairs).
    """
    pred, contact = _arr(pred), _arr(contact)
    if pred.shape[0] < 2:
        raise WindowTooShort("skate needs at least 2 frames")
    feet = pred[:, list(FEET), :2]
    step = np.linalg.norm(feet[1:] - feet[:-1], axis=-1)
    m = contact[1:] > 0.5
    n = int(m.sum())
    if n == 0:
        return 0.0, 0
    return float(step[m].mean() * 100), n


@dataclass
class MetricsReport:
    mpjre: float
    mpjpe: float
    mpjve: float
    jitter: float
    ground: float
    skate: float
    h_pe: float
    u_pe: float
    l_pe: float
    frames: int = 0
    contact_frames: int = 0

    def metrics(self) -> dict[str, float]:
        return dict(zip(METRIC_NAMES, (
            self.mpjre, self.mpjpe, self.mpjve, self.jitter, self.ground,
            self.skate, self.h_pe, self.u_pe, self.l_pe,
        )))

    def to_dict(self) -> dict:
        return {**self.metrics(), "frames": self.frames, "contact_frames": self.contact_frames}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        vals = [d[k] for k in METRIC_NAMES]
        return cls(*vals, frames=d.get("frames", 0), contact_frames=d.get("contact_frames", 0))


def mpjpe_consistency_gap(pred, gt) -> float:
    """|full - (2 H-PE + 20 mean(rest)) / 22|, which is zero up to round-off."""
    pred, gt = _arr(pred), _arr(gt)
    rest = [j for j in range(NUM_JOINTS) if j not in HANDS]
    recomposed = (len(HANDS) * mpjpe(pred, gt, "hands") + len(rest) * mpjpe(pred, gt, rest)) / NUM_JOINTS
    return abs(mpjpe(pred, gt) - recomposed)


def evaluate_positions(
    pred_pos, gt_pos, pred_rot, gt_rot, fps: float, contact=None
) -> MetricsReport:
    """All metrics from global positions and local rotations; ``contact`` defaults to the ground-truth mask."""
    pred_pos, gt_pos = _arr(pred_pos), _arr(gt_pos)
    _same_length(pred_pos, gt_pos)
    if contact is None:
        contact = contact_mask_from_positions(gt_pos)
    gap = mpjpe_consistency_gap(pred_pos, gt_pos)
    if gap > 1e-9:
        raise ArithmeticError(f"MPJPE subset decomposition off by {gap}")
    skate, n_contact = skate_metric(pred_pos, contact)
    return MetricsReport(
        mpjre=mpjre(pred_rot, gt_rot),
        mpjpe=mpjpe(pred_pos, gt_pos),
        mpjve=mpjve(pred_pos, gt_pos, fps),
        jitter=jitter(pred_pos, fps),
        ground=ground_metric(pred_pos, gt_pos),
        skate=skate,
        h_pe=mpjpe(pred_pos, gt_pos, "hands"),
        u_pe=mpjpe(pred_pos, gt_pos, "upper"),
        l_pe=mpjpe(pred_pos, gt_pos, "lower"),
        frames=pred_pos.shape[0],
        contact_frames=n_contact,
    )


def evaluate_pair(
    pred: MotionSequence, gt: MotionSequence, template: SkeletonTemplate, fps: float | None = None
) -> MetricsReport:
    """FK both motions, head-align the prediction to the ground-truth head, and score it."""
    if pred.num_frames != gt.num_frames:
        raise LengthMismatch(f"prediction has {pred.num_frames} frames, ground truth {gt.num_frames}")
    fps = gt.fps if fps is None else fps
    g_pred, g_gt = pred.fk(template), gt.fk(template)
    pred_pos = head_align(g_pred.positions, g_gt.positions[:, HEAD])
    return evaluate_positions(
        pred_pos, g_gt.positions, pred.local_matrices(), gt.local_matrices(), fps
    )


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    """Frame-weighted mean of per-sequence reports."""
    w = np.array([r.frames for r in reports], dtype=np.float64)
    if not len(reports) or w.sum() == 0:
        raise ValueError("nothing to aggregate")
    vals = np.array([list(r.metrics().values()) for r in reports])
    mean = (vals * w[:, None]).sum(0) / w.sum()
    return MetricsReport(
        *[float(v) for v in mean], frames=int(w.sum()), contact_frames=sum(r.contact_frames for r in reports)
    )


def write_report(path: str | Path, per_sequence: dict[str, MetricsReport]) -> dict:
    doc = {
        "version": REPORT_VERSION,
        "units": {"MPJRE": "deg", "MPJPE": "cm", "MPJVE": "cm/s", "Jitter": "1e2 m/s^3",
                  "Ground": "cm", "Skate": "cm", "H-PE": "cm", "U-PE": "cm", "L-PE": "cm"},
        "sequences": [{"name": k, **r.to_dict()} for k, r in per_sequence.items()],
        "aggregate": aggregate(list(per_sequence.values())).to_dict(),
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2))
    return doc
