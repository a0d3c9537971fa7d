"""Training losses and their weighted sum.

Positions are meters, z up, ground at z = 0. Every L1 term is a mean over
all elements unless the docstring says a per-frame sum is taken first.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace

import torch
from torch import Tensor

from .dataio import WindowBatch, observed_head
from .errors import ShapeMismatch, WindowTooShort
from .rotmath import sixd_to_matrix
from .skeleton import FEET, HANDS, SkeletonTemplate, forward_kinematics, head_align, to_head_relative

VELOCITY_LAGS = (1, 3, 5)


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5  # foot height inside the physical term
    beta: float = 0.02  # root orientation
    gamma: float = 2.0  # joint rotations
    delta: float = 5.0  # joint positions
    epsilon: float = 5.0  # hand alignment
    zeta: float = 50.0  # motion term
    hand: bool = True
    vel_short: bool = True
    vel_long: bool = True
    foot_contact: bool = True
    penetration: bool = True
    foot_height: bool = True

    def __post_init__(self):
        for f in ("alpha", "beta", "gamma", "delta", "epsilon", "zeta"):
            if getattr(self, f) < 0:
                raise ValueError(f"loss weight {f} must be non-negative")

    @classmethod
    def basic(cls) -> "LossWeights":
        return cls(hand=False, vel_short=False, vel_long=False, foot_contact=False, penetration=False, foot_height=False)

    @classmethod
    def groups(cls, hand: bool = False, motion: bool = False, physical: bool = False) -> "LossWeights":
        return cls(
            hand=hand, vel_short=motion, vel_long=motion, foot_contact=motion,
            penetration=physical, foot_height=physical,
        )

    def to_dict(self) -> dict:
        return asdict(self)


# Loss configurations of the loss-combination ablation: cumulative rows, then group combinations.
ABLATIONS = {
    "basic": LossWeights.basic(),
    "+hand": LossWeights.groups(hand=True),
    "+hand+vel_short": replace(LossWeights.groups(hand=True), vel_short=True),
    "+hand+vel_short+vel_long": replace(LossWeights.groups(hand=True), vel_short=True, vel_long=True),
    "+hand+motion": LossWeights.groups(hand=True, motion=True),
    "+hand+motion+penetration": replace(LossWeights.groups(hand=True, motion=True), penetration=True),
    "+hand+motion+physical": LossWeights.groups(hand=True, motion=True, physical=True),
    "+motion": LossWeights.groups(motion=True),
    "+physical": LossWeights.groups(physical=True),
    "+hand+physical": LossWeights.groups(hand=True, physical=True),
    "+motion+physical": LossWeights.groups(motion=True, physical=True),
}


@dataclass
class LossReport:
    l_first: float = 0.0
    l_ori: float = 0.0
    l_rot: float = 0.0
    l_pos: float = 0.0
    l_hand: float = 0.0
    l_v1: float = 0.0
    l_v3: float = 0.0
    l_v5: float = 0.0
    l_fc: float = 0.0
    l_p: float = 0.0
    l_fh: float = 0.0
    total: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


TERM_NAMES = tuple(f.name for f in fields(LossReport) if f.name != "total")


def _same_shape(*xs):
    if any(x.shape != xs[0].shape for x in xs[1:]):
        raise ShapeMismatch("shape mismatch: " + " vs ".join(str(tuple(x.shape)) for x in xs))


def basic_losses(theta_init, theta, init_positions, positions, theta_gt, positions_gt):
    """-> (l_first, l_ori, l_rot, l_pos).

    ``positions``/``positions_gt`` are root-free FK positions; ``init_positions``
    is FK of the initial pose, compared after moving both to the head frame.
    """
    _same_shape(theta_init, theta, theta_gt)
    _same_shape(init_positions, positions, positions_gt)
    l_first = (theta_init - theta_gt).abs().mean() + (
        to_head_relative(init_positions) - to_head_relative(positions_gt)
    ).abs().mean()
    l_ori = (theta[..., 0, :] - theta_gt[..., 0, :]).abs().mean()
    l_rot = (theta[..., 1:, :] - theta_gt[..., 1:, :]).abs().mean()
    l_pos = (positions - positions_gt).abs().mean()
    return l_first, l_ori, l_rot, l_pos


def hand_alignment_loss(global_pos: Tensor, global_pos_gt: Tensor) -> Tensor:
    """Per frame, half the L1 distance summed over both wrists; averaged over frames."""
    _same_shape(global_pos, global_pos_gt)
    idx = list(HANDS)
    diff = (global_pos[..., idx, :] - global_pos_gt[..., idx, :]).abs()
    return 0.5 * diff.sum((-1, -2)).mean()


def velocity_loss(global_pos: Tensor, global_pos_gt: Tensor, lag: int) -> Tensor:
    """Mean |lag-step displacement error| over frames, joints and coordinates."""
    _same_shape(global_pos, global_pos_gt)
    t = global_pos.shape[-3]
    if t <= lag:
        raise WindowTooShort(f"window of {t} frames cannot supervise lag {lag}")
    d = global_pos[..., lag:, :, :] - global_pos[..., :-lag, :, :]
    d_gt = global_pos_gt[..., lag:, :, :] - global_pos_gt[..., :-lag, :, :]
    return (d - d_gt).abs().mean()


def foot_contact_loss(global_pos: Tensor, contact: Tensor) -> Tensor:
    """Mean |foot displacement to the next frame| where the foot is in contact."""
    feet = global_pos[..., list(FEET), :]
    if feet.shape[-3] < 2:
        raise WindowTooShort("foot contact loss needs at least 2 frames")
    step = feet[..., 1:, :, :] - feet[..., :-1, :, :]
    m = contact[..., :-1, :].to(step.dtype).unsqueeze(-1)
    return (step * m).abs().mean()


def penetration_loss(global_pos: Tensor) -> Tensor:
    """Per-frame sum over joints of the depth below z = 0; averaged over frames."""
    return torch.relu(-global_pos[..., 2]).sum(-1).mean()


def foot_height_loss(global_pos: Tensor, contact: Tensor) -> Tensor:
    """Per-frame sum of |z| over feet in contact; averaged over frames."""
    z = global_pos[..., list(FEET), 2]
    return (z * contact.to(z.dtype)).abs().sum(-1).mean()


def total_loss(terms: dict[str, Tensor], w: LossWeights) -> tuple[Tensor, LossReport]:
    """Weighted sum; missing or disabled terms count as exactly zero."""
    zero = next(iter(terms.values())).new_zeros(())

    def get(name):
        return terms.get(name, zero)

    motion = get("l_v1") + get("l_v3") + get("l_v5") + get("l_fc")
    physical = get("l_p") + w.alpha * get("l_fh")
    total = (
        get("l_first")
        + w.beta * get("l_ori")
        + w.gamma * get("l_rot")
        + w.delta * get("l_pos")
        + w.epsilon * get("l_hand")
        + w.zeta * motion
        + physical
    )
    report = LossReport(**{k: float(v.detach()) for k, v in terms.items()}, total=float(total.detach()))
    return total, report


def compute_terms(
    theta_init: Tensor,
    theta: Tensor,
    batch: WindowBatch,
    template: SkeletonTemplate,
    w: LossWeights = LossWeights(),
) -> dict[str, Tensor]:
    """All enabled loss terms for one batch of windows.

    The predicted pose is head-aligned to the observed head inside the graph,
    so gradients of the global terms flow through the alignment.
    """
    dtype = theta.dtype
    theta_gt = batch.rot6d.to(dtype)
    pos_gt = batch.positions.to(dtype)
    local_gt = pos_gt - pos_gt[..., :1, :]
    init_pos, _ = forward_kinematics(sixd_to_matrix(theta_init), template)
    pos, _ = forward_kinematics(sixd_to_matrix(theta), template)
    l_first, l_ori, l_rot, l_pos = basic_losses(theta_init, theta, init_pos, pos, theta_gt, local_gt)
    terms = {"l_first": l_first, "l_ori": l_ori, "l_rot": l_rot, "l_pos": l_pos}

    glob = head_align(pos, observed_head(batch.signals).to(dtype))
    contact = batch.contact.to(dtype)
    t = theta.shape[-3]
    if w.hand:
        terms["l_hand"] = hand_alignment_loss(glob, pos_gt)
    # lags that do not fit in the window are clipped to t - 1
    if w.vel_short:
        terms["l_v1"] = velocity_loss(glob, pos_gt, min(1, t - 1))
    if w.vel_long:
        terms["l_v3"] = velocity_loss(glob, pos_gt, min(3, t - 1))
        terms["l_v5"] = velocity_loss(glob, pos_gt, min(5, t - 1))
    if w.foot_contact:
        terms["l_fc"] = foot_contact_loss(glob, contact)
    if w.penetration:
        terms["l_p"] = penetration_loss(glob)
    if w.foot_height:
        terms["l_fh"] = foot_height_loss(glob, contact)
    return terms


def compute_losses(theta_init, theta, batch, template, w: LossWeights = LossWeights()):
    return total_loss(compute_terms(theta_init, theta, batch, template, w), w)
