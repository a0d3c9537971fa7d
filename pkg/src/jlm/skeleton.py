"""22-joint kinematic tree, forward kinematics and head-frame utilities.

Axes: +z is up, the ground is ``z = 0`` after calibration. Joint order follows
the usual SMPL body ordering (see ``JOINT_NAMES``).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import Tensor

from .errors import FormatError, ShapeMismatch, TopologyError

NUM_JOINTS = 22
HEAD = 15
LEFT_WRIST = 20
RIGHT_WRIST = 21
TRACKED = (HEAD, LEFT_WRIST, RIGHT_WRIST)
HANDS = (LEFT_WRIST, RIGHT_WRIST)
FEET = (7, 8, 10, 11)
UPPER_BODY = (3, 6, 9, 12, 13, 14, 15, 16, 17, 18, 19, 20, 21)
LOWER_BODY = (0, 1, 2, 4, 5, 7, 8, 10, 11)

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist",
)

DEFAULT_TEMPLATE = "humanoid22.json"


class GlobalMotion(NamedTuple):
    positions: Tensor  # (..., J, 3)
    rotations: Tensor  # (..., J, 3, 3) world frame


@dataclass(frozen=True)
class SkeletonTemplate:
    parents: tuple[int, ...]
    offsets: np.ndarray  # (J, 3) meters, in the parent frame at rest

    def __post_init__(self):
        offsets = np.asarray(self.offsets, dtype=np.float64)
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "parents", tuple(int(p) for p in self.parents))
        self.validate()

    @property
    def num_joints(self) -> int:
        return len(self.parents)

    def validate(self) -> None:
        p = self.parents
        if not p or p[0] != -1:
            raise TopologyError("joint 0 must be the root (parent -1)")
        for j in range(1, len(p)):
            if not 0 <= p[j] < j:
                raise TopologyError(f"joint {j} has parent {p[j]}; parents must precede children")
        if self.offsets.shape != (len(p), 3):
            raise TopologyError(f"offsets shape {self.offsets.shape} does not match {len(p)} joints")
        if not np.isfinite(self.offsets).all():
            raise TopologyError("offsets must be finite")

    def offsets_tensor(self, dtype=torch.float32) -> Tensor:
        return torch.as_tensor(self.offsets, dtype=dtype)

    def rest_positions(self) -> np.ndarray:
        pos = np.zeros_like(self.offsets)
        for j in range(1, self.num_joints):
            pos[j] = pos[self.parents[j]] + self.offsets[j]
        return pos


def load_template(path: str | Path | None = None) -> SkeletonTemplate:
    """Read a skeleton asset (JSON with ``parents`` and ``offsets``)."""
    if path is None:
        text = resources.files("jlm.assets").joinpath(DEFAULT_TEMPLATE).read_text()
    else:
        text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"skeleton asset: {e.msg} at line {e.lineno} column {e.colno}") from e
    for key in ("parents", "offsets"):
        if key not in doc:
            raise FormatError(f"skeleton asset: missing field '{key}'")
    return SkeletonTemplate(parents=doc["parents"], offsets=np.asarray(doc["offsets"], dtype=np.float64))


def forward_kinematics(
    local_rot: Tensor, template: SkeletonTemplate, root_translation: Tensor | None = None
) -> GlobalMotion:
    """Local joint rotations (..., J, 3, 3) -> (positions (..., J, 3), global rotations (..., J, 3, 3)).

    ``root_translation`` (..., 3) places joint 0; it defaults to the origin.
    """
    template.validate()
    J = template.num_joints
    if local_rot.shape[-3:] != (J, 3, 3):
        raise ShapeMismatch(f"local rotations {tuple(local_rot.shape)} do not end in ({J}, 3, 3)")
    batch = local_rot.shape[:-3]
    offsets = template.offsets_tensor(local_rot.dtype)
    if root_translation is None:
        root = local_rot.new_zeros(*batch, 3)
    else:
        if root_translation.shape != (*batch, 3):
            raise ShapeMismatch(f"root translation {tuple(root_translation.shape)} vs batch {tuple(batch)}")
        root = root_translation.to(local_rot.dtype)

    rots = [local_rot[..., 0, :, :]]
    pos = [root]
    for j in range(1, J):
        p = template.parents[j]
        rots.append(rots[p] @ local_rot[..., j, :, :])
        pos.append(pos[p] + rots[p] @ offsets[j])
    return GlobalMotion(torch.stack(pos, dim=-2), torch.stack(rots, dim=-3))


def to_head_relative(positions: Tensor, head_index: int = HEAD) -> Tensor:
    """Translate every frame so the head sits at the origin; rotations are untouched."""
    return positions - positions[..., head_index : head_index + 1, :]


def head_align(local_positions: Tensor, observed_head: Tensor, head_index: int = HEAD) -> Tensor:
    """Shift a root-free pose so its head lands on the observed head position."""
    if observed_head.shape != local_positions.shape[:-2] + (3,):
        raise ShapeMismatch(
            f"observed head {tuple(observed_head.shape)} vs positions {tuple(local_positions.shape)}"
        )
    shift = observed_head - local_positions[..., head_index, :]
    return local_positions + shift.unsqueeze(-2)
