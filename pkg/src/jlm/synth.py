"""Parametric synthetic motions on the humanoid template.

Every trajectory is a smooth (at least C2) function of time built from
sinusoids, so sequences are reproducible from ``(kind, seed)`` alone.
"""

from __future__ import annotations

import math

import numpy as np
import torch

from . import rotmath
from .dataio import MotionSequence, floor_calibrate
from .errors import UnknownKind
from .skeleton import NUM_JOINTS, SkeletonTemplate, load_template

KINDS = ("idle_sway", "walk_cycle", "arm_wave", "squat")

ARM_DOWN = 1.2  # rad, brings the T-pose arms down along the body
IDLE_SPEED_BOUND = 0.5  # rad/s


def _rx(a):
    c, s, o, i = torch.cos(a), torch.sin(a), torch.zeros_like(a), torch.ones_like(a)
    return torch.stack((torch.stack((i, o, o), -1), torch.stack((o, c, -s), -1), torch.stack((o, s, c), -1)), -2)


def _ry(a):
    c, s, o, i = torch.cos(a), torch.sin(a), torch.zeros_like(a), torch.ones_like(a)
    return torch.stack((torch.stack((c, o, s), -1), torch.stack((o, i, o), -1), torch.stack((-s, o, c), -1)), -2)


def _rz(a):
    c, s, o, i = torch.cos(a), torch.sin(a), torch.zeros_like(a), torch.ones_like(a)
    return torch.stack((torch.stack((c, -s, o), -1), torch.stack((s, c, o), -1), torch.stack((o, o, i), -1)), -2)


class _Pose:
    """Accumulates per-joint local rotation matrices for t frames."""

    def __init__(self, t: int):
        self.m = torch.eye(3, dtype=torch.float64).repeat(t, NUM_JOINTS, 1, 1)
        self.t = t

    def rot(self, joint: int, *mats):
        r = self.m[:, joint]
        for mat in mats:
            r = r @ mat
        self.m[:, joint] = r

    def const(self, v: float):
        return torch.full((self.t,), float(v), dtype=torch.float64)


def _arms_down(pose: _Pose, swing_l=None, swing_r=None, bend_l=None, bend_r=None):
    zero = pose.const(0.0)
    pose.rot(16, _rx(zero if swing_l is None else swing_l), _ry(pose.const(-ARM_DOWN)))
    pose.rot(17, _rx(zero if swing_r is None else swing_r), _ry(pose.const(ARM_DOWN)))
    if bend_l is not None:
        pose.rot(18, _rz(-bend_l))
    if bend_r is not None:
        pose.rot(19, _rz(bend_r))


def _smooth_lift(phase):
    # max(0, sin)^3 is C2 and exactly zero for half the cycle
    return torch.clamp(torch.sin(phase), min=0.0) ** 3


def synth_generate(
    kind: str,
    duration_s: float,
    fps: float = 60.0,
    seed: int = 0,
    template: SkeletonTemplate | None = None,
) -> MotionSequence:
    if kind not in KINDS:
        raise UnknownKind(f"unknown motion kind {kind!r}; choose from {', '.join(KINDS)}")
    t = int(round(duration_s * fps))
    if t < 2:
        raise ValueError(f"duration {duration_s}s at {fps} fps gives {t} frames; need at least 2")
    template = template or load_template()
    rng = np.random.default_rng(seed)
    time = torch.arange(t, dtype=torch.float64) / fps
    pose = _Pose(t)
    heading = float(rng.uniform(-0.5, 0.5))
    pose.rot(0, _rz(pose.const(heading)))
    root = torch.zeros(t, 3, dtype=torch.float64)
    root[:, 2] = 1.0

    if kind == "idle_sway":
        # every joint moves with at most two components of amplitude a and frequency f,
        # so its angular speed is bounded by 2 * max(a) * 2 pi * max(f)
        def osc():
            a = rng.uniform(0.02, 0.05)
            f = rng.uniform(0.1, 0.25)
            return a * torch.sin(2 * math.pi * f * time + rng.uniform(0, 2 * math.pi))

        for j in (3, 6, 9):
            pose.rot(j, _rx(osc()), _ry(osc()))
        pose.rot(12, _rx(osc()))
        pose.rot(15, _rx(osc()), _rz(osc()))
        _arms_down(pose, swing_l=osc(), swing_r=osc(), bend_l=0.2 + osc(), bend_r=0.2 + osc())

    elif kind == "walk_cycle":
        # stepping in place: the stance leg is at rest and its foot never moves
        f = rng.uniform(0.8, 1.0)
        phase = 2 * math.pi * f * time + rng.uniform(0, 2 * math.pi)
        amp = rng.uniform(0.6, 0.8)
        lift_l, lift_r = _smooth_lift(phase), _smooth_lift(phase + math.pi)
        for hip, knee, ankle, lift in ((1, 4, 7, lift_l), (2, 5, 8, lift_r)):
            pose.rot(hip, _rx(amp * lift))
            pose.rot(knee, _rx(-2 * amp * lift))
            pose.rot(ankle, _rx(amp * lift))
        swing = rng.uniform(0.3, 0.5) * torch.sin(phase)
        pose.rot(3, _rz(0.05 * torch.sin(phase)))
        _arms_down(pose, swing_l=-swing, swing_r=swing, bend_l=0.3 - 0.5 * swing, bend_r=0.3 + 0.5 * swing)

    elif kind == "arm_wave":
        f = rng.uniform(0.8, 1.2)
        phase = 2 * math.pi * f * time + rng.uniform(0, 2 * math.pi)
        raise_r = 0.5 + 0.3 * (1 - torch.cos(2 * math.pi * 0.25 * time))
        pose.rot(3, _ry(-0.05 * torch.sin(phase / 2)))
        pose.rot(17, _ry(ARM_DOWN - 2.4 * raise_r / 1.1), _rx(0.2 * torch.sin(phase)))
        pose.rot(19, _rz(-(0.6 + 0.4 * torch.sin(phase))))
        pose.rot(16, _rx(0.1 * torch.sin(phase / 2)), _ry(pose.const(-ARM_DOWN)))
        pose.rot(18, _rz(-pose.const(0.3)))
        pose.rot(15, _rz(0.15 * torch.sin(phase / 2)))

    elif kind == "squat":
        f = rng.uniform(0.3, 0.5)
        depth = rng.uniform(0.8, 1.1)
        bend = depth * (1 - torch.cos(2 * math.pi * f * time)) / 2
        for hip, knee, ankle in ((1, 4, 7), (2, 5, 8)):
            pose.rot(hip, _rx(bend))
            pose.rot(knee, _rx(-2 * bend))
            pose.rot(ankle, _rx(bend))
        thigh = float(np.linalg.norm(template.offsets[4]))
        shin = float(np.linalg.norm(template.offsets[7]))
        root[:, 2] -= (thigh + shin) * (1 - torch.cos(bend))
        pose.rot(3, _rx(-0.4 * bend))
        reach = 1.2 * bend / depth
        _arms_down(pose, swing_l=reach, swing_r=reach, bend_l=0.2 * reach, bend_r=0.2 * reach)

    rotations = rotmath.matrix_to_axis_angle(pose.m).numpy()
    seq = MotionSequence(float(fps), rotations, root.numpy())
    return floor_calibrate(seq, template)


def synth_dataset(duration_s: float = 10.0, fps: float = 60.0, seed: int = 0, kinds=KINDS, template=None):
    return [synth_generate(k, duration_s, fps, seed + i, template) for i, k in enumerate(kinds)]
