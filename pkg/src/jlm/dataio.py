"""Motion files, tracking-signal and contact derivation, floor calibration, training windows."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import torch

from . import rotmath
from .errors import FormatError, SequenceTooShort, VersionError
from .skeleton import FEET, NUM_JOINTS, TRACKED, GlobalMotion, SkeletonTemplate, forward_kinematics

FORMAT_VERSION = 1
SIGNAL_DIM = 54

# Signal layout, grouped by quantity; each group lists head, left wrist, right wrist.
ROT = slice(0, 18)
ANGVEL = slice(18, 36)
POS = slice(36, 45)
VEL = slice(45, 54)

CONTACT_HEIGHT = 0.05  # m
CONTACT_STEP = 0.02  # m per frame, horizontal


@dataclass
class MotionSequence:
    fps: float
    rotations: np.ndarray  # (t, 22, 3) local axis-angle
    root_translation: np.ndarray  # (t, 3) meters

    def __post_init__(self):
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        self.root_translation = np.asarray(self.root_translation, dtype=np.float64)

    @property
    def num_frames(self) -> int:
        return self.rotations.shape[0]

    def local_matrices(self, dtype=torch.float64) -> torch.Tensor:
        return rotmath.axis_angle_to_matrix(torch.as_tensor(self.rotations, dtype=dtype))

    def fk(self, template: SkeletonTemplate, dtype=torch.float64) -> GlobalMotion:
        return forward_kinematics(
            self.local_matrices(dtype), template, torch.as_tensor(self.root_translation, dtype=dtype)
        )

    def validate(self) -> None:
        if not self.fps > 0:
            raise FormatError(f"fps must be positive, got {self.fps}")
        if self.rotations.ndim != 3 or self.rotations.shape[1:] != (NUM_JOINTS, 3):
            raise FormatError(f"rotations must be (t, {NUM_JOINTS}, 3), got {self.rotations.shape}")
        if self.root_translation.shape != (self.num_frames, 3):
            raise FormatError(f"root translation must be (t, 3), got {self.root_translation.shape}")
        if self.num_frames < 2:
            raise FormatError(f"need at least 2 frames, got {self.num_frames}")
        if not (np.isfinite(self.rotations).all() and np.isfinite(self.root_translation).all()):
            raise FormatError("non-finite values in motion")


# ---------------------------------------------------------------- file format


def save_motion(seq: MotionSequence, path: str | Path, sidecar: bool = False) -> None:
    """Write a motion document. With ``sidecar`` the frame data goes to ``<path>.bin`` as little-endian float32."""
    seq.validate()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": FORMAT_VERSION,
        "fps": float(seq.fps),
        "joint_count": NUM_JOINTS,
        "rotation_format": "axis_angle",
    }
    if sidecar:
        flat = np.concatenate([seq.rotations.reshape(seq.num_frames, -1), seq.root_translation], axis=1)
        bin_path = path.with_name(path.name + ".bin")
        bin_path.write_bytes(flat.astype("<f4").tobytes(order="C"))
        doc["frames"] = {"sidecar": bin_path.name, "dtype": "<f4", "shape": list(flat.shape)}
    else:
        doc["frames"] = [
            {"rotations": r.tolist(), "root_translation": tr.tolist()}
            for r, tr in zip(seq.rotations, seq.root_translation)
        ]
    path.write_text(json.dumps(doc))


def _load_doc(path: Path) -> dict:
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: {e.msg} at line {e.lineno} column {e.colno}") from e
    if not isinstance(doc, dict):
        raise FormatError(f"{path}: top level must be an object")
    if "version" not in doc:
        raise FormatError(f"{path}: missing field 'version'")
    if doc["version"] != FORMAT_VERSION:
        raise VersionError(f"{path}: unsupported version {doc['version']!r} (expected {FORMAT_VERSION})")
    return doc


def load_motion(path: str | Path) -> MotionSequence:
    path = Path(path)
    doc = _load_doc(path)
    for key in ("fps", "joint_count", "rotation_format", "frames"):
        if key not in doc:
            raise FormatError(f"{path}: missing field '{key}'")
    if doc["joint_count"] != NUM_JOINTS:
        raise FormatError(f"{path}: joint_count {doc['joint_count']} != {NUM_JOINTS}")
    if doc["rotation_format"] != "axis_angle":
        raise FormatError(f"{path}: rotation_format {doc['rotation_format']!r} not supported")
    frames = doc["frames"]
    if isinstance(frames, dict):
        bin_path = path.with_name(frames["sidecar"])
        t, width = frames["shape"]
        raw = np.frombuffer(bin_path.read_bytes(), dtype=frames.get("dtype", "<f4"))
        if raw.size != t * width or width != NUM_JOINTS * 3 + 3:
            raise FormatError(f"{bin_path}: expected {t}x{NUM_JOINTS * 3 + 3} values, found {raw.size}")
        flat = raw.reshape(t, width).astype(np.float64)
        rotations, trans = flat[:, :-3].reshape(t, NUM_JOINTS, 3), flat[:, -3:]
    else:
        rotations, trans = [], []
        for i, fr in enumerate(frames):
            try:
                r = np.asarray(fr["rotations"], dtype=np.float64)
                tr = np.asarray(fr["root_translation"], dtype=np.float64)
            except (KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}: frame {i}: malformed frame ({e!r})") from e
            if r.shape != (NUM_JOINTS, 3) or tr.shape != (3,):
                raise FormatError(f"{path}: frame {i}: rotations {r.shape} / root_translation {tr.shape}")
            rotations.append(r)
            trans.append(tr)
        if not rotations:
            raise FormatError(f"{path}: no frames")
        rotations, trans = np.stack(rotations), np.stack(trans)
    seq = MotionSequence(float(doc["fps"]), rotations, trans)
    try:
        seq.validate()
    except FormatError as e:
        raise FormatError(f"{path}: {e}") from e
    return seq


def save_signals(signals: np.ndarray, fps: float, path: str | Path) -> None:
    signals = np.asarray(signals, dtype=np.float64)
    doc = {"version": FORMAT_VERSION, "fps": float(fps), "signal_dim": SIGNAL_DIM, "signals": signals.tolist()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))


def load_signals(path: str | Path) -> tuple[np.ndarray, float]:
    path = Path(path)
    doc = _load_doc(path)
    if "signals" not in doc:
        raise FormatError(f"{path}: missing field 'signals'")
    x = np.asarray(doc["signals"], dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != SIGNAL_DIM:
        raise FormatError(f"{path}: signals must be (t, {SIGNAL_DIM}), got {x.shape}")
    return x, float(doc.get("fps", 60.0))


# ---------------------------------------------------------------- derivations


def signals_from_global(positions: torch.Tensor, rotations: torch.Tensor) -> torch.Tensor:
    """Build (t, 54) tracking rows from global joint positions (t, J, 3) and rotations (t, J, 3, 3).

    Velocities are per-frame differences; frame 0 gets zero velocity and an
    identity angular velocity.
    """
    pos = positions[:, list(TRACKED)]
    rot = rotations[:, list(TRACKED)]
    vel = torch.zeros_like(pos)
    vel[1:] = pos[1:] - pos[:-1]
    delta = torch.eye(3, dtype=rot.dtype).expand_as(rot).clone()
    delta[1:] = rotmath.rotation_delta(rot[1:], rot[:-1])
    t = positions.shape[0]
    return torch.cat(
        [
            rotmath.matrix_to_sixd(rot, check=False).reshape(t, 18),
            rotmath.matrix_to_sixd(delta, check=False).reshape(t, 18),
            pos.reshape(t, 9),
            vel.reshape(t, 9),
        ],
        dim=-1,
    )


def derive_tracking_signals(seq: MotionSequence, template: SkeletonTemplate) -> np.ndarray:
    g = seq.fk(template)
    return signals_from_global(g.positions, g.rotations).numpy()


def observed_head(signals):
    """Head position columns of a signal array/tensor (..., 54) -> (..., 3)."""
    return signals[..., POS.start : POS.start + 3]


def observed_positions(signals):
    return signals[..., POS].reshape(*signals.shape[:-1], 3, 3)


def observed_rotations6d(signals):
    return signals[..., ROT].reshape(*signals.shape[:-1], 3, 6)


def contact_mask_from_positions(
    positions: np.ndarray, height: float = CONTACT_HEIGHT, step: float = CONTACT_STEP
) -> np.ndarray:
    """(t, J, 3) global positions -> (t, 4) binary mask over the feet joints."""
    feet = np.asarray(positions)[:, list(FEET)]
    disp = np.zeros(feet.shape[:2])
    disp[1:] = np.linalg.norm(feet[1:, :, :2] - feet[:-1, :, :2], axis=-1)
    mask = (feet[..., 2] < height) & (disp < step)
    if len(mask) > 1:
        mask[0] = mask[1]
    return mask.astype(np.float64)


def derive_contact_mask(
    seq: MotionSequence, template: SkeletonTemplate, height: float = CONTACT_HEIGHT, step: float = CONTACT_STEP
) -> np.ndarray:
    return contact_mask_from_positions(seq.fk(template).positions.numpy(), height, step)


def floor_calibrate(seq: MotionSequence, template: SkeletonTemplate, percentile: float = 5.0) -> MotionSequence:
    """Lower the root so the 5th percentile of per-frame lowest joint heights sits at z = 0."""
    lowest = seq.fk(template).positions[..., 2].amin(-1).numpy()
    ground = float(np.percentile(lowest, percentile))
    trans = seq.root_translation.copy()
    trans[:, 2] -= ground
    return MotionSequence(seq.fps, seq.rotations.copy(), trans)


# ---------------------------------------------------------------- windows


@dataclass
class PreparedSequence:
    """Per-frame training targets of one motion, float64 numpy."""

    signals: np.ndarray  # (T, 54)
    rot6d: np.ndarray  # (T, 22, 6) local rotations
    positions: np.ndarray  # (T, 22, 3) global
    contact: np.ndarray  # (T, 4)
    fps: float

    @property
    def num_frames(self) -> int:
        return self.signals.shape[0]


def prepare(seq: MotionSequence, template: SkeletonTemplate) -> PreparedSequence:
    local = seq.local_matrices()
    g = forward_kinematics(local, template, torch.as_tensor(seq.root_translation))
    return PreparedSequence(
        signals=signals_from_global(g.positions, g.rotations).numpy(),
        rot6d=rotmath.matrix_to_sixd(local, check=False).numpy(),
        positions=g.positions.numpy(),
        contact=contact_mask_from_positions(g.positions.numpy()),
        fps=seq.fps,
    )


@dataclass
class WindowBatch:
    signals: torch.Tensor  # (B, t, 54)
    rot6d: torch.Tensor  # (B, t, 22, 6)
    positions: torch.Tensor  # (B, t, 22, 3) global
    contact: torch.Tensor  # (B, t, 4)

    def __len__(self) -> int:
        return self.signals.shape[0]


def window_batches(
    dataset: Sequence[MotionSequence | PreparedSequence],
    t: int,
    batch: int,
    seed: int,
    template: SkeletonTemplate | None = None,
    dtype=torch.float32,
) -> Iterator[WindowBatch]:
    """Endless stream of batches of length-``t`` windows sampled uniformly over (sequence, start)."""
    prepared = []
    for i, s in enumerate(dataset):
        if isinstance(s, MotionSequence):
            if template is None:
                raise ValueError("template required to prepare raw motion sequences")
            s = prepare(s, template)
        if s.num_frames < t:
            raise SequenceTooShort(f"sequence {i} has {s.num_frames} frames, window needs {t}")
        prepared.append(s)
    if not prepared:
        raise SequenceTooShort("empty dataset")
    index = np.array([(i, start) for i, s in enumerate(prepared) for start in range(s.num_frames - t + 1)])
    rng = np.random.default_rng(seed)

    def gather(field):
        return torch.as_tensor(
            np.stack([getattr(prepared[i], field)[s : s + t] for i, s in picks]), dtype=dtype
        )

    while True:
        picks = index[rng.integers(0, len(index), size=batch)]
        yield WindowBatch(gather("signals"), gather("rot6d"), gather("positions"), gather("contact"))


def angular_speed(seq: MotionSequence) -> np.ndarray:
    """Per-frame, per-joint local angular speed in rad/s, shape (t-1, 22)."""
    m = seq.local_matrices()
    deg = rotmath.geodesic_angle_deg(m[:-1], m[1:])
    return deg.numpy() * math.pi / 180 * seq.fps
