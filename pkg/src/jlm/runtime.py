"""Training loop, checkpoints, and sliding-window inference."""

from __future__ import annotations

import json
import logging
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, NamedTuple, Sequence

import numpy as np
import torch

from . import nnops
from .dataio import (
    MotionSequence,
    PreparedSequence,
    derive_tracking_signals,
    observed_head,
    window_batches,
)
from .errors import DataError, NonFiniteLoss, SchemaError, ShapeMismatch, SourceEnded
from .losses import LossReport, LossWeights, compute_losses
from .metrics import MetricsReport, evaluate_pair
from .model import JLMModel, ModelConfig
from .rotmath import matrix_to_axis_angle, sixd_to_matrix
from .skeleton import SkeletonTemplate, forward_kinematics, head_align, load_template

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"JLMCKPT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig.desk)
    loss: LossWeights = field(default_factory=LossWeights)
    batch: int = 64
    iterations: int = 5000
    lr: float = 1e-4
    lr_final: float = 1e-5
    lr_drop_at: float = 0.6  # fraction of iterations
    seed: int = 0
    masked: bool = True
    log_every: int = 1
    checkpoint_every: int = 0  # 0: only the final checkpoint

    def __post_init__(self):
        if self.iterations <= 0 or self.batch < 1:
            raise ValueError("need iterations > 0 and batch >= 1")

    def lr_at(self, iteration: int) -> float:
        return self.lr if iteration < self.lr_drop_at * self.iterations else self.lr_final

    def to_dict(self) -> dict:
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        model = ModelConfig(**d.pop("model", {}))
        loss = LossWeights(**d.pop("loss", {}))
        return cls(model=model, loss=loss, **d)


# ---------------------------------------------------------------- checkpoints


@dataclass
class Checkpoint:
    model: JLMModel
    iteration: int = 0
    seed: int = 0
    train_config: TrainConfig | None = None


def _manifest(ckpt: Checkpoint) -> tuple[dict, list[bytes]]:
    tensors, blobs, offset = [], [], 0
    for name, p in ckpt.model.params.items():
        data = p.detach().to(torch.float32).contiguous().numpy().astype("<f4").tobytes(order="C")
        tensors.append({"name": name, "dtype": "float32", "shape": list(p.shape), "offset": offset, "nbytes": len(data)})
        blobs.append(data)
        offset += len(data)
    tpl = ckpt.model.template
    manifest = {
        "schema_version": CHECKPOINT_VERSION,
        "model_config": ckpt.model.config.to_dict(),
        "train_config": ckpt.train_config.to_dict() if ckpt.train_config else None,
        "iteration": ckpt.iteration,
        "seed": ckpt.seed,
        "skeleton": {"parents": list(tpl.parents), "offsets": tpl.offsets.tolist()},
        "tensors": tensors,
    }
    return manifest, blobs


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Layout: magic, u32 LE manifest length, JSON manifest, float32 LE row-major payload."""
    manifest, blobs = _manifest(ckpt)
    head = json.dumps(manifest, sort_keys=True).encode()
    Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<I", len(head)) + head + b"".join(blobs))


def load_checkpoint(path: str | Path, model: JLMModel | None = None) -> Checkpoint:
    """Read a checkpoint; with ``model`` given the tensors are loaded into it (shapes must agree)."""
    raw = Path(path).read_bytes()
    if raw[:8] != CHECKPOINT_MAGIC or len(raw) < 12:
        raise SchemaError(f"{path}: not a checkpoint (bad magic)")
    (n,) = struct.unpack("<I", raw[8:12])
    if len(raw) < 12 + n:
        raise SchemaError(f"{path}: manifest truncated")
    try:
        manifest = json.loads(raw[12 : 12 + n])
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: manifest unreadable ({e.msg})") from e
    if manifest.get("schema_version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported schema version {manifest.get('schema_version')!r}")
    payload = raw[12 + n :]
    try:
        cfg = ModelConfig(**manifest["model_config"])
        tensors = manifest["tensors"]
        skel = manifest["skeleton"]
    except (KeyError, TypeError) as e:
        raise SchemaError(f"{path}: manifest missing {e}") from e

    values = {}
    for entry in tensors:
        start, nbytes = entry["offset"], entry["nbytes"]
        if entry["dtype"] != "float32" or start + nbytes > len(payload) or nbytes != 4 * math.prod(entry["shape"]):
            raise SchemaError(f"{path}: tensor table truncated or inconsistent at {entry['name']!r}")
        arr = np.frombuffer(payload, dtype="<f4", count=nbytes // 4, offset=start).reshape(entry["shape"])
        values[entry["name"]] = torch.from_numpy(arr.copy())

    if model is None:
        template = SkeletonTemplate(parents=skel["parents"], offsets=np.asarray(skel["offsets"]))
        model = JLMModel(cfg, template)
    elif model.config != cfg:
        raise ShapeMismatch(f"checkpoint config {cfg} does not match model config {model.config}")
    names = set(model.params.names())
    if set(values) != names:
        missing, extra = names - set(values), set(values) - names
        raise SchemaError(f"{path}: parameter set differs (missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]})")
    model.params.load(values)
    tc = manifest.get("train_config")
    return Checkpoint(
        model=model,
        iteration=manifest.get("iteration", 0),
        seed=manifest.get("seed", 0),
        train_config=TrainConfig.from_dict(tc) if tc else None,
    )


# ---------------------------------------------------------------- training


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list[dict]

    @property
    def model(self) -> JLMModel:
        return self.checkpoint.model

    def totals(self) -> np.ndarray:
        return np.array([r["total"] for r in self.log])


def train(
    cfg: TrainConfig,
    dataset: Sequence[MotionSequence | PreparedSequence],
    template: SkeletonTemplate | None = None,
    out_dir: str | Path | None = None,
    on_step: Callable[[int, LossReport], None] | None = None,
) -> TrainResult:
    """Adam on the full loss with a one-time learning-rate drop; deterministic given ``cfg.seed``.

    With ``out_dir`` the step log goes to ``train_log.jsonl`` and checkpoints
    to ``checkpoint.jlm``; on a non-finite loss the last good state is saved
    as ``last_good.jlm`` before ``NonFiniteLoss`` is raised.
    """
    template = template or load_template()
    if not dataset:
        raise DataError("empty training dataset")
    torch.manual_seed(cfg.seed)
    model = JLMModel(cfg.model, template, seed=cfg.seed)
    stream = window_batches(dataset, cfg.model.t, cfg.batch, cfg.seed, template)
    mask_rng = np.random.default_rng(cfg.seed + 1) if cfg.masked else None
    adam = nnops.AdamState(lr=cfg.lr)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = (out / "train_log.jsonl").open("w")
    records = []
    ckpt = Checkpoint(model, 0, cfg.seed, cfg)
    try:
        for it in range(cfg.iterations):
            batch = next(stream)
            theta_init, theta = model.full_forward(batch.signals, mask_rng)
            total, report = compute_losses(theta_init, theta, batch, template, cfg.loss)
            if not math.isfinite(report.total):
                if out is not None:
                    save_checkpoint(ckpt, out / "last_good.jlm")
                raise NonFiniteLoss(f"loss became {report.total} at iteration {it}")
            nnops.backward(total, model.params)
            lr = cfg.lr_at(it)
            try:
                nnops.adam_step(model.params, adam, lr)
            except NonFiniteLoss:
                if out is not None:
                    save_checkpoint(ckpt, out / "last_good.jlm")
                raise
            ckpt.iteration = it + 1
            rec = {"step": it, "lr": lr, **report.to_dict()}
            records.append(rec)
            if out is not None and it % cfg.log_every == 0:
                log_file.write(json.dumps(rec) + "\n")
            if on_step is not None:
                on_step(it, report)
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(ckpt, out / "checkpoint.jlm")
    finally:
        if out is not None:
            log_file.close()
    if out is not None:
        save_checkpoint(ckpt, out / "checkpoint.jlm")
    return TrainResult(ckpt, records)


# ---------------------------------------------------------------- inference


class StreamFrame(NamedTuple):
    theta: torch.Tensor  # (22, 6) local pose
    rotations: torch.Tensor  # (22, 3, 3) local
    root_translation: torch.Tensor  # (3,)
    root_orientation: torch.Tensor  # (3, 3)
    positions: torch.Tensor  # (22, 3) global, head-aligned


def _frames_from_output(model: JLMModel, theta: torch.Tensor, head: torch.Tensor) -> list[StreamFrame]:
    """theta (N, 22, 6) of emitted frames, head (N, 3) observed -> per-frame outputs."""
    local = sixd_to_matrix(theta)
    pos, _ = forward_kinematics(local, model.template)
    pos = head_align(pos, head.to(pos.dtype))
    return [StreamFrame(theta[i], local[i], pos[i, 0], local[i, 0], pos[i]) for i in range(theta.shape[0])]


class StreamingInference:
    """Rolling window over the last ``t`` signal rows; each pushed row yields that frame's pose."""

    def __init__(self, model: JLMModel, window: int | None = None):
        t = model.config.t
        if window is not None and window != t:
            raise ShapeMismatch(f"window {window} does not match the model's window {t}")
        self.model = model
        self.buffer: deque = deque(maxlen=t)

    @torch.no_grad()
    def push(self, row) -> StreamFrame:
        row = torch.as_tensor(np.asarray(row), dtype=self.model.dtype)
        if not self.buffer:
            self.buffer.extend([row] * self.buffer.maxlen)  # warm-up: repeat the first observation
        else:
            self.buffer.append(row)
        window = torch.stack(list(self.buffer))
        _, theta = self.model.full_forward(window)
        return _frames_from_output(self.model, theta[-1:], observed_head(row)[None])[0]


def infer_stream(model: JLMModel, signal_source: Iterable, t: int | None = None) -> Iterator[StreamFrame]:
    """Yield one output per incoming signal row; the source may end or raise ``SourceEnded``."""
    engine = StreamingInference(model, t)
    it = iter(signal_source)
    while True:
        try:
            row = next(it)
        except (StopIteration, SourceEnded):
            return
        yield engine.push(row)


def padded_windows(signals: torch.Tensor, t: int) -> torch.Tensor:
    """(T, 54) -> (T, t, 54): window i ends at frame i, left-padded with frame 0."""
    T = signals.shape[0]
    idx = torch.arange(T)[:, None] + torch.arange(-t + 1, 1)[None, :]
    return signals[idx.clamp(min=0)]


@torch.no_grad()
def infer_batch(model: JLMModel, signals, chunk: int = 256) -> list[StreamFrame]:
    """Same outputs as streaming, computed with all windows batched."""
    x = torch.as_tensor(np.asarray(signals), dtype=model.dtype)
    windows = padded_windows(x, model.config.t)
    thetas = [model.full_forward(windows[s : s + chunk])[1][:, -1] for s in range(0, len(windows), chunk)]
    return _frames_from_output(model, torch.cat(thetas), observed_head(x))


def frames_to_motion(frames: list[StreamFrame], fps: float) -> MotionSequence:
    rot = torch.stack([f.rotations for f in frames]).to(torch.float64)
    trans = torch.stack([f.root_translation for f in frames]).to(torch.float64)
    return MotionSequence(fps, matrix_to_axis_angle(rot).numpy(), trans.numpy())


def predict_sequence(model: JLMModel, signals, fps: float) -> MotionSequence:
    return frames_to_motion(infer_batch(model, signals), fps)


def evaluate_model(
    model: JLMModel, dataset: dict[str, MotionSequence], template: SkeletonTemplate | None = None
) -> dict[str, MetricsReport]:
    """Sliding-window predictions from each sequence's own tracking signals, scored against it."""
    template = template or model.template
    reports = {}
    for name, gt in dataset.items():
        pred = predict_sequence(model, derive_tracking_signals(gt, template), gt.fps)
        reports[name] = evaluate_pair(pred, gt, template)
    return reports
