"""End-to-end finite-difference check of model + total loss in double precision."""

from __future__ import annotations

import torch

from .dataio import WindowBatch, prepare
from .losses import LossWeights, compute_losses
from .model import JLMModel, ModelConfig
from .nnops import GradCheckReport, grad_check
from .skeleton import SkeletonTemplate, load_template
from .synth import synth_generate


def gradcheck_batch(t: int, template: SkeletonTemplate, starts=(30, 50)) -> WindowBatch:
    """Two windows of a stepping motion, chosen so both contact states occur."""
    p = prepare(synth_generate("walk_cycle", 2.0, 60.0, seed=3, template=template), template)

    def cut(a):
        return torch.stack([torch.as_tensor(a[s : s + t]) for s in starts]).to(torch.float64)

    return WindowBatch(cut(p.signals), cut(p.rot6d), cut(p.positions), cut(p.contact))


def full_model_gradcheck(
    cfg: ModelConfig = ModelConfig.tiny(),
    weights: LossWeights = LossWeights(),
    seed: int = 0,
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    template = load_template()
    model = JLMModel(cfg, template, seed=seed, dtype=torch.float64)
    batch = gradcheck_batch(cfg.t, template)

    def loss_fn():
        theta_init, theta = model.full_forward(batch.signals)
        total, _ = compute_losses(theta_init, theta, batch, template, weights)
        return total

    return grad_check(loss_fn, model.params, h=h, tolerance=tolerance)
