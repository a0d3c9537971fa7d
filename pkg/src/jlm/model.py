"""Two-stage joint-level network.

Stage 1 embeds the 54-d tracking rows and regresses an initial pose per frame.
Stage 2 turns that pose into 44 joint tokens (22 rotation + 22 position),
overwrites the tracked joints with observations, and refines the tokens with
alternating spatial and temporal transformer blocks before a shared per-joint
regressor head.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
from torch import Tensor

from . import nnops as nn
from .dataio import SIGNAL_DIM, observed_head, observed_positions, observed_rotations6d
from .errors import ShapeMismatch
from .rotmath import IDENTITY_6D, sixd_to_matrix
from .skeleton import (
    HEAD,
    NUM_JOINTS,
    TRACKED,
    SkeletonTemplate,
    forward_kinematics,
    head_align,
    load_template,
    to_head_relative,
)

NUM_TOKENS = 2 * NUM_JOINTS
POSE_DIM = NUM_JOINTS * 6
# rotation and position tokens of head and both wrists
PROTECTED_TOKENS = tuple(TRACKED) + tuple(j + NUM_JOINTS for j in TRACKED)
MASKABLE_TOKENS = tuple(i for i in range(NUM_TOKENS) if i not in PROTECTED_TOKENS)


@dataclass(frozen=True)
class ModelConfig:
    t: int = 41
    d1: int = 1024
    d2: int = 512
    n: int = 6
    heads: int = 4
    mlp_ratio: int = 4
    mask_count: int = 2

    def __post_init__(self):
        if self.d2 % self.heads:
            raise ValueError(f"d2={self.d2} must be divisible by heads={self.heads}")
        if self.t < 2 or self.n < 1:
            raise ValueError("need t >= 2 and n >= 1")
        if not 0 <= self.mask_count <= len(MASKABLE_TOKENS):
            raise ValueError(f"mask_count must be in [0, {len(MASKABLE_TOKENS)}]")

    @classmethod
    def full(cls) -> "ModelConfig":
        return cls()

    @classmethod
    def desk(cls) -> "ModelConfig":
        return cls(t=11, d1=64, d2=32, n=2, heads=2)

    @classmethod
    def tiny(cls) -> "ModelConfig":
        return cls(t=5, d1=16, d2=8, n=1, heads=2)

    def to_dict(self) -> dict:
        return asdict(self)


# Pose outputs start close to the identity offset: with full-size output
# layers the 6D columns can begin near zero norm, where Gram-Schmidt gradients blow up.
OUT_SCALE = 0.1


class JLMModel:
    def __init__(
        self,
        config: ModelConfig,
        template: SkeletonTemplate | None = None,
        seed: int = 0,
        dtype=torch.float32,
    ):
        self.config = config
        self.template = template or load_template()
        self.dtype = dtype
        self.params = nn.ParamStore()
        self._gen = torch.Generator().manual_seed(seed)
        self._build()

    # -------------------------------------------------------------- parameters

    def _uniform(self, shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return (torch.rand(shape, generator=self._gen, dtype=torch.float64) * 2 - 1).mul(bound).to(self.dtype)

    def _normal(self, shape, std=0.02):
        return (torch.randn(shape, generator=self._gen, dtype=torch.float64) * std).to(self.dtype)

    def _linear(self, name, fan_in, fan_out, bias=True, scale=1.0):
        self.params.add(f"{name}.weight", self._uniform((fan_out, fan_in), fan_in) * scale)
        if bias:
            self.params.add(f"{name}.bias", self._uniform((fan_out,), fan_in) * scale)

    def _norm(self, name, width):
        self.params.add(f"{name}.gamma", torch.ones(width, dtype=self.dtype))
        self.params.add(f"{name}.beta", torch.zeros(width, dtype=self.dtype))

    def _block(self, name):
        d2, hidden = self.config.d2, self.config.d2 * self.config.mlp_ratio
        self._norm(f"{name}.ln1", d2)
        for w in ("wq", "wk", "wv"):
            self._linear(f"{name}.attn.{w}", d2, d2, bias=False)
        self._linear(f"{name}.attn.wo", d2, d2)
        self._norm(f"{name}.ln2", d2)
        self._linear(f"{name}.mlp.fc1", d2, hidden)
        self._linear(f"{name}.mlp.fc2", hidden, d2)

    def _build(self):
        c = self.config
        self._linear("embed.fc1", SIGNAL_DIM, c.d1)
        self._linear("embed.fc2", c.d1, c.d1)
        self._linear("reg.fc1", c.d1, c.d1)
        self._linear("reg.fc2", c.d1, POSE_DIM, scale=OUT_SCALE)
        self._linear("tok_rot", 9, c.d2)
        self._linear("tok_pos", 3, c.d2)
        self._linear("eif", c.d1, c.d2)
        self.params.add("pe_spatial", self._normal((NUM_TOKENS + 1, c.d2)))
        self.params.add("pe_temporal", self._normal((c.t, c.d2)))
        self.params.add("mask_token", self._normal((c.d2,)))
        for k in range(c.n):
            self._block(f"stb{k}")
            self._block(f"ttb{k}")
        self._linear("head.fc1", 2 * c.d2, c.d2)
        self._norm("head.gn", c.d2)
        self._linear("head.fc2", c.d2, 6, scale=OUT_SCALE)

    def to(self, dtype) -> "JLMModel":
        other = JLMModel.__new__(JLMModel)
        other.config, other.template, other.dtype = self.config, self.template, dtype
        other.params = self.params.to(dtype)
        other._gen = None
        return other

    def num_parameters(self) -> int:
        return self.params.num_parameters()

    # -------------------------------------------------------------- helpers

    def _p(self, name):
        return self.params[name]

    def _lin(self, x, name):
        b = f"{name}.bias"
        return nn.linear(x, self._p(f"{name}.weight"), self._p(b) if b in self.params else None)

    def _identity6d(self):
        return torch.tensor(IDENTITY_6D, dtype=self.dtype)

    def _check_signals(self, X):
        if X.ndim != 3 or X.shape[-1] != SIGNAL_DIM:
            raise ShapeMismatch(f"signals must be (B, t, {SIGNAL_DIM}), got {tuple(X.shape)}")

    # -------------------------------------------------------------- stage 1

    def stage1_forward(self, X: Tensor) -> tuple[Tensor, Tensor]:
        """(B, t, 54) -> H_embed (B, t, d1), initial 6D pose (B, t, 22, 6); strictly per frame."""
        self._check_signals(X)
        X = X.to(self.dtype)
        h = self._lin(nn.gelu(self._lin(X, "embed.fc1")), "embed.fc2")
        pose = self._lin(nn.gelu(self._lin(h, "reg.fc1")), "reg.fc2")
        pose = pose.reshape(*X.shape[:-1], NUM_JOINTS, 6) + self._identity6d()
        return h, pose

    # -------------------------------------------------------------- tokens

    def joint_features(self, theta_init: Tensor, X: Tensor) -> tuple[Tensor, Tensor]:
        """Per-joint token inputs after substitution: flattened global rotations (.., 22, 9) and head-relative positions (.., 22, 3)."""
        X = X.to(theta_init.dtype)
        local = sixd_to_matrix(theta_init)
        pos, glob = forward_kinematics(local, self.template)
        pos = to_head_relative(pos, HEAD)
        obs_pos = observed_positions(X)
        obs_pos = obs_pos - obs_pos[..., :1, :]  # head-relative, head first
        obs_rot = sixd_to_matrix(observed_rotations6d(X))
        idx = list(TRACKED)
        pos = pos.clone()
        glob = glob.clone()
        pos[..., idx, :] = obs_pos
        glob[..., idx, :, :] = obs_rot
        return glob.flatten(-2), pos

    def assemble_tokens(self, theta_init: Tensor, X: Tensor, h_embed: Tensor) -> tuple[Tensor, Tensor]:
        """-> H_init (B, t, 44, d2) with rotation tokens 0-21 and position tokens 22-43, and EIF (B, t, d2)."""
        rot9, pos3 = self.joint_features(theta_init, X)
        h_init = nn.concat([self._lin(rot9, "tok_rot"), self._lin(pos3, "tok_pos")], axis=-2)
        return h_init, self._lin(h_embed, "eif")

    def apply_token_mask(self, h_init: Tensor, rng: np.random.Generator) -> tuple[Tensor, np.ndarray]:
        """Replace ``mask_count`` non-tracked tokens per window with the mask embedding (same tokens in every frame)."""
        B = h_init.shape[0]
        k = self.config.mask_count
        allowed = np.asarray(MASKABLE_TOKENS)
        picks = allowed[np.argsort(rng.random((B, len(allowed))), axis=1)[:, :k]]
        mask = np.zeros((B, NUM_TOKENS), dtype=bool)
        np.put_along_axis(mask, picks, True, axis=1)
        m = torch.as_tensor(mask)[:, None, :, None]
        return torch.where(m, self._p("mask_token"), h_init), picks

    # -------------------------------------------------------------- stage 2

    def _transformer_layer(self, x: Tensor, name: str) -> Tensor:
        p = self._p
        y = nn.layer_norm(x, p(f"{name}.ln1.gamma"), p(f"{name}.ln1.beta"))
        y = nn.multi_head_attention(
            y, p(f"{name}.attn.wq.weight"), p(f"{name}.attn.wk.weight"), p(f"{name}.attn.wv.weight"),
            p(f"{name}.attn.wo.weight"), self.config.heads, p(f"{name}.attn.wo.bias"),
        )
        x = nn.add(x, y)
        y = nn.layer_norm(x, p(f"{name}.ln2.gamma"), p(f"{name}.ln2.beta"))
        y = self._lin(nn.gelu(self._lin(y, f"{name}.mlp.fc1")), f"{name}.mlp.fc2")
        return nn.add(x, y)

    def stb_forward(self, h: Tensor, f: Tensor, k: int = 0) -> Tensor:
        """Spatial block over the 44 joint tokens plus the EIF token of each frame; the EIF output is dropped."""
        if h.shape[-2:] != (NUM_TOKENS, self.config.d2) or f.shape != h.shape[:-2] + (self.config.d2,):
            raise ShapeMismatch(f"STB: tokens {tuple(h.shape)}, EIF {tuple(f.shape)}")
        s = nn.concat([h, f.unsqueeze(-2)], axis=-2)
        s = nn.add(s, self._p("pe_spatial"))
        return self._transformer_layer(s, f"stb{k}")[..., :NUM_TOKENS, :]

    def ttb_forward(self, h: Tensor, k: int = 0) -> Tensor:
        """Temporal block: each of the 44 feature slices attends over its t frames (shared weights)."""
        if h.shape[-3] != self.config.t or h.shape[-1] != self.config.d2:
            raise ShapeMismatch(f"TTB: tokens {tuple(h.shape)} need t={self.config.t}, d2={self.config.d2}")
        x = nn.add(h.transpose(-2, -3), self._p("pe_temporal"))
        return self._transformer_layer(x, f"ttb{k}").transpose(-2, -3)

    def stacked_forward(self, h_init: Tensor, f: Tensor) -> Tensor:
        h = h_init
        for k in range(self.config.n):
            h = self.stb_forward(h, f, k)
            h = self.ttb_forward(h, k)
        return h

    def regress_smpl(self, h_st: Tensor) -> Tensor:
        """(.., 44, d2) -> (.., 22, 6); joint j reads rotation token j and position token j + 22."""
        if h_st.shape[-2:] != (NUM_TOKENS, self.config.d2):
            raise ShapeMismatch(f"regressor input {tuple(h_st.shape)}")
        pair = nn.concat([h_st[..., :NUM_JOINTS, :], h_st[..., NUM_JOINTS:, :]], axis=-1)
        y = self._lin(pair, "head.fc1")
        y = nn.group_norm(y, nn.group_count(y.shape[-1]), self._p("head.gn.gamma"), self._p("head.gn.beta"))
        y = self._lin(nn.gelu(y), "head.fc2")
        return y + self._identity6d()

    def full_forward(self, X: Tensor, mask_rng: np.random.Generator | None = None) -> tuple[Tensor, Tensor]:
        """Signals (B, t, 54) or (t, 54) -> (initial pose, final pose), both 6D per joint.

        Masking is applied only when ``mask_rng`` is given.
        """
        squeeze = X.ndim == 2
        if squeeze:
            X = X.unsqueeze(0)
        X = X.to(self.dtype)
        h_embed, theta_init = self.stage1_forward(X)
        h_init, f = self.assemble_tokens(theta_init, X, h_embed)
        if mask_rng is not None and self.config.mask_count:
            h_init, _ = self.apply_token_mask(h_init, mask_rng)
        theta = self.regress_smpl(self.stacked_forward(h_init, f))
        if squeeze:
            return theta_init[0], theta[0]
        return theta_init, theta

    def global_positions(self, theta: Tensor, X: Tensor) -> Tensor:
        """FK of a 6D pose, head-aligned to the observed head of ``X``."""
        local, _ = forward_kinematics(sixd_to_matrix(theta), self.template)
        return head_align(local, observed_head(X).to(local.dtype))
