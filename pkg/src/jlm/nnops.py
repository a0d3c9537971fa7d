"""Differentiable building blocks, parameter storage, Adam and a finite-difference gradient checker.

Tensors and reverse-mode gradients come from torch autograd; the layer
functions below are thin, shape-checked definitions on top of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import torch
import torch.nn.functional as F
from torch import Tensor

from .errors import GraphError, MissingGrad, NonFiniteLoss, ShapeMismatch


def _shape(x) -> tuple:
    return tuple(x.shape)


def linear(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W^T + b`` with ``W`` stored as (out, in)."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeMismatch(f"linear: input {_shape(x)} incompatible with weight {_shape(W)}")
    if b is not None and _shape(b) != (W.shape[0],):
        raise ShapeMismatch(f"linear: bias {_shape(b)} incompatible with weight {_shape(W)}")
    return F.linear(x, W, b)


def gelu(x: Tensor) -> Tensor:
    return F.gelu(x)


def relu(x: Tensor) -> Tensor:
    return F.relu(x)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    if _shape(gamma) != (x.shape[-1],) or _shape(beta) != (x.shape[-1],):
        raise ShapeMismatch(f"layer_norm: input {_shape(x)} vs gamma {_shape(gamma)} / beta {_shape(beta)}")
    mean = x.mean(-1, keepdim=True)
    var = x.var(-1, unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps) * gamma + beta


def group_count(channels: int, preferred: int = 32, min_group_size: int = 4) -> int:
    """Groups for ``channels``: 32 when that leaves groups of >= 4 channels, else the gcd with 32 halved until it does."""
    g = math.gcd(channels, preferred)
    while g > 1 and channels // g < min_group_size:
        g //= 2
    return max(g, 1)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Channels-last group normalization over the trailing dimension."""
    C = x.shape[-1]
    if C % groups:
        raise ShapeMismatch(f"group_norm: {C} channels not divisible into {groups} groups")
    if _shape(gamma) != (C,) or _shape(beta) != (C,):
        raise ShapeMismatch(f"group_norm: input {_shape(x)} vs gamma {_shape(gamma)} / beta {_shape(beta)}")
    xg = x.reshape(*x.shape[:-1], groups, C // groups)
    mean = xg.mean(-1, keepdim=True)
    var = xg.var(-1, unbiased=False, keepdim=True)
    xg = (xg - mean) / torch.sqrt(var + eps)
    return xg.reshape(x.shape) * gamma + beta


def concat(xs: Iterable[Tensor], axis: int) -> Tensor:
    xs = list(xs)
    ref = list(xs[0].shape)
    for x in xs[1:]:
        other = list(x.shape)
        if len(other) != len(ref) or any(a != b for i, (a, b) in enumerate(zip(ref, other)) if i != axis % len(ref)):
            raise ShapeMismatch(f"concat along {axis}: {tuple(ref)} vs {tuple(other)}")
    return torch.cat(xs, dim=axis)


def add(x: Tensor, y: Tensor) -> Tensor:
    try:
        torch.broadcast_shapes(x.shape, y.shape)
    except RuntimeError as e:
        raise ShapeMismatch(f"add: {_shape(x)} vs {_shape(y)}") from e
    return x + y


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return torch.softmax(x, dim=axis)


def multi_head_attention(
    tokens: Tensor, Wq: Tensor, Wk: Tensor, Wv: Tensor, Wo: Tensor, heads: int, bo: Tensor | None = None
) -> Tensor:
    """Scaled dot-product self-attention over the second-to-last axis of (..., n, d)."""
    d = tokens.shape[-1]
    if d % heads:
        raise ShapeMismatch(f"attention: width {d} not divisible by {heads} heads")
    for name, W in (("Wq", Wq), ("Wk", Wk), ("Wv", Wv), ("Wo", Wo)):
        if _shape(W) != (d, d):
            raise ShapeMismatch(f"attention: {name} {_shape(W)} vs tokens {_shape(tokens)}")
    n, dh = tokens.shape[-2], d // heads

    def split(x):  # (..., n, d) -> (..., heads, n, dh)
        return x.reshape(*x.shape[:-1], heads, dh).transpose(-2, -3)

    q, k, v = split(linear(tokens, Wq)), split(linear(tokens, Wk)), split(linear(tokens, Wv))
    att = softmax(q @ k.transpose(-1, -2) / math.sqrt(dh), axis=-1)
    out = (att @ v).transpose(-2, -3).reshape(*tokens.shape[:-2], n, d)
    return linear(out, Wo, bo)


# ---------------------------------------------------------------- parameters


class ParamStore:
    """Ordered name -> leaf tensor map; only the optimizer mutates values."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self.step = 0

    def add(self, name: str, value: Tensor) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        p = value.detach().clone().requires_grad_(True)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def names(self) -> list[str]:
        return list(self._params)

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def to(self, dtype) -> "ParamStore":
        out = ParamStore()
        for k, p in self._params.items():
            out.add(k, p.detach().to(dtype))
        out.step = self.step
        return out

    def load(self, values: dict[str, Tensor]) -> None:
        with torch.no_grad():
            for k, v in values.items():
                p = self._params[k]
                if p.shape != v.shape:
                    raise ShapeMismatch(f"parameter {k}: stored {tuple(v.shape)} vs model {tuple(p.shape)}")
                p.copy_(v.to(p.dtype))


def backward(loss: Tensor, store: ParamStore | None = None) -> None:
    """Populate gradients of ``loss``; parameters of ``store`` it does not reach get zero grads."""
    if loss.ndim != 0:
        raise GraphError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if not loss.requires_grad:
        raise GraphError("loss is not connected to any parameter")
    loss.backward()
    if store is not None:
        for p in store._params.values():
            if p.grad is None:
                p.grad = torch.zeros_like(p)


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(store: ParamStore, state: AdamState, lr: float | None = None) -> None:
    """One bias-corrected Adam update; clears grads and advances ``store.step``.

    The update is all-or-nothing: if any parameter would become non-finite,
    ``NonFiniteLoss`` is raised and neither parameters nor moments change.
    """
    lr = state.lr if lr is None else lr
    missing = [k for k, p in store.items() if p.grad is None]
    if missing:
        raise MissingGrad(f"no gradient for {', '.join(missing[:5])}{'...' if len(missing) > 5 else ''}")
    t = state.t + 1
    bc1 = 1 - state.beta1**t
    bc2 = 1 - state.beta2**t
    staged = {}
    with torch.no_grad():
        for k, p in store.items():
            g = p.grad
            m = state.m.get(k, torch.zeros_like(p)) * state.beta1 + g * (1 - state.beta1)
            v = state.v.get(k, torch.zeros_like(p)) * state.beta2 + g * g * (1 - state.beta2)
            new = p - lr * (m / bc1) / (torch.sqrt(v / bc2) + state.eps)
            if not bool(torch.isfinite(new).all()):
                raise NonFiniteLoss(f"parameter {k} would become non-finite at step {store.step + 1}")
            staged[k] = (new, m, v)
        for k, p in store.items():
            new, state.m[k], state.v[k] = staged[k]
            p.copy_(new)
    state.t = t
    store.zero_grad()
    store.step += 1


# ---------------------------------------------------------------- gradient checking


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_param: dict[str, float]
    tolerance: float
    evaluations: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def worst(self) -> str:
        return max(self.per_param, key=self.per_param.get) if self.per_param else ""


def relative_error(a: Tensor, b: Tensor) -> float:
    """``|a - b| / max(|a|, |b|)`` in the Euclidean norm over a whole tensor; 0 when both vanish."""
    diff = float(torch.linalg.vector_norm(a - b))
    scale = max(float(torch.linalg.vector_norm(a)), float(torch.linalg.vector_norm(b)))
    return 0.0 if scale == 0.0 else diff / scale


def grad_check(
    model_fn: Callable[[], Tensor],
    params: ParamStore | dict[str, Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-4,
) -> GradCheckReport:
    """Compare autograd gradients of the scalar ``model_fn()`` against central differences.

    ``model_fn`` must read the parameters in ``params`` and be deterministic.
    """
    items = list(params.items())
    for _, p in items:
        p.grad = None
    loss = model_fn()
    if loss.ndim != 0:
        raise GraphError(f"model_fn must return a scalar, got shape {tuple(loss.shape)}")
    analytic = torch.autograd.grad(loss, [p for _, p in items], allow_unused=True)
    per_param = {}
    evals = 1
    with torch.no_grad():
        for (name, p), g in zip(items, analytic):
            g = torch.zeros_like(p) if g is None else g
            numeric = torch.zeros_like(p)
            flat, nflat = p.view(-1), numeric.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + h
                fp = model_fn().item()
                flat[i] = orig - h
                fm = model_fn().item()
                flat[i] = orig
                nflat[i] = (fp - fm) / (2 * h)
                evals += 2
            per_param[name] = relative_error(g, numeric)
    worst = max(per_param.values(), default=0.0)
    return GradCheckReport(worst, per_param, tolerance, evals)
