import math

import numpy as np
import pytest
import torch

from jlm import nnops as nn
from jlm.errors import GraphError, MissingGrad, ShapeMismatch


def scalar_adam(grad_fn, w, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    """Plain-float Adam used as the reference run."""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return w


def naive_attention(x, Wq, Wk, Wv, Wo, heads, bo):
    """Loop-based attention oracle on numpy arrays."""
    n, d = x.shape
    dh = d // heads
    q, k, v = x @ Wq.T, x @ Wk.T, x @ Wv.T
    out = np.zeros((n, d))
    for h in range(heads):
        sl = slice(h * dh, (h + 1) * dh)
        for i in range(n):
            scores = np.array([q[i, sl] @ k[j, sl] / math.sqrt(dh) for j in range(n)])
            w = np.exp(scores - scores.max())
            w /= w.sum()
            out[i, sl] = sum(w[j] * v[j, sl] for j in range(n))
    return out @ Wo.T + bo


def finite_diff_check(fn, *inputs, h=1e-6):
    inputs = [x.clone().requires_grad_(True) for x in inputs]
    out = fn(*inputs)
    weights = torch.randn(out.shape, generator=torch.Generator().manual_seed(99), dtype=torch.float64)

    def scalar(*xs):
        return (fn(*xs) * weights).sum()

    grads = torch.autograd.grad(scalar(*inputs), inputs, allow_unused=True)
    grads = [torch.zeros_like(x) if g is None else g for x, g in zip(inputs, grads)]
    worst = 0.0
    with torch.no_grad():
        for x, g in zip(inputs, grads):
            num = torch.zeros_like(x)
            for i in range(x.numel()):
                old = x.view(-1)[i].item()
                x.view(-1)[i] = old + h
                fp = scalar(*inputs).item()
                x.view(-1)[i] = old - h
                fm = scalar(*inputs).item()
                x.view(-1)[i] = old
                num.view(-1)[i] = (fp - fm) / (2 * h)
            worst = max(worst, nn.relative_error(g, num))
    return worst


def test_linear_identity():
    x = torch.randn(4, 5)
    assert torch.equal(nn.linear(x, torch.eye(5), torch.zeros(5)), x)


def test_linear_shape_mismatch_message():
    with pytest.raises(ShapeMismatch, match=r"\(4, 5\).*\(3, 6\)"):
        nn.linear(torch.randn(4, 5), torch.randn(3, 6))


def test_softmax_uniform():
    assert torch.allclose(nn.softmax(torch.full((7,), 2.5)), torch.full((7,), 1 / 7))


def test_group_norm_moments():
    x = torch.randn(3, 10, 64, generator=torch.Generator().manual_seed(5)) * 4 + 2
    y = nn.group_norm(x, 8, torch.ones(64), torch.zeros(64), eps=0.0).reshape(3, 10, 8, 8)
    assert y.mean(-1).abs().max() < 1e-12
    assert (y.var(-1, unbiased=False) - 1).abs().max() < 1e-12


@pytest.mark.parametrize("channels,groups", [(512, 32), (1024, 32), (64, 16), (32, 8), (8, 2), (16, 4), (6, 1)])
def test_group_count(channels, groups):
    assert nn.group_count(channels) == groups


def test_concat_and_add_shapes():
    assert nn.concat([torch.zeros(2, 3), torch.zeros(2, 4)], axis=1).shape == (2, 7)
    with pytest.raises(ShapeMismatch):
        nn.concat([torch.zeros(2, 3), torch.zeros(3, 4)], axis=1)
    with pytest.raises(ShapeMismatch):
        nn.add(torch.zeros(2, 3), torch.zeros(4))


@pytest.mark.parametrize(
    "op",
    [
        lambda x, W, b: nn.linear(x, W, b),
        lambda x, W, b: nn.gelu(x),
        lambda x, W, b: nn.softmax(x, axis=-1),
        lambda x, W, b: nn.layer_norm(x, b[:4] + 1, b[:4]),
        lambda x, W, b: nn.group_norm(x, 1, b[:4] + 1, b[:4]),
        lambda x, W, b: nn.concat([x, 2 * x], axis=0),
        lambda x, W, b: nn.add(x, b[:4]),
    ],
)
def test_op_gradients(op):
    g = torch.Generator().manual_seed(0)
    x = torch.randn(3, 4, generator=g)
    W = torch.randn(5, 4, generator=g)
    b = torch.randn(5, generator=g)
    assert finite_diff_check(op, x, W, b) < 1e-6


def test_relu_gradient_away_from_kink():
    x = torch.tensor([[-1.0, 0.5, 2.0, -0.3]])
    assert finite_diff_check(nn.relu, x) < 1e-6


def attention_params(d, seed=0):
    g = torch.Generator().manual_seed(seed)
    return [torch.randn(d, d, generator=g) / math.sqrt(d) for _ in range(4)] + [torch.randn(d, generator=g)]


def test_attention_single_token():
    Wq, Wk, Wv, Wo, bo = attention_params(4)
    x = torch.randn(1, 4)
    out = nn.multi_head_attention(x, Wq, Wk, Wv, Wo, 2, bo)
    assert torch.allclose(out[0], Wo @ (Wv @ x[0]) + bo, atol=1e-12)


def test_attention_permutation_equivariant():
    Wq, Wk, Wv, Wo, bo = attention_params(8)
    x = torch.randn(6, 8)
    perm = torch.randperm(6)
    a = nn.multi_head_attention(x, Wq, Wk, Wv, Wo, 2, bo)
    b = nn.multi_head_attention(x[perm], Wq, Wk, Wv, Wo, 2, bo)
    assert torch.allclose(a[perm], b, atol=1e-12)


def test_attention_matches_naive_oracle():
    Wq, Wk, Wv, Wo, bo = attention_params(4, seed=3)
    x = torch.randn(3, 4, generator=torch.Generator().manual_seed(4))
    out = nn.multi_head_attention(x, Wq, Wk, Wv, Wo, 2, bo).numpy()
    ref = naive_attention(*(t.numpy() for t in (x, Wq, Wk, Wv, Wo)), 2, bo.numpy())
    assert np.abs(out - ref).max() < 1e-6


def test_attention_gradients():
    Wq, Wk, Wv, Wo, bo = attention_params(4, seed=5)
    x = torch.randn(3, 4)
    err = finite_diff_check(lambda x, a, b, c, d: nn.multi_head_attention(x, a, b, c, d, 2, bo), x, Wq, Wk, Wv, Wo)
    assert err < 1e-6


def test_attention_head_divisibility():
    with pytest.raises(ShapeMismatch):
        nn.multi_head_attention(torch.zeros(2, 6), *[torch.zeros(6, 6)] * 4, heads=4)


def test_backward_linear_sum():
    store = nn.ParamStore()
    W = store.add("W", torch.randn(3, 4))
    unused = store.add("unused", torch.randn(2))
    x = torch.randn(4)
    nn.backward(nn.linear(x, W).sum(), store)
    assert torch.allclose(W.grad, x.expand(3, 4))  # d sum(Wx) / dW_ij = x_j
    assert torch.equal(unused.grad, torch.zeros(2))


def test_backward_requires_scalar():
    W = torch.randn(3, requires_grad=True)
    with pytest.raises(GraphError):
        nn.backward(W * 2)


def test_adam_zero_grad_is_noop():
    store = nn.ParamStore()
    w = store.add("w", torch.tensor([1.0, -2.0]))
    before = w.detach().clone()
    w.grad = torch.zeros(2)
    nn.adam_step(store, nn.AdamState(lr=0.1))
    assert torch.equal(w.detach(), before)
    assert store.step == 1 and w.grad is None


def test_adam_descends():
    store = nn.ParamStore()
    w = store.add("w", torch.tensor(1.0))
    nn.backward(w**2, store)
    nn.adam_step(store, nn.AdamState(lr=0.1))
    assert w.item() < 1


def test_adam_converges_like_reference():
    store = nn.ParamStore()
    w = store.add("w", torch.tensor(0.0))
    state = nn.AdamState(lr=0.1)
    for _ in range(500):
        nn.backward((w - 3) ** 2, store)
        nn.adam_step(store, state)
    ref = scalar_adam(lambda v: 2 * (v - 3), 0.0, 0.1, 500)
    assert abs(w.item() - 3) < 1e-2
    assert abs(w.item() - ref) < 1e-9


def test_adam_missing_grad():
    store = nn.ParamStore()
    store.add("w", torch.zeros(1))
    with pytest.raises(MissingGrad):
        nn.adam_step(store, nn.AdamState())


def test_grad_check_quadratic():
    store = nn.ParamStore()
    a = store.add("a", torch.randn(5))
    B = store.add("B", torch.randn(3, 5))
    rep = nn.grad_check(lambda: (a**2).sum() + (B @ a).pow(2).sum() * 0.5, store)
    assert rep.max_rel_error < 1e-8 and rep.passed
    assert set(rep.per_param) == {"a", "B"}


def test_grad_check_detects_wrong_gradient():
    class Bad(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return x**2

        @staticmethod
        def backward(ctx, g):
            (x,) = ctx.saved_tensors
            return 3 * x * g  # wrong on purpose

    store = nn.ParamStore()
    store.add("x", torch.randn(4))
    assert not nn.grad_check(lambda: Bad.apply(store["x"]).sum(), store).passed


def test_param_store_unique_names():
    store = nn.ParamStore()
    store.add("w", torch.zeros(1))
    with pytest.raises(KeyError):
        store.add("w", torch.zeros(1))
