"""Rotation conversions on batched torch tensors.

All functions accept arbitrary leading batch dimensions. 6D rotations are the
first two columns of the matrix, column-major: ``(a1x, a1y, a1z, a2x, a2y, a2z)``.
"""

from __future__ import annotations

import math

import torch
from torch import Tensor

from .errors import DegenerateInput, InvalidRotation

DEGENERATE_EPS = 1e-8
IDENTITY_6D = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0)


def identity_6d(*batch, dtype=torch.float32) -> Tensor:
    return torch.tensor(IDENTITY_6D, dtype=dtype).expand(*batch, 6).clone()


def sixd_to_matrix(r: Tensor, check: bool = True) -> Tensor:
    """Gram-Schmidt map from (..., 6) to (..., 3, 3).

    Columns are ``b1 = a1/|a1|``, ``b2 = normalize(a2 - (b1.a2) b1)``, ``b3 = b1 x b2``.
    Raises DegenerateInput when either vector collapses below 1e-8.
    """
    if r.shape[-1] != 6:
        raise DegenerateInput(f"expected trailing dim 6, got shape {tuple(r.shape)}")
    a1, a2 = r[..., :3], r[..., 3:]
    n1 = torch.linalg.vector_norm(a1, dim=-1, keepdim=True)
    if check and bool((n1 < DEGENERATE_EPS).any()):
        raise DegenerateInput("first 6D column has near-zero norm")
    b1 = a1 / n1
    u2 = a2 - (b1 * a2).sum(-1, keepdim=True) * b1
    n2 = torch.linalg.vector_norm(u2, dim=-1, keepdim=True)
    if check and bool((n2 < DEGENERATE_EPS).any()):
        raise DegenerateInput("second 6D column is parallel to the first")
    b2 = u2 / n2
    b3 = torch.cross(b1, b2, dim=-1)
    return torch.stack((b1, b2, b3), dim=-1)


def check_rotation(m: Tensor, tol: float = 1e-4) -> None:
    eye = torch.eye(3, dtype=m.dtype)
    orth = (m.transpose(-1, -2) @ m - eye).abs().amax() if m.numel() else m.new_zeros(())
    det = (torch.linalg.det(m) - 1.0).abs().amax() if m.numel() else m.new_zeros(())
    if not bool(torch.isfinite(m).all()) or float(orth) > tol or float(det) > tol:
        raise InvalidRotation(
            f"not a rotation: max |M^T M - I| = {float(orth):.3g}, max |det - 1| = {float(det):.3g}"
        )


def matrix_to_sixd(m: Tensor, check: bool = True) -> Tensor:
    if check:
        check_rotation(m)
    return torch.cat((m[..., :, 0], m[..., :, 1]), dim=-1)


def skew(v: Tensor) -> Tensor:
    x, y, z = v.unbind(-1)
    o = torch.zeros_like(x)
    return torch.stack(
        (torch.stack((o, -z, y), -1), torch.stack((z, o, -x), -1), torch.stack((-y, x, o), -1)),
        dim=-2,
    )


def axis_angle_to_matrix(r: Tensor) -> Tensor:
    """Rodrigues' formula, using Taylor coefficients below 1e-4 rad."""
    theta2 = (r * r).sum(-1, keepdim=True).unsqueeze(-1)
    theta = theta2.sqrt()
    small = theta < 1e-4
    safe = torch.where(small, torch.ones_like(theta), theta)
    a = torch.where(small, 1 - theta2 / 6, torch.sin(safe) / safe)
    b = torch.where(small, 0.5 - theta2 / 24, (1 - torch.cos(safe)) / (safe * safe))
    K = skew(r)
    eye = torch.eye(3, dtype=r.dtype).expand_as(K)
    return eye + a * K + b * (K @ K)


def matrix_to_axis_angle(m: Tensor) -> Tensor:
    """Inverse of Rodrigues with angle in [0, pi].

    Near pi the axis comes from the symmetric part, seeded by the
    largest-diagonal column; its sign follows the skew part, and at exactly pi
    the largest component is made positive.
    """
    vee = torch.stack(
        (m[..., 2, 1] - m[..., 1, 2], m[..., 0, 2] - m[..., 2, 0], m[..., 1, 0] - m[..., 0, 1]), -1
    )
    cos = ((m[..., 0, 0] + m[..., 1, 1] + m[..., 2, 2]) - 1) / 2
    sin = torch.linalg.vector_norm(vee, dim=-1) / 2
    angle = torch.atan2(sin, cos)

    # generic branch: vee = 2 sin(angle) axis
    small = sin < 1e-12
    factor = torch.where(small, torch.full_like(angle, 0.5), angle / (2 * torch.where(small, torch.ones_like(sin), sin)))
    out = vee * factor.unsqueeze(-1)

    # obtuse branch: (M + M^T)/2 - cos I = (1 - cos) a a^T
    obtuse = cos < 0
    if bool(obtuse.any()):
        eye = torch.eye(3, dtype=m.dtype)
        sym = (m + m.transpose(-1, -2)) / 2 - cos[..., None, None] * eye
        sym = sym / (1 - cos)[..., None, None]
        diag = torch.diagonal(sym, dim1=-2, dim2=-1)
        k = diag.argmax(-1)
        col = torch.gather(sym, -1, k[..., None, None].expand(*k.shape, 3, 1)).squeeze(-1)
        axis = col / torch.linalg.vector_norm(col, dim=-1, keepdim=True)
        sign = torch.sign((axis * vee).sum(-1))
        at_pi = sign == 0
        if bool(at_pi.any()):
            lead = torch.gather(axis, -1, axis.abs().argmax(-1, keepdim=True)).squeeze(-1)
            sign = torch.where(at_pi, torch.sign(lead), sign)
        alt = axis * (sign * angle).unsqueeze(-1)
        out = torch.where(obtuse.unsqueeze(-1), alt, out)
    return out


def geodesic_angle_deg(a: Tensor, b: Tensor) -> Tensor:
    """Relative rotation angle in degrees, in [0, 180].

    Equal to ``arccos((tr(a^T b) - 1) / 2)`` but evaluated with atan2 so that
    near-identical rotations do not lose half their digits.
    """
    r = a.transpose(-1, -2) @ b
    cos = ((r[..., 0, 0] + r[..., 1, 1] + r[..., 2, 2] - 1) / 2).clamp(-1.0, 1.0)
    vee = torch.stack(
        (r[..., 2, 1] - r[..., 1, 2], r[..., 0, 2] - r[..., 2, 0], r[..., 1, 0] - r[..., 0, 1]), -1
    )
    sin = torch.linalg.vector_norm(vee, dim=-1) / 2
    return torch.rad2deg(torch.atan2(sin, cos))


def rotation_delta(curr: Tensor, prev: Tensor) -> Tensor:
    """World-frame delta ``curr @ prev^T`` so that ``delta @ prev == curr``."""
    return curr @ prev.transpose(-1, -2)


def rot_z(deg: float, dtype=torch.float64) -> Tensor:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return torch.tensor([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], dtype=dtype)


def rot_x(deg: float, dtype=torch.float64) -> Tensor:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return torch.tensor([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], dtype=dtype)
