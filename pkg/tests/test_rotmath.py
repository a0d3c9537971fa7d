import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from jlm import rotmath
from jlm.errors import DegenerateInput, InvalidRotation
from jlm.rotmath import rot_z

from conftest import random_rotations

finite = st.floats(-10, 10, allow_nan=False)
vec6 = st.lists(finite, min_size=6, max_size=6)


def six(*v):
    return torch.tensor(v, dtype=torch.float64)


def test_sixd_identity():
    assert torch.equal(rotmath.sixd_to_matrix(six(1, 0, 0, 0, 1, 0)), torch.eye(3, dtype=torch.float64))


def test_sixd_removes_parallel_part():
    # hand Gram-Schmidt: b1 = x, a2 - (b1.a2) b1 = (0, 1, 0)
    m = rotmath.sixd_to_matrix(six(1, 0, 0, 1, 1, 0))
    assert torch.allclose(m, torch.eye(3, dtype=torch.float64), atol=1e-15)


def test_sixd_quarter_turn_about_z():
    expected = torch.tensor([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]], dtype=torch.float64)
    m = rotmath.sixd_to_matrix(six(0, 1, 0, -1, 0, 0))
    assert torch.allclose(m, expected, atol=1e-15)
    assert torch.allclose(m, rot_z(90), atol=1e-15)


@pytest.mark.parametrize("bad", [(0, 0, 0, 0, 1, 0), (1, 0, 0, 2, 0, 0), (1e-9, 0, 0, 0, 1, 0)])
def test_sixd_degenerate(bad):
    with pytest.raises(DegenerateInput):
        rotmath.sixd_to_matrix(six(*bad))


def test_matrix_to_sixd_columns():
    assert rotmath.matrix_to_sixd(torch.eye(3, dtype=torch.float64)).tolist() == [1, 0, 0, 0, 1, 0]
    assert torch.allclose(rotmath.matrix_to_sixd(rot_z(90)), six(0, 1, 0, -1, 0, 0), atol=1e-15)


def test_matrix_to_sixd_rejects_non_rotation():
    with pytest.raises(InvalidRotation):
        rotmath.matrix_to_sixd(2 * torch.eye(3, dtype=torch.float64))
    with pytest.raises(InvalidRotation):
        rotmath.matrix_to_sixd(torch.diag(torch.tensor([1.0, 1.0, -1.0], dtype=torch.float64)))


def test_sixd_round_trip(rng):
    m = random_rotations(rng, 500)
    back = rotmath.sixd_to_matrix(rotmath.matrix_to_sixd(m))
    assert (back - m).abs().max() < 1e-6


@settings(max_examples=200, deadline=None)
@given(vec6)
def test_sixd_orthonormal(v):
    r = torch.tensor(v, dtype=torch.float64)
    a1, a2 = r[:3], r[3:]
    n1 = a1.norm()
    if n1 < 1e-3 or (a2 - (a1 @ a2) / n1**2 * a1).norm() < 1e-3:
        return
    m = rotmath.sixd_to_matrix(r)
    assert (m.T @ m - torch.eye(3, dtype=torch.float64)).abs().max() < 1e-6
    assert abs(torch.linalg.det(m) - 1) < 1e-6
    out = rotmath.matrix_to_sixd(m)
    assert abs(out[:3].norm() - 1) < 1e-6 and abs(out[3:].norm() - 1) < 1e-6
    assert abs(out[:3] @ out[3:]) < 1e-6


def test_sixd_continuity(rng):
    r = torch.as_tensor(rng.standard_normal((200, 6)))
    eps = torch.as_tensor(rng.standard_normal((200, 6))) * 1e-6
    delta = (rotmath.sixd_to_matrix(r + eps) - rotmath.sixd_to_matrix(r)).abs().amax()
    assert delta < 1e-4


def test_sixd_jacobian_matches_central_differences(rng):
    h = 1e-5
    for _ in range(20):
        r = torch.as_tensor(rng.standard_normal(6))
        jac = torch.autograd.functional.jacobian(rotmath.sixd_to_matrix, r).reshape(9, 6)
        num = torch.stack(
            [(rotmath.sixd_to_matrix(r + h * e) - rotmath.sixd_to_matrix(r - h * e)).reshape(9) / (2 * h)
             for e in torch.eye(6, dtype=torch.float64)],
            dim=1,
        )
        assert (jac - num).norm() / jac.norm() < 1e-5


def test_axis_angle_basics():
    assert torch.equal(rotmath.axis_angle_to_matrix(torch.zeros(3, dtype=torch.float64)), torch.eye(3, dtype=torch.float64))
    m = rotmath.axis_angle_to_matrix(torch.tensor([0, 0, math.pi / 2], dtype=torch.float64))
    assert torch.allclose(m, rot_z(90), atol=1e-15)
    assert torch.equal(rotmath.matrix_to_axis_angle(torch.eye(3, dtype=torch.float64)), torch.zeros(3, dtype=torch.float64))


def test_axis_angle_matches_rodrigues_oracle(rng):
    # independent numpy Rodrigues: R = cos I + sin K + (1 - cos) k k^T
    for _ in range(20):
        r = rng.standard_normal(3)
        th = np.linalg.norm(r)
        k = r / th
        K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        ref = math.cos(th) * np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * np.outer(k, k)
        assert np.allclose(rotmath.axis_angle_to_matrix(torch.as_tensor(r)).numpy(), ref, atol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3), st.floats(1e-6, 2.999))
def test_axis_angle_round_trip(direction, angle):
    d = np.asarray(direction)
    if np.linalg.norm(d) < 1e-3:
        return
    r = torch.as_tensor(d / np.linalg.norm(d) * angle)
    back = rotmath.matrix_to_axis_angle(rotmath.axis_angle_to_matrix(r))
    assert (back - r).abs().max() < 1e-6


def test_axis_angle_near_and_at_pi(rng):
    for _ in range(50):
        k = rng.standard_normal(3)
        k /= np.linalg.norm(k)
        for angle in (math.pi - 1e-7, math.pi - 1e-3, 3.1):
            r = torch.as_tensor(k * angle)
            back = rotmath.matrix_to_axis_angle(rotmath.axis_angle_to_matrix(r))
            assert (back - r).abs().max() < 1e-6
        m = rotmath.axis_angle_to_matrix(torch.as_tensor(k * math.pi))
        back = rotmath.matrix_to_axis_angle(m)
        assert abs(back.norm() - math.pi) < 1e-9
        assert torch.allclose(rotmath.axis_angle_to_matrix(back), m, atol=1e-9)


def test_geodesic_examples():
    eye = torch.eye(3, dtype=torch.float64)
    assert rotmath.geodesic_angle_deg(eye, eye) == 0
    assert abs(rotmath.geodesic_angle_deg(eye, rot_z(90)) - 90) < 1e-12
    assert abs(rotmath.geodesic_angle_deg(rot_z(30), rot_z(75)) - 45) < 1e-9


def test_geodesic_symmetry_and_triangle(rng):
    a, b, c = random_rotations(rng, 3, 300)
    ab, ba = rotmath.geodesic_angle_deg(a, b), rotmath.geodesic_angle_deg(b, a)
    assert torch.allclose(ab, ba, atol=1e-9)
    assert ((0 <= ab) & (ab <= 180)).all()
    bc, ac = rotmath.geodesic_angle_deg(b, c), rotmath.geodesic_angle_deg(a, c)
    assert (ac <= ab + bc + 1e-9).all()


def test_rotation_delta(rng):
    R = random_rotations(rng, 10)
    assert torch.allclose(rotmath.rotation_delta(R, R), torch.eye(3, dtype=torch.float64).expand(10, 3, 3), atol=1e-12)
    assert torch.allclose(rotmath.rotation_delta(rot_z(90), torch.eye(3, dtype=torch.float64)), rot_z(90))
    assert torch.allclose(rotmath.rotation_delta(rot_z(80), rot_z(50)), rot_z(30), atol=1e-12)
    P = random_rotations(rng, 10)
    assert torch.allclose(rotmath.rotation_delta(R, P) @ P, R, atol=1e-12)
