"""Geometry primitives: unit cases plus randomized transform properties.

Expected values for the non-trivial cases are computed with an independent
4x4 homogeneous-matrix oracle (numpy) rather than with the code under test.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dismantle.geometry import (
    Action,
    DeltaMotion,
    GripperCommand,
    Instruction,
    Pose,
    apply_delta,
    compose,
    gripper_byte_for_width,
    gripper_width_m,
    inverse,
    pose_distance,
    quat_about_z,
    quat_from_axis_angle,
    slerp,
)


def _mat(pose: Pose) -> np.ndarray:
    """Homogeneous-matrix oracle, independent of compose/apply_delta."""
    w, x, y, z = pose.orientation
    rot = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = pose.position
    return m


def _random_pose(rng: np.random.Generator) -> Pose:
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    return Pose(tuple(rng.uniform(-1, 1, size=3)), tuple(q))


def test_compose_identity():
    p = Pose((0.1, -0.2, 0.3), quat_about_z(0.7))
    assert compose(Pose.identity(), p) == p


def test_compose_inverse_is_identity():
    p = Pose((0.4, 0.1, -0.2), quat_from_axis_angle((0.3, -0.5, 0.2)))
    ident = compose(p, inverse(p))
    d_pos, d_rot = pose_distance(ident, Pose.identity())
    assert d_pos < 1e-9 and d_rot < 1e-9


def test_compose_pure_translations():
    # hand-computed homogeneous product: T(1,0,0) @ T(0,2,0) = T(1,2,0)
    a = Pose.from_translation(1.0, 0.0, 0.0)
    b = Pose.from_translation(0.0, 2.0, 0.0)
    assert compose(a, b).position == (1.0, 2.0, 0.0)


def test_compose_matches_matrix_oracle():
    rng = np.random.default_rng(7)
    for _ in range(50):
        a, b = _random_pose(rng), _random_pose(rng)
        got = compose(a, b)
        expect = _mat(a) @ _mat(b)
        np.testing.assert_allclose(_mat(got), expect, atol=1e-9)


def test_compose_associative():
    rng = np.random.default_rng(11)
    for _ in range(50):
        a, b, c = (_random_pose(rng) for _ in range(3))
        lhs = compose(compose(a, b), c)
        rhs = compose(a, compose(b, c))
        d_pos, d_rot = pose_distance(lhs, rhs)
        assert d_pos < 1e-9 and d_rot < 1e-8


def test_apply_delta_zero_is_identity():
    rng = np.random.default_rng(3)
    for _ in range(20):
        p = _random_pose(rng)
        assert apply_delta(p, DeltaMotion.zero()) == p


def test_apply_delta_pure_translation():
    moved = apply_delta(Pose.identity(), DeltaMotion(translation=(0.0, 0.0, 0.1)))
    assert moved.position == (0.0, 0.0, 0.1)


def test_apply_delta_translation_is_base_frame():
    # pose rotated 90 deg about z; base-frame x-translation must not rotate
    p = Pose((0.0, 0.0, 0.0), quat_about_z(math.pi / 2))
    moved = apply_delta(p, DeltaMotion(translation=(0.1, 0.0, 0.0)))
    np.testing.assert_allclose(moved.position, (0.1, 0.0, 0.0), atol=1e-12)
    # matrix oracle: base-frame translation adds to the position column only
    expect = _mat(p).copy()
    expect[:3, 3] += (0.1, 0.0, 0.0)
    np.testing.assert_allclose(_mat(moved), expect, atol=1e-12)


def test_apply_delta_rotation_composes_on_the_right():
    p = Pose((0.2, 0.0, 0.0), quat_about_z(0.3))
    d = DeltaMotion(rotation=(0.0, 0.0, 0.2))
    moved = apply_delta(p, d)
    expect = _mat(p) @ _mat(Pose((0, 0, 0), quat_about_z(0.2)))
    np.testing.assert_allclose(_mat(moved), expect, atol=1e-12)


def test_pose_distance_zero_on_equal():
    p = Pose((0.3, 0.2, 0.1), quat_about_z(1.0))
    assert pose_distance(p, p) == (0.0, 0.0)


def test_pose_distance_345_triangle():
    a = Pose.identity()
    b = Pose.from_translation(0.0, 3e-3, 4e-3)
    d_pos, d_rot = pose_distance(a, b)
    assert abs(d_pos - 5e-3) < 1e-15
    assert d_rot == 0.0


def test_pose_distance_antipodal_rotation():
    a = Pose.identity()
    b = Pose((0.0, 0.0, 0.0), (0.0, 1.0, 0.0, 0.0))  # 180 deg about x
    d_pos, d_rot = pose_distance(a, b)
    assert d_pos == 0.0
    assert abs(d_rot - math.pi) < 1e-12


def test_pose_distance_symmetric_and_triangle():
    rng = np.random.default_rng(5)
    for _ in range(50):
        a, b, c = (_random_pose(rng) for _ in range(3))
        dab = pose_distance(a, b)
        dba = pose_distance(b, a)
        assert abs(dab[0] - dba[0]) < 1e-9 and abs(dab[1] - dba[1]) < 1e-9
        dac = pose_distance(a, c)
        dcb = pose_distance(c, b)
        assert dab[0] <= dac[0] + dcb[0] + 1e-9
        assert dab[1] <= dac[1] + dcb[1] + 1e-9


@given(st.floats(-math.pi, math.pi), st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_slerp_about_z_matches_angle_scaling(yaw, t):
    got = slerp((1.0, 0.0, 0.0, 0.0), quat_about_z(yaw), t)
    _, err = pose_distance(Pose((0, 0, 0), got), Pose((0, 0, 0), quat_about_z(yaw * t)))
    assert err < 1e-7


def test_quaternion_norm_enforced():
    with pytest.raises(ValueError):
        Pose((0.0, 0.0, 0.0), (1.0, 0.0, 0.1, 0.0))


def test_delta_rotation_magnitude_capped():
    with pytest.raises(ValueError):
        DeltaMotion(rotation=(4.0, 0.0, 0.0))


@pytest.mark.parametrize("byte", [251, 252, 253, 254, -1, 256])
def test_reserved_gripper_bytes_rejected(byte):
    with pytest.raises(ValueError):
        GripperCommand(byte)


def test_gripper_sentinel_and_range():
    assert GripperCommand(255).is_stop()
    assert not GripperCommand(250).is_stop()
    assert not GripperCommand(0).is_stop()
    assert Action.stop().gripper.value == 255


def test_gripper_width_mapping():
    assert gripper_width_m(0) == 0.085
    assert gripper_width_m(250) == 0.0
    assert abs(gripper_width_m(125) - 0.0425) < 1e-12
    with pytest.raises(ValueError):
        gripper_width_m(255)
    assert gripper_byte_for_width(0.085) == 0
    assert gripper_byte_for_width(0.0) == 250


def test_instruction_nonempty():
    with pytest.raises(ValueError):
        Instruction("")
    with pytest.raises(ValueError):
        Instruction("   ")
    assert Instruction("extract the CPU").text
