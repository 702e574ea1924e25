"""Rigid-transform and control primitives shared by every other module.

Poses are position + unit quaternion (w, x, y, z). Motion increments are
base-frame translations paired with body-composed axis-angle rotations.
All types are immutable values and safe to share across threads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

Vec3 = tuple[float, float, float]
Quat = tuple[float, float, float, float]

_QUAT_NORM_TOL = 1e-9

# Gripper byte semantics: 0 = fully open, 250 = fully closed, 255 is the
# reserved mode-switch sentinel. 251..254 are invalid on the wire.
GRIPPER_MAX_BYTE = 250
GRIPPER_STOP_BYTE = 255


def _qnorm(q: Quat) -> float:
    w, x, y, z = q
    return math.sqrt(w * w + x * x + y * y + z * z)


def qmul(a: Quat, b: Quat) -> Quat:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return (
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    )


def qconj(q: Quat) -> Quat:
    w, x, y, z = q
    return (w, -x, -y, -z)


def qnormalize(q: Quat) -> Quat:
    n = _qnorm(q)
    if n == 0.0 or not math.isfinite(n):
        raise ValueError("cannot normalize zero/non-finite quaternion")
    if n == 1.0:
        return q
    w, x, y, z = q
    return (w / n, x / n, y / n, z / n)


def qrotate(q: Quat, v: Vec3) -> Vec3:
    """Rotate vector v by quaternion q (q assumed unit)."""
    w, x, y, z = q
    vx, vy, vz = v
    # t = 2 * (q_vec x v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    # v' = v + w*t + q_vec x t
    return (
        vx + w * tx + (y * tz - z * ty),
        vy + w * ty + (z * tx - x * tz),
        vz + w * tz + (x * ty - y * tx),
    )


def quat_from_axis_angle(rotvec: Vec3) -> Quat:
    rx, ry, rz = rotvec
    angle = math.sqrt(rx * rx + ry * ry + rz * rz)
    if angle < 1e-14:
        return (1.0, 0.0, 0.0, 0.0)
    half = 0.5 * angle
    s = math.sin(half) / angle
    return (math.cos(half), rx * s, ry * s, rz * s)


def quat_to_axis_angle(q: Quat) -> Vec3:
    """Axis-angle vector of a unit quaternion, angle in [0, pi]."""
    w, x, y, z = q
    if w < 0.0:
        w, x, y, z = -w, -x, -y, -z
    s = math.sqrt(x * x + y * y + z * z)
    if s < 1e-14:
        return (0.0, 0.0, 0.0)
    angle = 2.0 * math.atan2(s, w)
    k = angle / s
    return (x * k, y * k, z * k)


def quat_angle(q: Quat) -> float:
    """Geodesic rotation angle of a unit quaternion, in [0, pi]."""
    w, x, y, z = q
    s = math.sqrt(x * x + y * y + z * z)
    return 2.0 * math.atan2(s, abs(w))


def quat_about_z(yaw: float) -> Quat:
    return (math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw))


def slerp(a: Quat, b: Quat, t: float) -> Quat:
    """Shortest-arc spherical interpolation between unit quaternions."""
    dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
    if dot < 0.0:
        b = (-b[0], -b[1], -b[2], -b[3])
        dot = -dot
    if dot > 1.0 - 1e-12:
        # nearly parallel: lerp + renormalize
        mixed = tuple(a[i] + t * (b[i] - a[i]) for i in range(4))
        return qnormalize(mixed)  # type: ignore[arg-type]
    theta = math.acos(min(1.0, dot))
    s = math.sin(theta)
    ka = math.sin((1.0 - t) * theta) / s
    kb = math.sin(t * theta) / s
    return qnormalize(
        (
            ka * a[0] + kb * b[0],
            ka * a[1] + kb * b[1],
            ka * a[2] + kb * b[2],
            ka * a[3] + kb * b[3],
        )
    )


@dataclass(frozen=True, slots=True)
class Pose:
    """6-DoF rigid transform: base-frame position (m) + unit quaternion."""

    position: Vec3
    orientation: Quat = (1.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        px, py, pz = self.position
        if not (math.isfinite(px) and math.isfinite(py) and math.isfinite(pz)):
            raise ValueError(f"non-finite position {self.position}")
        n = _qnorm(self.orientation)
        if abs(n - 1.0) > _QUAT_NORM_TOL:
            raise ValueError(f"quaternion norm {n} outside unit tolerance")

    @staticmethod
    def identity() -> "Pose":
        return Pose((0.0, 0.0, 0.0))

    @staticmethod
    def from_translation(x: float, y: float, z: float) -> "Pose":
        return Pose((x, y, z))


@dataclass(frozen=True, slots=True)
class DeltaMotion:
    """Per-step TCP increment: base-frame translation (m) + axis-angle rotation (rad)."""

    translation: Vec3 = (0.0, 0.0, 0.0)
    rotation: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        rx, ry, rz = self.rotation
        mag = math.sqrt(rx * rx + ry * ry + rz * rz)
        if mag > math.pi + 1e-12:
            raise ValueError(f"rotation magnitude {mag} exceeds pi")
        tx, ty, tz = self.translation
        if not (math.isfinite(tx) and math.isfinite(ty) and math.isfinite(tz)):
            raise ValueError(f"non-finite translation {self.translation}")

    @staticmethod
    def zero() -> "DeltaMotion":
        return DeltaMotion()

    def is_zero(self) -> bool:
        return self.translation == (0.0, 0.0, 0.0) and self.rotation == (0.0, 0.0, 0.0)


@dataclass(frozen=True, slots=True)
class GripperCommand:
    """Gripper byte: 0..=250 actuates the fingers, 255 is the stop sentinel."""

    value: int

    def __post_init__(self) -> None:
        v = self.value
        if not isinstance(v, int) or not (0 <= v <= GRIPPER_MAX_BYTE or v == GRIPPER_STOP_BYTE):
            raise ValueError(f"gripper byte {v} outside 0..=250 or 255")

    def is_stop(self) -> bool:
        return self.value == GRIPPER_STOP_BYTE


@dataclass(frozen=True, slots=True)
class Action:
    """One control-period command: motion increment + gripper byte."""

    motion: DeltaMotion
    gripper: GripperCommand

    @staticmethod
    def stop() -> "Action":
        return Action(DeltaMotion.zero(), GripperCommand(GRIPPER_STOP_BYTE))

    @staticmethod
    def hold(gripper_byte: int = 0) -> "Action":
        return Action(DeltaMotion.zero(), GripperCommand(gripper_byte))


class Mode(Enum):
    PLANNER = "planner"
    SKILL = "skill"
    CORRECTOR = "corrector"


@dataclass(frozen=True, slots=True)
class Instruction:
    """Natural-language task command, e.g. 'extract the CPU from the socket'."""

    text: str

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise ValueError("instruction text must be non-empty")


def compose(a: Pose, b: Pose) -> Pose:
    """Rigid-transform composition a∘b (apply b in a's frame)."""
    off = qrotate(a.orientation, b.position)
    return Pose(
        (a.position[0] + off[0], a.position[1] + off[1], a.position[2] + off[2]),
        qnormalize(qmul(a.orientation, b.orientation)),
    )


def inverse(p: Pose) -> Pose:
    qi = qconj(p.orientation)
    t = qrotate(qi, p.position)
    return Pose((-t[0], -t[1], -t[2]), qi)


def apply_delta(p: Pose, d: DeltaMotion) -> Pose:
    """Advance a TCP pose: translation in the base frame, rotation composed on the right.

    Exact zero components leave position/orientation bit-identical, which keeps
    long fault-free trajectories reproducible.
    """
    tx, ty, tz = d.translation
    if tx == 0.0 and ty == 0.0 and tz == 0.0:
        pos = p.position
    else:
        pos = (p.position[0] + tx, p.position[1] + ty, p.position[2] + tz)
    if d.rotation == (0.0, 0.0, 0.0):
        quat = p.orientation
    else:
        quat = qnormalize(qmul(p.orientation, quat_from_axis_angle(d.rotation)))
    return Pose(pos, quat)


def pose_distance(a: Pose, b: Pose) -> tuple[float, float]:
    """(Euclidean position distance, geodesic quaternion angle in [0, pi])."""
    dx = a.position[0] - b.position[0]
    dy = a.position[1] - b.position[1]
    dz = a.position[2] - b.position[2]
    return (
        math.sqrt(dx * dx + dy * dy + dz * dz),
        quat_angle(qmul(qconj(a.orientation), b.orientation)),
    )


def gripper_width_m(byte: int, max_width_m: float = 0.085) -> float:
    """Commanded jaw opening for a gripper byte: width = max * (1 - g/250)."""
    if not (0 <= byte <= GRIPPER_MAX_BYTE):
        raise ValueError(f"byte {byte} has no width (only 0..=250 actuate)")
    return max_width_m * (1.0 - byte / 250.0)


def gripper_byte_for_width(width_m: float, max_width_m: float = 0.085) -> int:
    """Nearest actuating byte for a target jaw opening."""
    frac = min(1.0, max(0.0, width_m / max_width_m))
    return int(round(250.0 * (1.0 - frac)))
