"""Corner blending and closed-loop path tracking for resolved trajectories.

Interior waypoints with a positive blend radius are rounded with a circular
arc tangent to both adjacent straight legs, entering and exiting at distance
``r`` from the corner (so the arc radius is ``r / tan(theta/2)`` for turn
angle theta). Zero-radius waypoints are exact pass-throughs; a positive dwell
holds position there for its duration. Orientation follows shortest-arc
interpolation over cumulative geometric arc length.

The scalar controller progress runs over a *schedule* length: geometric arc
length plus a pseudo-length for each dwell (dwell seconds times the local
speed) so a single monotone scalar encodes both motion and holds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .geometry import (
    Action,
    DeltaMotion,
    GripperCommand,
    Pose,
    Quat,
    Vec3,
    qconj,
    qmul,
    quat_to_axis_angle,
    slerp,
)
from .simulator import MAX_ANGULAR_SPEED, MAX_LINEAR_SPEED
from .skills import ResolvedTrajectory, SkillValidationError, TrajectoryOrigin

TRACKING_LOST_DISTANCE = 0.020  # m, deviation from setpoint that aborts the trial
CAPTURE_DISTANCE = 0.0015  # m, how close the TCP must come to start tracking
DONE_DISTANCE = 0.001  # m, terminal tolerance at the final waypoint

_COLLINEAR_EPS = 1e-9


class TrackingLostError(Exception):
    """TCP strayed too far from the path setpoint; the trial must abort."""


def _sub(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


def _add(a: Vec3, b: Vec3) -> Vec3:
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


def _scale(a: Vec3, k: float) -> Vec3:
    return (a[0] * k, a[1] * k, a[2] * k)


def _norm(a: Vec3) -> float:
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


def _unit(a: Vec3) -> Vec3:
    n = _norm(a)
    return (a[0] / n, a[1] / n, a[2] / n)


def _cross(a: Vec3, b: Vec3) -> Vec3:
    return (
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    )


def _rotate_about(axis: Vec3, angle: float, v: Vec3) -> Vec3:
    """Rodrigues rotation of v about a unit axis."""
    c, s = math.cos(angle), math.sin(angle)
    k = axis
    kv = _cross(k, v)
    kkv = _cross(k, kv)
    return (
        v[0] + s * kv[0] + (1 - c) * kkv[0],
        v[1] + s * kv[1] + (1 - c) * kkv[1],
        v[2] + s * kv[2] + (1 - c) * kkv[2],
    )


@dataclass(frozen=True, slots=True)
class _Primitive:
    kind: str  # "line" | "arc" | "hold"
    sched_start: float
    sched_len: float
    geom_start: float
    geom_len: float
    speed: float
    gripper: int
    governing: int  # index of the last waypoint passed at primitive start
    start: Vec3
    end: Vec3
    # arc-only fields
    center: Vec3 = (0.0, 0.0, 0.0)
    axis: Vec3 = (0.0, 0.0, 1.0)
    radius: float = 0.0
    angle: float = 0.0


@dataclass(frozen=True, slots=True)
class PathSample:
    position: Vec3
    orientation: Quat
    speed: float
    gripper: int
    governing_index: int


@dataclass(frozen=True)
class BlendedPath:
    """Piecewise line/arc path with dwell holds and an orientation schedule."""

    origin: TrajectoryOrigin
    skill_id: str
    primitives: tuple[_Primitive, ...]
    total_length: float  # geometric meters
    schedule_length: float  # geometric + dwell pseudo-length
    waypoint_stations: tuple[float, ...]  # schedule position where each waypoint is passed
    waypoint_region_ends: tuple[float, ...]  # schedule position where its dwell (if any) ends
    orientation_keys: tuple[tuple[float, Quat], ...]  # (geometric station, quaternion)
    final_gripper: int

    @property
    def start_position(self) -> Vec3:
        return self.primitives[0].start

    @property
    def end_position(self) -> Vec3:
        return self.primitives[-1].end

    def _locate(self, s: float) -> _Primitive:
        s = min(max(s, 0.0), self.schedule_length)
        lo, hi = 0, len(self.primitives) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            prim = self.primitives[mid]
            if s < prim.sched_start:
                hi = mid - 1
            elif s > prim.sched_start + prim.sched_len:
                lo = mid + 1
            else:
                return prim
        return self.primitives[lo]

    def sample(self, s: float) -> PathSample:
        prim = self._locate(s)
        local = min(max(s - prim.sched_start, 0.0), prim.sched_len)
        if prim.kind == "hold" or prim.sched_len == 0.0:
            pos = prim.start
            geom = prim.geom_start
        elif prim.kind == "line":
            t = local / prim.sched_len
            pos = _add(prim.start, _scale(_sub(prim.end, prim.start), t))
            geom = prim.geom_start + local
        else:  # arc
            theta = (local / prim.sched_len) * prim.angle
            pos = _add(prim.center, _rotate_about(prim.axis, theta, _sub(prim.start, prim.center)))
            geom = prim.geom_start + local
        return PathSample(
            position=pos,
            orientation=self._orientation_at(geom),
            speed=prim.speed,
            gripper=prim.gripper,
            governing_index=self._governing_at(s),
        )

    def _orientation_at(self, geom_s: float) -> Quat:
        keys = self.orientation_keys
        if geom_s <= keys[0][0]:
            return keys[0][1]
        for (s0, q0), (s1, q1) in zip(keys, keys[1:]):
            if geom_s <= s1:
                if s1 - s0 <= 1e-12:
                    return q1
                return slerp(q0, q1, (geom_s - s0) / (s1 - s0))
        return keys[-1][1]

    def _governing_at(self, s: float) -> int:
        idx = -1
        for i, station in enumerate(self.waypoint_stations):
            if station <= s + 1e-12:
                idx = i
            else:
                break
        return idx

    def station_of(self, waypoint_index: int) -> float:
        return self.waypoint_stations[waypoint_index]

    def region_end_of(self, waypoint_index: int) -> float:
        return self.waypoint_region_ends[waypoint_index]


def blend(traj: ResolvedTrajectory) -> BlendedPath:
    """Construct the blended path for a resolved trajectory.

    Re-validates blend radii against the actual (post-resolution) segment
    lengths, including the extraction-to-placement joint.
    """
    wps = traj.waypoints
    if len(wps) < 2:
        raise SkillValidationError(f"trajectory {traj.skill_id!r}: need at least two waypoints")
    pts = [wp.target.position for wp in wps]
    dists = [_norm(_sub(b, a)) for a, b in zip(pts, pts[1:])]
    for i, d in enumerate(dists):
        if d <= 1e-9:
            raise SkillValidationError(
                f"trajectory {traj.skill_id!r}: waypoints {i} and {i + 1} coincide"
            )
    for i, wp in enumerate(wps):
        if wp.blend_radius <= 0:
            continue
        if i == 0 or i == len(wps) - 1:
            continue  # endpoint radii have no corner to round
        for d in (dists[i - 1], dists[i]):
            if not wp.blend_radius < 0.5 * d:
                raise SkillValidationError(
                    f"trajectory {traj.skill_id!r}: waypoint {i} blend radius "
                    f"{wp.blend_radius} not below half segment length {d / 2}"
                )

    prims: list[_Primitive] = []
    sched = geom = 0.0
    stations: list[float] = [0.0]
    region_ends: list[float] = []
    orient_keys: list[tuple[float, Quat]] = [(0.0, wps[0].target.orientation)]
    cursor = pts[0]

    def push(kind: str, speed: float, gripper: int, governing: int, **kw) -> None:
        nonlocal sched, geom
        sched_len = kw.pop("sched_len")
        geom_len = kw.pop("geom_len")
        prims.append(
            _Primitive(
                kind=kind,
                sched_start=sched,
                sched_len=sched_len,
                geom_start=geom,
                geom_len=geom_len,
                speed=speed,
                gripper=gripper,
                governing=governing,
                **kw,
            )
        )
        sched += sched_len
        geom += geom_len

    if wps[0].dwell > 0:
        push(
            "hold",
            wps[0].speed,
            wps[0].gripper.value,
            0,
            sched_len=wps[0].dwell * wps[0].speed,
            geom_len=0.0,
            start=cursor,
            end=cursor,
        )
    region_ends.append(sched)  # waypoint 0's region ends after its dwell, if any

    for i in range(1, len(wps)):
        wp = wps[i]
        prev = wps[i - 1]
        is_last = i == len(wps) - 1
        u_in = _unit(_sub(pts[i], cursor))
        blendable = (
            not is_last
            and wp.blend_radius > 0
            and wp.dwell == 0.0
        )
        arc = None
        if blendable:
            u_out = _unit(_sub(pts[i + 1], pts[i]))
            cross = _cross(u_in, u_out)
            sin_theta = _norm(cross)
            cos_theta = u_in[0] * u_out[0] + u_in[1] * u_out[1] + u_in[2] * u_out[2]
            theta = math.atan2(sin_theta, cos_theta)
            if sin_theta > _COLLINEAR_EPS and theta < math.pi - 1e-6:
                r = wp.blend_radius
                rho = r / math.tan(0.5 * theta)
                entry = _sub(pts[i], _scale(u_in, r))
                exit_ = _add(pts[i], _scale(u_out, r))
                axis = _unit(cross)
                n_in = _cross(axis, u_in)
                center = _add(entry, _scale(n_in, rho))
                arc = (entry, exit_, center, axis, rho, theta)
        if arc is not None:
            entry, exit_, center, axis, rho, theta = arc
            line_len = _norm(_sub(entry, cursor))
            if line_len > 1e-12:
                push(
                    "line",
                    wp.speed,
                    prev.gripper.value,
                    i - 1,
                    sched_len=line_len,
                    geom_len=line_len,
                    start=cursor,
                    end=entry,
                )
            arc_len = rho * theta
            # waypoint "passed" at the arc midpoint
            stations.append(sched + 0.5 * arc_len)
            orient_keys.append((geom + 0.5 * arc_len, wp.target.orientation))
            push(
                "arc",
                wp.speed,
                prev.gripper.value,
                i - 1,
                sched_len=arc_len,
                geom_len=arc_len,
                start=entry,
                end=exit_,
                center=center,
                axis=axis,
                radius=rho,
                angle=theta,
            )
            region_ends.append(stations[-1])
            cursor = exit_
        else:
            line_len = _norm(_sub(pts[i], cursor))
            push(
                "line",
                wp.speed,
                prev.gripper.value,
                i - 1,
                sched_len=line_len,
                geom_len=line_len,
                start=cursor,
                end=pts[i],
            )
            stations.append(sched)
            orient_keys.append((geom, wp.target.orientation))
            if wp.dwell > 0:
                push(
                    "hold",
                    wp.speed,
                    wp.gripper.value,
                    i,
                    sched_len=wp.dwell * wp.speed,
                    geom_len=0.0,
                    start=pts[i],
                    end=pts[i],
                )
            region_ends.append(sched)
            cursor = pts[i]

    return BlendedPath(
        origin=traj.origin,
        skill_id=traj.skill_id,
        primitives=tuple(prims),
        total_length=geom,
        schedule_length=sched,
        waypoint_stations=tuple(stations),
        waypoint_region_ends=tuple(region_ends),
        orientation_keys=tuple(orient_keys),
        final_gripper=wps[-1].gripper.value,
    )


def min_corner_clearance(blend_radius: float, turn_angle: float) -> float:
    """Closed-form minimum distance from a blended corner to its waypoint.

    For tangent-point distance r and turn angle theta the closest approach of
    the arc to the corner is r * tan(theta / 4).
    """
    return blend_radius * math.tan(0.25 * turn_angle)


def controller_step(
    path: BlendedPath, progress: float, tcp: Pose, dt: float
) -> tuple[Action, float, bool]:
    """One closed-loop tracking step along a blended path.

    Advances the setpoint by ``speed * dt`` (dwells advance through their
    pseudo-length, holding position), emits the motion from the current TCP
    toward the setpoint clipped to the simulator speed envelope, and the
    gripper byte of the governing waypoint. Before the TCP first comes within
    the capture distance of the setpoint (a resumed placement path starts away
    from the robot), the setpoint does not advance and the controller steers
    toward the path start instead; the tracking-lost bound applies only after
    capture.
    """
    if not 0.0 <= progress <= path.schedule_length + 1e-9:
        raise ValueError(f"progress {progress} outside [0, {path.schedule_length}]")
    here = path.sample(progress)
    err = _sub(here.position, tcp.position)
    err_norm = _norm(err)
    captured = progress > 0.0 or err_norm <= CAPTURE_DISTANCE
    if not captured:
        # lead-in: steer toward the first waypoint without advancing
        new_progress = 0.0
        target = here
    else:
        if err_norm > TRACKING_LOST_DISTANCE:
            raise TrackingLostError(
                f"TCP {err_norm * 1e3:.1f} mm from setpoint on {path.skill_id!r}"
            )
        new_progress = min(progress + here.speed * dt, path.schedule_length)
        target = path.sample(new_progress)

    step = _sub(target.position, tcp.position)
    step_norm = _norm(step)
    cap = MAX_LINEAR_SPEED * dt
    if step_norm > cap:
        step = _scale(step, cap / step_norm)
    rot = quat_to_axis_angle(qmul(qconj(tcp.orientation), target.orientation))
    rot_norm = _norm(rot)
    rot_cap = MAX_ANGULAR_SPEED * dt
    if rot_norm > rot_cap:
        rot = _scale(rot, rot_cap / rot_norm)

    done = False
    gripper = target.gripper
    if captured and new_progress >= path.schedule_length:
        gripper = path.final_gripper
        final_err = _norm(_sub(path.end_position, tcp.position))
        if final_err <= DONE_DISTANCE:
            done = True
            step = (0.0, 0.0, 0.0)
            rot = (0.0, 0.0, 0.0)
    action = Action(DeltaMotion(step, rot), GripperCommand(gripper))
    return action, new_progress, done
