"""Pluggable planner/corrector policies, encoders, and the wire transport.

The learned vision-language policies the framework is designed around are
opaque; everything here treats the policy boundary as the contract. Scripted
stand-ins (a proportional oracle, failure-mode policies, and a scripted
end-to-end baseline) make the orchestration layer testable, and the newline-
delimited JSON wire protocol leaves a socket for real inference servers.

Scripted policy arithmetic deliberately sticks to IEEE-754 add/sub/mul/div,
sqrt, and comparisons in a fixed evaluation order so an external process in
any language can reproduce the action stream bit-for-bit from the same wire
observations and parameters. Rotation steering uses the small-angle
``2 * vec(q_err)`` form instead of a trig angle extraction for that reason.
"""

from __future__ import annotations

import json
import math
import random
import select
import socket
import subprocess
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Protocol

from .geometry import (
    GRIPPER_MAX_BYTE,
    GRIPPER_STOP_BYTE,
    Action,
    DeltaMotion,
    GripperCommand,
    Instruction,
    Quat,
    Vec3,
)
from .simulator import (
    CONTROL_RATE_HZ,
    MAX_ANGULAR_SPEED,
    MAX_LINEAR_SPEED,
    TASK_CPU,
    ComponentConfig,
    Observation,
    component_is_free,
)

CONTROL_DT = 1.0 / CONTROL_RATE_HZ
MAX_STEP_M = MAX_LINEAR_SPEED * CONTROL_DT
MAX_ROT_STEP = MAX_ANGULAR_SPEED * CONTROL_DT
PROTOCOL_VERSION = 1

OBS_LAYOUT_VERSION = "v1"


class PolicyError(Exception):
    pass


class NoTargetVisibleError(PolicyError):
    """Corrector invoked with nothing recoverable in view."""


class PolicyUnavailableError(PolicyError):
    """External policy transport timed out or died."""


class ProtocolError(PolicyError):
    """External policy sent a malformed or illegal response."""


@dataclass(frozen=True, slots=True)
class InstructionEmbedding:
    """Deterministic bag-of-words instruction encoding."""

    text: str
    tokens: tuple[str, ...]
    bag: frozenset[str]


def encode_instruction(instruction: Instruction | str) -> InstructionEmbedding:
    text = instruction.text if isinstance(instruction, Instruction) else instruction
    if not text.strip():
        raise ValueError("cannot encode empty instruction")
    tokens = tuple(t for t in "".join(c if c.isalnum() else " " for c in text.lower()).split() if t)
    return InstructionEmbedding(text=text, tokens=tokens, bag=frozenset(tokens))


@dataclass(frozen=True, slots=True)
class EncodedObservation:
    """Fixed-layout observation features.

    Layout (15 numbers): TCP position xyz, TCP quaternion wxyz, gripper
    commanded width, gripper observed width, displacement to the nearest
    target xyz, latch flags (task-specific booleans). The "nearest target" is
    the task component's grasp point while the component lies free (unseated
    and not gripped), otherwise the configured pre-grasp point.
    """

    layout: str
    tcp_pos: Vec3
    tcp_quat: Quat
    grip_cmd: float
    grip_obs: float
    target_disp: Vec3
    latches: tuple[bool, bool, bool]

    def as_vector(self) -> tuple[float, ...]:
        return (
            *self.tcp_pos,
            *self.tcp_quat,
            self.grip_cmd,
            self.grip_obs,
            *self.target_disp,
            *(1.0 if b else 0.0 for b in self.latches),
        )


@lru_cache(maxsize=512)
def _pregrasp_position(target: ComponentConfig):
    return target.pregrasp_pose().position


def encode_observation(obs: Observation, target: ComponentConfig) -> EncodedObservation:
    obj_id = target.object_id
    if component_is_free(obs, target.task) and obj_id in obs.objects:
        point = obs.objects[obj_id].position
    else:
        point = _pregrasp_position(target)
    tp = obs.tcp.position
    return EncodedObservation(
        layout=OBS_LAYOUT_VERSION,
        tcp_pos=tp,
        tcp_quat=obs.tcp.orientation,
        grip_cmd=obs.gripper_commanded_width,
        grip_obs=obs.gripper_observed_width,
        target_disp=(point[0] - tp[0], point[1] - tp[1], point[2] - tp[2]),
        latches=obs.latches,
    )


class Policy(Protocol):
    def reset(self, seed: int) -> None: ...

    def act(self, z: EncodedObservation, e: InstructionEmbedding) -> Action: ...


@dataclass
class PlannerParams:
    """Construction-time knowledge for the scripted planner oracle.

    The same parameter block is handed verbatim to an external stub server so
    in-process and wire-driven runs share every constant.
    """

    target_pos: Vec3
    target_quat: Quat
    stop_pos_m: float = 0.001
    stop_rot_sin_half: float = math.sin(0.015 / 2.0)
    gain_per_s: float = 2.0
    control_dt: float = CONTROL_DT
    max_step_m: float = MAX_STEP_M
    max_rot_step: float = MAX_ROT_STEP
    noise_sigma_m: float = 0.0
    approach_gripper: int = 0
    stop_distance_m: float = 0.0  # stops-early variant: emit stop at this true distance
    drift_bias: Vec3 = (0.0, 0.0, 0.0)  # constant perception offset
    emit_stop: bool = True

    def to_wire(self) -> dict:
        return {
            "target_pos": list(self.target_pos),
            "target_quat": list(self.target_quat),
            "stop_pos_m": self.stop_pos_m,
            "stop_rot_sin_half": self.stop_rot_sin_half,
            "gain_per_s": self.gain_per_s,
            "control_dt": self.control_dt,
            "max_step_m": self.max_step_m,
            "max_rot_step": self.max_rot_step,
            "approach_gripper": self.approach_gripper,
            "stop_distance_m": self.stop_distance_m,
            "drift_bias": list(self.drift_bias),
        }


def planner_params(
    config: ComponentConfig,
    noise_sigma_m: float = 0.0,
    **overrides,
) -> PlannerParams:
    pregrasp = config.pregrasp_pose()
    return PlannerParams(
        target_pos=pregrasp.position,
        target_quat=pregrasp.orientation,
        noise_sigma_m=noise_sigma_m,
        **overrides,
    )


class OraclePlanner:
    """Proportional approach to the pre-grasp pose, then the stop token.

    Translation chases the (optionally noise-perturbed) displacement to the
    target at ``gain_per_s``; rotation chases the error quaternion via the
    small-angle axis form. Noise models perception error: the same perturbed
    displacement feeds both the motion and the stop test, so a noisy planner
    sometimes stops outside the true trigger tolerance.
    """

    def __init__(self, params: PlannerParams, seed: int = 0) -> None:
        self.params = params
        self._rng = random.Random(seed)

    def reset(self, seed: int) -> None:
        self._rng = random.Random(seed)

    def act(self, z: EncodedObservation, e: InstructionEmbedding) -> Action:
        p = self.params
        dx = p.target_pos[0] - z.tcp_pos[0] + p.drift_bias[0]
        dy = p.target_pos[1] - z.tcp_pos[1] + p.drift_bias[1]
        dz = p.target_pos[2] - z.tcp_pos[2] + p.drift_bias[2]
        if p.noise_sigma_m > 0.0:
            dx += self._rng.gauss(0.0, p.noise_sigma_m)
            dy += self._rng.gauss(0.0, p.noise_sigma_m)
            dz += self._rng.gauss(0.0, p.noise_sigma_m)
        dist = math.sqrt(dx * dx + dy * dy + dz * dz)

        # error quaternion conj(q_tcp) * q_target, written out so an external
        # implementation can reproduce the operation order exactly
        aw, ax, ay, az = z.tcp_quat[0], -z.tcp_quat[1], -z.tcp_quat[2], -z.tcp_quat[3]
        bw, bx, by, bz = p.target_quat
        ew = aw * bw - ax * bx - ay * by - az * bz
        ex = aw * bx + ax * bw + ay * bz - az * by
        ey = aw * by - ax * bz + ay * bw + az * bx
        ez = aw * bz + ax * by - ay * bx + az * bw
        if ew < 0.0:
            ex, ey, ez = -ex, -ey, -ez
        s = math.sqrt(ex * ex + ey * ey + ez * ez)

        stop_pos = p.stop_distance_m if p.stop_distance_m > 0.0 else p.stop_pos_m
        if dist <= stop_pos and s <= p.stop_rot_sin_half:
            if p.emit_stop:
                return Action.stop()
            return Action(DeltaMotion.zero(), GripperCommand(p.approach_gripper))

        k = p.gain_per_s * p.control_dt
        mx, my, mz = dx * k, dy * k, dz * k
        m = math.sqrt(mx * mx + my * my + mz * mz)
        if m > p.max_step_m:
            f = p.max_step_m / m
            mx, my, mz = mx * f, my * f, mz * f
        rx, ry, rz = 2.0 * ex * k, 2.0 * ey * k, 2.0 * ez * k
        r = math.sqrt(rx * rx + ry * ry + rz * rz)
        if r > p.max_rot_step:
            f = p.max_rot_step / r
            rx, ry, rz = rx * f, ry * f, rz * f
        return Action(DeltaMotion((mx, my, mz), (rx, ry, rz)), GripperCommand(p.approach_gripper))


@dataclass
class CorrectorParams:
    expected_width_m: float
    seated_latch_index: int  # which latch flag means "still seated"
    approach_stop_m: float = 0.001
    lift_rise_m: float = 0.030
    gain_per_s: float = 2.0
    control_dt: float = CONTROL_DT
    max_step_m: float = MAX_STEP_M
    close_byte: int = 250
    open_byte: int = 0
    width_tol_m: float = 1e-4

    def to_wire(self) -> dict:
        return {
            "expected_width_m": self.expected_width_m,
            "seated_latch_index": self.seated_latch_index,
            "approach_stop_m": self.approach_stop_m,
            "lift_rise_m": self.lift_rise_m,
            "gain_per_s": self.gain_per_s,
            "control_dt": self.control_dt,
            "max_step_m": self.max_step_m,
            "close_byte": self.close_byte,
            "open_byte": self.open_byte,
            "width_tol_m": self.width_tol_m,
        }


def corrector_params(config: ComponentConfig, **overrides) -> CorrectorParams:
    return CorrectorParams(
        expected_width_m=config.object_width,
        seated_latch_index=2 if config.task == TASK_CPU else 0,
        **overrides,
    )


class OracleCorrector:
    """Regrasp state machine: approach the dropped component, close, lift, stop.

    Works purely from wire-visible features: the encoder points the target
    displacement at the free component's grasp point, gripper saturation at
    the expected width signals a secured grasp, and the seated latch guards
    the precondition that something recoverable exists.
    """

    _APPROACH, _CLOSE, _LIFT, _DONE = range(4)

    def __init__(self, params: CorrectorParams, seed: int = 0) -> None:
        self.params = params
        self._phase = self._APPROACH
        self._lift_from: Optional[float] = None

    def reset(self, seed: int) -> None:
        self._phase = self._APPROACH
        self._lift_from = None

    def _held(self, z: EncodedObservation) -> bool:
        p = self.params
        return (
            abs(z.grip_obs - p.expected_width_m) <= p.width_tol_m
            and z.grip_cmd < p.expected_width_m - p.width_tol_m
        )

    def act(self, z: EncodedObservation, e: InstructionEmbedding) -> Action:
        p = self.params
        if self._phase == self._APPROACH:
            if z.latches[p.seated_latch_index] and not self._held(z):
                raise NoTargetVisibleError("component is still seated; nothing to recover")
            if self._held(z):
                self._phase = self._LIFT
                self._lift_from = z.tcp_pos[2]
            else:
                dx, dy, dz = z.target_disp
                dist = math.sqrt(dx * dx + dy * dy + dz * dz)
                if dist <= p.approach_stop_m:
                    self._phase = self._CLOSE
                else:
                    k = p.gain_per_s * p.control_dt
                    mx, my, mz = dx * k, dy * k, dz * k
                    m = math.sqrt(mx * mx + my * my + mz * mz)
                    if m > p.max_step_m:
                        f = p.max_step_m / m
                        mx, my, mz = mx * f, my * f, mz * f
                    return Action(DeltaMotion((mx, my, mz)), GripperCommand(p.open_byte))
        if self._phase == self._CLOSE:
            if self._held(z):
                self._phase = self._LIFT
                self._lift_from = z.tcp_pos[2]
            elif z.grip_obs < p.expected_width_m - 2.0 * p.width_tol_m:
                # fingers closed past the component: missed, reopen and retry
                self._phase = self._APPROACH
                return Action(DeltaMotion.zero(), GripperCommand(p.open_byte))
            else:
                return Action(DeltaMotion.zero(), GripperCommand(p.close_byte))
        if self._phase == self._LIFT:
            top = self._lift_from + p.lift_rise_m
            remaining = top - z.tcp_pos[2]
            if remaining <= 1e-6:
                self._phase = self._DONE
            else:
                mz = remaining * (p.gain_per_s * p.control_dt)
                if mz > p.max_step_m:
                    mz = p.max_step_m
                return Action(DeltaMotion((0.0, 0.0, mz)), GripperCommand(p.close_byte))
        return Action.stop()


class ScriptedEndToEnd:
    """Full-sequence scripted baseline with per-stage Bernoulli failures.

    Stands in for a single policy driving the whole task with skills disabled:
    it approaches the pre-grasp region, then tracks a contact path it resolves
    itself at wherever its approach actually halted. Each configured stage
    independently fails with probability ``1 - per_gate_success``: a failed
    approach halts 30 mm short, and a failed contact stage offsets the
    setpoint sideways through that stage's waypoint span, so the latch or
    grasp is missed and every later stage compounds on the failure.
    """

    GATE_OFFSET_M = 0.008

    def __init__(
        self,
        config: ComponentConfig,
        skill,
        per_gate_success: float = 1.0,
        gate_spans: tuple[tuple[int, int], ...] = (),
        flaky_approach: bool = True,
        seed: int = 0,
    ) -> None:
        self._config = config
        self._skill = skill
        self._spans = tuple(gate_spans)
        self._p_ok = per_gate_success
        self._flaky_approach = flaky_approach
        self._planner = OraclePlanner(planner_params(config), seed)
        self._path = None
        self._progress = 0.0
        self._gate_fails: list[bool] = []
        self.reset(seed)

    def reset(self, seed: int) -> None:
        rng = random.Random(seed)
        approach_ok = (not self._flaky_approach) or rng.random() < self._p_ok
        params = planner_params(
            self._config, stop_distance_m=0.0 if approach_ok else 0.030
        )
        self._planner = OraclePlanner(params, seed)
        self._gate_fails = [rng.random() >= self._p_ok for _ in self._spans]
        self._path = None
        self._progress = 0.0

    def act(self, z: EncodedObservation, e: InstructionEmbedding) -> Action:
        from .blending import blend
        from .geometry import Pose
        from .skills import resolve

        if self._path is None:
            act = self._planner.act(z, e)
            if not act.gripper.is_stop():
                return act
            # approach done (well- or mis-aligned): resolve the contact path here
            self._path = blend(resolve(self._skill, Pose(z.tcp_pos, z.tcp_quat)))
            self._progress = 0.0
        path = self._path
        self._progress = min(
            self._progress + path.sample(self._progress).speed * CONTROL_DT,
            path.schedule_length,
        )
        sp = path.sample(self._progress)
        tx, ty, tz = sp.position
        for (i0, i1), fail in zip(self._spans, self._gate_fails):
            if fail and path.station_of(i0) <= self._progress <= path.region_end_of(i1):
                tx += self.GATE_OFFSET_M  # botch this stage: slide off the feature
                break
        dx, dy, dz = tx - z.tcp_pos[0], ty - z.tcp_pos[1], tz - z.tcp_pos[2]
        m = math.sqrt(dx * dx + dy * dy + dz * dz)
        if m > MAX_STEP_M:
            f = MAX_STEP_M / m
            dx, dy, dz = dx * f, dy * f, dz * f
        return Action(DeltaMotion((dx, dy, dz)), GripperCommand(sp.gripper))


class FlakyApproachPlanner:
    """Oracle planner that, per trial, fails its approach with probability 1-p.

    A failed approach behaves like the observed failure mode of weak policies:
    it halts and signals several centimeters short of the target.
    """

    def __init__(self, params: PlannerParams, p_ok: float, seed: int = 0) -> None:
        self._base = params
        self._p_ok = p_ok
        self._inner = OraclePlanner(params, seed)
        self.reset(seed)

    def reset(self, seed: int) -> None:
        rng = random.Random(seed)
        ok = rng.random() < self._p_ok
        params = self._base if ok else _replace_params(self._base, stop_distance_m=0.030)
        self._inner = OraclePlanner(params, seed)

    def act(self, z: EncodedObservation, e: InstructionEmbedding) -> Action:
        return self._inner.act(z, e)


def _replace_params(params: PlannerParams, **kw) -> PlannerParams:
    from dataclasses import replace

    return replace(params, **kw)


def never_stops(config: ComponentConfig) -> OraclePlanner:
    return OraclePlanner(planner_params(config, emit_stop=False))


def stops_early(config: ComponentConfig, distance_m: float = 0.030) -> OraclePlanner:
    return OraclePlanner(planner_params(config, stop_distance_m=distance_m))


def drift_planner(config: ComponentConfig, bias: Vec3 = (0.02, 0.02, 0.0)) -> OraclePlanner:
    return OraclePlanner(planner_params(config, drift_bias=bias))


# --- external policy transport -------------------------------------------------

ROLE_PLANNER = "planner"
ROLE_CORRECTOR = "corrector"


def encode_request(role: str, instruction: str, z: EncodedObservation, tick: int) -> str:
    return json.dumps(
        {
            "v": PROTOCOL_VERSION,
            "role": role,
            "instruction": instruction,
            "obs": {
                "tcp_pos_m": list(z.tcp_pos),
                "tcp_quat_wxyz": list(z.tcp_quat),
                "grip_cmd_m": z.grip_cmd,
                "grip_obs_m": z.grip_obs,
                "target_disp_m": list(z.target_disp),
                "latches": list(z.latches),
            },
            "tick": tick,
        },
        separators=(",", ":"),
    )


def decode_response(line: str) -> Action:
    try:
        raw = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"unparseable response: {exc}") from exc
    if not isinstance(raw, dict) or raw.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"bad protocol version in {line!r}")
    if "error" in raw:
        if raw["error"] == "no_target_visible":
            # the remote corrector's precondition failure, same as in-process
            raise NoTargetVisibleError("external policy: no recoverable target")
        raise ProtocolError(f"server error: {raw['error']}")
    try:
        pos = raw["delta_pos_m"]
        rot = raw["delta_rot_aa"]
        byte = raw["gripper"]
    except KeyError as exc:
        raise ProtocolError(f"missing field {exc} in response") from exc
    if not (isinstance(pos, list) and len(pos) == 3 and isinstance(rot, list) and len(rot) == 3):
        raise ProtocolError("delta fields must be 3-vectors")
    vals = [*pos, *rot]
    if not all(isinstance(v, (int, float)) and math.isfinite(v) for v in vals):
        raise ProtocolError("non-finite motion delta")
    if not isinstance(byte, int) or not (0 <= byte <= GRIPPER_MAX_BYTE or byte == GRIPPER_STOP_BYTE):
        raise ProtocolError(f"illegal gripper byte {byte!r}")
    try:
        return Action(DeltaMotion(tuple(map(float, pos)), tuple(map(float, rot))), GripperCommand(byte))
    except ValueError as exc:
        raise ProtocolError(str(exc)) from exc


class WireClient:
    """One line-delimited request/response channel to an external policy."""

    def __init__(self, read_fd, write_fn, close_fn, timeout_s: float = 1.0) -> None:
        self._fd = read_fd
        self._write = write_fn
        self._close = close_fn
        self._timeout = timeout_s
        self._buf = b""

    def _read_line(self) -> str:
        while b"\n" not in self._buf:
            ready, _, _ = select.select([self._fd], [], [], self._timeout)
            if not ready:
                raise PolicyUnavailableError(f"no response within {self._timeout}s")
            chunk = self._read_chunk()
            if not chunk:
                raise PolicyUnavailableError("policy transport closed")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line.decode("utf-8")

    def _read_chunk(self) -> bytes:
        import os

        if isinstance(self._fd, socket.socket):
            return self._fd.recv(65536)
        return os.read(self._fd if isinstance(self._fd, int) else self._fd.fileno(), 65536)

    def request(self, role: str, instruction: str, z: EncodedObservation, tick: int) -> Action:
        self._write((encode_request(role, instruction, z, tick) + "\n").encode("utf-8"))
        return decode_response(self._read_line())

    def send_raw(self, line: str) -> str:
        self._write((line.rstrip("\n") + "\n").encode("utf-8"))
        return self._read_line()

    def reset(self, seed: int) -> None:
        reply = self.send_raw(json.dumps({"reset": seed}))
        raw = json.loads(reply)
        if raw.get("reset") != seed:
            raise ProtocolError(f"reset not acknowledged: {reply!r}")

    def close(self) -> None:
        self._close()


def stdio_client(cmd: list[str], timeout_s: float = 1.0) -> tuple[WireClient, subprocess.Popen]:
    proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE)

    def write(data: bytes) -> None:
        proc.stdin.write(data)
        proc.stdin.flush()

    def close() -> None:
        try:
            proc.stdin.close()
        except OSError:
            pass
        proc.terminate()
        proc.wait(timeout=5)

    return WireClient(proc.stdout.fileno(), write, close, timeout_s), proc


def tcp_client(host: str, port: int, timeout_s: float = 1.0) -> WireClient:
    sock = socket.create_connection((host, port), timeout=timeout_s)
    sock.settimeout(timeout_s)
    return WireClient(sock, sock.sendall, sock.close, timeout_s)


@dataclass
class PolicyHandle:
    """A planner or corrector endpoint: in-process object or wire client."""

    role: str
    policy: Optional[Policy] = None
    client: Optional[WireClient] = None
    instruction_text: str = ""

    def __post_init__(self) -> None:
        if (self.policy is None) == (self.client is None):
            raise ValueError("exactly one of policy/client must be set")

    @property
    def kind(self) -> str:
        return "in_process" if self.policy is not None else "external"

    def reset(self, seed: int) -> None:
        if self.policy is not None:
            self.policy.reset(seed)
        else:
            self.client.reset(seed)


def query(
    handle: PolicyHandle,
    z: EncodedObservation,
    e: InstructionEmbedding,
    tick: int = 0,
) -> Action:
    """One synchronous policy query; validates the response envelope."""
    if handle.policy is not None:
        return handle.policy.act(z, e)
    return handle.client.request(handle.role, e.text, z, tick)
