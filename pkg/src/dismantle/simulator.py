"""Deterministic kinematic simulator of the disassembly workcell.

Simulates the arm TCP, a two-finger gripper, and one of two fixture-mounted
assemblies: a CPU socket guarded by a retention-lever latch and a bracket
latch, or a RAM slot with tight lateral clearance. The world advances at a
300 Hz base tick so that both the 30 Hz control loop (every 10 ticks) and the
50 Hz drop monitor (every 6 ticks) divide it evenly.

Latches are modeled as geometric gates: a latch fires when the TCP passes
through a 5 mm sphere around the gate point while moving within 30 degrees of
the gate's required approach direction, with its preconditions met. The RAM
slot instead tracks a remaining extraction depth that only shrinks while the
grasped module moves near-vertically inside the 2 mm lateral clearance;
off-axis pulling jams the module for the rest of the episode.

There are no dynamics beyond drop-at-detach: a released or slipped object
falls straight to its rest height. ``step`` is a pure function of
``(state, action)``; states are values and may be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .geometry import (
    Action,
    DeltaMotion,
    Pose,
    Vec3,
    apply_delta,
    compose,
    gripper_width_m,
    inverse,
    pose_distance,
    quat_about_z,
)

# --- timing -----------------------------------------------------------------
TICK_RATE_HZ = 300
TICK_DT = 1.0 / TICK_RATE_HZ
CONTROL_RATE_HZ = 30
CONTROL_PERIOD_TICKS = TICK_RATE_HZ // CONTROL_RATE_HZ  # 10
DROP_MONITOR_PERIOD_TICKS = TICK_RATE_HZ // 50  # 6

# --- arm and gripper envelope -------------------------------------------------
MAX_LINEAR_SPEED = 0.25  # m/s
MAX_ANGULAR_SPEED = 1.5  # rad/s
GRIPPER_MAX_WIDTH = 0.085  # m
GRIPPER_SPEED = 0.1  # m/s jaw closing/opening rate

# --- workcell geometry --------------------------------------------------------
BOARD_X = (0.15, 0.75)  # 0.6 m fixture board
BOARD_Y = (-0.20, 0.20)  # 0.4 m
HOME_POSE = Pose((0.45, 0.0, 0.30))
REST_HEIGHT = 0.005  # resting z of a free component on the board

ATTACH_DISTANCE = 0.003  # TCP must be this close to a grasp point to attach
GATE_RADIUS = 0.005
GATE_CONE_COS = math.cos(math.radians(30.0))
PREGRASP_POS_TOL = 0.010
PREGRASP_ROT_TOL = 0.10

# --- CPU socket geometry (assembly-local frame) -------------------------------
CPU_OBJECT = "cpu"
CPU_WIDTH = 0.004
CPU_PREGRASP_LOCAL: Vec3 = (0.0, 0.0, 0.080)
CPU_GRASP_LOCAL: Vec3 = (0.0, 0.0, 0.010)
LEVER_GATE_LOCAL: Vec3 = (0.050, -0.020, 0.010)
LEVER_GATE_DIR_LOCAL: Vec3 = (0.0, -1.0, 0.0)
BRACKET_GATE_LOCAL: Vec3 = (-0.045, 0.0, 0.018)
BRACKET_GATE_DIR_LOCAL: Vec3 = (0.0, 0.0, 1.0)
CPU_UNSEAT_RISE = 0.010
CPU_PLACEMENT_TARGET: Vec3 = (0.68, 0.15, REST_HEIGHT)

# --- RAM slot geometry ---------------------------------------------------------
RAM_OBJECT = "ram"
RAM_WIDTH = 0.0015
RAM_PREGRASP_LOCAL: Vec3 = (0.0, 0.0, 0.090)
RAM_GRASP_LOCAL: Vec3 = (0.0, 0.0, 0.030)
RAM_SLOT_DEPTH = 0.030
RAM_LATERAL_CLEARANCE = 0.002
RAM_VERTICAL_CONE_COS = math.cos(math.radians(20.0))
RAM_PLACEMENT_TARGET: Vec3 = (0.68, -0.15, REST_HEIGHT)

TASK_CPU = "cpu_extraction"
TASK_RAM = "ram_removal"
PLACED_TOLERANCE = 0.010
GRASP_MISS_SLIP: Vec3 = (0.010, 0.0, 0.0)  # base-frame slide on a missed grasp


class SimError(Exception):
    pass


class ConfigError(SimError):
    pass


class FaultScheduleError(SimError):
    pass


@dataclass(frozen=True, slots=True)
class ComponentConfig:
    """Placement of one assembly on the fixture board plus its drop-off target."""

    task: str
    config_id: str
    base_x: float
    base_y: float
    base_yaw: float
    placement_target: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if self.task not in (TASK_CPU, TASK_RAM):
            raise ConfigError(f"unknown task {self.task!r}")
        if not (BOARD_X[0] <= self.base_x <= BOARD_X[1] and BOARD_Y[0] <= self.base_y <= BOARD_Y[1]):
            raise ConfigError(
                f"config {self.config_id!r}: base ({self.base_x}, {self.base_y}) outside fixture board"
            )
        if self.placement_target == (0.0, 0.0, 0.0):
            target = CPU_PLACEMENT_TARGET if self.task == TASK_CPU else RAM_PLACEMENT_TARGET
            object.__setattr__(self, "placement_target", target)

    @property
    def object_id(self) -> str:
        return CPU_OBJECT if self.task == TASK_CPU else RAM_OBJECT

    @property
    def object_width(self) -> float:
        return CPU_WIDTH if self.task == TASK_CPU else RAM_WIDTH

    def base_pose(self) -> Pose:
        return Pose((self.base_x, self.base_y, 0.0), quat_about_z(self.base_yaw))

    def local_point(self, p: Vec3) -> Vec3:
        return compose(self.base_pose(), Pose(p)).position

    def local_dir(self, d: Vec3) -> Vec3:
        base = self.base_pose()
        tip = compose(base, Pose(d)).position
        return (tip[0] - base.position[0], tip[1] - base.position[1], tip[2] - base.position[2])

    def pregrasp_pose(self) -> Pose:
        local = CPU_PREGRASP_LOCAL if self.task == TASK_CPU else RAM_PREGRASP_LOCAL
        return compose(self.base_pose(), Pose(local))

    def grasp_point(self) -> Vec3:
        local = CPU_GRASP_LOCAL if self.task == TASK_CPU else RAM_GRASP_LOCAL
        return self.local_point(local)


@dataclass(frozen=True, slots=True)
class GripperState:
    commanded_width: float
    observed_width: float
    held_object: Optional[str] = None


@dataclass(frozen=True, slots=True)
class CpuAssemblyState:
    lever_locked: bool
    bracket_open: bool
    cpu_seated: bool
    lever_gate: Pose
    bracket_gate: Pose
    grasp_pose: Pose
    lever_gate_dir: Vec3 = (0.0, -1.0, 0.0)
    bracket_gate_dir: Vec3 = (0.0, 0.0, 1.0)


@dataclass(frozen=True, slots=True)
class RamAssemblyState:
    ram_seated: bool
    slot_pose: Pose
    extraction_depth_remaining: float
    jammed: bool


AssemblyState = Union[CpuAssemblyState, RamAssemblyState]


@dataclass(frozen=True, slots=True)
class FaultSchedule:
    """Injected failures: a one-shot grasp miss and/or a timed drop."""

    grasp_miss_pending: bool = False
    grasp_slip_tick: Optional[int] = None


@dataclass(frozen=True, slots=True)
class WorldState:
    config: ComponentConfig
    seed: int
    tick: int
    tcp: Pose
    gripper: GripperState
    assembly: AssemblyState
    objects: dict[str, Pose]
    pregrasp: Pose
    faults: FaultSchedule = field(default_factory=FaultSchedule)
    attach_offset: Optional[Pose] = None
    pregrasp_reached: bool = False
    ever_held: frozenset = frozenset()

    @property
    def sim_time(self) -> float:
        return self.tick * TICK_DT


@dataclass(frozen=True, slots=True)
class Observation:
    """Pure projection of the world: no future or hidden information."""

    tcp: Pose
    gripper_commanded_width: float
    gripper_observed_width: float
    objects: dict[str, Pose]
    latches: tuple[bool, bool, bool]


class GraspMiss:
    """Prevents the next attachment; the object slips 1 cm aside instead."""

    def __repr__(self) -> str:  # pragma: no cover
        return "GraspMiss()"


@dataclass(frozen=True, slots=True)
class GraspSlip:
    """Detaches the held object at the given tick, dropping it under the TCP."""

    at_tick: int


@dataclass(frozen=True, slots=True)
class StageFlags:
    approaching_ok: bool
    disassembly_ok: bool
    placed_ok: bool


def init_world(config: ComponentConfig, seed: int) -> WorldState:
    """Fresh world: arm at the fixed home pose, assembly latched, gripper open."""
    base = config.base_pose()
    if config.task == TASK_CPU:
        assembly: AssemblyState = CpuAssemblyState(
            lever_locked=True,
            bracket_open=False,
            cpu_seated=True,
            lever_gate=compose(base, Pose(LEVER_GATE_LOCAL)),
            bracket_gate=compose(base, Pose(BRACKET_GATE_LOCAL)),
            grasp_pose=compose(base, Pose(CPU_GRASP_LOCAL)),
            lever_gate_dir=config.local_dir(LEVER_GATE_DIR_LOCAL),
            bracket_gate_dir=config.local_dir(BRACKET_GATE_DIR_LOCAL),
        )
        objects = {CPU_OBJECT: compose(base, Pose(CPU_GRASP_LOCAL))}
    else:
        assembly = RamAssemblyState(
            ram_seated=True,
            slot_pose=base,
            extraction_depth_remaining=RAM_SLOT_DEPTH,
            jammed=False,
        )
        objects = {RAM_OBJECT: compose(base, Pose(RAM_GRASP_LOCAL))}
    return WorldState(
        config=config,
        seed=seed,
        tick=0,
        tcp=HOME_POSE,
        gripper=GripperState(GRIPPER_MAX_WIDTH, GRIPPER_MAX_WIDTH, None),
        assembly=assembly,
        objects=objects,
        pregrasp=config.pregrasp_pose(),
    )


def schedule_fault(world: WorldState, fault: Union[GraspMiss, GraspSlip]) -> WorldState:
    if isinstance(fault, GraspMiss):
        return replace(world, faults=replace(world.faults, grasp_miss_pending=True))
    if isinstance(fault, GraspSlip):
        if fault.at_tick <= world.tick:
            raise FaultScheduleError(
                f"grasp slip at tick {fault.at_tick} is not after current tick {world.tick}"
            )
        return replace(world, faults=replace(world.faults, grasp_slip_tick=fault.at_tick))
    raise FaultScheduleError(f"unknown fault {fault!r}")


def _clip_vec(v: Vec3, cap: float) -> Vec3:
    n = math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
    if n <= cap or n == 0.0:
        return v
    k = cap / n
    return (v[0] * k, v[1] * k, v[2] * k)


def _graspable(world: WorldState, obj: str) -> bool:
    if world.config.task == TASK_CPU:
        asm = world.assembly
        return asm.bracket_open  # CPU can only be reached once the bracket is open
    return True  # the RAM edge is always exposed


def step(world: WorldState, action: Action, dt: float = TICK_DT) -> WorldState:
    """Advance one base tick. Physical failures are state, never exceptions."""
    if abs(dt - TICK_DT) > 1e-12:
        raise SimError(f"step dt must be the 1/{TICK_RATE_HZ} s base tick")
    cfg = world.config
    tick = world.tick + 1

    # TCP motion, clipped to the speed envelope
    trans = _clip_vec(action.motion.translation, MAX_LINEAR_SPEED * dt)
    rot = _clip_vec(action.motion.rotation, MAX_ANGULAR_SPEED * dt)
    tcp = apply_delta(world.tcp, DeltaMotion(trans, rot))
    move = (
        tcp.position[0] - world.tcp.position[0],
        tcp.position[1] - world.tcp.position[1],
        tcp.position[2] - world.tcp.position[2],
    )
    move_norm = math.sqrt(move[0] ** 2 + move[1] ** 2 + move[2] ** 2)

    # Gripper: byte 255 is the mode-switch sentinel, not an actuation command
    grip = world.gripper
    commanded = grip.commanded_width
    if not action.gripper.is_stop():
        commanded = gripper_width_m(action.gripper.value, GRIPPER_MAX_WIDTH)
    observed = grip.observed_width
    if observed < commanded:
        observed = min(observed + GRIPPER_SPEED * dt, commanded)
    elif observed > commanded:
        observed = max(observed - GRIPPER_SPEED * dt, commanded)

    held = grip.held_object
    objects = world.objects
    assembly = world.assembly
    faults = world.faults
    attach_offset = world.attach_offset
    ever_held = world.ever_held

    # Scheduled drop fires before anything else this tick
    if held is not None and faults.grasp_slip_tick is not None and tick >= faults.grasp_slip_tick:
        objects = dict(objects)
        objects[held] = Pose((tcp.position[0], tcp.position[1], REST_HEIGHT), objects[held].orientation)
        held = None
        attach_offset = None
        faults = replace(faults, grasp_slip_tick=None)

    if held is not None:
        # rigid attachment: the held object rides the TCP
        objects = dict(objects)
        objects[held] = compose(tcp, attach_offset)
        observed = max(observed, cfg.object_width if held == cfg.object_id else 0.0)
        if commanded > observed:
            # open command releases; the object drops to rest height
            dropped = objects[held]
            objects[held] = Pose(
                (dropped.position[0], dropped.position[1], REST_HEIGHT), dropped.orientation
            )
            held = None
            attach_offset = None
    else:
        # attachment: fingers sweep past an in-reach object's width while closing
        target = cfg.object_id
        obj_pose = objects[target]
        width = cfg.object_width
        closing = commanded < grip.observed_width
        if (
            closing
            and grip.observed_width > width >= observed
            and _graspable(world, target)
        ):
            gp = obj_pose.position
            d = math.sqrt(
                (tcp.position[0] - gp[0]) ** 2
                + (tcp.position[1] - gp[1]) ** 2
                + (tcp.position[2] - gp[2]) ** 2
            )
            if d <= ATTACH_DISTANCE:
                if faults.grasp_miss_pending:
                    objects = dict(objects)
                    objects[target] = Pose(
                        (
                            gp[0] + GRASP_MISS_SLIP[0],
                            gp[1] + GRASP_MISS_SLIP[1],
                            REST_HEIGHT,
                        ),
                        obj_pose.orientation,
                    )
                    faults = replace(faults, grasp_miss_pending=False)
                    if isinstance(assembly, CpuAssemblyState) and assembly.cpu_seated:
                        assembly = replace(assembly, cpu_seated=False)
                    elif isinstance(assembly, RamAssemblyState) and assembly.ram_seated:
                        assembly = replace(
                            assembly, ram_seated=False, extraction_depth_remaining=0.0
                        )
                else:
                    held = target
                    attach_offset = compose(inverse(tcp), obj_pose)
                    observed = width
                    ever_held = ever_held | {target}

    # Latch gates and slot mechanics
    if isinstance(assembly, CpuAssemblyState):
        if move_norm > 1e-12:
            direction = (move[0] / move_norm, move[1] / move_norm, move[2] / move_norm)
            if assembly.lever_locked:
                assembly = _try_gate(
                    assembly, tcp, direction, assembly.lever_gate,
                    assembly.lever_gate_dir, "lever",
                )
            elif not assembly.bracket_open:
                assembly = _try_gate(
                    assembly, tcp, direction, assembly.bracket_gate,
                    assembly.bracket_gate_dir, "bracket",
                )
        if (
            assembly.cpu_seated
            and held == CPU_OBJECT
            and objects[CPU_OBJECT].position[2] >= assembly.grasp_pose.position[2] + CPU_UNSEAT_RISE
        ):
            assembly = replace(assembly, cpu_seated=False)
    else:
        if held == RAM_OBJECT and assembly.ram_seated and move[2] > 1e-12:
            slot = assembly.slot_pose.position
            lateral = math.sqrt(
                (tcp.position[0] - slot[0]) ** 2 + (tcp.position[1] - slot[1]) ** 2
            )
            if assembly.jammed:
                pass  # jams never self-repair
            elif lateral > RAM_LATERAL_CLEARANCE:
                assembly = replace(assembly, jammed=True)
            elif move_norm > 0.0 and move[2] / move_norm >= RAM_VERTICAL_CONE_COS:
                depth = assembly.extraction_depth_remaining - move[2]
                if depth <= 0.0:
                    assembly = replace(assembly, ram_seated=False, extraction_depth_remaining=0.0)
                else:
                    assembly = replace(assembly, extraction_depth_remaining=depth)

    pregrasp_reached = world.pregrasp_reached
    if not pregrasp_reached:
        d_pos, d_rot = pose_distance(tcp, world.pregrasp)
        if d_pos <= PREGRASP_POS_TOL and d_rot <= PREGRASP_ROT_TOL:
            pregrasp_reached = True

    return WorldState(
        config=cfg,
        seed=world.seed,
        tick=tick,
        tcp=tcp,
        gripper=GripperState(commanded, observed, held),
        assembly=assembly,
        objects=objects,
        pregrasp=world.pregrasp,
        faults=faults,
        attach_offset=attach_offset,
        pregrasp_reached=pregrasp_reached,
        ever_held=ever_held,
    )


def _try_gate(
    assembly: CpuAssemblyState,
    tcp: Pose,
    direction: Vec3,
    gate: Pose,
    gate_dir: Vec3,
    which: str,
) -> CpuAssemblyState:
    gp = gate.position
    d = math.sqrt(
        (tcp.position[0] - gp[0]) ** 2
        + (tcp.position[1] - gp[1]) ** 2
        + (tcp.position[2] - gp[2]) ** 2
    )
    if d > GATE_RADIUS:
        return assembly
    align = direction[0] * gate_dir[0] + direction[1] * gate_dir[1] + direction[2] * gate_dir[2]
    if align < GATE_CONE_COS:
        return assembly
    if which == "lever":
        return replace(assembly, lever_locked=False)
    return replace(assembly, bracket_open=True)


def observe(world: WorldState) -> Observation:
    if isinstance(world.assembly, CpuAssemblyState):
        latches = (
            world.assembly.lever_locked,
            world.assembly.bracket_open,
            world.assembly.cpu_seated,
        )
    else:
        latches = (world.assembly.ram_seated, world.assembly.jammed, False)
    return Observation(
        tcp=world.tcp,
        gripper_commanded_width=world.gripper.commanded_width,
        gripper_observed_width=world.gripper.observed_width,
        objects=dict(world.objects),
        latches=latches,
    )


def component_is_free(obs: Observation, task: str) -> bool:
    """True when the task component is unseated and not secured in the gripper.

    "Secured" is inferred from observable gripper state alone (the fingers
    saturated at the component width under a deeper close command), so the
    answer stays stable while a recovery policy closes in on the part.
    """
    if task == TASK_CPU:
        seated, width = obs.latches[2], CPU_WIDTH
        obj_id = CPU_OBJECT
    else:
        seated, width = obs.latches[0], RAM_WIDTH
        obj_id = RAM_OBJECT
    if seated or obj_id not in obs.objects:
        return False
    held_like = (
        abs(obs.gripper_observed_width - width) <= 1e-4
        and obs.gripper_commanded_width < width - 1e-4
    )
    return not held_like


def check_stage(world: WorldState, config: ComponentConfig | None = None) -> StageFlags:
    """Stage flags per the evaluation semantics.

    approaching: the TCP has (ever) reached the pre-grasp region.
    disassembly: component freed from its retention and grasped at some point.
    placed: component released within tolerance of the placement target.
    """
    cfg = config or world.config
    obj = cfg.object_id
    if isinstance(world.assembly, CpuAssemblyState):
        freed = (not world.assembly.lever_locked) and world.assembly.bracket_open
    else:
        freed = not world.assembly.ram_seated
    disassembly = freed and obj in world.ever_held
    pos = world.objects[obj].position
    tgt = cfg.placement_target
    d = math.sqrt((pos[0] - tgt[0]) ** 2 + (pos[1] - tgt[1]) ** 2 + (pos[2] - tgt[2]) ** 2)
    placed = world.gripper.held_object is None and d <= PLACED_TOLERANCE and disassembly
    return StageFlags(world.pregrasp_reached, disassembly, placed)
