"""The agentic control loop: planner/skill/corrector mode machine.

One episode runs a 30 Hz control loop over the 300 Hz simulator. In planner
and corrector modes the respective policy is queried; a stop token (gripper
byte 255) hands control to the skill layer, which resolves the selected
skill against the TCP pose at emission and tracks the blended path. A
one-shot grasp check fires after the pick-up gripper command has settled, and
a 50 Hz width monitor watches for drops during the placement region. Either
failure pauses the robot for a configurable idle interval (excluded from
recording), then activates the corrector; the corrector's stop token resumes
the skill from its placement remainder only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .blending import BlendedPath, TrackingLostError, blend, controller_step
from .geometry import Action, DeltaMotion, GripperCommand, Instruction, Mode, pose_distance
from .policies import (
    InstructionEmbedding,
    NoTargetVisibleError,
    PolicyHandle,
    encode_instruction,
    encode_observation,
    query,
)
from .simulator import (
    CONTROL_PERIOD_TICKS,
    DROP_MONITOR_PERIOD_TICKS,
    TASK_RAM,
    TICK_DT,
    Observation,
    WorldState,
    check_stage,
    observe,
    step,
)
from .skills import (
    ResolvedTrajectory,
    SkillDefinition,
    SkillLibrary,
    TAG_LIFT_END,
    TrajectoryOrigin,
    resolve,
    resolve_remaining,
    select_skill,
)

CONTROL_DT = CONTROL_PERIOD_TICKS * TICK_DT

DEPLOY_SELFVLA = "selfvla"
DEPLOY_END_TO_END = "end_to_end"


class EventKind(Enum):
    STOP_TOKEN_EMITTED = "stop_token_emitted"
    SKILL_INVOKED = "skill_invoked"
    GRASP_FAILURE_DETECTED = "grasp_failure_detected"
    DROP_DETECTED = "drop_detected"
    CORRECTOR_ACTIVATED = "corrector_activated"
    SKILL_RESUMED = "skill_resumed"
    TRIAL_END = "trial_end"


class Termination(Enum):
    SUCCESS = "success"
    COMPLETED = "completed"  # control sequence finished without placement
    TIMEOUT = "timeout"
    TRACKING_LOST = "tracking_lost"
    JAMMED = "jammed"
    CORRECTIONS_EXHAUSTED = "corrections_exhausted"


@dataclass(frozen=True, slots=True)
class Event:
    tick: int
    kind: EventKind
    payload: dict = field(default_factory=dict)


@dataclass(frozen=True, slots=True)
class DetectorConfig:
    drop_monitor_period: int = DROP_MONITOR_PERIOD_TICKS
    pickup_settle_s: float = 0.3
    max_corrections: int = 2
    correction_idle_s: float = 0.5
    timeout_s: float = 120.0


@dataclass(frozen=True, slots=True)
class RunConfig:
    deployment: str = DEPLOY_SELFVLA
    detectors: DetectorConfig = field(default_factory=DetectorConfig)


@dataclass(frozen=True, slots=True)
class EpisodeResult:
    approaching: bool
    disassembly: bool
    final: bool
    recovered: bool
    termination: Termination
    sim_time_s: float
    corrections_used: int


@dataclass(frozen=True, slots=True)
class StepTrace:
    """Per-control-step audit row for invariant tests."""

    tick: int
    mode: Mode
    path_origin: Optional[TrajectoryOrigin]
    governing_index: int
    gripper_byte: int


@dataclass
class EpisodeRecord:
    task: str
    config_id: str
    instruction: str
    seed: int
    steps: list[tuple[int, Observation, Action]]
    events: list[Event]
    trace: list[StepTrace]
    marks: dict[str, int]
    monitor_ticks: list[int]
    result: EpisodeResult


@dataclass
class OrchestratorState:
    """Mutable mode-machine state advanced once per control step."""

    mode: Mode = Mode.PLANNER
    active_skill: Optional[str] = None
    traj: Optional[ResolvedTrajectory] = None
    path: Optional[BlendedPath] = None
    progress: float = 0.0
    extraction_completed: bool = False
    pickup_checked: bool = False
    settle_deadline: Optional[int] = None
    corrections_used: int = 0
    idle_until: Optional[int] = None
    events: list[Event] = field(default_factory=list)

    def log(self, tick: int, kind: EventKind, **payload) -> None:
        self.events.append(Event(tick, kind, payload))


def detect_stop(action: Action) -> bool:
    """True iff the action carries the reserved stop byte."""
    return action.gripper.value == 255


def detect_grasp_failure(obs: Observation, skill: SkillDefinition) -> bool:
    """One-shot post-pickup check: fingers reached their command, nothing inside."""
    return (
        abs(obs.gripper_observed_width - obs.gripper_commanded_width)
        < skill.failure_threshold
    )


def monitor_drop(obs: Observation, skill: SkillDefinition) -> bool:
    """Continuous 50 Hz re-application of the grasp-failure criterion."""
    return detect_grasp_failure(obs, skill)


class OrchestratorError(Exception):
    pass


def _invoke_full(state: OrchestratorState, skill: SkillDefinition, world: WorldState) -> None:
    state.traj = resolve(skill, world.tcp)
    state.path = blend(state.traj)
    state.progress = 0.0
    state.mode = Mode.SKILL
    state.pickup_checked = False
    state.settle_deadline = None


def _invoke_remaining(state: OrchestratorState, skill: SkillDefinition) -> None:
    state.traj = resolve_remaining(skill)
    state.path = blend(state.traj)
    state.progress = 0.0
    state.mode = Mode.SKILL
    # the corrector re-picked the component: extraction is over for good
    state.extraction_completed = True
    state.settle_deadline = None


def transition(
    state: OrchestratorState,
    skill: SkillDefinition,
    world: WorldState,
    action: Action,
    failure: Optional[EventKind],
    detectors: DetectorConfig,
) -> Optional[Termination]:
    """Apply one control step's mode-machine rules; returns a terminal cause.

    A planner stop token resolves the full trajectory against the current TCP;
    a corrector stop token resumes from the placement remainder (the
    ``extraction_completed`` flag double-checks the disambiguation). Failures
    route to the corrector until the correction budget runs out.
    """
    tick = world.tick
    if failure is not None:
        state.log(tick, failure)
        state.corrections_used += 1
        if state.corrections_used > detectors.max_corrections:
            return Termination.CORRECTIONS_EXHAUSTED
        state.path = None
        state.traj = None
        state.settle_deadline = None
        state.idle_until = tick + max(0, round(detectors.correction_idle_s / TICK_DT))
        return None
    if detect_stop(action):
        if state.mode is Mode.SKILL:
            raise OrchestratorError("skill controller emitted the reserved stop byte")
        pos_err, rot_err = pose_distance(world.tcp, world.pregrasp)
        within = pos_err <= skill.trigger_tolerance[0] and rot_err <= skill.trigger_tolerance[1]
        state.log(tick, EventKind.STOP_TOKEN_EMITTED, mode=state.mode.value, within_tolerance=within)
        if state.mode is Mode.PLANNER:
            if state.extraction_completed:
                raise OrchestratorError("planner stop token after extraction completed")
            _invoke_full(state, skill, world)
            state.log(tick, EventKind.SKILL_INVOKED, skill=skill.id, origin="full")
        else:  # corrector
            if not state.extraction_completed and state.corrections_used == 0:
                raise OrchestratorError("corrector stop token without a prior correction")
            _invoke_remaining(state, skill)
            state.log(tick, EventKind.SKILL_RESUMED, skill=skill.id, origin="placement_only")
    return None


def run_episode(
    planner: PolicyHandle,
    corrector: Optional[PolicyHandle],
    library: SkillLibrary,
    world: WorldState,
    instruction: Instruction | str,
    config: RunConfig = RunConfig(),
) -> EpisodeRecord:
    """Run one trial to termination and return its full record.

    ``end_to_end`` deployment routes every control step through the planner
    handle with skill invocation disabled, matching the baseline condition.
    A disabled corrector (``None``) turns any detected failure into trial
    failure once the (zero-size) correction budget is hit.
    """
    e = encode_instruction(instruction if isinstance(instruction, str) else instruction.text)
    skill_id = select_skill(e, library)
    skill = library.get(skill_id)
    det = config.detectors
    end_to_end = config.deployment == DEPLOY_END_TO_END
    if config.deployment not in (DEPLOY_SELFVLA, DEPLOY_END_TO_END):
        raise OrchestratorError(f"unknown deployment {config.deployment!r}")

    state = OrchestratorState(active_skill=skill_id)
    if corrector is None:
        det = DetectorConfig(
            det.drop_monitor_period, det.pickup_settle_s, 0, det.correction_idle_s, det.timeout_s
        )
    steps: list[tuple[int, Observation, Action]] = []
    trace: list[StepTrace] = []
    marks: dict[str, int] = {}
    monitor_ticks: list[int] = []
    settle_ticks = max(1, round(det.pickup_settle_s / TICK_DT))
    timeout_tick = round(det.timeout_s / TICK_DT)
    stop_ok: Optional[bool] = None
    termination: Optional[Termination] = None
    idle_hold = Action(DeltaMotion.zero(), GripperCommand(255))  # byte 255 keeps the command
    static_steps = 0
    prev_key: Optional[tuple] = None
    stasis_limit = round(2.0 / CONTROL_DT)  # a dead-still robot ends the trial early

    planner.reset(world.seed)
    if corrector is not None:
        corrector.reset(world.seed)

    while world.tick < timeout_tick:
        # idle window between a detected failure and the corrector's first action
        if state.idle_until is not None:
            if world.tick < state.idle_until:
                for _ in range(CONTROL_PERIOD_TICKS):
                    world = step(world, idle_hold)
                continue
            state.idle_until = None
            state.mode = Mode.CORRECTOR
            corrector.reset(world.seed + state.corrections_used)
            state.log(world.tick, EventKind.CORRECTOR_ACTIVATED, correction=state.corrections_used)

        obs = observe(world)
        if world.config.task == TASK_RAM and obs.latches[1]:
            termination = Termination.JAMMED
            break
        z = encode_observation(obs, world.config)

        done = False
        if state.mode is Mode.SKILL:
            try:
                action, state.progress, done = controller_step(
                    state.path, state.progress, world.tcp, CONTROL_DT
                )
            except TrackingLostError:
                termination = Termination.TRACKING_LOST
                break
            _update_skill_marks(state, skill, world, marks, settle_ticks)
        elif state.mode is Mode.PLANNER:
            action = query(planner, z, e, world.tick)
        else:
            try:
                action = query(corrector, z, e, world.tick)
            except NoTargetVisibleError:
                # nothing recoverable in view: the correction budget is dead
                termination = Termination.CORRECTIONS_EXHAUSTED
                break

        if state.mode is Mode.SKILL and detect_stop(action):
            raise OrchestratorError("skill controller emitted the reserved stop byte")
        if not detect_stop(action):
            steps.append((world.tick, obs, action))
        trace.append(
            StepTrace(
                tick=world.tick,
                mode=state.mode,
                path_origin=state.path.origin if state.path is not None else None,
                governing_index=(
                    state.path.sample(state.progress).governing_index
                    if state.path is not None
                    else -1
                ),
                gripper_byte=action.gripper.value,
            )
        )
        if state.mode is Mode.PLANNER and detect_stop(action) and stop_ok is None:
            pos_err, rot_err = pose_distance(world.tcp, world.pregrasp)
            stop_ok = (
                pos_err <= skill.trigger_tolerance[0] and rot_err <= skill.trigger_tolerance[1]
            )

        key = (state.mode, action.gripper.value)
        if action.motion.is_zero() and key == prev_key:
            static_steps += 1
            if static_steps >= stasis_limit:
                termination = Termination.TIMEOUT
                break
        else:
            static_steps = 0
        prev_key = key

        # apply the control action over the base ticks, monitoring at 50 Hz
        sub = Action(
            DeltaMotion(
                tuple(t / CONTROL_PERIOD_TICKS for t in action.motion.translation),
                tuple(r / CONTROL_PERIOD_TICKS for r in action.motion.rotation),
            ),
            action.gripper,
        )
        failure: Optional[EventKind] = None
        for _ in range(CONTROL_PERIOD_TICKS):
            world = step(world, sub)
            tick = world.tick
            if (
                state.settle_deadline is not None
                and tick >= state.settle_deadline
                and not state.pickup_checked
            ):
                state.pickup_checked = True
                state.settle_deadline = None
                if detect_grasp_failure(observe(world), skill):
                    failure = EventKind.GRASP_FAILURE_DETECTED
                    break
            if (
                tick % det.drop_monitor_period == 0
                and state.mode is Mode.SKILL
                and state.extraction_completed
                and state.path is not None
                and _in_placement_region(state)
            ):
                mon = observe(world)
                if mon.gripper_commanded_width < skill.expected_grasp_width:
                    monitor_ticks.append(tick)
                    if monitor_drop(mon, skill):
                        failure = EventKind.DROP_DETECTED
                        break

        if state.mode is Mode.SKILL and failure is None:
            if done:
                flags = check_stage(world)
                termination = Termination.SUCCESS if flags.placed_ok else Termination.COMPLETED
                break

        if end_to_end:
            # skill invocation disabled: stop tokens are ignored, detectors idle
            flags = check_stage(world)
            if flags.placed_ok:
                termination = Termination.SUCCESS
                break
            continue

        termination = transition(state, skill, world, action, failure, det)
        if termination is not None:
            break

    if termination is None:
        termination = Termination.TIMEOUT
    state.log(world.tick, EventKind.TRIAL_END, termination=termination.value, **marks)

    flags = check_stage(world)
    if end_to_end:
        approaching = world.pregrasp_reached
    else:
        approaching = bool(stop_ok)
    disassembly = flags.disassembly_ok
    final = flags.placed_ok and termination is Termination.SUCCESS
    if final:
        disassembly = True
    if disassembly:
        approaching = True
    result = EpisodeResult(
        approaching=approaching,
        disassembly=disassembly,
        final=final,
        recovered=final and state.corrections_used > 0,
        termination=termination,
        sim_time_s=world.sim_time,
        corrections_used=state.corrections_used,
    )
    return EpisodeRecord(
        task=world.config.task,
        config_id=world.config.config_id,
        instruction=e.text,
        seed=world.seed,
        steps=steps,
        events=state.events,
        trace=trace,
        marks=marks,
        monitor_ticks=monitor_ticks,
        result=result,
    )


def _in_placement_region(state: OrchestratorState) -> bool:
    if state.path.origin is TrajectoryOrigin.PLACEMENT_ONLY:
        return True
    idx = state.traj.placement_start_index
    return state.progress >= state.path.station_of(idx)


def _update_skill_marks(
    state: OrchestratorState,
    skill: SkillDefinition,
    world: WorldState,
    marks: dict[str, int],
    settle_ticks: int,
) -> None:
    path, traj = state.path, state.traj
    if traj.origin is TrajectoryOrigin.FULL:
        pickup = traj.pickup_index
        station = path.station_of(pickup)
        if state.progress >= station and "pickup_close_tick" not in marks:
            marks["pickup_close_tick"] = world.tick
            state.settle_deadline = world.tick + settle_ticks
        if state.progress > path.region_end_of(pickup) and not state.extraction_completed:
            state.extraction_completed = True
        lift = next(
            (i for i, wp in enumerate(traj.waypoints) if wp.tag == TAG_LIFT_END), None
        )
        if (
            lift is not None
            and state.progress >= path.station_of(lift)
            and "lift_end_tick" not in marks
        ):
            marks["lift_end_tick"] = world.tick
    idx = traj.placement_start_index if traj.origin is TrajectoryOrigin.FULL else 0
    if state.progress >= path.station_of(idx) and "placement_start_tick" not in marks:
        marks["placement_start_tick"] = world.tick
