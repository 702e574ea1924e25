"""30 Hz episode recording, phase labeling, training splits, and file I/O.

Episodes are stored as line-delimited JSON (``.jsonl``): the first line is a
header object carrying format version, task id, config id, rate, phase spans,
the event log, and outcome flags; every following line is one frame with
unit-suffixed observation/action fields. The same flavor of file holds raw
and labeled episodes (raw files simply have no spans yet). Dataset splits are
stored one trajectory per line after a split header.

Phase semantics: approaching runs from the first frame to the skill trigger;
skill execution from the trigger to placement completion or failure
detection; each correction from corrector activation to its stop token; each
resumption from the resume to the next failure or the end. The idle interval
between a detected failure and the corrector's first action is never recorded,
so spans partition the frame range exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import Action, DeltaMotion, GripperCommand, Pose
from .orchestrator import Event, EventKind, EpisodeRecord
from .simulator import TICK_DT, Observation

FORMAT_VERSION = 1
RATE_HZ = 30
FRAME_DT = 1.0 / RATE_HZ
STOP_FRAME_COUNT = 3
PICK_LIFT_LEAD_FRAMES = 1  # include the frame preceding the pick-up close


class PipelineError(Exception):
    pass


class LabelError(PipelineError):
    """Event log and frame stream do not line up."""


class SplitError(PipelineError):
    """Episode set cannot produce the requested split."""


class Phase(Enum):
    APPROACHING = "approaching"
    SKILL_EXECUTION = "skill_execution"
    CORRECTION = "correction"
    SKILL_RESUMPTION = "skill_resumption"


_CANONICAL_NEXT = {
    None: {Phase.APPROACHING},
    Phase.APPROACHING: {Phase.SKILL_EXECUTION},
    Phase.SKILL_EXECUTION: {Phase.CORRECTION},
    Phase.CORRECTION: {Phase.SKILL_RESUMPTION},
    Phase.SKILL_RESUMPTION: {Phase.CORRECTION},
}


@dataclass(frozen=True, slots=True)
class Frame:
    index: int
    time: float
    observation: Observation
    action: Action

    @property
    def tick(self) -> int:
        return round(self.time / TICK_DT)


@dataclass(frozen=True, slots=True)
class PhaseSpan:
    phase: Phase
    first: int
    last: int  # inclusive frame index


@dataclass
class LabeledEpisode:
    frames: list[Frame]
    spans: list[PhaseSpan]
    task: str
    config_id: str
    outcome: dict
    marks: dict[str, int] = field(default_factory=dict)
    instruction: str = ""
    seed: int = 0
    events: list[Event] = field(default_factory=list)


@dataclass
class DatasetSplit:
    name: str  # planner | corrector | end_to_end
    trajectories: list[list[Frame]]


def record(episode: EpisodeRecord) -> list[Frame]:
    """Materialize the 30 Hz frame stream from an orchestrator run.

    Stop-token actions are transition signals, not motion, and are excluded;
    the canonical stop triple is appended later by the split pipeline. The
    idle window after a failure detection was never emitted by the
    orchestrator, so it is already absent here.
    """
    frames: list[Frame] = []
    for tick, obs, action in episode.steps:
        if action.gripper.value == 255:
            continue
        frames.append(Frame(len(frames), tick * TICK_DT, obs, action))
    return frames


def _phase_boundaries(events: Sequence[Event]) -> list[tuple[int, Phase]]:
    bounds: list[tuple[int, Phase]] = []
    for ev in events:
        if ev.kind is EventKind.SKILL_INVOKED:
            bounds.append((ev.tick, Phase.SKILL_EXECUTION))
        elif ev.kind is EventKind.CORRECTOR_ACTIVATED:
            bounds.append((ev.tick, Phase.CORRECTION))
        elif ev.kind is EventKind.SKILL_RESUMED:
            bounds.append((ev.tick, Phase.SKILL_RESUMPTION))
    return bounds


def label_phases(frames: Sequence[Frame], events: Sequence[Event]) -> list[PhaseSpan]:
    """Partition the frame range into canonical phase spans."""
    if not frames:
        return []
    ticks = [f.tick for f in frames]
    if any(b < a for a, b in zip(ticks, ticks[1:])):
        raise LabelError("frame times are not monotone")
    bounds = _phase_boundaries(events)
    spans: list[PhaseSpan] = []
    current = Phase.APPROACHING
    start = 0
    bi = 0
    for i, f in enumerate(frames):
        while bi < len(bounds) and f.tick >= bounds[bi][0]:
            if i > start:
                spans.append(PhaseSpan(current, start, i - 1))
                start = i
            current = bounds[bi][1]
            bi += 1
    spans.append(PhaseSpan(current, start, len(frames) - 1))
    prev = None
    for s in spans:
        if s.phase not in _CANONICAL_NEXT[prev]:
            raise LabelError(
                f"phase {s.phase.value} cannot follow {prev.value if prev else 'start'}"
            )
        prev = s.phase
    covered = sum(s.last - s.first + 1 for s in spans)
    if covered != len(frames):
        raise LabelError("spans do not partition the frame range")
    return spans


def label_episode(episode: EpisodeRecord) -> LabeledEpisode:
    frames = record(episode)
    spans = label_phases(frames, episode.events)
    r = episode.result
    outcome = {
        "approaching": r.approaching,
        "disassembly": r.disassembly,
        "final": r.final,
        "recovered": r.recovered,
        "termination": r.termination.value,
        "sim_time_s": r.sim_time_s,
        "corrections_used": r.corrections_used,
    }
    return LabeledEpisode(
        frames=frames,
        spans=spans,
        task=episode.task,
        config_id=episode.config_id,
        outcome=outcome,
        marks=dict(episode.marks),
        instruction=episode.instruction,
        seed=episode.seed,
        events=list(episode.events),
    )


def append_stop_frames(segment: Sequence[Frame]) -> list[Frame]:
    """Append the canonical stop triple: zero motion, gripper byte 255.

    Observations repeat the last real frame; timestamps continue at the frame
    rate. Callers must apply this exactly once per trajectory.
    """
    if not segment:
        raise PipelineError("cannot append stop frames to an empty segment")
    last = segment[-1]
    stop_action = Action(DeltaMotion.zero(), GripperCommand(255))
    out = list(segment)
    for k in range(1, STOP_FRAME_COUNT + 1):
        out.append(
            Frame(last.index + k, last.time + k * FRAME_DT, last.observation, stop_action)
        )
    return out


def _slice(frames: Sequence[Frame], span: PhaseSpan) -> list[Frame]:
    return list(frames[span.first : span.last + 1])


def _frame_index_at_tick(frames: Sequence[Frame], tick: int) -> int:
    for i, f in enumerate(frames):
        if f.tick >= tick:
            return i
    return len(frames) - 1


def build_splits(
    episodes: Iterable[LabeledEpisode],
) -> tuple[DatasetSplit, DatasetSplit, DatasetSplit]:
    """Construct the three training splits from labeled episodes.

    planner: approaching segments of triggered episodes, each closed by the
    stop triple. corrector: correction segments (stop triple appended) plus,
    from every episode that picked the component up, the skill-execution
    sub-segment from the frame before the pick-up close through the lift
    completion (also closed by the stop triple, since that is the moment a
    corrector would hand back control). end_to_end: full frame streams with
    any stop-valued frames removed.
    """
    planner = DatasetSplit("planner", [])
    corrector = DatasetSplit("corrector", [])
    end_to_end = DatasetSplit("end_to_end", [])
    for ep in episodes:
        phases = {s.phase for s in ep.spans}
        skill_spans = [s for s in ep.spans if s.phase is Phase.SKILL_EXECUTION]
        for si, span in enumerate(ep.spans):
            if span.phase is Phase.APPROACHING and Phase.SKILL_EXECUTION in phases:
                planner.trajectories.append(append_stop_frames(_slice(ep.frames, span)))
            elif span.phase is Phase.CORRECTION:
                followed = si + 1 < len(ep.spans) and ep.spans[si + 1].phase is Phase.SKILL_RESUMPTION
                seg = _slice(ep.frames, span)
                corrector.trajectories.append(append_stop_frames(seg) if followed else seg)
        if skill_spans:
            if "pickup_close_tick" not in ep.marks:
                raise SplitError(
                    f"episode {ep.config_id!r} ran its skill but has no pick-up mark"
                )
            span = skill_spans[0]
            close_idx = _frame_index_at_tick(ep.frames, ep.marks["pickup_close_tick"])
            start = max(span.first, close_idx - PICK_LIFT_LEAD_FRAMES)
            if "lift_end_tick" in ep.marks:
                end = min(span.last, _frame_index_at_tick(ep.frames, ep.marks["lift_end_tick"]))
            else:
                end = span.last  # grasp failed before the lift finished
            if end >= start:
                seg = list(ep.frames[start : end + 1])
                corrector.trajectories.append(append_stop_frames(seg))
        stream = [f for f in ep.frames if f.action.gripper.value != 255]
        end_to_end.trajectories.append(stream)
    return planner, corrector, end_to_end


def _is_stop_frame(f: Frame) -> bool:
    return f.action.gripper.value == 255 and f.action.motion.is_zero()


def downsample_frames(frames: Sequence[Frame], factor: int) -> list[Frame]:
    """Keep every ``factor``-th frame; a trailing stop triple survives intact."""
    if factor < 1:
        raise PipelineError("downsample factor must be >= 1")
    if factor == 1:
        return list(frames)
    body = list(frames)
    tail: list[Frame] = []
    if len(body) >= STOP_FRAME_COUNT and all(_is_stop_frame(f) for f in body[-STOP_FRAME_COUNT:]):
        tail = body[-STOP_FRAME_COUNT:]
        body = body[:-STOP_FRAME_COUNT]
    kept = [f for i, f in enumerate(body) if i % factor == 0]
    return kept + tail


def downsample_split(split: DatasetSplit, factor: int) -> DatasetSplit:
    return DatasetSplit(split.name, [downsample_frames(t, factor) for t in split.trajectories])


def downsample_episode(ep: LabeledEpisode, factor: int) -> LabeledEpisode:
    """Per-span downsampling: the first frame of every span is always kept."""
    if factor < 1:
        raise PipelineError("downsample factor must be >= 1")
    kept: list[Frame] = []
    new_spans: list[PhaseSpan] = []
    for span in ep.spans:
        seg = [f for i, f in enumerate(_slice(ep.frames, span)) if i % factor == 0]
        first = len(kept)
        kept.extend(seg)
        new_spans.append(PhaseSpan(span.phase, first, len(kept) - 1))
    return LabeledEpisode(
        frames=kept,
        spans=new_spans,
        task=ep.task,
        config_id=ep.config_id,
        outcome=dict(ep.outcome),
        marks=dict(ep.marks),
        instruction=ep.instruction,
        seed=ep.seed,
        events=list(ep.events),
    )


# --- serialization ---------------------------------------------------------


def _frame_to_json(f: Frame) -> dict:
    obs = f.observation
    return {
        "i": f.index,
        "t_s": f.time,
        "obs": {
            "tcp_pos_m": list(obs.tcp.position),
            "tcp_quat_wxyz": list(obs.tcp.orientation),
            "grip_cmd_m": obs.gripper_commanded_width,
            "grip_obs_m": obs.gripper_observed_width,
            "objects": {
                k: {"pos_m": list(p.position), "quat_wxyz": list(p.orientation)}
                for k, p in sorted(obs.objects.items())
            },
            "latches": list(obs.latches),
        },
        "act": {
            "delta_pos_m": list(f.action.motion.translation),
            "delta_rot_rad": list(f.action.motion.rotation),
            "gripper": f.action.gripper.value,
        },
    }


def _frame_from_json(raw: dict) -> Frame:
    o = raw["obs"]
    obs = Observation(
        tcp=Pose(tuple(o["tcp_pos_m"]), tuple(o["tcp_quat_wxyz"])),
        gripper_commanded_width=o["grip_cmd_m"],
        gripper_observed_width=o["grip_obs_m"],
        objects={
            k: Pose(tuple(v["pos_m"]), tuple(v["quat_wxyz"])) for k, v in o["objects"].items()
        },
        latches=tuple(o["latches"]),
    )
    a = raw["act"]
    act = Action(
        DeltaMotion(tuple(a["delta_pos_m"]), tuple(a["delta_rot_rad"])),
        GripperCommand(a["gripper"]),
    )
    return Frame(raw["i"], raw["t_s"], obs, act)


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def save_episode(ep: LabeledEpisode, path: Path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "episode",
        "task": ep.task,
        "config_id": ep.config_id,
        "rate_hz": RATE_HZ,
        "seed": ep.seed,
        "instruction": ep.instruction,
        "phase_spans": [[s.phase.value, s.first, s.last] for s in ep.spans],
        "marks": {k: ep.marks[k] for k in sorted(ep.marks)},
        "outcome": ep.outcome,
        "events": [
            {"tick": e.tick, "kind": e.kind.value, "payload": e.payload} for e in ep.events
        ],
    }
    lines = [_dumps(header)]
    lines.extend(_dumps(_frame_to_json(f)) for f in ep.frames)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_episode(path: Path) -> LabeledEpisode:
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise PipelineError(f"{path}: empty episode file")
    header = json.loads(lines[0])
    if header.get("format_version") != FORMAT_VERSION or header.get("kind") != "episode":
        raise PipelineError(f"{path}: not a version-{FORMAT_VERSION} episode file")
    frames = [_frame_from_json(json.loads(ln)) for ln in lines[1:] if ln]
    spans = [PhaseSpan(Phase(p), a, b) for p, a, b in header.get("phase_spans", [])]
    events = [
        Event(e["tick"], EventKind(e["kind"]), e.get("payload", {}))
        for e in header.get("events", [])
    ]
    return LabeledEpisode(
        frames=frames,
        spans=spans,
        task=header["task"],
        config_id=header["config_id"],
        outcome=header.get("outcome", {}),
        marks=dict(header.get("marks", {})),
        instruction=header.get("instruction", ""),
        seed=header.get("seed", 0),
        events=events,
    )


def save_split(split: DatasetSplit, path: Path) -> None:
    header = {
        "format_version": FORMAT_VERSION,
        "kind": "split",
        "split": split.name,
        "trajectories": len(split.trajectories),
    }
    lines = [_dumps(header)]
    for k, traj in enumerate(split.trajectories):
        lines.append(_dumps({"traj": k, "frames": [_frame_to_json(f) for f in traj]}))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_split(path: Path) -> DatasetSplit:
    lines = path.read_text(encoding="utf-8").splitlines()
    header = json.loads(lines[0])
    if header.get("kind") != "split":
        raise PipelineError(f"{path}: not a split file")
    trajectories = []
    for ln in lines[1:]:
        if not ln:
            continue
        raw = json.loads(ln)
        trajectories.append([_frame_from_json(f) for f in raw["frames"]])
    return DatasetSplit(header["split"], trajectories)
