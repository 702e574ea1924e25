"""Waypoint skill library: file format, validation, selection, and resolution.

A skill is a reusable contact-rich procedure with two segments: extraction
waypoints expressed relative to the trigger pose (the TCP pose at the moment
the stop token is emitted), and placement waypoints expressed as absolute
base-frame targets. Skills are persisted as UTF-8 JSON ``.skill`` documents
so they stay diffable and hand-editable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from .geometry import GRIPPER_MAX_BYTE, GripperCommand, Pose, compose

if TYPE_CHECKING:  # pragma: no cover
    from .policies import InstructionEmbedding

TAG_PICKUP = "pick_up"
TAG_PLACEMENT_START = "placement_start"
TAG_LIFT_END = "lift_end"


class SkillError(Exception):
    """Base class for skill-library failures."""


class SkillFileError(SkillError):
    """Malformed skill document (bad JSON, wrong types, unknown fields)."""


class SkillValidationError(SkillError):
    """Structurally valid document violating a skill invariant."""


class NoMatchingSkillError(SkillError):
    """No library skill overlaps the instruction's vocabulary."""


class WaypointFrame(Enum):
    RELATIVE_TO_TRIGGER = "relative"
    BASE = "base"


class TrajectoryOrigin(Enum):
    FULL = "full"
    PLACEMENT_ONLY = "placement_only"


@dataclass(frozen=True, slots=True)
class Waypoint:
    frame: WaypointFrame
    target: Pose
    blend_radius: float
    speed: float
    gripper: GripperCommand
    dwell: float = 0.0
    tag: str | None = None


@dataclass(frozen=True, slots=True)
class SkillDefinition:
    id: str
    instruction_keywords: tuple[str, ...]
    extraction: tuple[Waypoint, ...]
    placement: tuple[Waypoint, ...]
    expected_grasp_width: float
    failure_threshold: float
    trigger_tolerance: tuple[float, float]  # (meters, radians)

    @property
    def waypoint_count(self) -> int:
        return len(self.extraction) + len(self.placement)

    @property
    def pickup_index(self) -> int:
        """Index of the pick-up waypoint within the extraction segment."""
        for i, wp in enumerate(self.extraction):
            if wp.tag == TAG_PICKUP:
                return i
        raise SkillValidationError(f"skill {self.id!r} lacks a {TAG_PICKUP} tag")


@dataclass(frozen=True, slots=True)
class ResolvedTrajectory:
    """Base-frame waypoint sequence ready for blending.

    ``origin`` records whether this is a full resolution (extraction composed
    against the trigger pose, placement appended) or the placement-only
    remainder used after a correction.
    """

    skill_id: str
    waypoints: tuple[Waypoint, ...]
    origin: TrajectoryOrigin
    extraction_count: int

    @property
    def pickup_index(self) -> int | None:
        for i, wp in enumerate(self.waypoints):
            if wp.tag == TAG_PICKUP:
                return i
        return None

    @property
    def placement_start_index(self) -> int:
        for i, wp in enumerate(self.waypoints):
            if wp.tag == TAG_PLACEMENT_START:
                return i
        raise SkillValidationError(f"trajectory for {self.skill_id!r} lacks {TAG_PLACEMENT_START}")


@dataclass(frozen=True)
class SkillLibrary:
    skills: dict[str, SkillDefinition] = field(default_factory=dict)

    def __iter__(self):
        return iter(self.skills.values())

    def __len__(self) -> int:
        return len(self.skills)

    def get(self, skill_id: str) -> SkillDefinition:
        return self.skills[skill_id]


_WAYPOINT_FIELDS = {
    "frame",
    "pos_m",
    "quat_wxyz",
    "blend_radius_m",
    "speed_mps",
    "gripper",
    "dwell_s",
    "tag",
}
_SKILL_FIELDS = {
    "id",
    "keywords",
    "expected_grasp_width_m",
    "failure_threshold_m",
    "trigger_tolerance",
    "extraction",
    "placement",
}


def _require_number(obj, locus: str) -> float:
    if not isinstance(obj, (int, float)) or isinstance(obj, bool) or not math.isfinite(obj):
        raise SkillFileError(f"{locus}: expected a finite number, got {obj!r}")
    return float(obj)


def _parse_waypoint(raw: dict, locus: str) -> Waypoint:
    if not isinstance(raw, dict):
        raise SkillFileError(f"{locus}: waypoint must be an object")
    unknown = set(raw) - _WAYPOINT_FIELDS
    if unknown:
        raise SkillFileError(f"{locus}: unknown fields {sorted(unknown)}")
    try:
        frame = WaypointFrame(raw["frame"])
    except (KeyError, ValueError) as exc:
        raise SkillFileError(f"{locus}.frame: must be 'relative' or 'base'") from exc
    pos = raw.get("pos_m")
    quat = raw.get("quat_wxyz")
    if not (isinstance(pos, list) and len(pos) == 3):
        raise SkillFileError(f"{locus}.pos_m: expected [x, y, z]")
    if not (isinstance(quat, list) and len(quat) == 4):
        raise SkillFileError(f"{locus}.quat_wxyz: expected [w, x, y, z]")
    try:
        target = Pose(
            tuple(_require_number(v, f"{locus}.pos_m") for v in pos),
            tuple(_require_number(v, f"{locus}.quat_wxyz") for v in quat),
        )
    except ValueError as exc:
        raise SkillFileError(f"{locus}: {exc}") from exc
    radius = _require_number(raw.get("blend_radius_m", 0.0), f"{locus}.blend_radius_m")
    speed = _require_number(raw.get("speed_mps"), f"{locus}.speed_mps")
    dwell = _require_number(raw.get("dwell_s", 0.0), f"{locus}.dwell_s")
    grip = raw.get("gripper")
    if not isinstance(grip, int) or isinstance(grip, bool) or not 0 <= grip <= GRIPPER_MAX_BYTE:
        raise SkillFileError(f"{locus}.gripper: expected integer 0..=250, got {grip!r}")
    tag = raw.get("tag")
    if tag is not None and not isinstance(tag, str):
        raise SkillFileError(f"{locus}.tag: expected string")
    if radius < 0:
        raise SkillFileError(f"{locus}.blend_radius_m: must be >= 0")
    if speed <= 0:
        raise SkillFileError(f"{locus}.speed_mps: must be > 0")
    if dwell < 0:
        raise SkillFileError(f"{locus}.dwell_s: must be >= 0")
    return Waypoint(frame, target, radius, speed, GripperCommand(grip), dwell, tag)


def _segment_distances(waypoints: tuple[Waypoint, ...]) -> list[float]:
    out = []
    for a, b in zip(waypoints, waypoints[1:]):
        ax, ay, az = a.target.position
        bx, by, bz = b.target.position
        out.append(math.sqrt((bx - ax) ** 2 + (by - ay) ** 2 + (bz - az) ** 2))
    return out


def _validate_segment_geometry(
    waypoints: tuple[Waypoint, ...], seg_name: str, index_base: int = 0
) -> None:
    """Blend radii must leave room on both adjacent legs; dwells stop exactly.

    Relative offsets keep their pairwise distances under rigid resolution, so
    these checks hold for every trigger pose. The joint between extraction and
    placement depends on the trigger and is re-checked at blend time.
    """
    dists = _segment_distances(waypoints)
    for i, d in enumerate(dists):
        if d <= 1e-9:
            raise SkillValidationError(
                f"{seg_name} waypoints {index_base + i} and {index_base + i + 1} coincide"
            )
    for i, wp in enumerate(waypoints):
        if wp.dwell > 0 and wp.blend_radius > 0:
            raise SkillValidationError(
                f"{seg_name} waypoint {index_base + i}: dwell requires blend_radius 0"
            )
        if wp.blend_radius <= 0:
            continue
        adjacent = []
        if i > 0:
            adjacent.append(dists[i - 1])
        if i < len(dists):
            adjacent.append(dists[i])
        for d in adjacent:
            if not wp.blend_radius < 0.5 * d:
                raise SkillValidationError(
                    f"{seg_name} waypoint {index_base + i}: blend radius "
                    f"{wp.blend_radius} not below half segment length {d / 2}"
                )


def validate_skill(skill: SkillDefinition) -> None:
    sid = skill.id
    if not skill.extraction or not skill.placement:
        raise SkillValidationError(f"skill {sid!r}: both segments must be non-empty")
    for i, wp in enumerate(skill.extraction):
        if wp.frame is not WaypointFrame.RELATIVE_TO_TRIGGER:
            raise SkillValidationError(f"skill {sid!r}: extraction waypoint {i} must be relative")
    for i, wp in enumerate(skill.placement):
        if wp.frame is not WaypointFrame.BASE:
            raise SkillValidationError(f"skill {sid!r}: placement waypoint {i} must be base-frame")
    pickup = [i for i, wp in enumerate(skill.extraction) if wp.tag == TAG_PICKUP]
    pickup += [i for i, wp in enumerate(skill.placement) if wp.tag == TAG_PICKUP]
    if len(pickup) != 1:
        raise SkillValidationError(f"skill {sid!r}: need exactly one {TAG_PICKUP} tag, got {len(pickup)}")
    if not any(wp.tag == TAG_PICKUP for wp in skill.extraction):
        raise SkillValidationError(f"skill {sid!r}: {TAG_PICKUP} must lie in the extraction segment")
    starts = [i for i, wp in enumerate(skill.placement) if wp.tag == TAG_PLACEMENT_START]
    starts += [i for i, wp in enumerate(skill.extraction) if wp.tag == TAG_PLACEMENT_START]
    if starts != [0]:
        raise SkillValidationError(
            f"skill {sid!r}: exactly one {TAG_PLACEMENT_START} tag required, on placement waypoint 0"
        )
    if not 0 < skill.failure_threshold < skill.expected_grasp_width:
        raise SkillValidationError(
            f"skill {sid!r}: failure threshold {skill.failure_threshold} must be in "
            f"(0, expected grasp width {skill.expected_grasp_width})"
        )
    if skill.trigger_tolerance[0] <= 0 or skill.trigger_tolerance[1] <= 0:
        raise SkillValidationError(f"skill {sid!r}: trigger tolerance must be positive")
    if len(skill.extraction) >= 3:
        # Initial waypoints keep the tighter radii for precise positioning;
        # zero-radius stops later in the sequence are exempt.
        first_two = max(skill.extraction[0].blend_radius, skill.extraction[1].blend_radius)
        later = [wp.blend_radius for wp in skill.extraction[2:] if wp.blend_radius > 0]
        if later and first_two > min(later):
            raise SkillValidationError(
                f"skill {sid!r}: first two extraction blend radii must not exceed later ones"
            )
    _validate_segment_geometry(skill.extraction, f"skill {sid!r} extraction")
    _validate_segment_geometry(
        skill.placement, f"skill {sid!r} placement", index_base=len(skill.extraction)
    )


def parse_skill(data: bytes | str) -> SkillDefinition:
    """Parse and validate one skill document; raises with a field locus on error."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SkillFileError(f"line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise SkillFileError("top level: expected an object")
    unknown = set(raw) - _SKILL_FIELDS
    if unknown:
        raise SkillFileError(f"top level: unknown fields {sorted(unknown)}")
    sid = raw.get("id")
    if not isinstance(sid, str) or not sid:
        raise SkillFileError("id: expected non-empty string")
    keywords = raw.get("keywords")
    if not isinstance(keywords, list) or not all(isinstance(k, str) and k for k in keywords):
        raise SkillFileError("keywords: expected list of non-empty strings")
    tol = raw.get("trigger_tolerance")
    if not isinstance(tol, dict) or set(tol) != {"pos_m", "rot_rad"}:
        raise SkillFileError("trigger_tolerance: expected {pos_m, rot_rad}")
    segments: dict[str, tuple[Waypoint, ...]] = {}
    for seg in ("extraction", "placement"):
        items = raw.get(seg)
        if not isinstance(items, list) or not items:
            raise SkillFileError(f"{seg}: expected non-empty list")
        segments[seg] = tuple(
            _parse_waypoint(item, f"{seg}[{i}]") for i, item in enumerate(items)
        )
    skill = SkillDefinition(
        id=sid,
        instruction_keywords=tuple(k.lower() for k in keywords),
        extraction=segments["extraction"],
        placement=segments["placement"],
        expected_grasp_width=_require_number(
            raw.get("expected_grasp_width_m"), "expected_grasp_width_m"
        ),
        failure_threshold=_require_number(raw.get("failure_threshold_m"), "failure_threshold_m"),
        trigger_tolerance=(
            _require_number(tol["pos_m"], "trigger_tolerance.pos_m"),
            _require_number(tol["rot_rad"], "trigger_tolerance.rot_rad"),
        ),
    )
    validate_skill(skill)
    return skill


def load_skills(sources: Iterable[bytes | str | Path]) -> SkillLibrary:
    """Build a library from skill documents (bytes/str) or file paths."""
    skills: dict[str, SkillDefinition] = {}
    for src in sources:
        if isinstance(src, Path):
            src = src.read_bytes()
        skill = parse_skill(src)
        if skill.id in skills:
            raise SkillValidationError(f"duplicate skill id {skill.id!r}")
        skills[skill.id] = skill
    return SkillLibrary(skills)


def builtin_library() -> SkillLibrary:
    """The two shipped skills: CPU extraction (23 waypoints) and RAM removal (8)."""
    pkg = resources.files("dismantle").joinpath("data")
    docs = [
        pkg.joinpath(name).read_bytes()
        for name in sorted(
            entry.name for entry in pkg.iterdir() if entry.name.endswith(".skill")
        )
    ]
    return load_skills(docs)


def select_skill(embedding: "InstructionEmbedding", library: SkillLibrary) -> str:
    """Pick the skill maximizing normalized keyword overlap with the instruction.

    Score = |keywords ∩ instruction tokens| / |keywords|; ties break on
    lexicographic skill id so selection is deterministic.
    """
    if not library.skills:
        raise NoMatchingSkillError("empty skill library")
    best_id: str | None = None
    best_score = 0.0
    for sid in sorted(library.skills):
        skill = library.skills[sid]
        kw = set(skill.instruction_keywords)
        if not kw:
            continue
        score = len(kw & embedding.bag) / len(kw)
        if score > best_score:
            best_id, best_score = sid, score
    if best_id is None or best_score == 0.0:
        raise NoMatchingSkillError(f"no skill keywords overlap tokens {sorted(embedding.bag)}")
    return best_id


def resolve(skill: SkillDefinition, trigger_pose: Pose) -> ResolvedTrajectory:
    """Resolve the full skill against the trigger pose.

    Extraction targets are composed left with the trigger so relative offsets
    rotate and translate with it; placement targets pass through unchanged.
    """
    resolved = tuple(
        Waypoint(
            WaypointFrame.BASE,
            compose(trigger_pose, wp.target),
            wp.blend_radius,
            wp.speed,
            wp.gripper,
            wp.dwell,
            wp.tag,
        )
        for wp in skill.extraction
    ) + skill.placement
    return ResolvedTrajectory(
        skill_id=skill.id,
        waypoints=resolved,
        origin=TrajectoryOrigin.FULL,
        extraction_count=len(skill.extraction),
    )


def resolve_remaining(skill: SkillDefinition) -> ResolvedTrajectory:
    """Placement-only remainder used when resuming after a correction."""
    return ResolvedTrajectory(
        skill_id=skill.id,
        waypoints=skill.placement,
        origin=TrajectoryOrigin.PLACEMENT_ONLY,
        extraction_count=0,
    )
