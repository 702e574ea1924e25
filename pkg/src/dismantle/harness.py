"""Seeded trial runner, stage-metric reports, and demonstration generation.

A declarative matrix (one JSON document) defines cells: task x deployment x
policy x fault schedule over a placement set. Every trial derives its seed
from (master seed, cell name, trial index), resets the world from scratch,
and records stage flags, so reports are bit-reproducible and trials are
order-independent. Test placements are disjoint from the training placements
used for demonstration generation.
"""

from __future__ import annotations

import hashlib
import json
import random
import statistics
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .episodes import LabeledEpisode, label_episode
from .orchestrator import (
    DEPLOY_END_TO_END,
    DEPLOY_SELFVLA,
    DetectorConfig,
    EpisodeRecord,
    RunConfig,
    run_episode,
)
from .policies import (
    FlakyApproachPlanner,
    OracleCorrector,
    OraclePlanner,
    PolicyHandle,
    ScriptedEndToEnd,
    corrector_params,
    drift_planner,
    never_stops,
    planner_params,
    stops_early,
)
from .simulator import (
    TASK_CPU,
    TASK_RAM,
    ComponentConfig,
    GraspMiss,
    init_world,
    schedule_fault,
)
from .skills import SkillLibrary, builtin_library

INSTRUCTIONS = {
    TASK_CPU: "extract the cpu from the socket",
    TASK_RAM: "remove the ram module from the slot",
}

# Training placements: the eight assembly poses demonstrations are collected
# from. Test placements differ from all of them in position and yaw.
TRAIN_PLACEMENTS: dict[str, tuple[ComponentConfig, ...]] = {
    TASK_CPU: tuple(
        ComponentConfig(TASK_CPU, f"k{i}", x, y, yaw)
        for i, (x, y, yaw) in enumerate(
            [
                (0.30, -0.10, 0.00),
                (0.35, 0.05, 0.26),
                (0.40, -0.05, -0.35),
                (0.45, 0.10, 0.52),
                (0.50, -0.12, -0.17),
                (0.55, 0.08, 0.35),
                (0.60, -0.02, -0.52),
                (0.38, 0.12, 0.17),
            ]
        )
    ),
    TASK_RAM: tuple(
        ComponentConfig(TASK_RAM, f"k{i}", x, y, yaw)
        for i, (x, y, yaw) in enumerate(
            [
                (0.30, 0.10, 0.00),
                (0.35, -0.06, -0.26),
                (0.40, 0.04, 0.35),
                (0.45, -0.10, -0.52),
                (0.50, 0.12, 0.17),
                (0.55, -0.08, -0.35),
                (0.60, 0.02, 0.52),
                (0.42, -0.13, 0.26),
            ]
        )
    ),
}

TEST_PLACEMENTS: dict[str, tuple[ComponentConfig, ...]] = {
    TASK_CPU: tuple(
        ComponentConfig(TASK_CPU, f"t{i}", x, y, yaw)
        for i, (x, y, yaw) in enumerate(
            [
                (0.42, 0.00, 0.00),
                (0.33, 0.07, 0.44),
                (0.48, -0.08, -0.44),
                (0.57, 0.04, 0.09),
                (0.36, -0.13, -0.09),
            ]
        )
    ),
    TASK_RAM: tuple(
        ComponentConfig(TASK_RAM, f"t{i}", x, y, yaw)
        for i, (x, y, yaw) in enumerate(
            [
                (0.42, 0.02, 0.00),
                (0.34, -0.04, 0.44),
                (0.47, 0.08, -0.44),
                (0.56, -0.06, 0.09),
                (0.37, 0.13, -0.09),
            ]
        )
    ),
}

for _task in (TASK_CPU, TASK_RAM):
    _train = {(c.base_x, c.base_y, c.base_yaw) for c in TRAIN_PLACEMENTS[_task]}
    _test = {(c.base_x, c.base_y, c.base_yaw) for c in TEST_PLACEMENTS[_task]}
    assert _train.isdisjoint(_test), "test placements must differ from training placements"

# waypoint spans (within the resolved full trajectory) of the CPU contact
# stages the scripted end-to-end baseline can botch
E2E_GATE_SPANS = {
    TASK_CPU: {"lever": (2, 4), "bracket": (7, 8), "grasp": (11, 13)},
    TASK_RAM: {"grasp": (1, 2), "extract": (3, 4)},
}

DEMO_GRASP_MISS_RATE = 0.25


class HarnessError(Exception):
    pass


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit seed from the master seed and a label path."""
    h = hashlib.sha256()
    h.update(str(master_seed).encode())
    for p in parts:
        h.update(b"\x1f")
        h.update(str(p).encode())
    return int.from_bytes(h.digest()[:8], "big") >> 1


@dataclass(frozen=True, slots=True)
class TrialOutcome:
    task: str
    deployment: str
    config_id: str
    trial_index: int
    seed: int
    approaching: bool
    disassembly: bool
    final: bool
    recovered: bool
    sim_time_s: float
    termination: str

    def __post_init__(self) -> None:
        if self.final and not self.disassembly or self.disassembly and not self.approaching:
            raise HarnessError("stage monotonicity violated in outcome")


@dataclass
class CellSpec:
    name: str
    task: str
    deployment: str = DEPLOY_SELFVLA
    planner: dict = field(default_factory=lambda: {"name": "oracle"})
    corrector: Optional[dict] = field(default_factory=lambda: {"name": "oracle"})
    placements: object = "test"  # "test" | "train" | list of config ids
    faults: dict = field(default_factory=dict)
    detectors: dict = field(default_factory=dict)

    def resolve_placements(self) -> tuple[ComponentConfig, ...]:
        if self.placements == "test":
            return TEST_PLACEMENTS[self.task]
        if self.placements == "train":
            return TRAIN_PLACEMENTS[self.task]
        pool = {c.config_id: c for c in TEST_PLACEMENTS[self.task] + TRAIN_PLACEMENTS[self.task]}
        try:
            return tuple(pool[pid] for pid in self.placements)
        except KeyError as exc:
            raise HarnessError(f"cell {self.name!r}: unknown placement {exc}") from exc


@dataclass
class CellReport:
    name: str
    task: str
    deployment: str
    trials: int
    approaching: int
    disassembly: int
    final: int
    recovered: int
    mean_success_time_s: Optional[float]
    outcomes: list[TrialOutcome]


@dataclass
class Report:
    master_seed: int
    trials_per_cell: int
    cells: list[CellReport]


def build_planner(
    spec: dict, config: ComponentConfig, library: SkillLibrary, seed: int
) -> PolicyHandle:
    name = spec.get("name", "oracle")
    params = spec.get("params", {})
    if name == "oracle":
        policy = OraclePlanner(
            planner_params(config, noise_sigma_m=params.get("noise_sigma_m", 0.0)), seed
        )
    elif name == "never-stops":
        policy = never_stops(config)
    elif name == "stops-early":
        policy = stops_early(config, params.get("distance_m", 0.030))
    elif name == "drift":
        policy = drift_planner(config, tuple(params.get("bias_m", (0.02, 0.02, 0.0))))
    elif name == "flaky-approach":
        policy = FlakyApproachPlanner(
            planner_params(config), params.get("p_ok", 0.8), seed
        )
    elif name == "scripted-end-to-end":
        skill = library.get(
            "cpu_extraction" if config.task == TASK_CPU else "ram_removal"
        )
        spans = E2E_GATE_SPANS[config.task]
        gates = params.get("gates", list(spans))
        gate_spans = tuple(spans[g] for g in gates if g in spans)
        policy = ScriptedEndToEnd(
            config,
            skill,
            per_gate_success=params.get("per_gate_success", 1.0),
            gate_spans=gate_spans,
            flaky_approach="approach" in gates,
            seed=seed,
        )
    else:
        raise HarnessError(f"unknown planner policy {name!r}")
    return PolicyHandle("planner", policy=policy)


def build_corrector(
    spec: Optional[dict], config: ComponentConfig, seed: int
) -> Optional[PolicyHandle]:
    if spec is None:
        return None
    name = spec.get("name", "oracle")
    if name == "oracle":
        return PolicyHandle("corrector", policy=OracleCorrector(corrector_params(config), seed))
    raise HarnessError(f"unknown corrector policy {name!r}")


def run_trial(
    cell: CellSpec,
    placement: ComponentConfig,
    trial_index: int,
    seed: int,
    library: SkillLibrary,
) -> tuple[TrialOutcome, EpisodeRecord]:
    world = init_world(placement, seed)
    miss_p = cell.faults.get("grasp_miss_prob", 0.0)
    if miss_p > 0.0 and random.Random(seed).random() < miss_p:
        world = schedule_fault(world, GraspMiss())
    planner = build_planner(cell.planner, placement, library, seed)
    corrector = build_corrector(cell.corrector, placement, seed)
    det = DetectorConfig(**cell.detectors) if cell.detectors else DetectorConfig()
    run_cfg = RunConfig(deployment=cell.deployment, detectors=det)
    rec = run_episode(
        planner, corrector, library, world, INSTRUCTIONS[cell.task], run_cfg
    )
    r = rec.result
    outcome = TrialOutcome(
        task=cell.task,
        deployment=cell.deployment,
        config_id=placement.config_id,
        trial_index=trial_index,
        seed=seed,
        approaching=r.approaching,
        disassembly=r.disassembly,
        final=r.final,
        recovered=r.recovered,
        sim_time_s=r.sim_time_s,
        termination=r.termination.value,
    )
    return outcome, rec


def run_trials(
    cells: Iterable[CellSpec],
    n: int = 20,
    master_seed: int = 0,
    library: Optional[SkillLibrary] = None,
) -> Report:
    """Run ``n`` trials per cell, cycling each cell's placements."""
    library = library or builtin_library()
    reports: list[CellReport] = []
    for cell in cells:
        placements = cell.resolve_placements()
        outcomes: list[TrialOutcome] = []
        for i in range(n):
            placement = placements[i % len(placements)]
            seed = derive_seed(master_seed, cell.name, i)
            outcome, _ = run_trial(cell, placement, i, seed, library)
            outcomes.append(outcome)
        reports.append(aggregate_cell(cell, outcomes))
    return Report(master_seed=master_seed, trials_per_cell=n, cells=reports)


def aggregate_cell(cell: CellSpec, outcomes: list[TrialOutcome]) -> CellReport:
    if not outcomes:
        raise HarnessError(f"cell {cell.name!r}: no outcomes to aggregate")
    succ_times = [o.sim_time_s for o in outcomes if o.final]
    return CellReport(
        name=cell.name,
        task=cell.task,
        deployment=cell.deployment,
        trials=len(outcomes),
        approaching=sum(o.approaching for o in outcomes),
        disassembly=sum(o.disassembly for o in outcomes),
        final=sum(o.final for o in outcomes),
        recovered=sum(o.recovered for o in outcomes),
        mean_success_time_s=statistics.fmean(succ_times) if succ_times else None,
        outcomes=outcomes,
    )


def compare(a: Report, b: Report) -> list[dict]:
    """Per-cell deltas (percentage points on stages, success-time ratio) a vs b."""
    if [c.name for c in a.cells] != [c.name for c in b.cells]:
        raise HarnessError("reports have mismatched cell structure")
    rows = []
    for ca, cb in zip(a.cells, b.cells):
        row = {"cell": ca.name}
        for stage in ("approaching", "disassembly", "final"):
            ka, kb = getattr(ca, stage), getattr(cb, stage)
            row[f"{stage}_delta_pp"] = 100.0 * (ka / ca.trials - kb / cb.trials)
        if ca.mean_success_time_s and cb.mean_success_time_s:
            row["time_ratio"] = ca.mean_success_time_s / cb.mean_success_time_s
        else:
            row["time_ratio"] = None
        rows.append(row)
    return rows


# --- persistence and rendering ---------------------------------------------


def report_to_json(report: Report) -> dict:
    return {
        "format_version": 1,
        "kind": "report",
        "master_seed": report.master_seed,
        "trials_per_cell": report.trials_per_cell,
        "cells": [
            {
                "name": c.name,
                "task": c.task,
                "deployment": c.deployment,
                "trials": c.trials,
                "approaching": c.approaching,
                "disassembly": c.disassembly,
                "final": c.final,
                "recovered": c.recovered,
                "mean_success_time_s": c.mean_success_time_s,
                "outcomes": [
                    {
                        "task": o.task,
                        "deployment": o.deployment,
                        "config_id": o.config_id,
                        "trial_index": o.trial_index,
                        "seed": o.seed,
                        "approaching": o.approaching,
                        "disassembly": o.disassembly,
                        "final": o.final,
                        "recovered": o.recovered,
                        "sim_time_s": o.sim_time_s,
                        "termination": o.termination,
                    }
                    for o in c.outcomes
                ],
            }
            for c in report.cells
        ],
    }


def report_from_json(raw: dict) -> Report:
    if raw.get("kind") != "report":
        raise HarnessError("not a report document")
    cells = []
    for c in raw["cells"]:
        outcomes = [TrialOutcome(**o) for o in c["outcomes"]]
        cells.append(
            CellReport(
                name=c["name"],
                task=c["task"],
                deployment=c["deployment"],
                trials=c["trials"],
                approaching=c["approaching"],
                disassembly=c["disassembly"],
                final=c["final"],
                recovered=c["recovered"],
                mean_success_time_s=c["mean_success_time_s"],
                outcomes=outcomes,
            )
        )
    return Report(raw["master_seed"], raw["trials_per_cell"], cells)


def save_report(report: Report, path: Path) -> None:
    path.write_text(
        json.dumps(report_to_json(report), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def load_report(path: Path) -> Report:
    return report_from_json(json.loads(path.read_text(encoding="utf-8")))


def render_report(report: Report, fmt: str) -> bytes:
    """Deterministic Markdown or CSV rendering with stable column order."""
    if fmt == "md":
        lines = [
            "| Cell | Task | Deployment | Stage | Success | Mean success time (s) |",
            "| --- | --- | --- | --- | --- | --- |",
        ]
        for c in report.cells:
            t = f"{c.mean_success_time_s:.2f}" if c.mean_success_time_s is not None else "-"
            for stage, k in (
                ("Approaching", c.approaching),
                ("Disassembly", c.disassembly),
                ("Final Success", c.final),
            ):
                time_cell = t if stage == "Final Success" else ""
                lines.append(
                    f"| {c.name} | {c.task} | {c.deployment} | {stage} | {k}/{c.trials} | {time_cell} |"
                )
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "csv":
        lines = ["cell,task,deployment,stage,successes,trials,mean_success_time_s"]
        for c in report.cells:
            t = f"{c.mean_success_time_s!r}" if c.mean_success_time_s is not None else ""
            for stage, k in (
                ("approaching", c.approaching),
                ("disassembly", c.disassembly),
                ("final", c.final),
            ):
                time_cell = t if stage == "final" else ""
                lines.append(f"{c.name},{c.task},{c.deployment},{stage},{k},{c.trials},{time_cell}")
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise HarnessError(f"unknown report format {fmt!r}")


def render_comparison(rows: list[dict], fmt: str = "md") -> bytes:
    if fmt == "md":
        lines = [
            "| Cell | Approaching Δpp | Disassembly Δpp | Final Δpp | Time ratio |",
            "| --- | --- | --- | --- | --- |",
        ]
        for r in rows:
            ratio = f"{r['time_ratio']:.3f}" if r["time_ratio"] is not None else "-"
            lines.append(
                f"| {r['cell']} | {r['approaching_delta_pp']:+.1f} | "
                f"{r['disassembly_delta_pp']:+.1f} | {r['final_delta_pp']:+.1f} | {ratio} |"
            )
        return ("\n".join(lines) + "\n").encode("utf-8")
    if fmt == "csv":
        lines = ["cell,approaching_delta_pp,disassembly_delta_pp,final_delta_pp,time_ratio"]
        for r in rows:
            ratio = "" if r["time_ratio"] is None else repr(r["time_ratio"])
            lines.append(
                f"{r['cell']},{r['approaching_delta_pp']!r},{r['disassembly_delta_pp']!r},"
                f"{r['final_delta_pp']!r},{ratio}"
            )
        return ("\n".join(lines) + "\n").encode("utf-8")
    raise HarnessError(f"unknown comparison format {fmt!r}")


def matrix_from_json(raw: dict) -> tuple[list[CellSpec], int, int]:
    """Parse the declarative trial-matrix document."""
    if raw.get("version") != 1:
        raise HarnessError("matrix document must declare version 1")
    cells = []
    for c in raw.get("cells", []):
        cells.append(
            CellSpec(
                name=c["name"],
                task=c["task"],
                deployment=c.get("deployment", DEPLOY_SELFVLA),
                planner=c.get("planner", {"name": "oracle"}),
                corrector=c.get("corrector", {"name": "oracle"}),
                placements=c.get("placements", "test"),
                faults=c.get("faults", {}),
                detectors=c.get("detectors", {}),
            )
        )
    if not cells:
        raise HarnessError("matrix defines no cells")
    return cells, int(raw.get("trials_per_cell", 20)), int(raw.get("master_seed", 0))


# --- demonstration generation ------------------------------------------------


def generate_demo_records(
    task: str,
    n: int,
    seed: int,
    library: Optional[SkillLibrary] = None,
    miss_rate: float = DEMO_GRASP_MISS_RATE,
) -> list[EpisodeRecord]:
    """Scripted-oracle demonstrations over the training placements.

    A seeded fraction of episodes gets a grasp-miss fault injected so the
    dataset contains correction and resumption phases, mirroring collection
    sessions where the operator recovers failed grasps.
    """
    library = library or builtin_library()
    placements = TRAIN_PLACEMENTS[task]
    records = []
    for i in range(n):
        placement = placements[i % len(placements)]
        ep_seed = derive_seed(seed, "demo", task, i)
        world = init_world(placement, ep_seed)
        if random.Random(ep_seed).random() < miss_rate:
            world = schedule_fault(world, GraspMiss())
        planner = PolicyHandle("planner", policy=OraclePlanner(planner_params(placement), ep_seed))
        corrector = PolicyHandle(
            "corrector", policy=OracleCorrector(corrector_params(placement), ep_seed)
        )
        records.append(run_episode(planner, corrector, library, world, INSTRUCTIONS[task]))
    return records


def generate_demos(
    task: str,
    n: int,
    seed: int,
    library: Optional[SkillLibrary] = None,
    miss_rate: float = DEMO_GRASP_MISS_RATE,
) -> list[LabeledEpisode]:
    return [label_episode(r) for r in generate_demo_records(task, n, seed, library, miss_rate)]
