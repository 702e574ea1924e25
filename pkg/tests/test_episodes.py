"""Recording, phase labeling, split construction, downsampling, file I/O."""

import math

import pytest

from conftest import run_oracle

from dismantle.episodes import (
    DatasetSplit,
    Frame,
    LabelError,
    Phase,
    SplitError,
    append_stop_frames,
    build_splits,
    downsample_episode,
    downsample_frames,
    downsample_split,
    label_episode,
    label_phases,
    load_episode,
    load_split,
    record,
    save_episode,
    save_split,
)
from dismantle.orchestrator import DetectorConfig, EventKind, RunConfig
from dismantle.simulator import TASK_CPU, TASK_RAM, ComponentConfig, GraspMiss, schedule_fault

CPU_CFG = ComponentConfig(TASK_CPU, "c0", 0.42, 0.02, 0.2)
RAM_CFG = ComponentConfig(TASK_RAM, "r0", 0.40, -0.05, -0.3)


@pytest.fixture(scope="module")
def clean_episode(library):
    return run_oracle(library, CPU_CFG, seed=31)


@pytest.fixture(scope="module")
def miss_episode(library):
    return run_oracle(
        library, CPU_CFG, seed=32, world_mutator=lambda w: schedule_fault(w, GraspMiss())
    )


def test_record_rate_and_determinism(library, clean_episode):
    ep = label_episode(clean_episode)
    assert ep.frames, "no frames recorded"
    # 30 Hz spacing inside each contiguous phase span (the skipped stop-token
    # step leaves a gap exactly at the phase boundary)
    for span in ep.spans:
        seg = ep.frames[span.first : span.last + 1]
        dts = [b.time - a.time for a, b in zip(seg, seg[1:])]
        assert all(abs(dt - 1 / 30) < 1e-9 for dt in dts)
    again = record(run_oracle(library, CPU_CFG, seed=31))
    assert again == ep.frames


def test_record_excludes_idle_pause(library):
    idle_s = 2.0
    rec = run_oracle(
        library,
        CPU_CFG,
        seed=33,
        world_mutator=lambda w: schedule_fault(w, GraspMiss()),
        config=RunConfig(detectors=DetectorConfig(correction_idle_s=idle_s)),
    )
    frames = record(rec)
    gaps = [b.time - a.time for a, b in zip(frames, frames[1:])]
    big = [g for g in gaps if g > 0.1]
    assert len(big) == 1  # exactly the idle window
    assert big[0] >= idle_s
    # the pause frames are excluded: count < uninterrupted equivalent
    total_span = frames[-1].time - frames[0].time
    assert len(frames) < total_span * 30 - idle_s * 30 + 5


def test_label_phases_clean_run(clean_episode):
    ep = label_episode(clean_episode)
    assert [s.phase for s in ep.spans] == [Phase.APPROACHING, Phase.SKILL_EXECUTION]
    assert ep.spans[0].first == 0
    assert ep.spans[-1].last == len(ep.frames) - 1
    covered = sum(s.last - s.first + 1 for s in ep.spans)
    assert covered == len(ep.frames)


def test_label_phases_recovery_run(miss_episode):
    ep = label_episode(miss_episode)
    assert [s.phase for s in ep.spans] == [
        Phase.APPROACHING,
        Phase.SKILL_EXECUTION,
        Phase.CORRECTION,
        Phase.SKILL_RESUMPTION,
    ]
    fail_tick = next(
        e.tick for e in miss_episode.events if e.kind is EventKind.GRASP_FAILURE_DETECTED
    )
    act_tick = next(
        e.tick for e in miss_episode.events if e.kind is EventKind.CORRECTOR_ACTIVATED
    )
    assert not any(fail_tick < f.tick < act_tick for f in ep.frames)


def test_label_phases_rejects_misaligned_events(clean_episode):
    frames = record(clean_episode)
    from dismantle.orchestrator import Event

    bad = [Event(0, EventKind.SKILL_INVOKED, {})]  # skill before any approach frame
    with pytest.raises(LabelError):
        label_phases(frames, bad)


def test_append_stop_frames():
    base = record_frames_stub(100)
    out = append_stop_frames(base)
    assert len(out) == 103
    for f in out[-3:]:
        assert f.action.gripper.value == 255
        assert f.action.motion.is_zero()
        assert f.observation == base[-1].observation
    times = [f.time for f in out[-4:]]
    assert all(abs(b - a - 1 / 30) < 1e-9 for a, b in zip(times, times[1:]))
    # calling twice keeps appending: the pipeline owns the exactly-once rule
    assert len(append_stop_frames(out)) == 106


def record_frames_stub(n):
    from dismantle.geometry import Action, DeltaMotion, GripperCommand, Pose
    from dismantle.simulator import Observation

    obs = Observation(Pose((0.4, 0.0, 0.2)), 0.085, 0.085, {}, (True, False, True))
    act = Action(DeltaMotion((0.001, 0.0, 0.0)), GripperCommand(0))
    return [Frame(i, i / 30, obs, act) for i in range(n)]


def test_build_splits_counts_and_invariants(library, clean_episode, miss_episode):
    eps = [label_episode(clean_episode), label_episode(miss_episode)]
    planner, corrector, end2end = build_splits(eps)
    assert len(planner.trajectories) == 2
    assert len(end2end.trajectories) == 2
    # corrector: one pick-lift per episode plus one correction segment
    assert len(corrector.trajectories) == 3
    for traj in planner.trajectories + corrector.trajectories:
        tail = traj[-3:]
        assert all(f.action.gripper.value == 255 for f in tail)
        assert all(f.action.gripper.value != 255 for f in traj[:-3])
    for traj in end2end.trajectories:
        assert all(f.action.gripper.value != 255 for f in traj)


def test_split_leakage_disjoint(library, miss_episode):
    ep = label_episode(miss_episode)
    planner, corrector, _ = build_splits([ep])
    planner_ids = {id(f) for t in planner.trajectories for f in t if f.action.gripper.value != 255}
    corrector_ids = {
        id(f) for t in corrector.trajectories for f in t if f.action.gripper.value != 255
    }
    assert planner_ids.isdisjoint(corrector_ids)


def test_pick_lift_segment_boundaries(library, clean_episode):
    ep = label_episode(clean_episode)
    _, corrector, _ = build_splits([ep])
    seg = corrector.trajectories[0]
    body = seg[:-3]
    # begins one frame before the close command, ends at lift completion
    close_tick = ep.marks["pickup_close_tick"]
    lift_tick = ep.marks["lift_end_tick"]
    assert body[0].tick < close_tick <= body[1].tick
    assert body[-1].tick >= lift_tick
    # the lift raised the TCP well clear of the grasp
    z0 = body[1].observation.tcp.position[2]
    z1 = body[-1].observation.tcp.position[2]
    assert z1 - z0 > 0.04


def test_split_error_without_pickup_mark(clean_episode):
    ep = label_episode(clean_episode)
    ep.marks.pop("pickup_close_tick")
    with pytest.raises(SplitError):
        build_splits([ep])


def test_downsample_arithmetic():
    frames = record_frames_stub(300)
    assert len(downsample_frames(frames, 3)) == 100
    assert downsample_frames(frames, 1) == frames
    traj = append_stop_frames(record_frames_stub(100))  # 103 frames
    down = downsample_frames(traj, 3)
    assert len(down) == 34 + 3
    assert all(f.action.gripper.value == 255 for f in down[-3:])


def test_downsample_preserves_segment_heads(library, miss_episode):
    ep = label_episode(miss_episode)
    down = downsample_episode(ep, 3)
    assert [s.phase for s in down.spans] == [s.phase for s in ep.spans]
    for orig, new in zip(ep.spans, down.spans):
        assert down.frames[new.first] == ep.frames[orig.first]
    for orig, new in zip(ep.spans, down.spans):
        n_orig = orig.last - orig.first + 1
        n_new = new.last - new.first + 1
        assert abs(n_new - math.ceil(n_orig / 3)) <= 1


def test_episode_file_round_trip(tmp_path, library, miss_episode):
    ep = label_episode(miss_episode)
    p1 = tmp_path / "ep.jsonl"
    p2 = tmp_path / "ep2.jsonl"
    save_episode(ep, p1)
    loaded = load_episode(p1)
    save_episode(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.frames == ep.frames
    assert loaded.spans == ep.spans
    assert loaded.outcome == ep.outcome


def test_split_file_round_trip(tmp_path, library, clean_episode):
    eps = [label_episode(clean_episode)]
    planner, corrector, end2end = build_splits(eps)
    for split in (planner, corrector, end2end):
        p1 = tmp_path / f"{split.name}.jsonl"
        p2 = tmp_path / f"{split.name}2.jsonl"
        save_split(split, p1)
        loaded = load_split(p1)
        save_split(loaded, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert loaded.trajectories == split.trajectories
