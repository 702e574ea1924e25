"""Demonstration dataset pipeline: record, label, split, downsample.

Generates a handful of scripted demonstrations (a seeded fraction includes a
grasp miss so corrections appear), labels the four phases, builds the three
training splits, and downsamples 30 Hz to 10 Hz while preserving the stop
triple each planner/corrector trajectory ends with.
"""

from collections import Counter

from dismantle.episodes import build_splits, downsample_split
from dismantle.harness import generate_demos
from dismantle.simulator import TASK_CPU

episodes = generate_demos(TASK_CPU, n=12, seed=77)
phase_counts = Counter(tuple(s.phase.value for s in ep.spans) for ep in episodes)
print("episodes by phase structure:")
for phases, count in sorted(phase_counts.items()):
    print(f"  {count:2d} x {' -> '.join(phases)}")

planner, corrector, end_to_end = build_splits(episodes)
print(
    f"\nsplits: planner={len(planner.trajectories)} "
    f"corrector={len(corrector.trajectories)} end_to_end={len(end_to_end.trajectories)}"
)

traj = planner.trajectories[0]
print(f"\na planner trajectory: {len(traj)} frames; last three actions:")
for f in traj[-3:]:
    print(f"  t={f.time:7.3f}s delta={f.action.motion.translation} gripper={f.action.gripper.value}")

down = downsample_split(planner, 3)
print("\n30 Hz -> 10 Hz (stop triple preserved):")
for orig, new in list(zip(planner.trajectories, down.trajectories))[:4]:
    tail = [f.action.gripper.value for f in new[-3:]]
    print(f"  {len(orig):4d} -> {len(new):4d} frames, tail bytes {tail}")
