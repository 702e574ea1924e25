"""Skills, trigger-relative resolution, and corner blending.

Loads the two shipped skills, resolves the CPU skill against two different
trigger poses to show how the extraction segment follows the trigger while
the placement segment stays pinned in the base frame, then renders the
blended path geometry to demos/output/blended_paths.png.
"""

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from dismantle.blending import blend
from dismantle.geometry import Pose, quat_about_z
from dismantle.skills import builtin_library, resolve

lib = builtin_library()
for skill in lib:
    print(
        f"{skill.id}: {len(skill.extraction)} extraction + {len(skill.placement)} placement "
        f"waypoints, grasp width {skill.expected_grasp_width * 1e3:.1f} mm, "
        f"failure threshold {skill.failure_threshold * 1e3:.2f} mm"
    )

cpu = lib.get("cpu_extraction")
triggers = {
    "trigger A (no yaw)": Pose((0.35, -0.05, 0.08)),
    "trigger B (+30 deg yaw)": Pose((0.50, 0.08, 0.08), quat_about_z(math.radians(30))),
}

fig = plt.figure(figsize=(11, 5))
for k, (name, trigger) in enumerate(triggers.items()):
    traj = resolve(cpu, trigger)
    path = blend(traj)
    print(
        f"{name}: path length {path.total_length:.3f} m over "
        f"{len(path.primitives)} primitives "
        f"({sum(1 for p in path.primitives if p.kind == 'arc')} blend arcs)"
    )
    samples = np.array(
        [path.sample(s).position for s in np.linspace(0, path.schedule_length, 1500)]
    )
    wps = np.array([wp.target.position for wp in traj.waypoints])
    ax = fig.add_subplot(1, 2, k + 1, projection="3d")
    ax.plot(*samples.T, lw=1.2, label="blended path")
    ax.scatter(*wps.T, s=12, color="crimson", label="waypoints")
    ax.scatter(*trigger.position, s=40, color="black", marker="^", label="trigger")
    ax.set_title(name)
    ax.legend(loc="upper left", fontsize=8)

out = Path(__file__).parent / "output"
out.mkdir(exist_ok=True)
fig.tight_layout()
fig.savefig(out / "blended_paths.png", dpi=120)
print(f"wrote {out / 'blended_paths.png'}")

# The placement endpoint is identical for both triggers: absolute waypoints.
ends = [blend(resolve(cpu, t)).end_position for t in triggers.values()]
print("placement endpoints:", [tuple(round(v, 3) for v in e) for e in ends])
