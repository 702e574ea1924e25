"""Stage-metric evaluation: skill deployment against an end-to-end baseline.

Runs a small seeded matrix (bigger numbers live in the acceptance suite):
the skill-based deployment with a flaky approach against a scripted
end-to-end stand-in whose per-stage success compounds, then renders the
stage table and the head-to-head comparison.
"""

from dismantle.harness import CellSpec, compare, render_comparison, render_report, run_trials
from dismantle.simulator import TASK_CPU

N = 30
selfvla = CellSpec(
    "cpu-skill-deployment",
    TASK_CPU,
    planner={"name": "flaky-approach", "params": {"p_ok": 0.8}},
)
end_to_end = CellSpec(
    "cpu-end-to-end",
    TASK_CPU,
    deployment="end_to_end",
    planner={
        "name": "scripted-end-to-end",
        "params": {"per_gate_success": 0.8, "gates": ["approach", "lever", "bracket"]},
    },
    corrector=None,
)

report = run_trials([selfvla, end_to_end], n=N, master_seed=2026)
print(render_report(report, "md").decode())

a = run_trials([selfvla], n=N, master_seed=2026)
b = run_trials([CellSpec("cpu-skill-deployment", TASK_CPU, **{})], n=N, master_seed=2026)
b.cells[0].name = "cpu-skill-deployment"

print("flaky-approach deployment vs itself with a perfect planner:")
print(render_comparison(compare(a, b), "md").decode())
