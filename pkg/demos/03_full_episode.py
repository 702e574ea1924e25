"""One complete orchestrated episode, narrated through its event log.

The planner oracle approaches the pre-grasp pose and emits the stop token
(gripper byte 255); the orchestrator resolves the skill at the trigger pose
and the path controller runs the contact-rich sequence; stage flags come from
the world at the end.
"""

from dismantle.harness import INSTRUCTIONS, TEST_PLACEMENTS
from dismantle.orchestrator import run_episode
from dismantle.policies import (
    OracleCorrector,
    OraclePlanner,
    PolicyHandle,
    corrector_params,
    planner_params,
)
from dismantle.simulator import TASK_RAM, init_world

cfg = TEST_PLACEMENTS[TASK_RAM][2]
world = init_world(cfg, seed=11)
planner = PolicyHandle("planner", policy=OraclePlanner(planner_params(cfg), 11))
corrector = PolicyHandle("corrector", policy=OracleCorrector(corrector_params(cfg), 11))

record = run_episode(planner, corrector, __import__("dismantle.skills", fromlist=["builtin_library"]).builtin_library(), world, INSTRUCTIONS[TASK_RAM])

print(f"task={record.task} placement={record.config_id} instruction={record.instruction!r}")
print(f"{len(record.steps)} control steps recorded at 30 Hz\n")
print("event timeline:")
for e in record.events:
    print(f"  t={e.tick / 300:7.2f}s  {e.kind.value:24s} {e.payload}")

r = record.result
print(
    f"\nresult: termination={r.termination.value} approaching={r.approaching} "
    f"disassembly={r.disassembly} final={r.final} sim_time={r.sim_time_s:.1f}s"
)
print(f"skill marks (ticks): {record.marks}")
