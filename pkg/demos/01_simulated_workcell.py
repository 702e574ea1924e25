"""Tour of the simulated workcell: latch gates, grasping, and the gripper.

Drives the TCP by hand (no skills, no policies) to show how the CPU socket's
retention mechanisms respond: the bracket will not open while the lever is
locked, the CPU cannot be grasped until the bracket is open, and the gripper
saturates at the component width once the part is between the fingers.
"""

import math

from dismantle.geometry import Action, DeltaMotion, GripperCommand
from dismantle.simulator import (
    TASK_CPU,
    TICK_DT,
    ComponentConfig,
    init_world,
    observe,
    step,
)


def drive_to(world, target, byte=0, speed=0.15):
    while True:
        px, py, pz = world.tcp.position
        d = (target[0] - px, target[1] - py, target[2] - pz)
        dist = math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2)
        if dist < 1e-6:
            return world
        s = min(speed * TICK_DT, dist) / dist
        world = step(world, Action(DeltaMotion((d[0] * s, d[1] * s, d[2] * s)), GripperCommand(byte)))


def latches(world):
    a = world.assembly
    return f"lever_locked={a.lever_locked} bracket_open={a.bracket_open} cpu_seated={a.cpu_seated}"


cfg = ComponentConfig(TASK_CPU, "demo", 0.45, 0.0, base_yaw=0.35)
world = init_world(cfg, seed=0)
print("fresh world:", latches(world))
print("home TCP:", world.tcp.position)

# Trying the bracket first does nothing: the lever still locks it.
bracket = world.assembly.bracket_gate.position
world = drive_to(world, (bracket[0], bracket[1], bracket[2] - 0.012))
world = drive_to(world, (bracket[0], bracket[1], bracket[2] + 0.02), speed=0.05)
print("after bracket attempt while locked:", latches(world))

# Push the lever through its gate along the required direction.
lever = world.assembly.lever_gate.position
push_dir = world.assembly.lever_gate_dir
world = drive_to(world, (lever[0] - 0.03 * push_dir[0], lever[1] - 0.03 * push_dir[1], lever[2]))
world = drive_to(
    world,
    (lever[0] + 0.02 * push_dir[0], lever[1] + 0.02 * push_dir[1], lever[2]),
    speed=0.05,
)
print("after lever push:", latches(world))

# Now the bracket lift works.
world = drive_to(world, (bracket[0], bracket[1], bracket[2] - 0.012))
world = drive_to(world, (bracket[0], bracket[1], bracket[2] + 0.02), speed=0.05)
print("after bracket lift:", latches(world))

# Grasp the CPU: descend to the grasp point and close.
grasp = world.assembly.grasp_pose.position
world = drive_to(world, grasp, byte=215, speed=0.08)
for _ in range(400):
    world = step(world, Action(DeltaMotion.zero(), GripperCommand(250)))
    if world.gripper.held_object:
        break
obs = observe(world)
print(
    f"grasp: held={world.gripper.held_object!r} "
    f"commanded={obs.gripper_commanded_width * 1e3:.1f} mm "
    f"observed={obs.gripper_observed_width * 1e3:.1f} mm (saturated at the CPU width)"
)

# Lift: the component rides the TCP and unseats.
world = drive_to(world, (grasp[0], grasp[1], grasp[2] + 0.05), byte=250, speed=0.1)
print("after lift:", latches(world), "| cpu pose:", tuple(round(v, 4) for v in world.objects["cpu"].position))
