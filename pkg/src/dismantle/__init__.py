"""Skill-based agentic control testbed for contact-rich robotic disassembly.

Layers, bottom to top: geometric primitives (``geometry``), a deterministic
kinematic workcell simulator (``simulator``), the waypoint skill library and
path blending (``skills``, ``blending``), pluggable policies and the external
policy wire protocol (``policies``), the planner/skill/corrector control loop
(``orchestrator``), the demonstration dataset pipeline (``episodes``), and
the seeded evaluation harness plus CLI (``harness``, ``cli``).
"""

from .geometry import Action, DeltaMotion, GripperCommand, Instruction, Mode, Pose
from .orchestrator import EpisodeResult, RunConfig, run_episode
from .simulator import ComponentConfig, init_world, observe, step
from .skills import SkillDefinition, SkillLibrary, builtin_library

__version__ = "0.1.0"

__all__ = [
    "Action",
    "ComponentConfig",
    "DeltaMotion",
    "EpisodeResult",
    "GripperCommand",
    "Instruction",
    "Mode",
    "Pose",
    "RunConfig",
    "SkillDefinition",
    "SkillLibrary",
    "builtin_library",
    "init_world",
    "observe",
    "run_episode",
    "step",
    "__version__",
]
