"""Shared trial-construction helpers for the test suite."""

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dismantle.orchestrator import RunConfig, run_episode
from dismantle.policies import (
    OracleCorrector,
    OraclePlanner,
    PolicyHandle,
    corrector_params,
    planner_params,
)
from dismantle.simulator import ComponentConfig, init_world
from dismantle.skills import builtin_library


@pytest.fixture(scope="session")
def library():
    return builtin_library()


def oracle_handles(cfg: ComponentConfig, noise_sigma_m: float = 0.0, seed: int = 0):
    planner = PolicyHandle(
        "planner", policy=OraclePlanner(planner_params(cfg, noise_sigma_m=noise_sigma_m), seed)
    )
    corrector = PolicyHandle("corrector", policy=OracleCorrector(corrector_params(cfg), seed))
    return planner, corrector


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import ACCEPTANCE_LOG
    except ImportError:
        return
    if ACCEPTANCE_LOG:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)


def run_oracle(library, cfg, seed=0, world_mutator=None, corrector_on=True, config=RunConfig(),
               instruction=None):
    world = init_world(cfg, seed)
    if world_mutator is not None:
        world = world_mutator(world)
    planner, corrector = oracle_handles(cfg, seed=seed)
    if not corrector_on:
        corrector = None
    if instruction is None:
        instruction = (
            "extract the cpu from the socket"
            if cfg.task == "cpu_extraction"
            else "remove the ram module from the slot"
        )
    return run_episode(planner, corrector, library, world, instruction, config)
