"""Trial runner, aggregation, comparison, and rendering."""

import json

import pytest

from dismantle.harness import (
    CellReport,
    CellSpec,
    HarnessError,
    Report,
    TEST_PLACEMENTS,
    TRAIN_PLACEMENTS,
    TrialOutcome,
    aggregate_cell,
    compare,
    derive_seed,
    generate_demos,
    matrix_from_json,
    render_comparison,
    render_report,
    report_from_json,
    report_to_json,
    run_trial,
    run_trials,
)
from dismantle.orchestrator import EventKind
from dismantle.simulator import TASK_CPU, TASK_RAM


def test_placement_inventories():
    for task in (TASK_CPU, TASK_RAM):
        assert len(TRAIN_PLACEMENTS[task]) == 8
        assert len(TEST_PLACEMENTS[task]) == 5
        train = {(c.base_x, c.base_y, c.base_yaw) for c in TRAIN_PLACEMENTS[task]}
        test = {(c.base_x, c.base_y, c.base_yaw) for c in TEST_PLACEMENTS[task]}
        assert train.isdisjoint(test)


def test_derive_seed_stable_and_distinct():
    a = derive_seed(7, "cell", 0)
    assert a == derive_seed(7, "cell", 0)
    assert a != derive_seed(7, "cell", 1)
    assert a != derive_seed(8, "cell", 0)
    assert 0 <= a < 2**63


def test_run_trials_oracle_all_success(library):
    cells = [CellSpec("ram", TASK_RAM)]
    rep = run_trials(cells, n=5, master_seed=3, library=library)
    c = rep.cells[0]
    assert (c.approaching, c.disassembly, c.final) == (5, 5, 5)
    assert c.mean_success_time_s is not None and c.mean_success_time_s > 0


def test_run_trials_deterministic(library):
    cells = [CellSpec("cpu", TASK_CPU)]
    r1 = run_trials(cells, n=3, master_seed=11, library=library)
    r2 = run_trials(cells, n=3, master_seed=11, library=library)
    assert report_to_json(r1) == report_to_json(r2)
    assert render_report(r1, "md") == render_report(r2, "md")


def test_reset_isolation_permutation_invariance(library):
    """Trial outcomes depend only on (cell, index), not on execution order."""
    cell = CellSpec("cpu", TASK_CPU, faults={"grasp_miss_prob": 0.5})
    batch = run_trials([cell], n=6, master_seed=5, library=library)
    outcomes = {o.trial_index: o for o in batch.cells[0].outcomes}
    placements = cell.resolve_placements()
    for i in reversed(range(6)):  # reversed execution order
        seed = derive_seed(5, "cpu", i)
        solo, _ = run_trial(cell, placements[i % len(placements)], i, seed, library)
        assert solo == outcomes[i]


def test_end_to_end_cells_log_no_skill_events(library):
    cell = CellSpec(
        "e2e",
        TASK_CPU,
        deployment="end_to_end",
        planner={"name": "scripted-end-to-end", "params": {"per_gate_success": 1.0}},
        corrector=None,
    )
    placements = cell.resolve_placements()
    for i in range(3):
        seed = derive_seed(1, "e2e", i)
        outcome, rec = run_trial(cell, placements[i], i, seed, library)
        assert not any(e.kind is EventKind.SKILL_INVOKED for e in rec.events)
        assert outcome.final


def test_stage_monotonicity_across_policies(library):
    cells = [
        CellSpec("noisy", TASK_CPU, planner={"name": "oracle", "params": {"noise_sigma_m": 0.004}},
                 detectors={"timeout_s": 25.0}),
        CellSpec("early", TASK_RAM, planner={"name": "stops-early", "params": {"distance_m": 0.03}},
                 detectors={"timeout_s": 25.0}),
    ]
    rep = run_trials(cells, n=6, master_seed=2, library=library)
    for c in rep.cells:
        assert c.final <= c.disassembly <= c.approaching <= c.trials


def test_noisy_oracle_approaching_strictly_below_noise_free(library):
    # perception noise degrades approach success (Monte Carlo over seeded trials)
    clean = CellSpec("clean", TASK_RAM, detectors={"timeout_s": 20.0})
    noisy = CellSpec(
        "noisy",
        TASK_RAM,
        planner={"name": "oracle", "params": {"noise_sigma_m": 0.005}},
        detectors={"timeout_s": 20.0},
    )
    n = 100
    rep = run_trials([clean, noisy], n=n, master_seed=13, library=library)
    rate_clean = rep.cells[0].approaching / n
    rate_noisy = rep.cells[1].approaching / n
    assert rate_clean == 1.0
    assert rate_noisy < rate_clean


def test_aggregate_rejects_empty():
    with pytest.raises(HarnessError):
        aggregate_cell(CellSpec("x", TASK_CPU), [])


def _outcome(final=True, recovered=False, t=10.0, i=0):
    return TrialOutcome(
        task=TASK_CPU,
        deployment="selfvla",
        config_id="t0",
        trial_index=i,
        seed=i,
        approaching=True,
        disassembly=final or True,
        final=final,
        recovered=recovered,
        sim_time_s=t,
        termination="success" if final else "timeout",
    )


def test_recovered_counts_toward_final():
    outs = [_outcome(final=True, recovered=True, i=0), _outcome(final=True, i=1)]
    c = aggregate_cell(CellSpec("x", TASK_CPU), outs)
    assert c.final == 2 and c.recovered == 1


def test_outcome_monotonicity_enforced():
    with pytest.raises(HarnessError):
        TrialOutcome(
            task=TASK_CPU, deployment="selfvla", config_id="t0", trial_index=0, seed=0,
            approaching=False, disassembly=True, final=True, recovered=False,
            sim_time_s=1.0, termination="success",
        )


def _report(fin_a, n):
    outs = [_outcome(final=i < fin_a, i=i) for i in range(n)]
    return Report(0, n, [aggregate_cell(CellSpec("cell", TASK_CPU), outs)])


def test_compare_zero_on_identity():
    r = _report(5, 10)
    rows = compare(r, r)
    assert rows[0]["final_delta_pp"] == 0.0
    assert rows[0]["time_ratio"] == 1.0


def test_compare_hand_computed_delta():
    # 12/20 vs 7/20 is a +25 percentage-point gap
    rows = compare(_report(12, 20), _report(7, 20))
    assert abs(rows[0]["final_delta_pp"] - 25.0) < 1e-12


def test_compare_time_ratio():
    a = Report(0, 1, [aggregate_cell(CellSpec("c", TASK_CPU), [_outcome(t=63.0)])])
    b = Report(0, 1, [aggregate_cell(CellSpec("c", TASK_CPU), [_outcome(t=136.0)])])
    ratio = compare(a, b)[0]["time_ratio"]
    assert abs(ratio - 63.0 / 136.0) < 1e-12
    assert round(ratio, 3) == 0.463


def test_compare_mismatched_cells_rejected():
    a = _report(1, 2)
    b = Report(0, 2, [aggregate_cell(CellSpec("other", TASK_CPU), [_outcome()])])
    with pytest.raises(HarnessError):
        compare(a, b)


def test_render_report_layout_and_determinism():
    r = _report(3, 4)
    md = render_report(r, "md")
    assert md == render_report(r, "md")
    text = md.decode()
    for stage in ("Approaching", "Disassembly", "Final Success"):
        assert stage in text
    csv = render_report(r, "csv").decode()
    rows = [ln.split(",") for ln in csv.strip().splitlines()[1:]]
    parsed = {row[3]: int(row[4]) for row in rows}
    assert parsed == {"approaching": 4, "disassembly": 4, "final": 3}
    with pytest.raises(HarnessError):
        render_report(r, "html")


def test_report_json_round_trip():
    r = _report(2, 3)
    again = report_from_json(json.loads(json.dumps(report_to_json(r))))
    assert report_to_json(again) == report_to_json(r)


def test_matrix_parsing_defaults():
    cells, n, seed = matrix_from_json(
        {"version": 1, "master_seed": 9, "trials_per_cell": 2,
         "cells": [{"name": "a", "task": TASK_CPU}]}
    )
    assert n == 2 and seed == 9
    assert cells[0].deployment == "selfvla"
    with pytest.raises(HarnessError):
        matrix_from_json({"version": 2, "cells": []})


def test_generate_demos_phases(library):
    eps = generate_demos(TASK_RAM, 8, seed=4, library=library)
    assert len(eps) == 8
    assert all(ep.outcome["final"] for ep in eps)
    with_correction = [ep for ep in eps if len(ep.spans) == 4]
    assert with_correction, "no demo exercised the correction pipeline"
    ids = [ep.config_id for ep in eps]
    assert len(set(ids)) == 8  # cycles all training placements
