"""Command-line surface: trials, demo generation, dataset pipeline, reports.

All outputs are deterministic for a fixed master seed; ``SELFVLA_SEED``
overrides the seed of any seeded subcommand. Errors exit nonzero after
printing one machine-parsable JSON line on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .episodes import (
    LabeledEpisode,
    label_phases,
    load_episode,
    load_split,
    downsample_episode,
    downsample_split,
    record,
    save_episode,
    save_split,
    build_splits,
)
from .harness import (
    HarnessError,
    compare,
    generate_demo_records,
    load_report,
    matrix_from_json,
    render_comparison,
    render_report,
    run_trials,
    save_report,
)

SEED_ENV = "SELFVLA_SEED"


def _seed_override(seed: int) -> int:
    env = os.environ.get(SEED_ENV)
    return int(env) if env else seed


def cmd_run_trials(args) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    cells, trials_per_cell, master_seed = matrix_from_json(raw)
    master_seed = _seed_override(master_seed)
    report = run_trials(cells, n=trials_per_cell, master_seed=master_seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_report(report, out / "outcomes.json")
    (out / "report.md").write_bytes(render_report(report, "md"))
    (out / "report.csv").write_bytes(render_report(report, "csv"))
    return 0


def cmd_gen_demos(args) -> int:
    seed = _seed_override(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, rec in enumerate(generate_demo_records(args.task, args.n, seed)):
        raw = LabeledEpisode(
            frames=record(rec),
            spans=[],
            task=rec.task,
            config_id=rec.config_id,
            outcome={
                "approaching": rec.result.approaching,
                "disassembly": rec.result.disassembly,
                "final": rec.result.final,
                "recovered": rec.result.recovered,
                "termination": rec.result.termination.value,
                "sim_time_s": rec.result.sim_time_s,
                "corrections_used": rec.result.corrections_used,
            },
            marks=dict(rec.marks),
            instruction=rec.instruction,
            seed=rec.seed,
            events=rec.events,
        )
        save_episode(raw, out / f"{args.task}_{i:04d}.jsonl")
    return 0


def _episode_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    return sorted(p for p in path.iterdir() if p.suffix == ".jsonl")


def cmd_label(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for p in _episode_files(Path(args.inp)):
        ep = load_episode(p)
        ep.spans = label_phases(ep.frames, ep.events)
        save_episode(ep, out / p.name)
    return 0


def cmd_split(args) -> int:
    episodes = [load_episode(p) for p in _episode_files(Path(args.inp))]
    planner, corrector, end_to_end = build_splits(episodes)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for split in (planner, corrector, end_to_end):
        save_split(split, out / f"{split.name}.jsonl")
    return 0


def cmd_downsample(args) -> int:
    src = Path(args.inp)
    head = json.loads(src.read_text(encoding="utf-8").splitlines()[0])
    if head.get("kind") == "split":
        save_split(downsample_split(load_split(src), args.factor), Path(args.out))
    elif head.get("kind") == "episode":
        save_episode(downsample_episode(load_episode(src), args.factor), Path(args.out))
    else:
        raise HarnessError(f"{src}: neither an episode nor a split file")
    return 0


def cmd_report(args) -> int:
    report = load_report(Path(args.inp))
    data = render_report(report, args.format)
    if args.out:
        Path(args.out).write_bytes(data)
    else:
        sys.stdout.buffer.write(data)
    return 0


def cmd_compare(args) -> int:
    a = load_report(Path(args.a))
    b = load_report(Path(args.b))
    sys.stdout.buffer.write(render_comparison(compare(a, b), args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="dismantle",
        description="Skill-based disassembly control testbed: trials, demos, datasets, reports.",
    )
    sub = p.add_subparsers(dest="command", required=True)

    rt = sub.add_parser("run-trials", help="run a declarative trial matrix")
    rt.add_argument("--config", required=True)
    rt.add_argument("--out", required=True)
    rt.set_defaults(fn=cmd_run_trials)

    gd = sub.add_parser("gen-demos", help="generate scripted-oracle demonstrations")
    gd.add_argument("--task", required=True, choices=["cpu_extraction", "ram_removal"])
    gd.add_argument("--n", type=int, required=True)
    gd.add_argument("--seed", type=int, default=0)
    gd.add_argument("--out", required=True)
    gd.set_defaults(fn=cmd_gen_demos)

    lb = sub.add_parser("label", help="label episode phases from their event logs")
    lb.add_argument("--in", dest="inp", required=True)
    lb.add_argument("--out", required=True)
    lb.set_defaults(fn=cmd_label)

    sp = sub.add_parser("split", help="build planner/corrector/end-to-end splits")
    sp.add_argument("--in", dest="inp", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_split)

    ds = sub.add_parser("downsample", help="downsample an episode or split file")
    ds.add_argument("--in", dest="inp", required=True)
    ds.add_argument("--out", required=True)
    ds.add_argument("--factor", type=int, default=3)
    ds.set_defaults(fn=cmd_downsample)

    rp = sub.add_parser("report", help="render a stored outcomes document")
    rp.add_argument("--in", dest="inp", required=True)
    rp.add_argument("--format", choices=["md", "csv"], default="md")
    rp.add_argument("--out")
    rp.set_defaults(fn=cmd_report)

    cp = sub.add_parser("compare", help="stage-rate deltas between two reports")
    cp.add_argument("a")
    cp.add_argument("b")
    cp.add_argument("--format", choices=["md", "csv"], default="md")
    cp.set_defaults(fn=cmd_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # noqa: BLE001 - single reporting point
        sys.stderr.write(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n"
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
