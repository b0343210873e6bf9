"""Command-line interface: train, evaluate, aggregate, inspect.

Exit codes: 0 success, 2 config validation failure, 3 numeric abort (a
checkpoint is dumped next to the logs).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .config import canonical_text, load_config
from .envs import make_env
from .errors import CheckpointError, ConfigError, DataFormatError, SchemaMismatchError
from .metrics import aggregate_runs, parse_run_csv
from .rng import RngStream
from .training import NumericAbortError, evaluate_policy, run_training


def _write_outputs(out_dir: Path, config, log, state) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "log.csv").write_text(log.to_csv(), encoding="utf-8")
    with open(out_dir / "events.jsonl", "w", encoding="utf-8") as fh:
        for event in log.events:
            fh.write(json.dumps(event, sort_keys=True) + "\n")
    (out_dir / "config.txt").write_text(canonical_text(config), encoding="utf-8")
    save_checkpoint(state, out_dir / "checkpoint.ckpt")


def _cmd_train(args) -> int:
    try:
        config = load_config(args.config, seed=args.seed)
    except (ConfigError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    out_dir = Path(args.out) if args.out else Path(f"run_{config.algorithm}_{config.env}_seed{config.seed}")
    resume_state = None
    if args.resume:
        try:
            resume_state = load_checkpoint(args.resume)
        except (CheckpointError, DataFormatError, OSError) as err:
            print(f"config error: cannot resume: {err}", file=sys.stderr)
            return 2
    try:
        log, state = run_training(config, resume=resume_state, threads=args.threads)
    except CheckpointError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericAbortError as err:
        out_dir.mkdir(parents=True, exist_ok=True)
        dump = out_dir / "abort.ckpt"
        save_checkpoint(err.state, dump)
        (out_dir / "log.csv").write_text(err.log.to_csv(), encoding="utf-8")
        print(f"numeric abort: {err} (checkpoint dumped to {dump})", file=sys.stderr)
        return 3
    _write_outputs(out_dir, config, log, state)
    final = log.records[-1] if log.records else None
    summary = f"eval_return={final.eval_return!r} " if final is not None else ""
    print(f"run complete: {config.algorithm} on {config.env}, seed {config.seed}, "
          f"{config.total_steps} steps; {summary}outputs in {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except (CheckpointError, DataFormatError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    config = state.config
    env = make_env(config.env)
    agent = state.policy if state.policy is not None else state.population.members[state.population.champion_index]
    seed = args.seed if args.seed is not None else config.seed
    rng = RngStream(seed, "cli/evaluate")
    mean = evaluate_policy(agent, env, args.episodes, rng)
    print(f"mean raw return over {args.episodes} episodes: {mean!r}")
    return 0


def _cmd_aggregate(args) -> int:
    runs_dir = Path(args.runs)
    run_dirs = sorted(d for d in runs_dir.iterdir() if (d / "log.csv").exists()) if runs_dir.is_dir() else []
    if not run_dirs:
        print(f"config error: no run directories with log.csv under {runs_dir}", file=sys.stderr)
        return 2
    tables = []
    try:
        for d in run_dirs:
            config = load_config(d / "config.txt")
            tables.append(parse_run_csv((d / "log.csv").read_text(encoding="utf-8"), config, metric=args.metric))
        rows = aggregate_runs(tables, metric=args.metric, resamples=args.resamples, seed=args.bootstrap_seed)
    except (ConfigError, SchemaMismatchError, DataFormatError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    header = [
        "step", "runs", "return_iqm", "return_ci_low", "return_ci_high",
        "champion_sparsity_iqm", "champion_sparsity_ci_low", "champion_sparsity_ci_high",
    ]
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(row[col]) if isinstance(row[col], float) else str(row[col]) for col in header))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"aggregated {len(tables)} runs over {len(rows)} logging steps into {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    try:
        state = load_checkpoint(args.checkpoint)
    except (CheckpointError, DataFormatError, OSError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    config = state.config
    print(f"algorithm: {config.algorithm}")
    print(f"env: {config.env}")
    print(f"seed: {config.seed}")
    print(f"step: {state.step} / {config.total_steps}")
    if state.population is not None:
        pop = state.population
        print(f"champion slot: {pop.champion_index}")
        for k, member in enumerate(pop.members):
            print(
                f"member {k}: sparsity={member.sparsity:.4f} "
                f"loss={member.cumulated_loss!r} lineage={member.lineage_id}"
            )
    if state.twin is not None:
        for i, side in enumerate(state.twin.sides):
            print(f"critic {i + 1}: champion slot {side.champion_index}")
            for k, member in enumerate(side.members):
                print(
                    f"  member {k}: sparsity={member.sparsity:.4f} "
                    f"loss={member.cumulated_loss!r} lineage={member.lineage_id}"
                )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eaudeqn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run one training experiment")
    train.add_argument("--config", required=True, help="path to a key/value config file")
    train.add_argument("--seed", type=int, default=None, help="override the config seed")
    train.add_argument("--out", default=None, help="output directory (log.csv, checkpoint.ckpt, ...)")
    train.add_argument("--resume", default=None, help="checkpoint to continue from")
    train.add_argument("--threads", type=int, default=1, help="worker threads for member updates")
    train.set_defaults(fn=_cmd_train)

    ev = sub.add_parser("evaluate", help="evaluate a checkpointed policy")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--episodes", type=int, required=True)
    ev.add_argument("--seed", type=int, default=None)
    ev.set_defaults(fn=_cmd_evaluate)

    agg = sub.add_parser("aggregate", help="IQM + bootstrap intervals across run directories")
    agg.add_argument("--runs", required=True, help="directory containing one subdirectory per run")
    agg.add_argument("--out", required=True, help="summary CSV path")
    agg.add_argument("--metric", choices=("episode_return", "eval_return"), default="eval_return")
    agg.add_argument("--resamples", type=int, default=2000)
    agg.add_argument("--bootstrap-seed", type=int, default=0)
    agg.set_defaults(fn=_cmd_aggregate)

    ins = sub.add_parser("inspect", help="print per-member sparsity, losses, champion")
    ins.add_argument("--checkpoint", required=True)
    ins.set_defaults(fn=_cmd_inspect)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
