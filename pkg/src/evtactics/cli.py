"""Command-line entry point: ``evtactics {train,eval,compare,trace,dump-obs}``.

Every run writes into its own directory.  ``--out DIR`` names it explicitly
(it must be absent or empty); otherwise a timestamped subdirectory is created
under ``$EVTACTICS_OUTPUT_DIR``, the config's ``output_dir``, or ``./runs``.
File contents never include wall-clock data, so the same arguments and seed
reproduce byte-identical files.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path

from evtactics.agent import checkpoint
from evtactics.agent.actions import Action
from evtactics.agent.network import forward
from evtactics.agent.policy import select_action
from evtactics.config import ConfigError, RunConfig, parse_config
from evtactics.experiment import (
    LEARNER_VARIANTS,
    EpisodeEnv,
    MethodVariant,
    StepRecord,
    compare,
    evaluate,
    export_traces,
    format_table,
    run_episode,
    train,
    write_metrics,
)
from evtactics.perception import format_observation

log = logging.getLogger("evtactics")

OUTPUT_ENV = "EVTACTICS_OUTPUT_DIR"


class UsageError(Exception):
    pass


def _load_config(path: str | None) -> RunConfig:
    return RunConfig() if path is None else parse_config(path)


def _variant(name: str) -> MethodVariant:
    try:
        return MethodVariant.parse(name)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _output_dir(args, cfg: RunConfig, label: str) -> Path:
    """Create and return a fresh output directory for this run."""
    if args.out is not None:
        out = Path(args.out)
        if out.exists() and (not out.is_dir() or any(out.iterdir())):
            raise UsageError(f"--out {out} already exists and is not an empty directory")
        out.mkdir(parents=True, exist_ok=True)
        return out
    root = Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir or "runs")
    stamp = time.strftime("%Y%m%d-%H%M%S")
    out = root / f"{label}-{stamp}"
    n = 1
    while out.exists():
        out = root / f"{label}-{stamp}-{n}"
        n += 1
    out.mkdir(parents=True)
    return out


TRAIN_COLUMNS = ("step", "episode", "epsilon", "loss", "r_col", "r_v", "r_lc", "r_cor", "reward", "action",
                 "executed", "mask", "overridden", "stored")
EPISODE_COLUMNS = ("episode", "end_step", "flow_rate", "steps", "travel_time_s", "collided", "timed_out",
                   "total_reward", "lane_changes", "rolling_travel_time_s")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _run_training(cfg: RunConfig, variant: MethodVariant, seed: int, steps: int | None, out: Path,
                  prefix: str = "") -> Path:
    """Train one learner, writing traces and checkpoints into ``out``; returns the final checkpoint path."""
    with (out / f"{prefix}training_trace.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRAIN_COLUMNS)

        def on_step(rec: StepRecord) -> None:
            t = rec.terms
            writer.writerow([_fmt(v) for v in (
                rec.step, rec.episode, rec.epsilon, rec.loss, t.r_col, t.r_v, t.r_lc, t.r_cor, t.total,
                rec.action.name, rec.executed.name, rec.mask, rec.overridden, rec.stored)])

        def on_checkpoint(agent, step: int) -> None:
            checkpoint.save(agent, out / f"{prefix}checkpoint_{step:08d}.ckpt", variant.value)
            log.info("%s: step %d, epsilon %.4f", variant.value, step, agent.epsilon)

        result = train(cfg, variant, seed, steps, on_step, on_checkpoint)
    with (out / f"{prefix}episodes.csv").open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(EPISODE_COLUMNS)
        for e in result.episodes:
            writer.writerow([_fmt(getattr(e, c)) for c in EPISODE_COLUMNS])
    final = checkpoint.save(result.agent, out / f"{prefix}final.ckpt", variant.value)
    log.info("%s: %d steps, %d episodes, checkpoint %s", variant.value, result.agent.env_steps,
             len(result.episodes), final)
    return final


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if not args.variant.uses_learner:
        raise UsageError(f"--variant {args.variant.value} has no learner; choose one of "
                         f"{', '.join(v.value for v in LEARNER_VARIANTS)}")
    seed = cfg.seed if args.seed is None else args.seed
    out = _output_dir(args, cfg, f"train-{args.variant.value}-seed{seed}")
    final = _run_training(cfg, args.variant, seed, args.steps, out)
    print(final)
    return 0


def _params_for(variant: MethodVariant, path: str | None, cfg: RunConfig):
    if not variant.uses_learner:
        return None
    if path is None:
        raise UsageError(f"--checkpoint is required for variant {variant.value}")
    agent, saved = checkpoint.load(path, cfg.training)
    if saved and saved != variant.value:
        log.warning("checkpoint %s was trained as %s, evaluating as %s", path, saved, variant.value)
    return agent.evaluate


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    params = _params_for(args.variant, args.checkpoint, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    n = cfg.experiment.eval_episodes if args.episodes is None else args.episodes
    if n < 1:
        raise UsageError(f"--episodes must be >= 1, got {n}")
    flows = cfg.experiment.flows if args.flow is None else (args.flow,)
    out = _output_dir(args, cfg, f"eval-{args.variant.value}-seed{seed}")
    rows = [evaluate(cfg, args.variant, n, seed, rate, params)[0] for rate in flows]
    write_metrics(rows, out / "metrics.csv")
    table = format_table(rows)
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_compare(args) -> int:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    out = _output_dir(args, cfg, f"compare-seed{cfg.seed}")
    params = {}
    for variant in LEARNER_VARIANTS:
        final = _run_training(cfg, variant, cfg.seed, args.steps, out, prefix=f"{variant.value}_")
        params[variant] = checkpoint.load(final, cfg.training)[0].evaluate
    rows = compare(cfg, params, args.episodes)
    write_metrics(rows, out / "metrics.csv")
    table = format_table(rows)
    (out / "table.txt").write_text(table + "\n")
    print(table)
    return 0


def cmd_trace(args) -> int:
    cfg = _load_config(args.config)
    params = _params_for(args.variant, args.checkpoint, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    out = _output_dir(args, cfg, f"trace-{args.variant.value}-seed{seed}")
    episode = run_episode(cfg, args.variant, seed, args.flow, params, record_trace=True)
    path = export_traces(episode.trace, out / "trace.csv")
    status = ("collided" if episode.collided else "timed out" if episode.timed_out
              else f"travel time {episode.travel_time_s:.1f} s")
    print(f"{path}: {len(episode.trace)} rows, EV {status}")
    return 0


def cmd_dump_obs(args) -> int:
    cfg = _load_config(args.config)
    params = _params_for(args.variant, args.checkpoint, cfg)
    seed = cfg.seed if args.seed is None else args.seed
    env = EpisodeEnv(cfg, args.variant, seed, args.flow)
    for _ in range(args.steps):
        if env.done:
            break
        mask = env.mask()
        if params is not None:
            action, _ = select_action(forward(params, env.observe()), mask, 0.0, None)
        else:
            action = Action.A if mask[Action.A] else Action.N
        env.step(action)
    if env.done:
        print(f"episode finished after {env.steps} steps")
        return 0
    ev = env.ev
    print(f"step {env.steps}: EV lane {ev.lane}, pos {ev.pos_m:.2f} m, speed {ev.speed:.2f} m/s")
    print(format_observation(env.observe()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evtactics", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def common(p, variant=True, out=True, flow=False, ckpt=False):
        p.add_argument("--config", help="YAML run configuration (defaults when omitted)")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        if variant:
            p.add_argument("--variant", type=_variant, required=True,
                           help="one of " + ", ".join(v.value for v in MethodVariant))
        if out:
            p.add_argument("--out", help="output directory (must be absent or empty)")
        if flow:
            p.add_argument("--flow", type=float, help="CV arrival rate in vehicles/s")
        if ckpt:
            p.add_argument("--checkpoint", help="trained network for learner variants")

    p = sub.add_parser("train", help="train a learner variant")
    common(p)
    p.add_argument("--steps", type=int, help="training steps (overrides training.max_training_steps)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="greedy evaluation of one variant")
    common(p, flow=True, ckpt=True)
    p.add_argument("--episodes", type=int, help="episodes per flow (default experiment.eval_episodes)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="train the learners and evaluate all five variants")
    common(p, variant=False)
    p.add_argument("--steps", type=int, help="training steps per learner")
    p.add_argument("--episodes", type=int, help="evaluation episodes per variant and flow")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("trace", help="one episode with a full time-distance export")
    common(p, flow=True, ckpt=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("dump-obs", help="print the labelled EV observation")
    common(p, variant=False, out=False, flow=True, ckpt=True)
    p.add_argument("--variant", type=_variant, default=MethodVariant.BASELINE,
                   help="variant driving the EV (default Baseline)")
    p.add_argument("--steps", type=int, default=0, help="steps to drive before printing")
    p.set_defaults(func=cmd_dump_obs)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        for name in ("steps", "episodes"):
            value = getattr(args, name, None)
            if value is not None and value < 0:
                raise UsageError(f"--{name} must be >= 0, got {value}")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"evtactics {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, checkpoint.CheckpointError, OSError, ValueError) as exc:
        print(f"evtactics {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
