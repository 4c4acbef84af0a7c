"""Operator entry points: train, eval, diagnose, ablate.

Every training run writes a manifest before any other artifact so a run
directory is always attributable to an exact config, seed, and build.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import subprocess
import sys

import numpy as np

from trfp.config import ABLATION_FLAGS, TrainConfig
from trfp.diffcore import CheckpointError, TrainingFault
from trfp.envs import ENV_NAMES, make_env
from trfp.evaluate import collect_states, evaluate_parallel, flow_diagnostics
from trfp.trainer import Trainer, load_checkpoint

try:
    from importlib.metadata import version as _pkg_version
except ImportError:  # pragma: no cover
    _pkg_version = None


def _build_id() -> str:
    """Best-effort build identifier: git commit, else package version."""
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=here,
                             capture_output=True, text=True, timeout=5)
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    if _pkg_version is not None:
        try:
            return f"trfp-{_pkg_version('trfp')}"
        except Exception:
            pass
    return "unknown"


def _now() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat()


def _write_manifest(outdir: str, config_text: str, config: TrainConfig,
                    start_time: str, end_time=None):
    payload = {
        "config_text": config_text,
        "effective_config": config.to_text(),
        "build": _build_id(),
        "seeds": [config.seed],
        "outdir": os.path.abspath(outdir),
        "start_time": start_time,
        "end_time": end_time,
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(payload, fh, indent=2)
        fh.write("\n")


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("TRFP_THREADS", "1")))
    except ValueError:
        return 1


def _run_training(config: TrainConfig, config_text: str, outdir: str) -> int:
    os.makedirs(outdir, exist_ok=True)
    start = _now()
    _write_manifest(outdir, config_text, config, start)
    trainer = Trainer(config)
    trainer.run_training(outdir)
    _write_manifest(outdir, config_text, config, start, end_time=_now())
    return 0


def _cmd_train(args) -> int:
    config_text = open(args.config).read()
    config = TrainConfig.from_text(config_text)
    if args.seed is not None:
        import dataclasses
        config = dataclasses.replace(config, seed=args.seed)
    return _run_training(config, config_text, args.outdir)


def _cmd_ablate(args) -> int:
    config_text = open(args.config).read()
    config = TrainConfig.from_text(config_text).with_ablation(args.ablate)
    if args.seed is not None:
        import dataclasses
        config = dataclasses.replace(config, seed=args.seed)
    return _run_training(config, config_text, args.outdir)


def _cmd_eval(args) -> int:
    state = load_checkpoint(args.checkpoint)
    env_name = args.env or state.env_name
    report = evaluate_parallel(
        state.policy, state.critics, lambda: make_env(env_name),
        episodes=args.episodes, steps=args.steps,
        n_candidates=args.candidates, seed=args.seed or 0,
        threads=_threads(), record_trajectories=args.trajectories)
    os.makedirs(args.outdir, exist_ok=True)
    report_path = os.path.join(args.outdir, "report.json")
    report.write_json(report_path)
    if args.trajectories:
        env = make_env(env_name)
        report.write_trajectory_csv(
            os.path.join(args.outdir, "trajectories.csv"),
            env.obs_dim, env.act_dim)
    print(f"{env_name}: mean return {report.mean_return:.3f} "
          f"+/- {report.std_return:.3f} over {report.episodes} episodes "
          f"({report.steps_used} steps, {report.candidates} candidates)")
    print(f"report written to {report_path}")
    return 0


def _cmd_diagnose(args) -> int:
    state = load_checkpoint(args.checkpoint)
    env_name = args.env or state.env_name
    rng = np.random.default_rng(args.seed or 0)
    states = collect_states(make_env(env_name), args.samples, rng)
    report = flow_diagnostics(state.policy, states, rng)
    os.makedirs(args.outdir, exist_ok=True)
    path = os.path.join(args.outdir, "diagnostics.json")
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2)
        fh.write("\n")
    print(f"straightness mean {report['straightness_mean']:.4f}, "
          f"max |div| {report['max_abs_divergence']:.4f}, "
          f"|delta_pre| max {report['delta_pre_max_abs']:.6f}")
    print(f"diagnostics written to {path}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trfp",
        description="Train and evaluate truncated rectified-flow policies.")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="run training from a config file")
    train.add_argument("--config", required=True)
    train.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
    train.add_argument("--outdir", required=True)
    train.set_defaults(func=_cmd_train)

    ablate = sub.add_parser("ablate", help="train with one component removed")
    ablate.add_argument("--config", required=True)
    ablate.add_argument("--ablate", required=True, choices=ABLATION_FLAGS)
    ablate.add_argument("--seed", type=int, default=None)
    ablate.add_argument("--outdir", required=True)
    ablate.set_defaults(func=_cmd_ablate)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--env", choices=ENV_NAMES, default=None,
                    help="defaults to the checkpoint's training environment")
    ev.add_argument("--episodes", type=int, default=20)
    ev.add_argument("--steps", type=int, default=4,
                    help="deterministic transport steps per action")
    ev.add_argument("--candidates", type=int, default=4)
    ev.add_argument("--seed", type=int, default=0)
    ev.add_argument("--outdir", default=".")
    ev.add_argument("--trajectories", action="store_true",
                    help="also dump episodes as CSV")
    ev.set_defaults(func=_cmd_eval)

    diag = sub.add_parser("diagnose",
                          help="straightness/divergence report for a checkpoint")
    diag.add_argument("--checkpoint", required=True)
    diag.add_argument("--env", choices=ENV_NAMES, default=None)
    diag.add_argument("--samples", type=int, default=64)
    diag.add_argument("--seed", type=int, default=0)
    diag.add_argument("--outdir", default=".")
    diag.set_defaults(func=_cmd_diagnose)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingFault as exc:
        print(f"training fault: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
