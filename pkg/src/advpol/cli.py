"""Command-line entry points.

Exit codes: 0 success, 1 validation problem (bad flags, malformed or
missing inputs), 2 runtime failure inside an otherwise valid run. Every
command writes only beneath its --out directory, and echoes the fully
resolved configuration there so a run can be reproduced from its artifacts
alone. ADVPOL_LOG={debug,info,warning,error} sets verbosity.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from .game import EnvSpec, make_env

log = logging.getLogger("advpol.cli")


class UsageError(Exception):
    """Bad invocation or invalid input; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _setup_logging():
    level = os.environ.get("ADVPOL_LOG", "warning").upper()
    if level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        level = "WARNING"
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )


def _echo_args(args: argparse.Namespace, out_dir: str, name="config.json"):
    os.makedirs(out_dir, exist_ok=True)
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2, default=str)
        fh.write("\n")


def _require_file(path, what: str):
    if path is None:
        raise UsageError(f"{what} is required")
    if not os.path.exists(path):
        raise UsageError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommand implementations
# ---------------------------------------------------------------------------

def _load_train_config(args) -> "TrainConfig":
    from .trainer import TrainConfig

    if args.config is not None:
        if not os.path.exists(args.config):
            raise UsageError(f"config file not found: {args.config}")
        config = TrainConfig.from_json(args.config)
    elif args.env is not None:
        config = TrainConfig(env=EnvSpec(args.env))
    else:
        raise UsageError("provide --config or --env")
    overrides = {}
    if args.env is not None and args.config is not None:
        overrides["env"] = EnvSpec(args.env)
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.enhanced is not None:
        overrides["enhanced"] = args.enhanced
    if getattr(args, "no_imitator", False):
        overrides["mode"] = "ablation_no_imitator"
    if getattr(args, "blind", False):
        overrides["blind"] = True
    if getattr(args, "steps", None) is not None:
        overrides["total_steps"] = args.steps
    if getattr(args, "victim", None) is not None:
        overrides["victim"] = args.victim
    if getattr(args, "mix_p", None) is not None:
        overrides["mix_p"] = args.mix_p
    if getattr(args, "method", None) is not None:
        overrides["method"] = args.method
    if overrides:
        import dataclasses

        config = dataclasses.replace(config, **overrides)
    return config


def _cmd_make_victim(args) -> int:
    from .policy import save_policy
    from .trainer import make_victim

    _echo_args(args, args.out)
    victim = make_victim(
        EnvSpec(args.env), total_steps=args.steps, lr=args.lr,
        seed=args.seed if args.seed is not None else 0,
        gamma=args.gamma, workers=args.workers or 1,
    )
    path = os.path.join(args.out, "victim.json")
    save_policy(victim, path)
    print(path)
    return 0


def _cmd_train(args) -> int:
    from .trainer import train_apil

    if args.resume is not None:
        _require_file(args.resume, "--resume checkpoint")
        config = None  # the checkpoint carries the resolved config
    else:
        config = _load_train_config(args)
    artifacts = train_apil(config, resume_from=args.resume)
    print(json.dumps(artifacts, sort_keys=True))
    return 0


def _cmd_retrain_victim(args) -> int:
    import dataclasses

    from .trainer import retrain_victim

    config = _load_train_config(args)
    overrides = {"mode": "retrain_victim"}
    if args.adversary is not None:
        overrides["adversary"] = args.adversary
    if args.baseline_adversary is not None:
        overrides["baseline_adversary"] = args.baseline_adversary
    if args.imitator is not None:
        overrides["imitator"] = args.imitator
    config = dataclasses.replace(config, **overrides)
    artifacts = retrain_victim(config)
    print(json.dumps(artifacts, sort_keys=True))
    return 0


def _cmd_evaluate(args) -> int:
    from .evalreport import evaluate, state_blind_mask, write_report
    from .trainer import _load_adversary_file, _load_policy_file

    game = make_env(EnvSpec(args.env))
    adv = _load_adversary_file(_require_file(args.adversary, "--adversary"))
    vic = _load_policy_file(_require_file(args.victim, "--victim"))
    imitator = None
    if args.imitator is not None and not args.no_imitator:
        imitator = _load_policy_file(_require_file(args.imitator, "--imitator"))
    _echo_args(args, args.out)
    report = evaluate(
        game, adv, vic, imitator=imitator, episodes=args.episodes,
        seed=args.seed if args.seed is not None else 0,
        blind_mask=state_blind_mask(game) if args.blind else None,
        workers=args.workers or 1,
    )
    path = write_report(report, os.path.join(args.out, "report.json"))
    print(path)
    return 0


def _cmd_verify_bounds(args) -> int:
    from .evalreport import verify_bounds

    game = make_env(EnvSpec(args.env))
    _echo_args(args, args.out)
    options = {}
    if args.pairs is not None:
        options["pairs"] = args.pairs
    if args.samples is not None:
        options["samples"] = args.samples
    if args.victims is not None:
        options["victims"] = args.victims
    if args.epsilons is not None:
        try:
            options["epsilons"] = [float(e) for e in args.epsilons.split(",") if e]
        except ValueError:
            raise UsageError(f"bad --epsilons list: {args.epsilons!r}") from None
    reports, path = verify_bounds(
        game, options, np.random.default_rng(args.seed if args.seed is not None else 0),
        out_path=os.path.join(args.out, "bounds.jsonl"),
    )
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} bound checks passed -> {path}")
    if failed:
        for r in failed:
            log.error("FAILED %s margin=%g context=%s", r.check_name, r.margin, r.context)
        return 1
    return 0


def _cmd_plot(args) -> int:
    from .evalreport import emit_plots

    _require_file(args.metrics, "--metrics")
    paths = emit_plots(args.metrics, args.out, window=args.window)
    for p in paths:
        print(p)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advpol", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("make-victim", help="pretrain a victim by self-play")
    p.add_argument("--env", required=True)
    p.add_argument("--steps", type=int, default=60_000)
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--gamma", type=float, default=None)
    common(p)
    p.set_defaults(func=_cmd_make_victim)

    p = sub.add_parser("train", help="train an adversary against a frozen victim")
    p.add_argument("--config", default=None, help="TrainConfig JSON path")
    p.add_argument("--env", default=None)
    p.add_argument("--victim", default=None, help="victim checkpoint path")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--method", choices=("reinforce", "ppo_clip"), default=None)
    p.add_argument("--resume", default=None, help="resume from a training checkpoint")
    p.add_argument("--no-imitator", action="store_true",
                   help="ablation: zero prediction inputs, no imitation learning")
    p.add_argument("--blind", action="store_true",
                   help="hide the environment observation from the adversary")
    p.add_argument("--enhanced", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mix-p", dest="mix_p", type=float, default=None)
    common(p, out_required=False)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("retrain-victim", help="retrain the victim against a mixture")
    p.add_argument("--config", default=None)
    p.add_argument("--env", default=None)
    p.add_argument("--victim", default=None)
    p.add_argument("--adversary", default=None, help="trained adversary checkpoint")
    p.add_argument("--baseline-adversary", dest="baseline_adversary", default=None)
    p.add_argument("--imitator", default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--mix-p", dest="mix_p", type=float, default=None)
    p.add_argument("--enhanced", action=argparse.BooleanOptionalAction, default=None)
    common(p, out_required=False)
    p.set_defaults(func=_cmd_retrain_victim)

    p = sub.add_parser("evaluate", help="roll out a matchup and report win rates")
    p.add_argument("--env", required=True)
    p.add_argument("--adversary", required=True)
    p.add_argument("--victim", required=True)
    p.add_argument("--imitator", default=None)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--blind", action="store_true")
    p.add_argument("--no-imitator", action="store_true")
    common(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("verify-bounds", help="machine-check the theoretical bounds")
    p.add_argument("--env", required=True)
    p.add_argument("--pairs", type=int, default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--victims", type=int, default=None)
    p.add_argument("--epsilons", default=None, help="comma-separated list")
    common(p)
    p.set_defaults(func=_cmd_verify_bounds)

    p = sub.add_parser("plot", help="render metrics.csv to SVG plots")
    p.add_argument("--metrics", required=True, help="metrics CSV path")
    p.add_argument("--window", type=int, default=5)
    common(p)
    p.set_defaults(func=_cmd_plot)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        log.exception("run failed")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
