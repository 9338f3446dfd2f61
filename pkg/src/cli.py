from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from src.config import AppConfig, find_project_root, load_config, resolve_config_path
from src.enums import AdapterKind, Strategy
from src.env import load_env
from src.errors import MtpError
from src.harness import (
    build_context,
    build_embedder,
    cmd_ablation,
    cmd_build_memory,
    cmd_eval,
    cmd_inspect_memory,
    cmd_replay,
    format_ablation_table,
    format_suite_table,
)
from src.world_sim import WorldSettings

logger = logging.getLogger(__name__)


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--provider",
        help="scripted:<path>, http or gemini (overrides provider.kind)",
    )
    parser.add_argument("--adapter", type=AdapterKind, choices=list(AdapterKind))
    parser.add_argument("--max-trials", type=int)
    parser.add_argument("--env-filter", help="only retrieve memory from this environment")
    parser.add_argument("--workers", type=int)
    parser.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mtp-planner")
    parser.add_argument("--config", type=Path, default=None)
    parser.add_argument("--project-root", type=Path, default=None)
    parser.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    eval_parser = sub.add_parser("eval", help="evaluate strategies on a task suite")
    eval_parser.add_argument("--suite", type=Path, required=True)
    eval_parser.add_argument("--memory", type=Path, action="append", default=[])
    eval_parser.add_argument(
        "--strategy", type=Strategy, choices=list(Strategy), action="append"
    )
    eval_parser.add_argument("--repeats", type=int)
    eval_parser.add_argument("--jitter", type=float)
    eval_parser.add_argument("--out", type=Path)
    eval_parser.add_argument("--paraphrased", action="store_true")
    eval_parser.add_argument("--episode-log", type=Path)
    eval_parser.add_argument(
        "--orchestrator", choices=["local", "prefect"], default="local"
    )
    _add_run_options(eval_parser)

    build = sub.add_parser("build-memory", help="collect successful programs from a suite")
    build.add_argument("--suite", type=Path, required=True)
    build.add_argument("--out", type=Path, required=True)
    build.add_argument(
        "--strategy", type=Strategy, choices=list(Strategy), default=Strategy.RETRY
    )
    build.add_argument("--memory", type=Path, action="append", default=[])
    _add_run_options(build)

    ablation = sub.add_parser("ablation", help="retry / no-adaptation / full transfer grid")
    ablation.add_argument("--suite", type=Path, action="append", required=True)
    ablation.add_argument("--memory", type=Path, action="append", required=True)
    ablation.add_argument("--repeats", type=int)
    ablation.add_argument("--jitter", type=float)
    ablation.add_argument("--out", type=Path)
    _add_run_options(ablation)

    replay = sub.add_parser("replay", help="re-execute programs from an episode log")
    replay.add_argument("--episode-log", type=Path, required=True)
    replay.add_argument("--suite", type=Path, required=True)

    inspect = sub.add_parser("inspect-memory", help="summarise memory files")
    inspect.add_argument("--memory", type=Path, action="append", required=True)
    inspect.add_argument("--query")
    inspect.add_argument("--top", type=int, default=5)
    return parser


def _load_app_config(project_root: Path, cli_path: Path | None) -> AppConfig:
    path = resolve_config_path(project_root, cli_path)
    if cli_path is None and not path.exists():
        logger.info("No config file at %s; using defaults", path)
        return AppConfig()
    return load_config(path).config


def _context(args: argparse.Namespace, config: AppConfig, project_root: Path):
    return build_context(
        config,
        project_root,
        provider_override=args.provider,
        adapter=args.adapter,
        max_trials=args.max_trials,
        memory_env_filter=args.env_filter,
        workers=args.workers,
    )


def _run(args: argparse.Namespace, config: AppConfig, project_root: Path) -> int:
    harness = config.harness
    seed = getattr(args, "seed", None)
    seed = harness.seed if seed is None else seed

    if args.command == "eval":
        strategies = args.strategy or [config.replanner.strategy]
        repeats = args.repeats or harness.repeats
        jitter = harness.jitter if args.jitter is None else args.jitter
        if args.orchestrator == "prefect":
            from src.flow import evaluate_suite_flow

            result = evaluate_suite_flow(
                config=config,
                project_root=project_root,
                suite_path=args.suite,
                memory_paths=args.memory,
                strategies=strategies,
                repeats=repeats,
                seed=seed,
                jitter=jitter,
                out=args.out,
                episode_log=args.episode_log,
                paraphrased=args.paraphrased,
                provider_override=args.provider,
                adapter=args.adapter,
                max_trials=args.max_trials,
                memory_env_filter=args.env_filter,
            )
        else:
            result = cmd_eval(
                _context(args, config, project_root),
                suite_path=args.suite,
                memory_paths=args.memory,
                strategies=strategies,
                repeats=repeats,
                seed=seed,
                jitter=jitter,
                out=args.out,
                paraphrased=args.paraphrased,
                episode_log=args.episode_log,
            )
        print(format_suite_table(result))
        return 0

    if args.command == "build-memory":
        memory = cmd_build_memory(
            _context(args, config, project_root),
            suite_path=args.suite,
            out=args.out,
            strategy=args.strategy,
            seed=seed,
            seed_memory_paths=args.memory,
        )
        print(f"{len(memory)} log(s) written to {args.out}")
        return 0

    if args.command == "ablation":
        table = cmd_ablation(
            _context(args, config, project_root),
            suite_paths=args.suite,
            memory_paths=args.memory,
            repeats=args.repeats or harness.repeats,
            seed=seed,
            jitter=harness.jitter if args.jitter is None else args.jitter,
            out=args.out,
        )
        print(format_ablation_table(table))
        return 0

    if args.command == "replay":
        settings = WorldSettings(
            init_drift=config.world.init_drift,
            grasp_radius=config.world.grasp_radius,
            unknown_step_policy=config.replanner.unknown_step_policy,
        )
        for line in cmd_replay(
            episode_log=args.episode_log, suite_path=args.suite, settings=settings
        ):
            print(line)
        return 0

    if args.command == "inspect-memory":
        for line in cmd_inspect_memory(
            memory_paths=args.memory,
            embedder=build_embedder(config),
            query=args.query,
            top=args.top,
        ):
            print(line)
        return 0

    raise AssertionError("unreachable")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )

    project_root = (args.project_root or find_project_root()).resolve()
    load_env(project_root)
    try:
        config = _load_app_config(project_root, args.config)
        return _run(args, config, project_root)
    except (MtpError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
