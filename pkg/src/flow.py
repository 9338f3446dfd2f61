from __future__ import annotations

from pathlib import Path
from typing import Callable, Sequence

from prefect import flow, get_run_logger, task
from prefect.artifacts import create_markdown_artifact, create_table_artifact
from prefect.cache_policies import NO_CACHE

from src.config import AppConfig
from src.enums import AdapterKind, Strategy
from src.harness import SuiteResult, build_context, cmd_eval, format_suite_table
from src.replanner import EpisodeResult
from src.world_sim import TaskSpec


@task(cache_policy=NO_CACHE, persist_result=False)
def task_run_episode(
    run: Callable[[TaskSpec], EpisodeResult], task_spec: TaskSpec
) -> EpisodeResult:
    logger = get_run_logger()
    episode = run(task_spec)
    logger.info(
        "Task %s: %s after %d trial(s)",
        task_spec.id,
        "success" if episode.success else "failure",
        len(episode.trials),
    )
    return episode


def prefect_runner(
    tasks: Sequence[TaskSpec], run: Callable[[TaskSpec], EpisodeResult]
) -> list[EpisodeResult]:
    """Run one repeat's episodes as concurrent Prefect task runs, in task order."""
    futures = [task_run_episode.submit(run, task_spec) for task_spec in tasks]
    return [future.result() for future in futures]


def _publish_artifacts(result: SuiteResult, logger) -> None:
    rows = [
        {
            "strategy": name,
            "task": task_id,
            "successes": tally.successes,
            "attempts": tally.attempts,
            "rate": round(tally.rate, 2),
        }
        for name, strategy_result in result.strategies.items()
        for task_id, tally in strategy_result.per_task.items()
    ]
    try:
        create_table_artifact(
            table=rows, description=f"Per-task success for suite {result.suite}"
        )
    except Exception as exc:  # noqa: BLE001 - artifacts are best-effort
        logger.warning("Failed to create Prefect table artifact: %s", exc)

    report = [
        f"# Suite {result.suite}",
        "",
        f"Memory: {result.memory or 'none'}; repeats: {result.repeats}; seed: {result.seed}",
        "",
        "```",
        format_suite_table(result),
        "```",
    ]
    try:
        create_markdown_artifact(markdown="\n".join(report))
    except Exception as exc:  # noqa: BLE001 - artifacts are best-effort
        logger.warning("Failed to create Prefect markdown artifact: %s", exc)


@flow(name="evaluate_suite")
def evaluate_suite_flow(
    *,
    config: AppConfig,
    project_root: Path,
    suite_path: Path,
    memory_paths: list[Path],
    strategies: list[Strategy],
    repeats: int,
    seed: int,
    jitter: float,
    out: Path | None = None,
    episode_log: Path | None = None,
    paraphrased: bool = False,
    provider_override: str | None = None,
    adapter: AdapterKind | None = None,
    max_trials: int | None = None,
    memory_env_filter: str | None = None,
) -> SuiteResult:
    logger = get_run_logger()
    ctx = build_context(
        config,
        project_root,
        provider_override=provider_override,
        adapter=adapter,
        max_trials=max_trials,
        memory_env_filter=memory_env_filter,
    )
    logger.info(
        "Evaluating %s with %s over %d repeat(s)",
        suite_path,
        ", ".join(s.value for s in strategies),
        repeats,
    )
    result = cmd_eval(
        ctx,
        suite_path=suite_path,
        memory_paths=memory_paths,
        strategies=strategies,
        repeats=repeats,
        seed=seed,
        jitter=jitter,
        out=out,
        paraphrased=paraphrased,
        episode_log=episode_log,
        runner=prefect_runner,
    )
    for name, strategy_result in result.strategies.items():
        logger.info(
            "%s: %.1f%% ± %.1f", name, strategy_result.mean, strategy_result.std
        )
    _publish_artifacts(result, logger)
    return result
