"""Experiment harness behind the CLI subcommands.

Evaluation runs every task of a suite ``repeats`` times per strategy. Each
repeat perturbs the initial scenes with a per-task RNG, runs the episodes on a
worker pool and records the repeat's success rate. Results are aggregated in
task order so output does not depend on scheduling.
"""

from __future__ import annotations

import json
import logging
import os
import statistics
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from pydantic import BaseModel, Field

from src.adaptation import Adapter, LlmAdapter, RuleBasedAdapter
from src.composer_dsl import parse_program
from src.config import AppConfig, ProviderConfig, resolve_data_path
from src.enums import AdapterKind, EmbedderKind, ProviderKind, Strategy
from src.env import optional_secret, require_secret
from src.errors import DriftError, MtpError
from src.gemini_client import create_gemini_client
from src.memory_store import Memory, load_memory, merge_memories, save_memory
from src.prompting import PromptTemplate, load_prompt_template
from src.providers import (
    CompletionProvider,
    GeminiProvider,
    HttpChatProvider,
    RetryPolicy,
    ScriptedProvider,
    load_script,
)
from src.replanner import EpisodeResult, ReplannerConfig, commit_success, run_episode
from src.results import (
    LoggedTrial,
    TraceLine,
    episode_to_records,
    read_episode_log,
    write_episode_log,
)
from src.retrieval import EmbeddingProvider, HashedNgramEmbedder, HttpEmbeddingProvider, rank_memory
from src.suite import Suite, expand_paraphrases, load_suite, perturb_tasks
from src.tracking import BraintrustTracker
from src.world_sim import TaskSpec, WorldSettings, execute_program

logger = logging.getLogger(__name__)

_POSITION_TOLERANCE = 1e-9

ProviderFactory = Callable[[], CompletionProvider]
EpisodeSink = Callable[[int, TaskSpec, EpisodeResult], None]


class EpisodeRunner(Protocol):
    def __call__(
        self, tasks: Sequence[TaskSpec], run: Callable[[TaskSpec], EpisodeResult]
    ) -> list[EpisodeResult]: ...


# --- context -----------------------------------------------------------------


@dataclass
class EvalContext:
    """Everything an episode needs besides the task and the memory."""

    provider_factory: ProviderFactory
    embedder: EmbeddingProvider
    template: PromptTemplate
    replanner: ReplannerConfig
    settings: WorldSettings = field(default_factory=WorldSettings)
    tracker: BraintrustTracker | None = None
    workers: int = 0
    _templates: dict[tuple[str, str], PromptTemplate] = field(
        default_factory=dict, init=False, repr=False
    )

    def template_for(self, suite: Suite, environment: str) -> PromptTemplate:
        key = (suite.name, environment)
        if key not in self._templates:
            self._templates[key] = self.template.with_examples(
                suite.examples.get(environment, [])
            )
        return self._templates[key]

    def adapter_for(
        self, provider: CompletionProvider, template: PromptTemplate
    ) -> Adapter:
        if self.replanner.adapter is AdapterKind.LLM:
            return LlmAdapter(provider, template)
        return RuleBasedAdapter()


def apply_provider_override(config: ProviderConfig, override: str | None) -> ProviderConfig:
    """``scripted:<path>``, ``http`` or ``gemini`` replace the configured kind."""
    if not override:
        return config
    kind, _, argument = override.partition(":")
    try:
        provider_kind = ProviderKind(kind)
    except ValueError:
        raise RuntimeError(f"Unknown provider '{override}'") from None
    update: dict[str, object] = {"kind": provider_kind}
    if provider_kind is ProviderKind.SCRIPTED:
        if not argument:
            raise RuntimeError("scripted provider needs a script path: scripted:<path>")
        update["script_path"] = Path(argument)
    return config.model_copy(update=update)


def build_provider_factory(
    config: ProviderConfig,
    project_root: Path,
    *,
    system_prompt: str | None = None,
    traced: bool = False,
) -> ProviderFactory:
    policy = RetryPolicy(
        max_retries=config.max_retries,
        backoff_base_seconds=config.backoff_base_seconds,
        backoff_factor=config.backoff_factor,
    )
    match config.kind:
        case ProviderKind.SCRIPTED:
            if config.script_path is None:
                raise RuntimeError("provider.script_path is required for kind 'scripted'")
            path = config.script_path
            if not path.exists():
                path = resolve_data_path(project_root, path)
            script = load_script(path)
            # A fresh provider per episode keeps rule counters independent.
            return lambda: ScriptedProvider(script, name=f"scripted:{path.name}")
        case ProviderKind.HTTP:
            shared = HttpChatProvider(
                endpoint=config.endpoint or "",
                model=config.model,
                api_key=optional_secret(config.api_key_env),
                timeout_seconds=config.timeout_seconds,
                temperature=config.temperature,
                system_prompt=system_prompt,
                policy=policy,
            )
            return lambda: shared
        case ProviderKind.GEMINI:
            gemini = create_gemini_client(
                require_secret(config.api_key_env or "GEMINI_API_KEY"),
                model=config.model,
                temperature=config.temperature,
                traced=traced,
            )
            shared_gemini = GeminiProvider(gemini, policy=policy)
            return lambda: shared_gemini
    raise RuntimeError(f"Unsupported provider kind: {config.kind}")


def build_embedder(config: AppConfig) -> EmbeddingProvider:
    section = config.embedder
    if section.kind is EmbedderKind.HTTP:
        return HttpEmbeddingProvider(
            endpoint=section.endpoint or "",
            model=section.model or "",
            dimension=section.dimension,
            api_key=optional_secret(section.api_key_env),
            timeout_seconds=config.provider.timeout_seconds,
            policy=RetryPolicy(
                max_retries=config.provider.max_retries,
                backoff_base_seconds=config.provider.backoff_base_seconds,
                backoff_factor=config.provider.backoff_factor,
            ),
        )
    return HashedNgramEmbedder(
        dimension=section.dimension, ngram=section.ngram, seed=section.seed
    )


def build_context(
    config: AppConfig,
    project_root: Path,
    *,
    provider_override: str | None = None,
    adapter: AdapterKind | None = None,
    max_trials: int | None = None,
    memory_env_filter: str | None = None,
    workers: int | None = None,
) -> EvalContext:
    section = config.replanner
    replanner = ReplannerConfig(
        max_trials=max_trials or section.max_trials,
        adapter=adapter or section.adapter,
        strategy=section.strategy,
        memory_env_filter=memory_env_filter or section.memory_env_filter,
    )
    prompt = config.prompt
    template = load_prompt_template(
        resolve_data_path(project_root, prompt.registry_dir),
        prompt.name,
        preamble_file=prompt.preamble_file,
        generation_file=prompt.generation_file,
        adaptation_file=prompt.adaptation_file,
        replan_file=prompt.replan_file,
    )
    tracker = None
    if config.tracking.enabled:
        tracker = BraintrustTracker(config.tracking.project)
        if not tracker.enabled:
            logger.info("Braintrust tracking disabled: %s", tracker.disabled_reason)
            tracker = None
    return EvalContext(
        provider_factory=build_provider_factory(
            apply_provider_override(config.provider, provider_override),
            project_root,
            system_prompt=template.system_preamble,
            traced=tracker is not None,
        ),
        embedder=build_embedder(config),
        template=template,
        replanner=replanner,
        settings=WorldSettings(
            init_drift=config.world.init_drift,
            grasp_radius=config.world.grasp_radius,
            unknown_step_policy=section.unknown_step_policy,
        ),
        tracker=tracker,
        workers=config.harness.workers if workers is None else workers,
    )


# --- running -----------------------------------------------------------------


def run_single(
    ctx: EvalContext,
    suite: Suite,
    task: TaskSpec,
    memory: Memory,
    strategy: Strategy,
) -> EpisodeResult:
    """One episode; engine errors are recorded on the result, never raised."""
    provider = ctx.provider_factory()
    template = ctx.template_for(suite, task.environment.name)
    try:
        return run_episode(
            task,
            memory,
            ctx.replanner.model_copy(update={"strategy": strategy}),
            provider,
            ctx.embedder,
            template=template,
            adapter=ctx.adapter_for(provider, template),
            settings=ctx.settings,
            profiles=suite.profiles,
            tracker=ctx.tracker,
        )
    except MtpError as exc:
        logger.error("Task %s aborted: %s", task.id, exc)
        return EpisodeResult(task_id=task.id, error=str(exc))


def worker_count(requested: int, tasks: int) -> int:
    if requested > 0:
        return requested
    return max(1, min(tasks, os.cpu_count() or 1))


def run_threaded(
    tasks: Sequence[TaskSpec],
    run: Callable[[TaskSpec], EpisodeResult],
    *,
    workers: int = 0,
) -> list[EpisodeResult]:
    results: dict[str, EpisodeResult] = {}
    with ThreadPoolExecutor(max_workers=worker_count(workers, len(tasks))) as executor:
        futures = {executor.submit(run, task): task.id for task in tasks}
        for future in as_completed(futures):
            task_id = futures[future]
            try:
                results[task_id] = future.result()
            except Exception as exc:  # noqa: BLE001 - boundary
                logger.error("Task %s crashed: %s", task_id, exc)
                results[task_id] = EpisodeResult(task_id=task_id, error=str(exc))
    return [results[task.id] for task in tasks]


class TaskTally(BaseModel):
    successes: int = 0
    attempts: int = 0

    @property
    def rate(self) -> float:
        return 100.0 * self.successes / self.attempts if self.attempts else 0.0


class StrategyResult(BaseModel):
    strategy: Strategy
    per_task: dict[str, TaskTally]
    rates: list[float]
    mean: float
    std: float


class SuiteResult(BaseModel):
    suite: str
    memory: str
    repeats: int
    seed: int
    jitter: float
    max_trials: int
    adapter: AdapterKind
    strategies: dict[str, StrategyResult] = Field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def summarize_rates(rates: Sequence[float]) -> tuple[float, float]:
    if not rates:
        return 0.0, 0.0
    return statistics.fmean(rates), statistics.pstdev(rates)


def run_suite(
    ctx: EvalContext,
    suite: Suite,
    tasks: Sequence[TaskSpec],
    memory: Memory,
    strategy: Strategy,
    *,
    repeats: int,
    seed: int,
    jitter: float,
    runner: EpisodeRunner | None = None,
    sink: EpisodeSink | None = None,
) -> StrategyResult:
    per_task = {task.id: TaskTally() for task in tasks}
    rates: list[float] = []
    for repeat in range(repeats):
        perturbed = perturb_tasks(list(tasks), seed=seed, repeat=repeat, amount=jitter)

        def run(task: TaskSpec) -> EpisodeResult:
            return run_single(ctx, suite, task, memory, strategy)

        if runner is None:
            episodes = run_threaded(perturbed, run, workers=ctx.workers)
        else:
            episodes = runner(perturbed, run)

        successes = 0
        for task, episode in zip(perturbed, episodes):
            tally = per_task[task.id]
            per_task[task.id] = TaskTally(
                successes=tally.successes + int(episode.success),
                attempts=tally.attempts + 1,
            )
            successes += int(episode.success)
            if sink is not None:
                sink(repeat, task, episode)
        rate = 100.0 * successes / len(perturbed) if perturbed else 0.0
        rates.append(rate)
        logger.info(
            "Suite %s strategy %s repeat %d: %.1f%%", suite.name, strategy.value, repeat, rate
        )

    mean, std = summarize_rates(rates)
    return StrategyResult(
        strategy=strategy, per_task=per_task, rates=rates, mean=mean, std=std
    )


def load_memories(paths: Sequence[Path]) -> Memory:
    if not paths:
        return Memory()
    memories = [load_memory(path) for path in paths]
    return memories[0] if len(memories) == 1 else merge_memories(*memories)


def cmd_eval(
    ctx: EvalContext,
    *,
    suite_path: Path,
    memory_paths: Sequence[Path],
    strategies: Sequence[Strategy],
    repeats: int,
    seed: int,
    jitter: float,
    out: Path | None = None,
    paraphrased: bool = False,
    episode_log: Path | None = None,
    runner: EpisodeRunner | None = None,
) -> SuiteResult:
    suite = load_suite(suite_path)
    memory = load_memories(memory_paths)
    tasks = expand_paraphrases(suite.tasks) if paraphrased else list(suite.tasks)
    if not tasks:
        raise MtpError(f"suite {suite.name} has no tasks to evaluate")

    records: list[LoggedTrial] = []
    result = SuiteResult(
        suite=suite.name,
        memory=memory.source_label,
        repeats=repeats,
        seed=seed,
        jitter=jitter,
        max_trials=ctx.replanner.max_trials,
        adapter=ctx.replanner.adapter,
    )
    for strategy in strategies:

        def sink(repeat: int, task: TaskSpec, episode: EpisodeResult) -> None:
            records.extend(
                episode_to_records(
                    episode,
                    repeat=repeat,
                    strategy=strategy.value,
                    scene=task.initial_scene,
                )
            )

        result.strategies[strategy.value] = run_suite(
            ctx,
            suite,
            tasks,
            memory,
            strategy,
            repeats=repeats,
            seed=seed,
            jitter=jitter,
            runner=runner,
            sink=sink if episode_log is not None else None,
        )

    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(result.to_json(), encoding="utf-8")
        logger.info("Wrote results to %s", out)
    if episode_log is not None:
        write_episode_log(episode_log, records)
    return result


def cmd_build_memory(
    ctx: EvalContext,
    *,
    suite_path: Path,
    out: Path,
    strategy: Strategy = Strategy.RETRY,
    seed: int = 0,
    jitter: float = 0.0,
    seed_memory_paths: Sequence[Path] = (),
) -> Memory:
    """Run every task once and keep the successful programs, in task order."""
    suite = load_suite(suite_path)
    base = load_memories(seed_memory_paths)
    tasks = perturb_tasks(list(suite.tasks), seed=seed, repeat=0, amount=jitter)

    episodes = run_threaded(
        tasks,
        lambda task: run_single(ctx, suite, task, base, strategy),
        workers=ctx.workers,
    )
    memory = Memory(source_label=suite.name)
    for task, episode in zip(tasks, episodes):
        if episode.success:
            memory = commit_success(memory, task, episode)
    save_memory(memory, out)
    logger.info(
        "Built memory from %s: %d of %d task(s) succeeded", suite.name, len(memory), len(tasks)
    )
    return memory


ABLATION_STRATEGIES = (Strategy.RETRY, Strategy.NO_ADAPTATION, Strategy.MTP)


class AblationCell(BaseModel):
    mean: float
    std: float


class AblationRow(BaseModel):
    """One memory file on one suite; cells follow ``AblationTable.columns``."""

    memory: str
    suite: str
    cells: list[AblationCell]


class AblationTable(BaseModel):
    columns: list[str]
    rows: list[AblationRow]

    def cell(self, memory: str, suite: str, strategy: Strategy) -> AblationCell:
        for row in self.rows:
            if row.memory == memory and row.suite == suite:
                return row.cells[self.columns.index(strategy.value)]
        raise KeyError((memory, suite))

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def cmd_ablation(
    ctx: EvalContext,
    *,
    suite_paths: Sequence[Path],
    memory_paths: Sequence[Path],
    repeats: int,
    seed: int,
    jitter: float,
    out: Path | None = None,
) -> AblationTable:
    """Every memory file against retry, no-adaptation and full transfer on every suite."""
    if not memory_paths:
        raise MtpError("ablation needs at least one memory file")
    suites = [load_suite(path) for path in suite_paths]
    memories = [load_memory(path) for path in memory_paths]

    def cell(suite: Suite, memory: Memory, strategy: Strategy) -> AblationCell:
        result = run_suite(
            ctx,
            suite,
            suite.tasks,
            memory,
            strategy,
            repeats=repeats,
            seed=seed,
            jitter=jitter,
        )
        return AblationCell(mean=result.mean, std=result.std)

    # Retry never reads memory, so one run per suite serves every row.
    retry = {suite.name: cell(suite, Memory(), Strategy.RETRY) for suite in suites}
    rows: list[AblationRow] = []
    for index, memory in enumerate(memories):
        label = memory.source_label or f"memory{index}"
        for suite in suites:
            cells = [
                retry[suite.name] if strategy is Strategy.RETRY else cell(suite, memory, strategy)
                for strategy in ABLATION_STRATEGIES
            ]
            rows.append(AblationRow(memory=label, suite=suite.name, cells=cells))

    table = AblationTable(columns=[s.value for s in ABLATION_STRATEGIES], rows=rows)
    if out is not None:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(table.to_json(), encoding="utf-8")
    return table


def _same_position(a: tuple[float, ...], b: tuple[float, ...]) -> bool:
    return all(abs(x - y) <= _POSITION_TOLERANCE for x, y in zip(a, b))


def cmd_replay(
    *, episode_log: Path, suite_path: Path, settings: WorldSettings | None = None
) -> list[str]:
    """Re-execute every logged program; raise ``DriftError`` on the first divergence."""
    suite = load_suite(suite_path)
    lines: list[str] = []
    for record in read_episode_log(episode_log):
        if record.program is None:
            continue
        base = suite.task(record.task_id.split("~p", 1)[0])
        task = base.model_copy(update={"initial_scene": record.scene})
        result = execute_program(task, parse_program(record.program), settings)
        replayed = [TraceLine.from_record(step) for step in result.trace]

        for index in range(max(len(replayed), len(record.trace))):
            if index >= len(replayed) or index >= len(record.trace):
                raise DriftError(
                    record.task_id, record.trial, index, "trace length differs"
                )
            logged, now = record.trace[index], replayed[index]
            if (
                logged.raw != now.raw
                or logged.outcome != now.outcome
                or logged.holding != now.holding
                or not _same_position(logged.gripper_position, now.gripper_position)
            ):
                raise DriftError(
                    record.task_id,
                    record.trial,
                    index,
                    f"logged {logged.describe()!r}, replayed {now.describe()!r}",
                )
            lines.append(
                f"[{record.task_id} r{record.repeat} t{record.trial}] "
                f"step {index}: {now.describe()}"
            )
        if result.success != record.success:
            raise DriftError(
                record.task_id, record.trial, len(replayed), "success flag differs"
            )
    return lines


def cmd_inspect_memory(
    *,
    memory_paths: Sequence[Path],
    embedder: EmbeddingProvider,
    query: str | None = None,
    top: int = 5,
) -> list[str]:
    memory = load_memories(memory_paths)
    lines = [f"{len(memory)} log(s) from {memory.source_label or '<empty>'}"]
    for environment, count in sorted(memory.environments().items()):
        lines.append(f"  {environment}: {count}")
    if query:
        ranking = rank_memory(embedder, query, memory)
        lines.append(f"Top {min(top, len(ranking))} for {query!r}:")
        for rank, entry in enumerate(ranking.entries[:top]):
            log = memory[entry.memory_index]
            lines.append(
                f"  {rank}. {entry.score:.3f} [{log.environment}] {log.instruction}"
            )
    return lines


# --- tables ------------------------------------------------------------------


def _render_table(header: list[str], body: list[list[str]]) -> str:
    widths = [
        max(len(row[col]) for row in [header, *body]) for col in range(len(header))
    ]
    lines = []
    for row in [header, *body]:
        lines.append(
            "  ".join(
                cell.ljust(width) if col == 0 else cell.rjust(width)
                for col, (cell, width) in enumerate(zip(row, widths))
            ).rstrip()
        )
    lines.insert(1, "  ".join("-" * width for width in widths))
    return "\n".join(lines)


def format_suite_table(result: SuiteResult) -> str:
    strategies = list(result.strategies)
    header = ["task", *strategies]
    task_ids = list(next(iter(result.strategies.values())).per_task) if strategies else []
    body = [
        [task_id, *(f"{result.strategies[s].per_task[task_id].rate:.1f}" for s in strategies)]
        for task_id in task_ids
    ]
    body.append(
        [
            "mean ± std",
            *(
                f"{result.strategies[s].mean:.1f} ± {result.strategies[s].std:.1f}"
                for s in strategies
            ),
        ]
    )
    return _render_table(header, body)


def format_ablation_table(table: AblationTable) -> str:
    header = ["memory", "suite", *table.columns]
    body = [
        [
            row.memory,
            row.suite,
            *(f"{cell.mean:.1f} ± {cell.std:.1f}" for cell in row.cells),
        ]
        for row in table.rows
    ]
    return _render_table(header, body)

