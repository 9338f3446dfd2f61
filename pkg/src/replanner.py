"""Bounded-trial replanning episodes.

Trial 0 asks the provider for a program from scratch. After a failure the
memory is ranked once against the instruction, and trial ``k`` uses the
``k-1``-th ranked success log: adapted to the current environment (``mtp``),
used as is (``no_adaptation``), or ignored (``retry``, which re-executes the
first program).
"""

from __future__ import annotations

import logging
from typing import Mapping

from pydantic import BaseModel, Field

from src.adaptation import Adapter, RuleBasedAdapter
from src.composer_dsl import (
    PlannerProgram,
    parse_program,
    render_program,
    validate_against_scene,
)
from src.enums import AdapterKind, ErrorType, Strategy
from src.errors import (
    NoMappableObject,
    NoProgramFound,
    NotSuccessful,
    ParseError,
    ProviderError,
)
from src.memory_store import Memory, SuccessLog, append_log, filter_by_environment
from src.prompting import (
    PromptTemplate,
    build_generation_prompt,
    build_replan_prompt,
)
from src.providers import CompletionProvider, complete
from src.results import extract_program
from src.retrieval import EmbeddingProvider, RetrievalRanking, rank_memory, retrieve_ith
from src.tracking import BraintrustTracker, TrialTrackingContext
from src.world_sim import (
    EnvironmentProfile,
    ExecutionResult,
    TaskSpec,
    WorldSettings,
    execute_program,
)

logger = logging.getLogger(__name__)


class ReplannerConfig(BaseModel):
    max_trials: int = Field(default=3, ge=1)
    adapter: AdapterKind = AdapterKind.RULE_BASED
    strategy: Strategy = Strategy.MTP
    memory_env_filter: str | None = None

    model_config = {"frozen": True}

    @property
    def trial_budget(self) -> int:
        return 1 if self.strategy is Strategy.SINGLE_SHOT else self.max_trials


class TrialRecord(BaseModel):
    """One trial. ``program`` is ``None`` when no program could be obtained."""

    index: int
    program: PlannerProgram | None = None
    retrieved: SuccessLog | None = None
    adapted: PlannerProgram | None = None
    result: ExecutionResult | None = None
    failure_reason: str | None = None
    error_type: ErrorType | None = None
    degenerate_retrieval: bool = False
    prompt: str | None = Field(default=None, exclude=True, repr=False)

    model_config = {"frozen": True}

    @property
    def success(self) -> bool:
        return self.result is not None and self.result.success


class EpisodeResult(BaseModel):
    task_id: str
    trials: list[TrialRecord] = Field(default_factory=list)
    error: str | None = None

    model_config = {"frozen": True}

    @property
    def success(self) -> bool:
        return self.successful_trial is not None

    @property
    def successful_trial(self) -> TrialRecord | None:
        return next((trial for trial in self.trials if trial.success), None)


def _source_profile(
    environment: str,
    target: EnvironmentProfile,
    profiles: Mapping[str, EnvironmentProfile],
) -> EnvironmentProfile:
    profile = profiles.get(environment)
    if profile is not None:
        return profile
    logger.warning(
        "No profile for memory environment %r; assuming target conventions",
        environment,
    )
    return target.model_copy(
        update={
            "name": environment,
            "requires_default_pose_init": False,
            "requires_default_pose_end": False,
        }
    )


class _Episode:
    """Mutable bookkeeping for one ``run_episode`` call."""

    def __init__(
        self,
        *,
        task: TaskSpec,
        config: ReplannerConfig,
        provider: CompletionProvider,
        settings: WorldSettings,
        tracker: BraintrustTracker | None,
    ) -> None:
        self.task = task
        self.config = config
        self.provider = provider
        self.settings = settings
        self.tracker = tracker
        self.trials: list[TrialRecord] = []

    def _finish(self, trial: TrialRecord) -> TrialRecord:
        self.trials.append(trial)
        logger.info(
            "Task %s trial %d: %s%s",
            self.task.id,
            trial.index,
            "success" if trial.success else "failure",
            f" ({trial.failure_reason})" if trial.failure_reason else "",
        )
        if self.tracker is not None:
            self.tracker.log_trial(
                TrialTrackingContext(
                    task_id=self.task.id,
                    environment=self.task.environment.name,
                    instruction=self.task.instruction,
                    strategy=self.config.strategy,
                    trial=trial.index,
                    prompt=trial.prompt,
                    program=render_program(trial.program) if trial.program else None,
                    retrieved_query=(
                        trial.retrieved.instruction if trial.retrieved else None
                    ),
                    adapted=trial.adapted is not None,
                    success=trial.success,
                    failure_reason=trial.failure_reason,
                    error_type=trial.error_type,
                    provider=self.provider.name,
                )
            )
        return trial

    def execute(self, index: int, program: PlannerProgram, **fields: object) -> TrialRecord:
        for warning in validate_against_scene(program, self.task.object_names):
            logger.debug("Task %s trial %d: %s", self.task.id, index, warning.message)
        result = execute_program(self.task, program, self.settings)
        return self._finish(
            TrialRecord(
                index=index,
                program=program,
                result=result,
                failure_reason=result.failure_reason,
                error_type=None if result.success else ErrorType.EXECUTION_FAILED,
                **fields,  # type: ignore[arg-type]
            )
        )

    def fail(self, index: int, reason: str, error_type: ErrorType, **fields: object) -> TrialRecord:
        return self._finish(
            TrialRecord(
                index=index,
                failure_reason=reason,
                error_type=error_type,
                **fields,  # type: ignore[arg-type]
            )
        )

    def ask(self, index: int, prompt: str, **fields: object) -> TrialRecord:
        try:
            program = extract_program(complete(self.provider, prompt))
        except ProviderError as exc:
            return self.fail(index, str(exc), ErrorType.PROVIDER_ERROR, prompt=prompt, **fields)
        except NoProgramFound as exc:
            return self.fail(index, str(exc), ErrorType.NO_PROGRAM, prompt=prompt, **fields)
        except ParseError as exc:
            return self.fail(index, str(exc), ErrorType.PARSE_ERROR, prompt=prompt, **fields)
        return self.execute(index, program, prompt=prompt, **fields)


def run_episode(
    task: TaskSpec,
    memory: Memory,
    config: ReplannerConfig,
    provider: CompletionProvider,
    embedder: EmbeddingProvider,
    *,
    template: PromptTemplate,
    adapter: Adapter | None = None,
    settings: WorldSettings | None = None,
    profiles: Mapping[str, EnvironmentProfile] | None = None,
    tracker: BraintrustTracker | None = None,
) -> EpisodeResult:
    """Run up to ``config.trial_budget`` trials; stop at the first success."""
    episode = _Episode(
        task=task,
        config=config,
        provider=provider,
        settings=settings or WorldSettings(),
        tracker=tracker,
    )
    adapter = adapter or RuleBasedAdapter()
    profiles = profiles or {}
    strategy = config.strategy

    generation_prompt = build_generation_prompt(
        template, task.instruction, task.object_names
    )
    first = episode.ask(0, generation_prompt)
    if first.success or config.trial_budget == 1:
        return EpisodeResult(task_id=task.id, trials=episode.trials)

    pool = memory
    if config.memory_env_filter:
        pool = filter_by_environment(memory, config.memory_env_filter)
    ranking: RetrievalRanking | None = None
    if strategy.uses_memory and len(pool) > 0:
        ranking = rank_memory(embedder, task.instruction, pool)

    last_failed = first.program
    for i in range(config.trial_budget - 1):
        index = i + 1
        if ranking is None or i >= len(ranking):
            # Retry semantics: re-run the first program, or re-ask if there was none.
            if first.program is not None:
                trial = episode.execute(index, first.program)
            else:
                trial = episode.ask(index, generation_prompt)
        else:
            trial = _memory_trial(
                episode,
                index=index,
                retrieved=retrieve_ith(ranking, pool, i),
                last_failed=last_failed,
                adapter=adapter,
                profiles=profiles,
                template=template,
            )
        if trial.success:
            break
        if trial.program is not None:
            last_failed = trial.program

    return EpisodeResult(task_id=task.id, trials=episode.trials)


def _memory_trial(
    episode: _Episode,
    *,
    index: int,
    retrieved: SuccessLog,
    last_failed: PlannerProgram | None,
    adapter: Adapter,
    profiles: Mapping[str, EnvironmentProfile],
    template: PromptTemplate,
) -> TrialRecord:
    task = episode.task
    source = parse_program(retrieved.code)
    adapted: PlannerProgram | None = None
    if episode.config.strategy.adapts:
        source_env = _source_profile(retrieved.environment, task.environment, profiles)
        try:
            adapted = adapter.adapt(source, source_env, task.environment, task.object_names)
        except NoMappableObject as exc:
            return episode.fail(
                index, str(exc), ErrorType.ADAPTATION_ERROR, retrieved=retrieved
            )
        except ProviderError as exc:
            return episode.fail(
                index, str(exc), ErrorType.PROVIDER_ERROR, retrieved=retrieved
            )
        except (NoProgramFound, ParseError) as exc:
            return episode.fail(
                index, str(exc), ErrorType.ADAPTATION_ERROR, retrieved=retrieved
            )

    reference = adapted if adapted is not None else source
    degenerate = last_failed is not None and render_program(reference) == render_program(
        last_failed
    )
    if degenerate:
        logger.warning(
            "Task %s trial %d: memory program equals the failed program", task.id, index
        )
    prompt = build_replan_prompt(
        template,
        render_program(last_failed) if last_failed is not None else None,
        render_program(reference),
        task.instruction,
        memory_env=retrieved.environment,
    )
    return episode.ask(
        index,
        prompt,
        retrieved=retrieved,
        adapted=adapted,
        degenerate_retrieval=degenerate,
    )


def commit_success(memory: Memory, task: TaskSpec, episode: EpisodeResult) -> Memory:
    trial = episode.successful_trial
    if trial is None or trial.program is None:
        raise NotSuccessful(f"episode for task {task.id} did not succeed")
    log = SuccessLog(
        environment=task.environment.name,
        instruction=task.instruction,
        code=render_program(trial.program),
    )
    return append_log(memory, log)

