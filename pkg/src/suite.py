from __future__ import annotations

import json
import logging
import random
from pathlib import Path
from typing import Any

from pydantic import BaseModel, Field, ValidationError

from src.config import format_validation_errors
from src.errors import InvalidTask, IoError
from src.predicates import SuccessPredicate
from src.prompting import PromptExample
from src.world_sim import EnvironmentProfile, SceneObject, TaskSpec

logger = logging.getLogger(__name__)


class EnvironmentEntry(EnvironmentProfile):
    """Profile as written in a suite file, plus its prompt examples."""

    examples: list[PromptExample] = Field(default_factory=list)


class TaskEntry(BaseModel):
    id: str
    instruction: str = Field(min_length=1)
    environment: str
    objects: list[SceneObject]
    success: SuccessPredicate
    max_steps: int = Field(default=20, ge=1)
    paraphrases: list[str] = Field(default_factory=list)


class SuiteFile(BaseModel):
    name: str = ""
    environments: list[EnvironmentEntry]
    tasks: list[TaskEntry]


class Suite(BaseModel):
    name: str
    profiles: dict[str, EnvironmentProfile]
    examples: dict[str, list[PromptExample]]
    tasks: list[TaskSpec]

    model_config = {"frozen": True}

    def task(self, task_id: str) -> TaskSpec:
        for task in self.tasks:
            if task.id == task_id:
                return task
        raise InvalidTask(f"suite {self.name} has no task '{task_id}'")


def _build_suite(raw: Any, *, default_name: str) -> Suite:
    try:
        parsed = SuiteFile.model_validate(raw)
    except ValidationError as exc:
        raise InvalidTask(
            f"invalid suite {default_name}:\n{format_validation_errors(exc)}"
        ) from exc

    profiles: dict[str, EnvironmentProfile] = {}
    examples: dict[str, list[PromptExample]] = {}
    for entry in parsed.environments:
        if entry.name in profiles:
            raise InvalidTask(f"duplicate environment '{entry.name}'")
        profiles[entry.name] = EnvironmentProfile.model_validate(
            entry.model_dump(exclude={"examples"})
        )
        examples[entry.name] = list(entry.examples)

    tasks: list[TaskSpec] = []
    seen: set[str] = set()
    for entry in parsed.tasks:
        if entry.id in seen:
            raise InvalidTask(f"duplicate task id '{entry.id}'")
        seen.add(entry.id)
        if entry.environment not in profiles:
            raise InvalidTask(
                f"task {entry.id}: unknown environment '{entry.environment}'"
            )
        try:
            tasks.append(
                TaskSpec(
                    id=entry.id,
                    instruction=entry.instruction,
                    environment=profiles[entry.environment],
                    initial_scene=entry.objects,
                    success=entry.success,
                    max_steps=entry.max_steps,
                    paraphrases=entry.paraphrases,
                )
            )
        except ValidationError as exc:
            raise InvalidTask(format_validation_errors(exc)) from exc

    return Suite(
        name=parsed.name or default_name,
        profiles=profiles,
        examples=examples,
        tasks=tasks,
    )


def load_suite(path: Path) -> Suite:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise IoError(path, exc) from exc
    except json.JSONDecodeError as exc:
        raise InvalidTask(f"invalid JSON in {path}: {exc}") from exc
    suite = _build_suite(raw, default_name=path.stem)
    logger.debug("Loaded suite %s with %d task(s)", suite.name, len(suite.tasks))
    return suite


def load_suite_data(raw: Any, *, name: str = "<in-memory>") -> Suite:
    return _build_suite(raw, default_name=name)


def jitter_task(task: TaskSpec, rng: random.Random, amount: float) -> TaskSpec:
    """Shift the whole scene by one horizontal offset, clamped to the workspace."""
    if amount <= 0:
        return task
    dx = rng.uniform(-amount, amount)
    dy = rng.uniform(-amount, amount)
    bounds = task.environment.workspace_bounds
    scene = []
    for obj in task.initial_scene:
        x, y, z = obj.position
        position, _ = bounds.clamp((x + dx, y + dy, z))
        scene.append(obj.model_copy(update={"position": position}))
    return task.model_copy(update={"initial_scene": scene})


def perturb_tasks(
    tasks: list[TaskSpec], *, seed: int, repeat: int, amount: float
) -> list[TaskSpec]:
    """Per-task RNG keyed on (seed, repeat, task id); scheduling cannot change it."""
    return [
        jitter_task(task, random.Random(f"{seed}:{repeat}:{task.id}"), amount)
        for task in tasks
    ]


def expand_paraphrases(tasks: list[TaskSpec]) -> list[TaskSpec]:
    expanded: list[TaskSpec] = []
    for task in tasks:
        for k, text in enumerate(task.paraphrases, start=1):
            expanded.append(
                task.model_copy(
                    update={"id": f"{task.id}~p{k}", "instruction": text, "paraphrases": []}
                )
            )
    return expanded
