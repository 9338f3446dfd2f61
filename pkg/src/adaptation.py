"""Porting a remembered program to the current environment.

Two adapters share one protocol: a deterministic rule-based rewrite and an
LLM-backed rewrite driven by the adaptation prompt.
"""

from __future__ import annotations

import logging
import re
from typing import Protocol

from src.composer_dsl import (
    ComposerCommand,
    ComposerStep,
    DefaultPose,
    Grasp,
    MoveAwayFrom,
    MoveRelative,
    MoveTo,
    PlannerProgram,
    render_program,
    resolve_object_name,
)
from src.enums import ReferenceKind
from src.errors import NoMappableObject
from src.prompting import PromptTemplate, build_adaptation_prompt
from src.providers import CompletionProvider, complete
from src.results import extract_program
from src.world_sim import EnvironmentProfile

logger = logging.getLogger(__name__)

_TOKEN_SPLIT = re.compile(r"[^a-z0-9]+")


class Adapter(Protocol):
    name: str

    def adapt(
        self,
        source: PlannerProgram,
        source_env: EnvironmentProfile,
        target_env: EnvironmentProfile,
        scene_objects: list[str],
    ) -> PlannerProgram: ...


def name_tokens(name: str) -> set[str]:
    return {token for token in _TOKEN_SPLIT.split(name.lower()) if token}


def jaccard(a: set[str], b: set[str]) -> float:
    union = a | b
    return len(a & b) / len(union) if union else 0.0


def retarget_object(ref: str, scene_objects: list[str]) -> str:
    """Best scene name for ``ref``: exact match, else highest token overlap.

    Ties go to the shorter name, then lexicographic order.
    """
    exact = resolve_object_name(ref, scene_objects)
    if exact is not None:
        return exact
    tokens = name_tokens(ref)
    scored = sorted(
        (-jaccard(tokens, name_tokens(name)), len(name), name) for name in scene_objects
    )
    if not scored or scored[0][0] == 0.0:
        raise NoMappableObject(ref)
    return scored[0][2]


def _mapped(ref: str, scene_objects: list[str]) -> str:
    # Keep refs the scene already resolves so unchanged steps stay unchanged.
    if resolve_object_name(ref, scene_objects) is not None:
        return ref
    return retarget_object(ref, scene_objects)


def _scaled(value: float, ratio: float) -> float:
    return round(value * ratio, 6)


def _adapt_command(
    command: ComposerCommand, scene_objects: list[str], ratio: float
) -> ComposerCommand:
    match command:
        case Grasp(object_ref=ref):
            return command.model_copy(update={"object_ref": _mapped(ref, scene_objects)})
        case MoveAwayFrom(object_ref=ref, distance=distance):
            return command.model_copy(
                update={
                    "object_ref": _mapped(ref, scene_objects),
                    "distance": _scaled(distance, ratio),
                }
            )
        case MoveTo(target=target, offset_distance=offset):
            return command.model_copy(
                update={
                    "target": _mapped(target, scene_objects),
                    "offset_distance": _scaled(offset, ratio),
                }
            )
        case MoveRelative():
            update: dict[str, object] = {"distance": _scaled(command.distance, ratio)}
            if command.reference is ReferenceKind.OBJECT and command.reference_object:
                update["reference_object"] = _mapped(
                    command.reference_object, scene_objects
                )
            return command.model_copy(update=update)
    return command


def rule_based_adapt(
    source: PlannerProgram,
    source_env: EnvironmentProfile,
    target_env: EnvironmentProfile,
    scene_objects: list[str],
) -> PlannerProgram:
    ratio = target_env.unit_scale / source_env.unit_scale

    steps: list[ComposerStep] = []
    for step in source.steps:
        adapted = _adapt_command(step.command, scene_objects, ratio)
        steps.append(step if adapted == step.command else ComposerStep.from_command(adapted))

    if target_env.requires_default_pose_init and (
        not steps or not isinstance(steps[0].command, DefaultPose)
    ):
        steps.insert(0, ComposerStep.from_command(DefaultPose()))
    ends_in_pose = isinstance(steps[-1].command, DefaultPose)
    if target_env.requires_default_pose_end and not ends_in_pose:
        steps.append(ComposerStep.from_command(DefaultPose()))
    elif (
        source_env.requires_default_pose_end
        and not target_env.requires_default_pose_end
        and ends_in_pose
        and len(steps) > 1
    ):
        # The trailer was the source's convention, not part of the task.
        steps.pop()

    declared = source.declared_objects
    if declared is not None:
        mapped: list[str] = []
        for name in declared:
            try:
                target = resolve_object_name(name, scene_objects) or retarget_object(
                    name, scene_objects
                )
            except NoMappableObject:
                logger.debug("Dropping unmappable declared object %r", name)
                continue
            if target not in mapped:
                mapped.append(target)
        declared = mapped

    return source.model_copy(update={"steps": steps, "declared_objects": declared})


class RuleBasedAdapter:
    name = "rule_based"

    def adapt(
        self,
        source: PlannerProgram,
        source_env: EnvironmentProfile,
        target_env: EnvironmentProfile,
        scene_objects: list[str],
    ) -> PlannerProgram:
        return rule_based_adapt(source, source_env, target_env, scene_objects)


class LlmAdapter:
    """Asks the completion provider to rewrite the program."""

    name = "llm"

    def __init__(self, provider: CompletionProvider, template: PromptTemplate) -> None:
        self.provider = provider
        self.template = template

    def adapt(
        self,
        source: PlannerProgram,
        source_env: EnvironmentProfile,
        target_env: EnvironmentProfile,
        scene_objects: list[str],
    ) -> PlannerProgram:
        prompt = build_adaptation_prompt(
            self.template,
            render_program(source),
            source_env.name,
            target_env=target_env.name,
            object_names=scene_objects,
        )
        return extract_program(complete(self.provider, prompt))
