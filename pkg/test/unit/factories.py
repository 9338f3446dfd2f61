"""Builders shared by the unit tests."""

from __future__ import annotations

from pathlib import Path

from src.config import find_project_root
from src.predicates import HoldingNothing, SuccessPredicate
from src.world_sim import EnvironmentProfile, SceneObject, TaskSpec, WorkspaceBounds

PROJECT_ROOT = find_project_root(Path(__file__))
SUITES = PROJECT_ROOT / "suites"

SMALL_BOUNDS = WorkspaceBounds(low=(-0.6, -0.6, 0.0), high=(0.6, 0.6, 1.0))


def make_profile(name: str = "sim", **overrides: object) -> EnvironmentProfile:
    return EnvironmentProfile(name=name, workspace_bounds=SMALL_BOUNDS, **overrides)


def make_task(
    objects: list[SceneObject],
    *,
    success: SuccessPredicate | None = None,
    profile: EnvironmentProfile | None = None,
    task_id: str = "T1",
    instruction: str = "do the thing",
    max_steps: int = 20,
) -> TaskSpec:
    return TaskSpec(
        id=task_id,
        instruction=instruction,
        environment=profile or make_profile(),
        initial_scene=objects,
        success=success or HoldingNothing(),
        max_steps=max_steps,
    )
