"""Deterministic kinematic tabletop world.

Positions are metres in a frame with x to the right, y forward and z up.
Execution is pure: every transition returns a new :class:`WorldState`.
Held objects follow the gripper; releasing drops the object onto whatever
supports it (a container floor or the table at z=0).
"""

from __future__ import annotations

import logging
import math

from pydantic import BaseModel, Field, model_validator

from src.composer_dsl import (
    CloseGripper,
    ComposerCommand,
    DefaultPose,
    Grasp,
    MoveAwayFrom,
    MoveRelative,
    MoveTo,
    OpenGripper,
    PlannerProgram,
    Rotate,
    Unknown,
    render_command,
    resolve_object_name,
)
from src.enums import NamingStyle, ReferenceKind, Region, StepOutcome, UnknownStepPolicy
from src.errors import InvalidTask
from src.predicates import SuccessPredicate, evaluate, names_referenced

logger = logging.getLogger(__name__)

Vec3 = tuple[float, float, float]

_COINCIDENT = 1e-9


class Container(BaseModel):
    """Open cylinder standing on its floor at the object's position."""

    radius: float = Field(gt=0.0)
    height: float = Field(gt=0.0)

    model_config = {"frozen": True}


class SceneObject(BaseModel):
    name: str
    position: Vec3
    graspable: bool = True
    container: Container | None = None
    yaw: float = 0.0

    model_config = {"frozen": True}


class WorkspaceBounds(BaseModel):
    low: Vec3
    high: Vec3

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _validate_extent(self) -> "WorkspaceBounds":
        if any(lo >= hi for lo, hi in zip(self.low, self.high)):
            raise ValueError("workspace bounds must have low < high on every axis")
        return self

    def contains(self, point: Vec3) -> bool:
        return all(lo <= v <= hi for lo, v, hi in zip(self.low, point, self.high))

    def clamp(self, point: Vec3) -> tuple[Vec3, bool]:
        clamped = tuple(
            min(hi, max(lo, v)) for lo, v, hi in zip(self.low, point, self.high)
        )
        return clamped, clamped != tuple(point)  # type: ignore[return-value]


class EnvironmentProfile(BaseModel):
    """Conventions of one execution environment."""

    name: str
    naming_style: NamingStyle = NamingStyle.PLAIN
    requires_default_pose_init: bool = False
    requires_default_pose_end: bool = False
    workspace_bounds: WorkspaceBounds
    top_clearance: float = Field(default=0.10, gt=0.0)
    default_pose: Vec3 = (0.0, 0.0, 0.5)
    unit_scale: float = Field(default=1.0, gt=0.0)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _default_pose_in_bounds(self) -> "EnvironmentProfile":
        if not self.workspace_bounds.contains(self.default_pose):
            raise ValueError("default_pose must lie inside workspace_bounds")
        return self


class WorldSettings(BaseModel):
    init_drift: float = Field(default=0.05, ge=0.0)
    grasp_radius: float = Field(default=0.02, gt=0.0)
    unknown_step_policy: UnknownStepPolicy = UnknownStepPolicy.FAIL_STEP

    model_config = {"frozen": True}


class TaskSpec(BaseModel):
    id: str
    instruction: str
    environment: EnvironmentProfile
    initial_scene: list[SceneObject]
    success: SuccessPredicate
    max_steps: int = Field(default=20, ge=1)
    paraphrases: list[str] = Field(default_factory=list)

    model_config = {"frozen": True}

    @model_validator(mode="after")
    def _validate_scene(self) -> "TaskSpec":
        names = [obj.name for obj in self.initial_scene]
        if len(set(names)) != len(names):
            raise ValueError(f"task {self.id}: duplicate object names")
        missing = names_referenced(self.success) - set(names)
        if missing:
            raise ValueError(
                f"task {self.id}: predicate references unknown object(s) "
                f"{sorted(missing)}"
            )
        return self

    @property
    def object_names(self) -> list[str]:
        return [obj.name for obj in self.initial_scene]


class StepRecord(BaseModel):
    raw: str
    command: ComposerCommand
    outcome: StepOutcome
    gripper_position: Vec3
    holding: str | None
    detail: str | None = None

    model_config = {"frozen": True}


class WorldState(BaseModel):
    objects: dict[str, SceneObject]
    initial_objects: dict[str, SceneObject]
    gripper_position: Vec3
    gripper_open: bool = True
    gripper_yaw: float = 0.0
    holding: str | None = None
    at_default_pose: bool = False
    step_trace: tuple[StepRecord, ...] = ()

    model_config = {"frozen": True}


class ExecutionResult(BaseModel):
    success: bool
    final_state: WorldState
    trace: list[StepRecord]
    failure_reason: str | None = None
    history: list[WorldState] = Field(default_factory=list, exclude=True, repr=False)

    model_config = {"frozen": True}


def reset(task: TaskSpec) -> WorldState:
    profile = task.environment
    bounds = profile.workspace_bounds
    for obj in task.initial_scene:
        if not bounds.contains(obj.position):
            raise InvalidTask(
                f"task {task.id}: object '{obj.name}' at {obj.position} "
                "is outside the workspace"
            )
    objects = {obj.name: obj for obj in task.initial_scene}
    return WorldState(
        objects=objects,
        initial_objects=dict(objects),
        gripper_position=profile.default_pose,
    )


# --- transitions -------------------------------------------------------------


def _add(p: Vec3, q: Vec3, scale: float = 1.0) -> Vec3:
    return (p[0] + q[0] * scale, p[1] + q[1] * scale, p[2] + q[2] * scale)


def _xy_distance(p: Vec3, q: Vec3) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _support_height(state: WorldState, released: str, position: Vec3) -> float:
    floors = [
        obj.position[2]
        for name, obj in state.objects.items()
        if name != released
        and obj.container is not None
        and _xy_distance(obj.position, position) <= obj.container.radius
    ]
    return max(0.0, max(floors, default=0.0))


def _record(
    state: WorldState,
    raw: str,
    command: ComposerCommand,
    outcome: StepOutcome,
    detail: str | None = None,
) -> WorldState:
    record = StepRecord(
        raw=raw,
        command=command,
        outcome=outcome,
        gripper_position=state.gripper_position,
        holding=state.holding,
        detail=detail,
    )
    return state.model_copy(update={"step_trace": (*state.step_trace, record)})


def _move_gripper(
    state: WorldState, target: Vec3, profile: EnvironmentProfile, **changes: object
) -> tuple[WorldState, bool]:
    position, clamped = profile.workspace_bounds.clamp(target)
    objects = state.objects
    if state.holding is not None:
        held = objects[state.holding]
        objects = {**objects, state.holding: held.model_copy(update={"position": position})}
    update = {
        "gripper_position": position,
        "objects": objects,
        "at_default_pose": False,
        **changes,
    }
    return state.model_copy(update=update), clamped


def _resolve(state: WorldState, ref: str) -> str | None:
    return resolve_object_name(ref, state.objects)


def _apply(
    state: WorldState,
    command: ComposerCommand,
    profile: EnvironmentProfile,
    settings: WorldSettings,
    drift: float,
) -> tuple[WorldState, StepOutcome, str | None]:
    failed = StepOutcome.FAILED_STEP
    match command:
        case Grasp(object_ref=ref):
            name = _resolve(state, ref)
            if name is None:
                return state, failed, f"unknown object '{ref}'"
            if state.holding is not None:
                return state, failed, f"already holding '{state.holding}'"
            obj = state.objects[name]
            if not obj.graspable:
                return state, failed, f"'{name}' is not graspable"
            moved, _ = _move_gripper(state, obj.position, profile)
            return (
                moved.model_copy(update={"gripper_open": False, "holding": name}),
                StepOutcome.OK,
                None,
            )

        case OpenGripper():
            if state.holding is None:
                return state.model_copy(update={"gripper_open": True}), StepOutcome.OK, None
            held = state.objects[state.holding]
            x, y, _ = state.gripper_position
            z = _support_height(state, state.holding, state.gripper_position)
            released = held.model_copy(update={"position": (x, y, z)})
            return (
                state.model_copy(
                    update={
                        "gripper_open": True,
                        "holding": None,
                        "objects": {**state.objects, held.name: released},
                    }
                ),
                StepOutcome.OK,
                None,
            )

        case CloseGripper():
            closed = state.model_copy(update={"gripper_open": False})
            if state.holding is not None:
                return closed, StepOutcome.OK, None
            candidates = sorted(
                (math.dist(obj.position, state.gripper_position), name)
                for name, obj in state.objects.items()
                if obj.graspable
            )
            if candidates and candidates[0][0] <= settings.grasp_radius:
                name = candidates[0][1]
                held = state.objects[name].model_copy(
                    update={"position": state.gripper_position}
                )
                update = {"holding": name, "objects": {**state.objects, name: held}}
                return closed.model_copy(update=update), StepOutcome.OK, None
            return closed, StepOutcome.OK, "closed on nothing"

        case MoveRelative():
            if command.reference is ReferenceKind.OBJECT:
                name = _resolve(state, command.reference_object or "")
                if name is None:
                    return state, failed, f"unknown object '{command.reference_object}'"
                origin = state.objects[name].position
            else:
                origin = state.gripper_position
            target = _add(origin, command.direction.unit(), command.distance)
            target = (target[0], target[1], target[2] - drift)
            moved, clamped = _move_gripper(state, target, profile)
            return moved, StepOutcome.PARTIAL if clamped else StepOutcome.OK, None

        case MoveTo():
            name = _resolve(state, command.target)
            if name is None:
                return state, failed, f"unknown object '{command.target}'"
            target = state.objects[name].position
            if command.region is Region.TOP:
                target = _add(target, (0.0, 0.0, profile.top_clearance))
            if command.offset_direction is not None:
                target = _add(target, command.offset_direction.unit(), command.offset_distance)
            moved, clamped = _move_gripper(state, target, profile)
            return moved, StepOutcome.PARTIAL if clamped else StepOutcome.OK, None

        case Rotate():
            delta = command.sense.sign * command.angle
            update: dict[str, object] = {"gripper_yaw": state.gripper_yaw + delta}
            if state.holding is not None:
                held = state.objects[state.holding]
                update["objects"] = {
                    **state.objects,
                    held.name: held.model_copy(update={"yaw": held.yaw + delta}),
                }
            return state.model_copy(update=update), StepOutcome.OK, None

        case DefaultPose():
            moved, _ = _move_gripper(state, profile.default_pose, profile, at_default_pose=True)
            return moved, StepOutcome.OK, None

        case MoveAwayFrom(object_ref=ref, distance=distance):
            name = _resolve(state, ref)
            if name is None:
                return state, failed, f"unknown object '{ref}'"
            anchor = state.objects[name].position
            gx, gy, gz = state.gripper_position
            dx, dy = gx - anchor[0], gy - anchor[1]
            norm = math.hypot(dx, dy)
            if norm < _COINCIDENT:
                dx, dy, norm = 1.0, 0.0, 1.0
            target = (gx + distance * dx / norm, gy + distance * dy / norm, gz)
            moved, clamped = _move_gripper(state, target, profile)
            return moved, StepOutcome.PARTIAL if clamped else StepOutcome.OK, None

        case Unknown(raw=raw):
            return state, failed, f"unrecognised command {raw!r}"

    raise TypeError(f"unsupported command: {command!r}")


def step(
    state: WorldState,
    command: ComposerCommand,
    profile: EnvironmentProfile,
    *,
    raw: str | None = None,
    drift: float = 0.0,
    settings: WorldSettings | None = None,
) -> tuple[WorldState, StepOutcome]:
    """Apply one command. Failed steps leave the state unchanged apart from the trace."""
    settings = settings or WorldSettings()
    applied_drift = drift if isinstance(command, MoveRelative) else 0.0
    new_state, outcome, detail = _apply(state, command, profile, settings, applied_drift)
    if raw is None:
        raw = render_command(command)
    return _record(new_state, raw, command, outcome, detail), outcome


def execute_program(
    task: TaskSpec, program: PlannerProgram, settings: WorldSettings | None = None
) -> ExecutionResult:
    settings = settings or WorldSettings()
    profile = task.environment
    state = reset(task)
    history = [state]

    if not program.steps:
        return ExecutionResult(
            success=False,
            final_state=state,
            trace=[],
            failure_reason="program has no steps",
            history=history,
        )

    drift = 0.0
    if profile.requires_default_pose_init and not isinstance(
        program.steps[0].command, DefaultPose
    ):
        drift = settings.init_drift

    hard_failure: str | None = None
    for index, program_step in enumerate(program.steps[: task.max_steps]):
        state, outcome = step(
            state,
            program_step.command,
            profile,
            raw=program_step.raw,
            drift=drift,
            settings=settings,
        )
        history.append(state)
        if (
            outcome is StepOutcome.FAILED_STEP
            and isinstance(program_step.command, Unknown)
            and settings.unknown_step_policy is UnknownStepPolicy.HARD_FAIL
        ):
            hard_failure = f"step {index} could not be interpreted: {program_step.raw!r}"
            break

    trace = list(state.step_trace)
    if hard_failure is not None:
        return ExecutionResult(
            success=False,
            final_state=state,
            trace=trace,
            failure_reason=hard_failure,
            history=history,
        )

    success = evaluate(task.success, state, history)
    failure_reason = None
    if not success:
        failed_steps = [
            f"step {i} ({r.raw!r}): {r.detail}"
            for i, r in enumerate(trace)
            if r.outcome is StepOutcome.FAILED_STEP
        ]
        failure_reason = "success condition not met"
        if failed_steps:
            failure_reason += "; failed " + "; ".join(failed_steps)
        if len(program.steps) > task.max_steps:
            failure_reason += f"; truncated to {task.max_steps} steps"
    logger.debug(
        "Task %s executed %d step(s): success=%s", task.id, len(trace), success
    )
    return ExecutionResult(
        success=success,
        final_state=state,
        trace=trace,
        failure_reason=failure_reason,
        history=history,
    )
