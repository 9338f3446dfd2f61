"""Success predicates over world states.

Predicates are plain data (they load from suite JSON) and are evaluated by
:func:`evaluate`. ``Ever`` looks at the whole execution history when one is
supplied; every other predicate reads the final state only.
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Annotated, Literal, Sequence

from pydantic import BaseModel, Field

from src.errors import UnknownObject

if TYPE_CHECKING:
    from src.world_sim import SceneObject, WorldState

EPSILON = 1e-9
DEFAULT_ABOVE_XY = 0.05

_AXES = {"x": 0, "y": 1, "z": 2}


class Above(BaseModel):
    """``a`` rests at least ``min_dz`` above the top of ``b``.

    The top of a container is its rim; other objects use their position.
    """

    kind: Literal["above"] = "above"
    a: str
    b: str
    min_dz: float = 0.0
    max_xy: float | None = None

    model_config = {"frozen": True}


class Inside(BaseModel):
    kind: Literal["inside"] = "inside"
    a: str
    container: str

    model_config = {"frozen": True}


class DisplacedAtLeast(BaseModel):
    kind: Literal["displaced"] = "displaced"
    a: str
    axis: Literal["x", "y", "z"]
    distance: float = Field(ge=0.0)
    sign: Literal[1, -1] = 1

    model_config = {"frozen": True}


class GripperOpenAtEnd(BaseModel):
    kind: Literal["gripper_open"] = "gripper_open"

    model_config = {"frozen": True}


class HoldingNothing(BaseModel):
    kind: Literal["holding_nothing"] = "holding_nothing"

    model_config = {"frozen": True}


class YawChangedBy(BaseModel):
    kind: Literal["yaw_changed"] = "yaw_changed"
    a: str
    degrees: float
    tolerance: float = Field(default=5.0, ge=0.0)

    model_config = {"frozen": True}


class And(BaseModel):
    kind: Literal["and"] = "and"
    items: list[SuccessPredicate] = Field(default_factory=list)

    model_config = {"frozen": True}


class Or(BaseModel):
    kind: Literal["or"] = "or"
    items: list[SuccessPredicate] = Field(default_factory=list)

    model_config = {"frozen": True}


class Not(BaseModel):
    kind: Literal["not"] = "not"
    item: SuccessPredicate

    model_config = {"frozen": True}


class Ever(BaseModel):
    """Holds if ``item`` held in any state of the execution."""

    kind: Literal["ever"] = "ever"
    item: SuccessPredicate

    model_config = {"frozen": True}


SuccessPredicate = Annotated[
    Above
    | Inside
    | DisplacedAtLeast
    | GripperOpenAtEnd
    | HoldingNothing
    | YawChangedBy
    | And
    | Or
    | Not
    | Ever,
    Field(discriminator="kind"),
]

for _model in (And, Or, Not, Ever):
    _model.model_rebuild()


def names_referenced(predicate: SuccessPredicate) -> set[str]:
    match predicate:
        case Above(a=a, b=b):
            return {a, b}
        case Inside(a=a, container=container):
            return {a, container}
        case DisplacedAtLeast(a=a) | YawChangedBy(a=a):
            return {a}
        case And(items=items) | Or(items=items):
            return set().union(*(names_referenced(item) for item in items))
        case Not(item=item) | Ever(item=item):
            return names_referenced(item)
    return set()


def _lookup(objects: dict[str, SceneObject], name: str) -> SceneObject:
    try:
        return objects[name]
    except KeyError:
        raise UnknownObject(name) from None


def _xy_distance(p: Sequence[float], q: Sequence[float]) -> float:
    return math.hypot(p[0] - q[0], p[1] - q[1])


def _yaw_difference(actual: float, expected: float) -> float:
    return abs(((actual - expected + 180.0) % 360.0) - 180.0)


def evaluate(
    predicate: SuccessPredicate,
    state: WorldState,
    history: Sequence[WorldState] | None = None,
) -> bool:
    objects = state.objects
    match predicate:
        case Above():
            a = _lookup(objects, predicate.a)
            b = _lookup(objects, predicate.b)
            top = b.position[2] + (b.container.height if b.container else 0.0)
            if a.position[2] - top < predicate.min_dz - EPSILON:
                return False
            max_xy = predicate.max_xy
            if max_xy is None:
                max_xy = b.container.radius if b.container else DEFAULT_ABOVE_XY
            return _xy_distance(a.position, b.position) <= max_xy + EPSILON
        case Inside():
            a = _lookup(objects, predicate.a)
            c = _lookup(objects, predicate.container)
            if c.container is None:
                return False
            floor = c.position[2]
            return (
                _xy_distance(a.position, c.position) <= c.container.radius + EPSILON
                and floor - EPSILON <= a.position[2] <= floor + c.container.height + EPSILON
            )
        case DisplacedAtLeast():
            current = _lookup(objects, predicate.a)
            initial = _lookup(state.initial_objects, predicate.a)
            axis = _AXES[predicate.axis]
            delta = current.position[axis] - initial.position[axis]
            return predicate.sign * delta >= predicate.distance - EPSILON
        case GripperOpenAtEnd():
            return state.gripper_open
        case HoldingNothing():
            return state.holding is None
        case YawChangedBy():
            current = _lookup(objects, predicate.a)
            initial = _lookup(state.initial_objects, predicate.a)
            delta = current.yaw - initial.yaw
            return _yaw_difference(delta, predicate.degrees) <= predicate.tolerance + EPSILON
        case And(items=items):
            return all(evaluate(item, state, history) for item in items)
        case Or(items=items):
            return any(evaluate(item, state, history) for item in items)
        case Not(item=item):
            return not evaluate(item, state, history)
        case Ever(item=item):
            states = history if history else [state]
            return any(evaluate(item, past, history) for past in states)
    raise TypeError(f"unsupported predicate: {predicate!r}")
