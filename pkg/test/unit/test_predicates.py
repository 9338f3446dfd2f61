from __future__ import annotations

import pytest
from pydantic import TypeAdapter

from src.errors import UnknownObject
from src.predicates import (
    Above,
    And,
    DisplacedAtLeast,
    Ever,
    GripperOpenAtEnd,
    HoldingNothing,
    Inside,
    Not,
    Or,
    SuccessPredicate,
    YawChangedBy,
    evaluate,
    names_referenced,
)
from src.world_sim import Container, SceneObject, WorldState

CUP = SceneObject(
    name="cup",
    position=(0.2, 0.0, 0.0),
    graspable=False,
    container=Container(radius=0.04, height=0.1),
)


def _state(*objects: SceneObject, initial: tuple[SceneObject, ...] = (), **fields: object) -> WorldState:
    current = {obj.name: obj for obj in objects}
    start = {obj.name: obj for obj in initial} or dict(current)
    return WorldState(
        objects=current,
        initial_objects=start,
        gripper_position=(0.0, 0.0, 0.5),
        **fields,
    )


def _lid(z: float, x: float = 0.2) -> SceneObject:
    return SceneObject(name="lid", position=(x, 0.0, z))


def test_predicates_load_from_json_by_kind() -> None:
    adapter = TypeAdapter(SuccessPredicate)
    predicate = adapter.validate_python(
        {
            "kind": "and",
            "items": [
                {"kind": "ever", "item": {"kind": "above", "a": "lid", "b": "cup", "min_dz": 0.05}},
                {"kind": "not", "item": {"kind": "inside", "a": "lid", "container": "cup"}},
            ],
        }
    )
    assert predicate == And(
        items=[
            Ever(item=Above(a="lid", b="cup", min_dz=0.05)),
            Not(item=Inside(a="lid", container="cup")),
        ]
    )
    assert names_referenced(predicate) == {"lid", "cup"}


def test_above_measures_from_container_rim() -> None:
    above = Above(a="lid", b="cup", min_dz=0.05)
    assert evaluate(above, _state(CUP, _lid(0.2)))
    assert not evaluate(above, _state(CUP, _lid(0.12)))
    # Outside the container footprint.
    assert not evaluate(above, _state(CUP, _lid(0.3, x=0.3)))


def test_inside_checks_footprint_and_height() -> None:
    inside = Inside(a="lid", container="cup")
    assert evaluate(inside, _state(CUP, _lid(0.1)))
    assert evaluate(inside, _state(CUP, _lid(0.0)))
    assert not evaluate(inside, _state(CUP, _lid(0.2)))
    assert not evaluate(inside, _state(CUP, _lid(0.0, x=0.3)))
    # Containers only.
    assert not evaluate(Inside(a="cup", container="lid"), _state(CUP, _lid(0.1)))


def test_displaced_compares_against_initial_scene() -> None:
    block = SceneObject(name="block", position=(0.0, 0.0, 0.02))
    lifted = block.model_copy(update={"position": (0.0, 0.0, 0.07)})
    state = _state(lifted, initial=(block,))

    assert evaluate(DisplacedAtLeast(a="block", axis="z", distance=0.04), state)
    assert not evaluate(DisplacedAtLeast(a="block", axis="z", distance=0.06), state)
    assert not evaluate(DisplacedAtLeast(a="block", axis="z", distance=0.04, sign=-1), state)


def test_yaw_changed_wraps_around() -> None:
    box = SceneObject(name="box", position=(0.0, 0.0, 0.0), yaw=10.0)
    turned = box.model_copy(update={"yaw": 10.0 + 450.0})
    state = _state(turned, initial=(box,))

    assert evaluate(YawChangedBy(a="box", degrees=90.0), state)
    assert not evaluate(YawChangedBy(a="box", degrees=-90.0), state)


def test_gripper_and_holding_predicates() -> None:
    state = _state(CUP, gripper_open=False, holding="cup")
    assert not evaluate(GripperOpenAtEnd(), state)
    assert not evaluate(HoldingNothing(), state)
    assert evaluate(Or(items=[HoldingNothing(), Not(item=GripperOpenAtEnd())]), state)


def test_ever_uses_history_and_falls_back_to_final_state() -> None:
    above = Above(a="lid", b="cup", min_dz=0.05)
    early, late = _state(CUP, _lid(0.25)), _state(CUP, _lid(0.1))

    assert evaluate(Ever(item=above), late, [early, late])
    assert not evaluate(Ever(item=above), late, [late])
    assert not evaluate(Ever(item=above), late)


def test_unknown_object_raises() -> None:
    with pytest.raises(UnknownObject):
        evaluate(Inside(a="ghost", container="cup"), _state(CUP))


def test_empty_conjunction_is_vacuously_true() -> None:
    state = _state(CUP)
    assert evaluate(And(items=[]), state)
    assert not evaluate(Or(items=[]), state)
    assert TypeAdapter(SuccessPredicate).validate_python({"kind": "and", "items": []}) == And()
