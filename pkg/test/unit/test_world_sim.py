from __future__ import annotations

import random

import pytest
from factories import make_profile, make_task

from src.composer_dsl import (
    CloseGripper,
    ComposerStep,
    DefaultPose,
    Grasp,
    MoveAwayFrom,
    MoveRelative,
    MoveTo,
    OpenGripper,
    PlannerProgram,
    Rotate,
    Unknown,
    parse_program,
)
from src.enums import Direction, Region, Sense, StepOutcome, UnknownStepPolicy
from src.errors import InvalidTask
from src.predicates import And, DisplacedAtLeast, HoldingNothing, Inside
from src.world_sim import (
    Container,
    SceneObject,
    WorldSettings,
    execute_program,
    reset,
    step,
)

BIN = SceneObject(
    name="bin",
    position=(-0.2, -0.2, 0.0),
    graspable=False,
    container=Container(radius=0.08, height=0.15),
)
RUBBISH = SceneObject(name="rubbish", position=(0.2, 0.2, 0.0))
BLOCK = SceneObject(name="block", position=(-0.1, 0.1, 0.02))


def _program(*lines: str) -> PlannerProgram:
    return PlannerProgram(steps=[ComposerStep.from_raw(line) for line in lines])


def test_reset_places_gripper_at_default_pose() -> None:
    state = reset(make_task([BIN, RUBBISH]))
    assert state.gripper_position == (0.0, 0.0, 0.5)
    assert state.gripper_open is True
    assert state.holding is None
    assert state.initial_objects == state.objects


def test_reset_rejects_objects_outside_workspace() -> None:
    far = SceneObject(name="far", position=(2.0, 0.0, 0.0))
    with pytest.raises(InvalidTask):
        reset(make_task([far]))


def test_task_rejects_predicate_on_missing_object() -> None:
    with pytest.raises(ValueError, match="unknown object"):
        make_task([RUBBISH], success=Inside(a="rubbish", container="bin"))


def test_grasp_move_release_into_container() -> None:
    task = make_task([BIN, RUBBISH], success=Inside(a="rubbish", container="bin"))
    program = _program(
        "grasp the rubbish",
        "back to default pose",
        "move to the top of the bin",
        "open gripper",
    )

    result = execute_program(task, program)

    assert result.success
    assert result.failure_reason is None
    assert result.final_state.objects["rubbish"].position == pytest.approx((-0.2, -0.2, 0.0))
    assert [record.outcome for record in result.trace] == [StepOutcome.OK] * 4
    assert result.trace[2].gripper_position == pytest.approx((-0.2, -0.2, 0.1))
    assert len(result.history) == 5


def test_release_outside_container_drops_to_table() -> None:
    task = make_task([BIN, RUBBISH], success=Inside(a="rubbish", container="bin"))
    result = execute_program(
        task, _program("grasp the rubbish", "open gripper", "move to the top of the bin")
    )

    assert not result.success
    assert result.final_state.objects["rubbish"].position == pytest.approx((0.2, 0.2, 0.0))
    assert result.failure_reason == "success condition not met"


def test_failed_steps_leave_state_unchanged() -> None:
    profile = make_profile()
    state = reset(make_task([BIN, RUBBISH]))

    for command in (
        Grasp(object_ref="ghost"),
        Grasp(object_ref="bin"),
        MoveTo(target="ghost"),
        MoveAwayFrom(object_ref="ghost", distance=0.1),
        Unknown(raw="dance"),
    ):
        after, outcome = step(state, command, profile)
        assert outcome is StepOutcome.FAILED_STEP
        assert after.model_copy(update={"step_trace": ()}) == state
        assert after.step_trace[-1].detail


def test_grasp_while_holding_fails() -> None:
    profile = make_profile()
    state, _ = step(reset(make_task([BIN, RUBBISH, BLOCK])), Grasp(object_ref="rubbish"), profile)
    after, outcome = step(state, Grasp(object_ref="block"), profile)
    assert outcome is StepOutcome.FAILED_STEP
    assert after.holding == "rubbish"


def test_close_gripper_picks_nearest_graspable_within_radius() -> None:
    profile = make_profile()
    state = reset(make_task([RUBBISH, BLOCK]))
    state, _ = step(state, MoveTo(target="rubbish"), profile)
    state, outcome = step(state, CloseGripper(), profile)

    assert outcome is StepOutcome.OK
    assert state.holding == "rubbish"
    assert state.gripper_open is False

    state, _ = step(state, OpenGripper(), profile)
    state, _ = step(state, MoveRelative(distance=0.2, direction=Direction.UP), profile)
    state, _ = step(state, CloseGripper(), profile)
    assert state.holding is None
    assert state.step_trace[-1].detail == "closed on nothing"


def test_moves_are_clamped_to_workspace_and_marked_partial() -> None:
    profile = make_profile()
    state = reset(make_task([RUBBISH]))
    state, outcome = step(state, MoveRelative(distance=1.0, direction=Direction.UP), profile)

    assert outcome is StepOutcome.PARTIAL
    assert state.gripper_position == (0.0, 0.0, 1.0)


def test_relative_move_from_object_and_rotation_of_held_object() -> None:
    profile = make_profile()
    state = reset(make_task([RUBBISH]))
    state, _ = step(
        state,
        MoveRelative(
            distance=0.05,
            direction=Direction.UP,
            reference="object",
            reference_object="rubbish",
        ),
        profile,
    )
    assert state.gripper_position == pytest.approx((0.2, 0.2, 0.05))

    state, _ = step(state, Grasp(object_ref="rubbish"), profile)
    state, _ = step(state, Rotate(angle=90, sense=Sense.LEFT), profile)
    state, _ = step(state, Rotate(angle=30, sense=Sense.CLOCKWISE), profile)
    assert state.gripper_yaw == pytest.approx(60.0)
    assert state.objects["rubbish"].yaw == pytest.approx(60.0)


def test_move_away_from_pushes_horizontally() -> None:
    profile = make_profile()
    pan = SceneObject(name="pan", position=(0.1, 0.0, 0.0))
    state = reset(make_task([pan]))
    state, _ = step(state, MoveAwayFrom(object_ref="pan", distance=0.25), profile)
    assert state.gripper_position == pytest.approx((-0.25, 0.0, 0.5))

    # Directly above the anchor the push goes along +x.
    state, _ = step(state, MoveTo(target="pan", region=Region.TOP), profile)
    state, _ = step(state, MoveAwayFrom(object_ref="pan", distance=0.1), profile)
    assert state.gripper_position == pytest.approx((0.2, 0.0, 0.1))


def test_default_pose_sets_flag_and_other_moves_clear_it() -> None:
    profile = make_profile()
    state = reset(make_task([RUBBISH]))
    state, _ = step(state, DefaultPose(), profile)
    assert state.at_default_pose
    state, _ = step(state, MoveRelative(distance=0.1, direction=Direction.LEFT), profile)
    assert not state.at_default_pose


def test_init_drift_applies_when_program_does_not_start_at_default_pose() -> None:
    task = make_task(
        [BLOCK],
        success=DisplacedAtLeast(a="block", axis="z", distance=0.04),
        profile=make_profile(requires_default_pose_init=True),
    )
    without_init = execute_program(task, _program("grasp the block", "move gripper 5cm up"))
    with_init = execute_program(
        task, _program("back to default pose", "grasp the block", "move gripper 5cm up")
    )

    assert not without_init.success
    assert without_init.final_state.objects["block"].position[2] == pytest.approx(0.02)
    assert with_init.success
    assert with_init.final_state.objects["block"].position[2] == pytest.approx(0.07)


def test_unknown_step_policy() -> None:
    task = make_task([RUBBISH], success=HoldingNothing())
    program = _program("wave hello", "open gripper")

    lenient = execute_program(task, program)
    assert lenient.success
    assert [r.outcome for r in lenient.trace] == [StepOutcome.FAILED_STEP, StepOutcome.OK]

    strict = execute_program(
        task, program, WorldSettings(unknown_step_policy=UnknownStepPolicy.HARD_FAIL)
    )
    assert not strict.success
    assert len(strict.trace) == 1
    assert "could not be interpreted" in (strict.failure_reason or "")


def test_programs_longer_than_max_steps_are_truncated() -> None:
    task = make_task(
        [RUBBISH],
        success=And(items=[HoldingNothing()]),
        max_steps=2,
    )
    result = execute_program(
        task, _program("grasp the rubbish", "move gripper 1cm up", "open gripper")
    )
    assert len(result.trace) == 2
    assert not result.success
    assert "truncated to 2 steps" in (result.failure_reason or "")


def test_execution_is_deterministic() -> None:
    task = make_task([BIN, RUBBISH], success=Inside(a="rubbish", container="bin"))
    program = parse_program(
        'composer("grasp the rubbish")\n'
        'composer("move to 5cm above the bin")\n'
        'composer("turn clockwise by 45 degrees")\n'
        'composer("open gripper")\n'
    )
    assert execute_program(task, program) == execute_program(task, program)


def _random_scene(rng: random.Random) -> list[SceneObject]:
    objects = []
    for index in range(rng.randint(1, 5)):
        position = (round(rng.uniform(-0.5, 0.5), 3), round(rng.uniform(-0.5, 0.5), 3), 0.0)
        if rng.random() < 0.3:
            objects.append(
                SceneObject(
                    name=f"box{index}",
                    position=position,
                    graspable=False,
                    container=Container(radius=rng.uniform(0.03, 0.1), height=0.1),
                )
            )
        else:
            objects.append(SceneObject(name=f"item{index}", position=position))
    return objects


def _random_line(rng: random.Random, names: list[str]) -> str:
    name = rng.choice([*names, "ghost"])
    cm = rng.randint(1, 80)
    direction = rng.choice([d.value for d in Direction])
    return rng.choice(
        [
            f"grasp the {name}",
            "open gripper",
            "close gripper",
            "back to default pose",
            f"move gripper {cm}cm {direction}",
            f"move {cm}cm {direction}",
            f"move {cm}cm {direction} from the {name}",
            f"move to the top of the {name}",
            f"move to the center of the {name}",
            f"move to {cm}cm above the {name}",
            f"move to the {name}",
            f"move away from the {name} by {cm}cm",
            f"push the {name} to the {rng.choice(['left', 'right'])}",
            f"turn clockwise by {rng.randint(1, 360)} degrees",
            "jump",
        ]
    )


@pytest.mark.parametrize("seed", range(100))
def test_random_programs_keep_world_invariants(seed: int) -> None:
    rng = random.Random(seed)
    scene = _random_scene(rng)
    names = [obj.name for obj in scene]
    profile = make_profile("random", requires_default_pose_init=rng.random() < 0.5)
    task = make_task(scene, profile=profile)
    bounds = profile.workspace_bounds
    fixed = {obj.name: obj.position for obj in scene if not obj.graspable}

    for _ in range(3):
        program = _program(*(_random_line(rng, names) for _ in range(rng.randint(1, 15))))
        result = execute_program(task, program)

        assert len(result.trace) == len(program.steps)
        assert len(result.history) == len(program.steps) + 1
        for state in result.history:
            assert sorted(state.objects) == sorted(names)
            assert bounds.contains(state.gripper_position)
            for obj in state.objects.values():
                assert bounds.contains(obj.position)
            if state.holding is not None:
                assert state.holding in names
                assert state.objects[state.holding].position == state.gripper_position
                assert not state.gripper_open
            for name, position in fixed.items():
                assert state.objects[name].position == position
