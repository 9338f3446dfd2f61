"""Planner programs: parsing, rendering and scene validation.

A planner program is a short line-oriented text::

    objects = ['saucepan', 'saucepan_lid']
    # Query: leave the pan open.
    composer("grasp the saucepan_lid")
    composer("back to default pose")
    # done

Every ``composer("...")`` string is interpreted by a rule-based command
grammar (see design_docs/composer_grammar.md). Strings the grammar does not
recognise become :class:`Unknown` steps instead of parse errors, so that the
world simulator can report them as failed steps.
"""

from __future__ import annotations

import re
from typing import Annotated, Iterable, Literal

from pydantic import BaseModel, Field

from src.enums import Direction, ReferenceKind, Region, Sense
from src.errors import EmptyProgram, ProgramSyntaxError


class Grasp(BaseModel):
    kind: Literal["grasp"] = "grasp"
    object_ref: str

    model_config = {"frozen": True}


class OpenGripper(BaseModel):
    kind: Literal["open_gripper"] = "open_gripper"

    model_config = {"frozen": True}


class CloseGripper(BaseModel):
    kind: Literal["close_gripper"] = "close_gripper"

    model_config = {"frozen": True}


class MoveRelative(BaseModel):
    """Translate the gripper by ``distance`` metres, measured from ``reference``."""

    kind: Literal["move_relative"] = "move_relative"
    distance: float = Field(gt=0.0)
    direction: Direction
    reference: ReferenceKind = ReferenceKind.GRIPPER
    reference_object: str | None = None

    model_config = {"frozen": True}


class MoveTo(BaseModel):
    kind: Literal["move_to"] = "move_to"
    target: str
    offset_direction: Direction | None = None
    offset_distance: float = Field(default=0.0, ge=0.0)
    region: Region = Region.NONE

    model_config = {"frozen": True}


class Rotate(BaseModel):
    kind: Literal["rotate"] = "rotate"
    angle: float = Field(gt=0.0, le=360.0)
    sense: Sense

    model_config = {"frozen": True}


class DefaultPose(BaseModel):
    kind: Literal["default_pose"] = "default_pose"

    model_config = {"frozen": True}


class MoveAwayFrom(BaseModel):
    kind: Literal["move_away_from"] = "move_away_from"
    object_ref: str
    distance: float = Field(gt=0.0)

    model_config = {"frozen": True}


class Unknown(BaseModel):
    kind: Literal["unknown"] = "unknown"
    raw: str

    model_config = {"frozen": True}


ComposerCommand = Annotated[
    Grasp
    | OpenGripper
    | CloseGripper
    | MoveRelative
    | MoveTo
    | Rotate
    | DefaultPose
    | MoveAwayFrom
    | Unknown,
    Field(discriminator="kind"),
]


class ComposerStep(BaseModel):
    """One ``composer(...)`` call: the raw string and its interpretation."""

    raw: str
    command: ComposerCommand

    model_config = {"frozen": True}

    @classmethod
    def from_raw(cls, raw: str) -> "ComposerStep":
        return cls(raw=raw, command=parse_command(raw))

    @classmethod
    def from_command(cls, command: ComposerCommand) -> "ComposerStep":
        return cls(raw=render_command(command), command=command)


class PlannerProgram(BaseModel):
    declared_objects: list[str] | None = None
    query_comment: str | None = None
    steps: list[ComposerStep]
    done: bool = False

    model_config = {"frozen": True}

    @property
    def commands(self) -> list[ComposerCommand]:
        return [step.command for step in self.steps]


class SceneWarning(BaseModel):
    step_index: int | None
    message: str

    model_config = {"frozen": True}


# --- command grammar -------------------------------------------------------

_NUMBER = r"(\d+(?:\.\d+)?)"
_UNIT = r"\s*(cm|mm|m)"
_DIRECTIONS = "|".join(d.value for d in Direction)
_UNIT_SCALE = {"cm": 0.01, "mm": 0.001, "m": 1.0}
_ARTICLES = ("the ", "a ", "an ")

_GRASP = re.compile(r"^(?:grasp|grab|pick up)\s+(.+)$")
_OPEN = re.compile(r"^open(?: the)? gripper$")
_CLOSE = re.compile(r"^close(?: the)? gripper$")
_DEFAULT_POSE = re.compile(
    r"^(?:go |move |return |reset )?(?:back )?to (?:the )?default pose$"
)
_MOVE_AWAY = re.compile(rf"^move away from (.+?) by {_NUMBER}{_UNIT}$")
_MOVE_AWAY_PREFIX = re.compile(rf"^move {_NUMBER}{_UNIT} away from (.+)$")
_MOVE_REGION = re.compile(r"^move to (?:the )?(top|center|centre) of (.+)$")
_MOVE_OFFSET = re.compile(
    rf"^move to {_NUMBER}{_UNIT} (above|below|left of|right of) (.+)$"
)
_MOVE_TO = re.compile(r"^move to (.+)$")
_MOVE_GRIPPER = re.compile(rf"^move (?:the )?gripper {_NUMBER}{_UNIT} ({_DIRECTIONS})$")
_MOVE_RELATIVE = re.compile(rf"^move {_NUMBER}{_UNIT} ({_DIRECTIONS})(?: from (.+))?$")
_ROTATE_SENSE_BY = re.compile(
    r"^(?:turn|rotate)(?: the gripper)? "
    r"(clockwise|counterclockwise|anticlockwise|left|right) by "
    rf"{_NUMBER} degrees?$"
)
_ROTATE_BY_SENSE = re.compile(
    rf"^(?:turn|rotate)(?: the gripper)?(?: by)? {_NUMBER} degrees? "
    r"(clockwise|counterclockwise|anticlockwise|to the left|to the right)$"
)
_ROTATE_SIDE = re.compile(r"^(?:turn|rotate)(?: the gripper)? (?:to the )?(left|right)$")
_PUSH = re.compile(
    r"^push (.+?) (?:to the )?(left|right|forward|backward)"
    rf"(?: by {_NUMBER}{_UNIT})?$"
)
# A push without a distance sweeps the gripper this far past the object.
PUSH_DISTANCE = 0.05

_OFFSET_WORDS = {
    "above": Direction.UP,
    "below": Direction.DOWN,
    "left of": Direction.LEFT,
    "right of": Direction.RIGHT,
}


def _object_ref(text: str) -> str:
    ref = text.strip().rstrip(".").strip()
    for article in _ARTICLES:
        if ref.startswith(article):
            ref = ref[len(article) :]
            break
    return ref.strip()


def _metres(number: str, unit: str) -> float:
    return round(float(number) * _UNIT_SCALE[unit], 9)


def _sense(word: str) -> Sense:
    word = word.removeprefix("to the ")
    if word == "anticlockwise":
        return Sense.COUNTERCLOCKWISE
    return Sense(word)


def _interpret(text: str) -> ComposerCommand | None:
    if match := _GRASP.match(text):
        return Grasp(object_ref=_object_ref(match.group(1)))
    if _OPEN.match(text):
        return OpenGripper()
    if _CLOSE.match(text):
        return CloseGripper()
    if _DEFAULT_POSE.match(text):
        return DefaultPose()
    if match := _MOVE_AWAY.match(text):
        return MoveAwayFrom(
            object_ref=_object_ref(match.group(1)),
            distance=_metres(match.group(2), match.group(3)),
        )
    if match := _MOVE_AWAY_PREFIX.match(text):
        return MoveAwayFrom(
            object_ref=_object_ref(match.group(3)),
            distance=_metres(match.group(1), match.group(2)),
        )
    if match := _MOVE_REGION.match(text):
        region = Region.TOP if match.group(1) == "top" else Region.CENTER
        return MoveTo(target=_object_ref(match.group(2)), region=region)
    if match := _MOVE_OFFSET.match(text):
        return MoveTo(
            target=_object_ref(match.group(4)),
            offset_direction=_OFFSET_WORDS[match.group(3)],
            offset_distance=_metres(match.group(1), match.group(2)),
        )
    if match := _MOVE_GRIPPER.match(text):
        return MoveRelative(
            distance=_metres(match.group(1), match.group(2)),
            direction=Direction(match.group(3)),
            reference=ReferenceKind.GRIPPER,
        )
    if match := _MOVE_RELATIVE.match(text):
        origin = match.group(4)
        if origin is None:
            reference, reference_object = ReferenceKind.NONE, None
        elif _object_ref(origin) == "gripper":
            reference, reference_object = ReferenceKind.GRIPPER, None
        else:
            reference, reference_object = ReferenceKind.OBJECT, _object_ref(origin)
        return MoveRelative(
            distance=_metres(match.group(1), match.group(2)),
            direction=Direction(match.group(3)),
            reference=reference,
            reference_object=reference_object,
        )
    if match := _MOVE_TO.match(text):
        return MoveTo(target=_object_ref(match.group(1)))
    if match := _ROTATE_SENSE_BY.match(text):
        return Rotate(angle=float(match.group(2)), sense=_sense(match.group(1)))
    if match := _ROTATE_BY_SENSE.match(text):
        return Rotate(angle=float(match.group(1)), sense=_sense(match.group(2)))
    if match := _ROTATE_SIDE.match(text):
        return Rotate(angle=90.0, sense=Sense(match.group(1)))
    if match := _PUSH.match(text):
        distance = PUSH_DISTANCE
        if match.group(3) is not None:
            distance = _metres(match.group(3), match.group(4))
        return MoveRelative(
            distance=distance,
            direction=Direction(match.group(2)),
            reference=ReferenceKind.OBJECT,
            reference_object=_object_ref(match.group(1)),
        )
    return None


def parse_command(raw: str) -> ComposerCommand:
    """Interpret one composer string; never raises."""
    text = " ".join(raw.strip().lower().split()).rstrip(".")
    try:
        command = _interpret(text)
    except ValueError:
        # Out-of-range numbers (zero distance, angle > 360) fail field validation.
        command = None
    return command if command is not None else Unknown(raw=raw)


def _format_cm(metres: float) -> str:
    centimetres = round(metres * 100, 6)
    if centimetres == int(centimetres):
        return f"{int(centimetres)}cm"
    return f"{centimetres:g}cm"


def _format_angle(angle: float) -> str:
    return str(int(angle)) if angle == int(angle) else f"{angle:g}"


def render_command(command: ComposerCommand) -> str:
    """Canonical text for a command; ``parse_command`` maps it back to ``command``."""
    match command:
        case Grasp(object_ref=ref):
            return f"grasp the {ref}"
        case OpenGripper():
            return "open gripper"
        case CloseGripper():
            return "close gripper"
        case DefaultPose():
            return "back to default pose"
        case MoveAwayFrom(object_ref=ref, distance=distance):
            return f"move away from the {ref} by {_format_cm(distance)}"
        case MoveRelative(reference=ReferenceKind.GRIPPER):
            return (
                f"move gripper {_format_cm(command.distance)} "
                f"{command.direction.value}"
            )
        case MoveRelative(reference=ReferenceKind.OBJECT):
            return (
                f"move {_format_cm(command.distance)} {command.direction.value} "
                f"from the {command.reference_object}"
            )
        case MoveRelative():
            return f"move {_format_cm(command.distance)} {command.direction.value}"
        case MoveTo(region=Region.TOP):
            return f"move to the top of the {command.target}"
        case MoveTo(region=Region.CENTER):
            return f"move to the center of the {command.target}"
        case MoveTo(offset_direction=None):
            return f"move to the {command.target}"
        case MoveTo():
            word = next(
                w for w, d in _OFFSET_WORDS.items() if d == command.offset_direction
            )
            return (
                f"move to {_format_cm(command.offset_distance)} {word} "
                f"the {command.target}"
            )
        case Rotate(angle=angle, sense=sense):
            return f"turn {sense.value} by {_format_angle(angle)} degrees"
        case Unknown(raw=raw):
            return raw
    raise TypeError(f"unsupported command: {command!r}")


def referenced_objects(command: ComposerCommand) -> list[str]:
    """Object references a command needs resolved in the scene."""
    match command:
        case Grasp(object_ref=ref) | MoveAwayFrom(object_ref=ref):
            return [ref]
        case MoveTo(target=target):
            return [target]
        case MoveRelative(reference=ReferenceKind.OBJECT, reference_object=ref) if ref:
            return [ref]
    return []


def resolve_object_name(ref: str, names: Iterable[str]) -> str | None:
    """Match ``ref`` to a scene name, treating spaces and underscores alike."""
    pool = set(names)
    for candidate in (ref, ref.replace(" ", "_")):
        if candidate in pool:
            return candidate
    return None


# --- program text ------------------------------------------------------------

_OBJECTS_LINE = re.compile(r"^objects\s*=\s*\[(.*)\]\s*;?$")
_OBJECT_ITEM = re.compile(r"""\s*(?:'([^']*)'|"([^"]*)")\s*(?:,|$)""")
_COMPOSER_LINE = re.compile(
    r"""^composer\(\s*(?:"((?:[^"\\]|\\.)*)"|'((?:[^'\\]|\\.)*)')\s*\)\s*;?$"""
)
_QUERY_PREFIX = "# query:"
_DONE_COMMENT = "# done"


def _parse_objects(body: str, line_no: int) -> list[str]:
    names: list[str] = []
    position = 0
    body = body.strip()
    while position < len(body):
        match = _OBJECT_ITEM.match(body, position)
        if match is None or match.end() == position:
            raise ProgramSyntaxError("malformed objects declaration", line=line_no)
        names.append(match.group(1) if match.group(1) is not None else match.group(2))
        position = match.end()
    return names


def _unescape(text: str) -> str:
    return re.sub(r"\\(.)", r"\1", text)


def is_program_line(line: str) -> bool:
    """True for lines that may appear in a planner program."""
    stripped = line.strip()
    return (
        not stripped
        or stripped.startswith("#")
        or _OBJECTS_LINE.match(stripped) is not None
        or _COMPOSER_LINE.match(stripped) is not None
    )


def is_step_line(line: str) -> bool:
    return _COMPOSER_LINE.match(line.strip()) is not None


def parse_program(text: str) -> PlannerProgram:
    declared: list[str] | None = None
    query: str | None = None
    done = False
    steps: list[ComposerStep] = []

    for line_no, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line:
            continue
        if line.startswith("#"):
            lowered = line.lower()
            if lowered.startswith(_QUERY_PREFIX):
                query = line[len(_QUERY_PREFIX) :].strip()
            elif lowered == _DONE_COMMENT:
                done = True
            continue
        if match := _OBJECTS_LINE.match(line):
            declared = _parse_objects(match.group(1), line_no)
            continue
        if match := _COMPOSER_LINE.match(line):
            inner = match.group(1) if match.group(1) is not None else match.group(2)
            steps.append(ComposerStep.from_raw(_unescape(inner)))
            continue
        raise ProgramSyntaxError(f"unrecognised line: {line!r}", line=line_no)

    if not steps:
        raise EmptyProgram()
    return PlannerProgram(
        declared_objects=declared, query_comment=query, steps=steps, done=done
    )


def render_objects_line(names: Iterable[str]) -> str:
    return "objects = [" + ", ".join(f"'{name}'" for name in names) + "]"


def render_program(program: PlannerProgram) -> str:
    lines: list[str] = []
    if program.declared_objects is not None:
        lines.append(render_objects_line(program.declared_objects))
    if program.query_comment is not None:
        lines.append(f"# Query: {program.query_comment}")
    for step in program.steps:
        escaped = step.raw.replace("\\", "\\\\").replace('"', '\\"')
        lines.append(f'composer("{escaped}")')
    if program.done:
        lines.append(_DONE_COMMENT)
    return "\n".join(lines) + "\n"


def normalize_program_text(text: str) -> str:
    """Strip surrounding whitespace per line and drop blank lines."""
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    return "\n".join(lines) + "\n"


def validate_against_scene(
    program: PlannerProgram, object_names: Iterable[str]
) -> list[SceneWarning]:
    names = list(object_names)
    warnings: list[SceneWarning] = []
    declared = program.declared_objects

    for name in declared or []:
        if resolve_object_name(name, names) is None:
            warnings.append(
                SceneWarning(
                    step_index=None, message=f"declared object '{name}' not in scene"
                )
            )

    for index, step in enumerate(program.steps):
        if isinstance(step.command, Unknown):
            warnings.append(
                SceneWarning(
                    step_index=index, message=f"unparsed step: {step.raw!r}"
                )
            )
            continue
        for ref in referenced_objects(step.command):
            if resolve_object_name(ref, names) is None:
                message = f"references unknown object '{ref}'"
            elif declared is not None and resolve_object_name(ref, declared) is None:
                message = f"references undeclared object '{ref}'"
            else:
                continue
            warnings.append(SceneWarning(step_index=index, message=message))
    return warnings
