from __future__ import annotations

from enum import Enum


class Strategy(str, Enum):
    """Re-planning strategies compared by the harness."""

    MTP = "mtp"
    RETRY = "retry"
    NO_ADAPTATION = "no_adaptation"
    SINGLE_SHOT = "single_shot"

    @property
    def uses_memory(self) -> bool:
        return self in {Strategy.MTP, Strategy.NO_ADAPTATION}

    @property
    def adapts(self) -> bool:
        return self is Strategy.MTP


class AdapterKind(str, Enum):
    LLM = "llm"
    RULE_BASED = "rule_based"


class ProviderKind(str, Enum):
    SCRIPTED = "scripted"
    HTTP = "http"
    GEMINI = "gemini"


class EmbedderKind(str, Enum):
    HASHED = "hashed"
    HTTP = "http"


class LogStatus(str, Enum):
    """Only successes are ever persisted to memory."""

    SUCCESS = "success"


class StepOutcome(str, Enum):
    OK = "ok"
    PARTIAL = "partial"
    FAILED_STEP = "failed_step"


class UnknownStepPolicy(str, Enum):
    FAIL_STEP = "fail_step"
    HARD_FAIL = "hard_fail"


class Direction(str, Enum):
    UP = "up"
    DOWN = "down"
    LEFT = "left"
    RIGHT = "right"
    FORWARD = "forward"
    BACKWARD = "backward"

    def unit(self) -> tuple[float, float, float]:
        """Unit vector in the world frame (x right, y forward, z up)."""
        return _DIRECTION_VECTORS[self]


_DIRECTION_VECTORS: dict[Direction, tuple[float, float, float]] = {
    Direction.UP: (0.0, 0.0, 1.0),
    Direction.DOWN: (0.0, 0.0, -1.0),
    Direction.LEFT: (-1.0, 0.0, 0.0),
    Direction.RIGHT: (1.0, 0.0, 0.0),
    Direction.FORWARD: (0.0, 1.0, 0.0),
    Direction.BACKWARD: (0.0, -1.0, 0.0),
}


class Sense(str, Enum):
    CLOCKWISE = "clockwise"
    COUNTERCLOCKWISE = "counterclockwise"
    LEFT = "left"
    RIGHT = "right"

    @property
    def sign(self) -> int:
        # Counterclockwise (left) is positive yaw.
        return 1 if self in {Sense.COUNTERCLOCKWISE, Sense.LEFT} else -1


class ReferenceKind(str, Enum):
    GRIPPER = "gripper"
    OBJECT = "object"
    NONE = "none"


class Region(str, Enum):
    CENTER = "center"
    TOP = "top"
    NONE = "none"


class NamingStyle(str, Enum):
    PLAIN = "plain"
    SUFFIXED = "suffixed"


class ErrorType(str, Enum):
    """Classification of failed trials for the episode log."""

    PROVIDER_ERROR = "provider_error"
    NO_PROGRAM = "no_program"
    PARSE_ERROR = "parse_error"
    ADAPTATION_ERROR = "adaptation_error"
    EXECUTION_FAILED = "execution_failed"
