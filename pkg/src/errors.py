from __future__ import annotations

from pathlib import Path


class MtpError(Exception):
    """Base class for every error raised by the planner engine."""


class MemoryValidationError(MtpError):
    """A memory record violates a field invariant (e.g. empty instruction)."""


class SchemaError(MtpError):
    def __init__(self, message: str, *, index: int | None = None) -> None:
        self.index = index
        prefix = f"record {index}: " if index is not None else ""
        super().__init__(f"{prefix}{message}")


class ParseError(MtpError):
    def __init__(
        self, reason: str, *, line: int | None = None, index: int | None = None
    ) -> None:
        self.reason = reason
        self.line = line
        self.index = index
        parts = []
        if index is not None:
            parts.append(f"record {index}")
        if line is not None:
            parts.append(f"line {line}")
        prefix = ", ".join(parts)
        super().__init__(f"{prefix}: {reason}" if prefix else reason)


class ProgramSyntaxError(ParseError):
    """A planner program line is neither declaration, comment, composer call nor blank."""


class EmptyProgram(ParseError):
    def __init__(self) -> None:
        super().__init__("program has no composer steps")


class IoError(MtpError):
    def __init__(self, path: Path, cause: Exception) -> None:
        self.path = path
        self.cause = cause
        super().__init__(f"{path}: {cause}")


class EmptyTextError(MtpError):
    pass


class EmptyPromptError(EmptyTextError):
    pass


class DimensionMismatch(MtpError):
    def __init__(self, left: int, right: int) -> None:
        self.left = left
        self.right = right
        super().__init__(f"dimension mismatch: {left} != {right}")


class IndexOutOfRange(MtpError):
    def __init__(self, i: int, available: int) -> None:
        self.i = i
        self.available = available
        super().__init__(f"rank {i} requested but only {available} available")


class ProviderError(MtpError):
    """A completion or embedding provider failed; carries the attempt count."""

    retryable = False

    def __init__(
        self, message: str, *, attempts: int = 1, cause: Exception | None = None
    ) -> None:
        self.attempts = attempts
        self.cause = cause
        super().__init__(message)

    def __str__(self) -> str:
        return f"{self.args[0]} (after {self.attempts} attempt(s))"


class TransportError(ProviderError):
    retryable = True


class ProviderTimeoutError(ProviderError):
    retryable = True


class HttpStatusError(ProviderError):
    def __init__(
        self, code: int, message: str = "", *, attempts: int = 1
    ) -> None:
        self.code = code
        super().__init__(f"HTTP {code} {message}".strip(), attempts=attempts)

    @property
    def retryable(self) -> bool:  # type: ignore[override]
        return self.code >= 500 or self.code == 429


class MalformedResponseError(ProviderError):
    pass


class ScriptExhausted(MtpError):
    """A strict scripted provider received a prompt no rule matches."""


class UnfilledSlot(MtpError):
    def __init__(self, slot: str) -> None:
        self.slot = slot
        super().__init__(f"prompt slot '{slot}' is not filled")


class NoProgramFound(MtpError):
    pass


class NoMappableObject(MtpError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"no scene object shares a token with '{name}'")


class InvalidTask(MtpError):
    pass


class UnknownObject(MtpError):
    def __init__(self, name: str) -> None:
        self.name = name
        super().__init__(f"unknown object '{name}'")


class NotSuccessful(MtpError):
    pass


class DriftError(MtpError):
    def __init__(self, task_id: str, trial: int, step: int, detail: str) -> None:
        self.task_id = task_id
        self.trial = trial
        self.step = step
        super().__init__(f"{task_id} trial {trial} diverged at step {step}: {detail}")
