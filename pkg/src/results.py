from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

from pydantic import BaseModel, ValidationError

from src.composer_dsl import (
    PlannerProgram,
    is_program_line,
    is_step_line,
    parse_program,
    render_program,
)
from src.enums import ErrorType, StepOutcome
from src.errors import IoError, NoProgramFound, SchemaError
from src.world_sim import SceneObject, StepRecord, Vec3

if TYPE_CHECKING:
    from src.replanner import EpisodeResult

logger = logging.getLogger(__name__)


def _strip_fence_lines(text: str) -> list[str | None]:
    """Response lines with fence markers replaced by ``None`` block breaks."""
    return [None if line.strip().startswith("```") else line for line in text.splitlines()]


def _blocks(lines: Iterable[str | None]) -> Iterable[list[str]]:
    block: list[str] = []
    for line in lines:
        if line is not None and is_program_line(line):
            if block or line.strip():
                block.append(line)
            continue
        if block:
            yield block
        block = []
    if block:
        yield block


def extract_program(response: str) -> PlannerProgram:
    """Parse the first contiguous run of program lines that has a composer step."""
    for block in _blocks(_strip_fence_lines(response)):
        if any(is_step_line(line) for line in block):
            return parse_program("\n".join(block))
    raise NoProgramFound("response contains no composer steps")


class TraceLine(BaseModel):
    raw: str
    outcome: StepOutcome
    gripper_position: Vec3
    holding: str | None = None

    model_config = {"frozen": True}

    @classmethod
    def from_record(cls, record: StepRecord) -> "TraceLine":
        return cls(
            raw=record.raw,
            outcome=record.outcome,
            gripper_position=record.gripper_position,
            holding=record.holding,
        )

    def describe(self) -> str:
        x, y, z = self.gripper_position
        return (
            f"{self.raw} -> {self.outcome.value} "
            f"gripper=({x:.3f}, {y:.3f}, {z:.3f}) holding={self.holding or '-'}"
        )


class RetrievedRecord(BaseModel):
    environment: str
    query: str
    code: str

    model_config = {"frozen": True}


class LoggedTrial(BaseModel):
    """One trial of one episode as written to the episode log."""

    task_id: str
    repeat: int = 0
    strategy: str
    trial: int
    program: str | None = None
    retrieved: RetrievedRecord | None = None
    adapted: str | None = None
    success: bool
    failure_reason: str | None = None
    error_type: ErrorType | None = None
    scene: list[SceneObject]
    trace: list[TraceLine]

    model_config = {"frozen": True}


def episode_to_records(
    episode: EpisodeResult, *, repeat: int, strategy: str, scene: list[SceneObject]
) -> list[LoggedTrial]:
    records = []
    for trial in episode.trials:
        retrieved = None
        if trial.retrieved is not None:
            retrieved = RetrievedRecord(
                environment=trial.retrieved.environment,
                query=trial.retrieved.instruction,
                code=trial.retrieved.code,
            )
        trace = trial.result.trace if trial.result is not None else []
        records.append(
            LoggedTrial(
                task_id=episode.task_id,
                repeat=repeat,
                strategy=strategy,
                trial=trial.index,
                program=render_program(trial.program) if trial.program else None,
                retrieved=retrieved,
                adapted=render_program(trial.adapted) if trial.adapted else None,
                success=trial.success,
                failure_reason=trial.failure_reason,
                error_type=trial.error_type,
                scene=scene,
                trace=[TraceLine.from_record(record) for record in trace],
            )
        )
    return records


def write_episode_log(path: Path, records: Iterable[LoggedTrial]) -> int:
    lines = [
        json.dumps(record.model_dump(mode="json"), ensure_ascii=False, sort_keys=True)
        for record in records
    ]
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc) from exc
    logger.info("Wrote %d trial record(s) to %s", len(lines), path)
    return len(lines)


def read_episode_log(path: Path) -> list[LoggedTrial]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc) from exc

    records: list[LoggedTrial] = []
    for idx, raw_line in enumerate(text.splitlines()):
        line = raw_line.strip()
        if not line:
            continue
        try:
            records.append(LoggedTrial.model_validate(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise SchemaError(f"invalid episode log line: {exc}", index=idx) from exc
    return records


def write_trace_jsonl(path: Path, trace: Iterable[StepRecord]) -> None:
    lines = [
        json.dumps(
            TraceLine.from_record(record).model_dump(mode="json"), sort_keys=True
        )
        for record in trace
    ]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
