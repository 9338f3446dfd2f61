from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Any, Iterator

from pydantic import BaseModel, ValidationError

from src.composer_dsl import parse_program
from src.enums import LogStatus
from src.errors import IoError, MemoryValidationError, ParseError, SchemaError

logger = logging.getLogger(__name__)

_RECORD_KEYS = ("environment", "query", "code", "status")


class SuccessLog(BaseModel):
    """One successful episode: which environment, what was asked, what ran."""

    environment: str
    instruction: str
    code: str
    status: LogStatus = LogStatus.SUCCESS

    model_config = {"frozen": True}

    def to_record(self) -> dict[str, str]:
        return {
            "environment": self.environment,
            "query": self.instruction,
            "code": self.code,
            "status": self.status.value,
        }


class Memory(BaseModel):
    """Ordered, append-only collection of success logs."""

    logs: tuple[SuccessLog, ...] = ()
    source_label: str = ""

    model_config = {"frozen": True}

    def __len__(self) -> int:
        return len(self.logs)

    def __iter__(self) -> Iterator[SuccessLog]:  # type: ignore[override]
        return iter(self.logs)

    def __getitem__(self, index: int) -> SuccessLog:
        return self.logs[index]

    def environments(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for log in self.logs:
            counts[log.environment] = counts.get(log.environment, 0) + 1
        return counts


def _check_log(log: SuccessLog, *, index: int | None = None) -> None:
    if not log.instruction.strip():
        message = "instruction must be non-empty"
        if index is not None:
            raise SchemaError(message, index=index)
        raise MemoryValidationError(message)
    try:
        parse_program(log.code)
    except ParseError as exc:
        raise ParseError(exc.reason, line=exc.line, index=index) from exc


def append_log(memory: Memory, log: SuccessLog) -> Memory:
    _check_log(log)
    return memory.model_copy(update={"logs": (*memory.logs, log)})


def filter_by_environment(memory: Memory, environment: str) -> Memory:
    kept = tuple(log for log in memory.logs if log.environment == environment)
    return memory.model_copy(update={"logs": kept})


def merge_memories(*memories: Memory, label: str | None = None) -> Memory:
    """Concatenate memories in argument order."""
    logs = tuple(log for memory in memories for log in memory.logs)
    if label is None:
        label = "+".join(m.source_label for m in memories if m.source_label)
    return Memory(logs=logs, source_label=label)


def dump_memory(memory: Memory) -> str:
    records = [log.to_record() for log in memory.logs]
    return json.dumps(records, ensure_ascii=False, indent=2) + "\n"


class MemoryMeta(BaseModel):
    """Sidecar next to a memory file; the memory file itself stays a bare record list."""

    source_label: str

    model_config = {"frozen": True}


def meta_path(path: Path) -> Path:
    return path.with_name(f"{path.name}.meta")


def save_memory(memory: Memory, path: Path) -> None:
    sidecar = meta_path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(dump_memory(memory), encoding="utf-8")
        if memory.source_label:
            meta = MemoryMeta(source_label=memory.source_label)
            sidecar.write_text(meta.model_dump_json() + "\n", encoding="utf-8")
        else:
            sidecar.unlink(missing_ok=True)
    except OSError as exc:
        raise IoError(path, exc) from exc
    logger.info("Saved %d memory log(s) to %s", len(memory), path)


def _load_label(path: Path) -> str:
    sidecar = meta_path(path)
    if not sidecar.exists():
        return path.stem
    try:
        return MemoryMeta.model_validate_json(sidecar.read_text(encoding="utf-8")).source_label
    except OSError as exc:
        raise IoError(sidecar, exc) from exc
    except ValidationError as exc:
        raise SchemaError(f"invalid memory metadata in {sidecar.name}: {exc}") from exc


def _record_to_log(record: Any, index: int) -> SuccessLog:
    if not isinstance(record, dict):
        raise SchemaError(f"expected object, got {type(record).__name__}", index=index)
    missing = [key for key in _RECORD_KEYS if key not in record]
    if missing:
        raise SchemaError(f"missing key(s): {', '.join(missing)}", index=index)
    for key in _RECORD_KEYS:
        if not isinstance(record[key], str):
            raise SchemaError(f"'{key}' must be a string", index=index)
    if record["status"] != LogStatus.SUCCESS.value:
        raise SchemaError(f"unsupported status '{record['status']}'", index=index)
    log = SuccessLog(
        environment=record["environment"],
        instruction=record["query"],
        code=record["code"],
    )
    _check_log(log, index=index)
    return log


def load_memory(path: Path) -> Memory:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(path, exc) from exc
    try:
        records = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if not isinstance(records, list):
        raise SchemaError("memory file root must be a list")

    logs = tuple(_record_to_log(record, index) for index, record in enumerate(records))
    logger.debug("Loaded %d memory log(s) from %s", len(logs), path)
    return Memory(logs=logs, source_label=_load_label(path))
