from __future__ import annotations

import json
from pathlib import Path

import pytest

from src.errors import IoError, MemoryValidationError, ParseError, SchemaError
from src.memory_store import (
    Memory,
    SuccessLog,
    append_log,
    dump_memory,
    filter_by_environment,
    load_memory,
    meta_path,
    merge_memories,
    save_memory,
)

LID_CODE = (
    "objects = ['cup', 'lid']\n"
    "# Query: remove the lid from the cup\n"
    'composer("grasp the lid")\n'
    'composer("move gripper 10cm up")\n'
    "# done\n"
)
BOX_CODE = 'objects = [\'red_box\']\ncomposer("grasp the red box")\n'
RECORD_KEYS = ("environment", "query", "code", "status")


def _log(environment: str = "sim-A", instruction: str = "remove the lid from the cup") -> SuccessLog:
    return SuccessLog(environment=environment, instruction=instruction, code=LID_CODE)


def test_append_log_keeps_order_and_does_not_mutate() -> None:
    empty = Memory(source_label="m")
    one = append_log(empty, _log())
    two = append_log(one, _log("sim-B", "take the box"))

    assert len(empty) == 0
    assert len(one) == 1
    assert [log.environment for log in two] == ["sim-A", "sim-B"]
    assert two[1].instruction == "take the box"
    assert two.source_label == "m"


def test_append_log_rejects_empty_instruction() -> None:
    with pytest.raises(MemoryValidationError):
        append_log(Memory(), _log(instruction="   "))


def test_append_log_rejects_unparseable_code() -> None:
    bad = SuccessLog(environment="sim-A", instruction="x", code="print('hi')\n")
    with pytest.raises(ParseError):
        append_log(Memory(), bad)


def test_filter_and_merge() -> None:
    a = Memory(logs=(_log("sim-A"), _log("sim-B", "b")), source_label="a")
    b = Memory(logs=(_log("sim-A", "c"),), source_label="b")

    merged = merge_memories(a, b)
    assert merged.source_label == "a+b"
    assert [log.instruction for log in merged] == ["remove the lid from the cup", "b", "c"]
    assert merged.environments() == {"sim-A": 2, "sim-B": 1}

    only_a = filter_by_environment(merged, "sim-A")
    assert [log.instruction for log in only_a] == ["remove the lid from the cup", "c"]
    assert len(filter_by_environment(merged, "nowhere")) == 0


def test_save_then_load_preserves_logs_and_bytes(tmp_path: Path) -> None:
    memory = Memory(
        logs=(_log(), SuccessLog(environment="sim-B", instruction="take the box", code=BOX_CODE)),
        source_label="x",
    )
    path = tmp_path / "nested" / "memory_a.json"
    save_memory(memory, path)

    loaded = load_memory(path)
    assert loaded.logs == memory.logs
    assert loaded.source_label == "x"
    assert path.read_text(encoding="utf-8") == dump_memory(loaded)

    records = json.loads(path.read_text(encoding="utf-8"))
    assert records[0] == {
        "environment": "sim-A",
        "query": "remove the lid from the cup",
        "code": LID_CODE,
        "status": "success",
    }


def test_load_memory_missing_file_raises_io_error(tmp_path: Path) -> None:
    with pytest.raises(IoError):
        load_memory(tmp_path / "absent.json")


def test_load_memory_invalid_json_raises_schema_error(tmp_path: Path) -> None:
    path = tmp_path / "memory.json"
    path.write_text("[{", encoding="utf-8")
    with pytest.raises(SchemaError):
        load_memory(path)


def test_load_memory_non_list_root_raises_schema_error(tmp_path: Path) -> None:
    path = tmp_path / "memory.json"
    path.write_text('{"environment": "sim-A"}', encoding="utf-8")
    with pytest.raises(SchemaError, match="root must be a list"):
        load_memory(path)


@pytest.mark.parametrize(
    "record",
    [
        {"environment": "sim-A", "query": "q", "code": LID_CODE},
        {"environment": "sim-A", "query": "q", "code": LID_CODE, "status": "failure"},
        {"environment": "sim-A", "query": 3, "code": LID_CODE, "status": "success"},
        {"environment": "sim-A", "query": "", "code": LID_CODE, "status": "success"},
    ],
)
def test_load_memory_reports_bad_record_index(tmp_path: Path, record: dict) -> None:
    good = _log().to_record()
    path = tmp_path / "memory.json"
    path.write_text(json.dumps([good, record]), encoding="utf-8")

    with pytest.raises(SchemaError) as excinfo:
        load_memory(path)
    assert excinfo.value.index == 1


def test_load_memory_reports_unparseable_code_index(tmp_path: Path) -> None:
    bad = {"environment": "sim-A", "query": "q", "code": "x = 1\n", "status": "success"}
    path = tmp_path / "memory.json"
    path.write_text(json.dumps([bad]), encoding="utf-8")

    with pytest.raises(ParseError) as excinfo:
        load_memory(path)
    assert excinfo.value.index == 0


PAN_CODE = (
    "objects = ['saucepan', 'saucepan_lid']\n"
    "# Query: leave the pan open.\n"
    'composer("grasp the saucepan_lid")\n'
    'composer("move away from the saucepan by 25cm")\n'
    'composer("open gripper")\n'
    'composer("back to default pose")\n'
    "# done\n"
)
RUBBISH_CODE = (
    "objects = ['bin', 'rubbish', 'tomato1', 'tomato2']\n"
    "# Query: chuck way any rubbish on the table rubbish.\n"
    'composer("grasp the rubbish")\n'
    'composer("back to default pose")\n'
    'composer("move to the top of the bin")\n'
    'composer("open gripper")\n'
    "# done\n"
)


def test_two_record_memory_survives_save_and_load(tmp_path: Path) -> None:
    memory = Memory(
        logs=(
            SuccessLog(environment="RLBench", instruction="leave the pan open.", code=PAN_CODE),
            SuccessLog(
                environment="RLBench",
                instruction="chuck way any rubbish on the table rubbish.",
                code=RUBBISH_CODE,
            ),
        ),
        source_label="rlbench",
    )
    path = tmp_path / "memory.json"
    save_memory(memory, path)

    records = json.loads(path.read_text(encoding="utf-8"))
    assert [sorted(record) for record in records] == [sorted(RECORD_KEYS)] * 2
    assert records[0]["code"] == PAN_CODE
    assert records[1]["query"] == "chuck way any rubbish on the table rubbish."

    loaded = load_memory(path)
    assert loaded == memory
    assert [log.code for log in loaded] == [PAN_CODE, RUBBISH_CODE]



def test_source_label_is_restored_from_sidecar(tmp_path: Path) -> None:
    path = tmp_path / "memory_a.json"
    save_memory(Memory(logs=(_log(),), source_label="source_a"), path)

    assert meta_path(path).exists()
    assert isinstance(json.loads(path.read_text(encoding="utf-8")), list)
    assert load_memory(path).source_label == "source_a"

    save_memory(Memory(logs=(_log(),)), path)
    assert not meta_path(path).exists()
    assert load_memory(path).source_label == "memory_a"


def test_source_label_falls_back_to_file_stem(tmp_path: Path) -> None:
    path = tmp_path / "handwritten.json"
    path.write_text(json.dumps([_log().to_record()]), encoding="utf-8")
    assert load_memory(path).source_label == "handwritten"


def test_corrupt_sidecar_raises_schema_error(tmp_path: Path) -> None:
    path = tmp_path / "memory.json"
    save_memory(Memory(logs=(_log(),), source_label="a"), path)
    meta_path(path).write_text("{}", encoding="utf-8")
    with pytest.raises(SchemaError, match="metadata"):
        load_memory(path)
