from __future__ import annotations

import json
from pathlib import Path

import pytest
from factories import PROJECT_ROOT, SUITES

from src.config import AppConfig, ProviderConfig, load_config
from src.enums import ProviderKind, Strategy
from src.errors import DriftError, MtpError
from src.gemini_client import GeminiClient
from src.harness import (
    EvalContext,
    apply_provider_override,
    build_context,
    build_provider_factory,
    cmd_ablation,
    cmd_build_memory,
    cmd_eval,
    cmd_inspect_memory,
    cmd_replay,
    format_ablation_table,
    format_suite_table,
    run_threaded,
    summarize_rates,
)
from src.memory_store import Memory, dump_memory, load_memory, save_memory
from src.providers import HttpChatProvider
from src.replanner import EpisodeResult
from src.results import read_episode_log, write_episode_log
from src.suite import load_suite

ALL_STRATEGIES = [Strategy.SINGLE_SHOT, Strategy.RETRY, Strategy.NO_ADAPTATION, Strategy.MTP]


def _config() -> AppConfig:
    return load_config(PROJECT_ROOT / "config.yaml").config


def _context(script: str | None = None, workers: int = 2) -> EvalContext:
    override = f"scripted:suites/{script}" if script else None
    return build_context(_config(), PROJECT_ROOT, provider_override=override, workers=workers)


@pytest.fixture(scope="module")
def memories(tmp_path_factory: pytest.TempPathFactory) -> dict[str, Path]:
    out = tmp_path_factory.mktemp("memory")
    paths = {"a": out / "memory_a.json", "b": out / "memory_b.json"}
    cmd_build_memory(
        _context("source_a.script.yaml"), suite_path=SUITES / "source_a.json", out=paths["a"]
    )
    cmd_build_memory(
        _context("source_b.script.yaml"), suite_path=SUITES / "source_b.json", out=paths["b"]
    )
    return paths


def test_build_memory_keeps_successes_in_task_order(memories: dict[str, Path]) -> None:
    memory_a = load_memory(memories["a"])
    assert [log.instruction for log in memory_a] == [
        "remove the lid from the cup",
        "take the box and rotate it to the left",
        "lift the block by 5cm",
        "push the tape to the right",
    ]
    assert set(memory_a.environments()) == {"sim-A"}
    assert memories["a"].read_text(encoding="utf-8") == dump_memory(memory_a)

    memory_b = load_memory(memories["b"])
    assert [log.environment for log in memory_b] == ["sim-B", "sim-B"]
    assert memory_b[0].code.startswith("objects = ['saucepan', 'saucepan_lid']\n")


def test_build_memory_is_reproducible(memories: dict[str, Path], tmp_path: Path) -> None:
    again = tmp_path / "memory_a.json"
    cmd_build_memory(
        _context("source_a.script.yaml", workers=1),
        suite_path=SUITES / "source_a.json",
        out=again,
    )
    assert again.read_bytes() == memories["a"].read_bytes()


def test_eval_ranks_strategies_on_target_suite(memories: dict[str, Path], tmp_path: Path) -> None:
    out = tmp_path / "results.json"
    result = cmd_eval(
        _context(),
        suite_path=SUITES / "target_main.json",
        memory_paths=[memories["a"]],
        strategies=ALL_STRATEGIES,
        repeats=2,
        seed=0,
        jitter=0.03,
        out=out,
    )

    rates = {name: strategy.rates for name, strategy in result.strategies.items()}
    assert rates["single_shot"] == pytest.approx([100 * 2 / 6] * 2)
    assert rates["retry"] == pytest.approx([100 * 2 / 6] * 2)
    assert rates["no_adaptation"] == pytest.approx([50.0, 50.0])
    assert rates["mtp"] == pytest.approx([100.0, 100.0])
    assert result.strategies["mtp"].std == 0.0
    assert result.memory == "source_a"

    assert list(result.strategies["retry"].per_task) == ["G1", "G2", "G3", "G4", "G5", "G6"]
    assert result.strategies["retry"].per_task["G5"].successes == 2
    assert result.strategies["no_adaptation"].per_task["G4"].rate == 100.0
    assert json.loads(out.read_text(encoding="utf-8"))["strategies"]["mtp"]["mean"] == 100.0

    table = format_suite_table(result)
    assert table.splitlines()[0].split() == ["task", "single_shot", "retry", "no_adaptation", "mtp"]
    assert "mean ± std" in table


def test_eval_with_memory_from_other_environment(memories: dict[str, Path]) -> None:
    result = cmd_eval(
        _context(),
        suite_path=SUITES / "target_main.json",
        memory_paths=[memories["b"]],
        strategies=[Strategy.MTP],
        repeats=1,
        seed=0,
        jitter=0.0,
    )
    assert result.strategies["mtp"].rates == pytest.approx([100 * 2 / 6])


def test_eval_is_independent_of_worker_count(memories: dict[str, Path]) -> None:
    def run(workers: int) -> str:
        return cmd_eval(
            _context(workers=workers),
            suite_path=SUITES / "target_alt.json",
            memory_paths=[memories["a"]],
            strategies=[Strategy.MTP, Strategy.RETRY],
            repeats=2,
            seed=7,
            jitter=0.03,
        ).to_json()

    assert run(1) == run(4)


def test_paraphrased_eval_uses_variant_ids(memories: dict[str, Path]) -> None:
    result = cmd_eval(
        _context(),
        suite_path=SUITES / "target_main.json",
        memory_paths=[memories["a"]],
        strategies=[Strategy.MTP],
        repeats=1,
        seed=0,
        jitter=0.0,
        paraphrased=True,
    )
    assert list(result.strategies["mtp"].per_task) == ["G1~p1", "G2~p1", "G4~p1"]

    with pytest.raises(MtpError, match="no tasks"):
        cmd_eval(
            _context(),
            suite_path=SUITES / "target_alt.json",
            memory_paths=[],
            strategies=[Strategy.MTP],
            repeats=1,
            seed=0,
            jitter=0.0,
            paraphrased=True,
        )


def test_ablation_grid(memories: dict[str, Path], tmp_path: Path) -> None:
    table = cmd_ablation(
        _context(),
        suite_paths=[SUITES / "target_main.json", SUITES / "target_alt.json"],
        memory_paths=[memories["a"], memories["b"]],
        repeats=1,
        seed=0,
        jitter=0.03,
        out=tmp_path / "ablation.json",
    )

    assert table.columns == ["retry", "no_adaptation", "mtp"]
    assert [(row.memory, row.suite) for row in table.rows] == [
        ("source_a", "target_main"),
        ("source_a", "target_alt"),
        ("source_b", "target_main"),
        ("source_b", "target_alt"),
    ]
    assert all(len(row.cells) == 3 for row in table.rows)
    for memory in ("source_a", "source_b"):
        assert table.cell(memory, "target_main", Strategy.RETRY).mean == pytest.approx(100 * 2 / 6)
        assert table.cell(memory, "target_alt", Strategy.RETRY).mean == pytest.approx(25.0)
    assert table.cell("source_a", "target_main", Strategy.MTP).mean == pytest.approx(100.0)
    assert table.cell("source_a", "target_alt", Strategy.MTP).mean == pytest.approx(100.0)
    assert table.cell("source_b", "target_main", Strategy.MTP).mean == pytest.approx(100 * 2 / 6)
    for suite in ("target_main", "target_alt"):
        richer = table.cell("source_a", suite, Strategy.MTP).mean
        assert richer >= table.cell("source_b", suite, Strategy.MTP).mean

    rendered = format_ablation_table(table)
    assert rendered.splitlines()[0].split() == ["memory", "suite", "retry", "no_adaptation", "mtp"]
    saved = json.loads((tmp_path / "ablation.json").read_text(encoding="utf-8"))
    assert saved["columns"] == ["retry", "no_adaptation", "mtp"]


def test_ablation_with_empty_memory_matches_retry(tmp_path: Path) -> None:
    empty = tmp_path / "empty.json"
    save_memory(Memory(source_label="empty"), empty)

    table = cmd_ablation(
        _context(),
        suite_paths=[SUITES / "target_main.json"],
        memory_paths=[empty],
        repeats=1,
        seed=0,
        jitter=0.0,
    )

    [row] = table.rows
    assert row.memory == "empty"
    means = [cell.mean for cell in row.cells]
    assert means == pytest.approx([means[0]] * 3)


def test_ablation_requires_a_memory_file() -> None:
    with pytest.raises(MtpError, match="at least one memory"):
        cmd_ablation(
            _context(),
            suite_paths=[SUITES / "target_main.json"],
            memory_paths=[],
            repeats=1,
            seed=0,
            jitter=0.0,
        )


def test_replay_reproduces_logged_traces(memories: dict[str, Path], tmp_path: Path) -> None:
    log_path = tmp_path / "episodes.jsonl"
    cmd_eval(
        _context(),
        suite_path=SUITES / "target_main.json",
        memory_paths=[memories["a"]],
        strategies=[Strategy.MTP],
        repeats=1,
        seed=3,
        jitter=0.03,
        episode_log=log_path,
    )
    records = read_episode_log(log_path)
    assert [(r.task_id, r.trial) for r in records[:3]] == [("G1", 0), ("G1", 1), ("G2", 0)]

    lines = cmd_replay(episode_log=log_path, suite_path=SUITES / "target_main.json")
    assert lines[0].startswith("[G1 r0 t0] step 0: grasp the cup_lid -> ok")

    first = records[0]
    moved = first.trace[0].model_copy(
        update={"gripper_position": (9.0, 9.0, 9.0)}
    )
    tampered = first.model_copy(update={"trace": [moved, *first.trace[1:]]})
    write_episode_log(log_path, [tampered, *records[1:]])

    with pytest.raises(DriftError) as excinfo:
        cmd_replay(episode_log=log_path, suite_path=SUITES / "target_main.json")
    assert (excinfo.value.task_id, excinfo.value.step) == ("G1", 0)


def test_inspect_memory_lists_environments_and_ranking(memories: dict[str, Path]) -> None:
    ctx = _context()
    lines = cmd_inspect_memory(
        memory_paths=[memories["a"], memories["b"]],
        embedder=ctx.embedder,
        query="remove the lid from the cup",
        top=2,
    )
    assert lines[0] == "6 log(s) from source_a+source_b"
    assert "  sim-A: 4" in lines
    assert "  sim-B: 2" in lines
    assert lines[-3] == "Top 2 for 'remove the lid from the cup':"
    assert lines[-2].endswith("[sim-A] remove the lid from the cup")


def test_run_threaded_returns_results_in_task_order() -> None:
    suite = load_suite(SUITES / "target_main.json")

    def run(task):
        if task.id == "G3":
            raise RuntimeError("boom")
        return EpisodeResult(task_id=task.id)

    results = run_threaded(suite.tasks, run, workers=4)
    assert [result.task_id for result in results] == [task.id for task in suite.tasks]
    assert results[2].error == "boom"


def test_summarize_rates_uses_population_std() -> None:
    assert summarize_rates([100.0, 50.0]) == (75.0, 25.0)
    assert summarize_rates([]) == (0.0, 0.0)


def test_provider_override() -> None:
    config = _config().provider
    scripted = apply_provider_override(config, "scripted:suites/x.yaml")
    assert scripted.script_path == Path("suites/x.yaml")
    assert apply_provider_override(config, None) is config
    with pytest.raises(RuntimeError, match="Unknown provider"):
        apply_provider_override(config, "carrier-pigeon")
    with pytest.raises(RuntimeError, match="script path"):
        apply_provider_override(config, "scripted")


def test_http_provider_gets_prompt_preamble_as_system_prompt() -> None:
    config = _config()
    config = config.model_copy(
        update={
            "provider": ProviderConfig(
                kind=ProviderKind.HTTP, endpoint="https://llm.test/v1", api_key_env=None
            )
        }
    )
    ctx = build_context(config, PROJECT_ROOT)

    provider = ctx.provider_factory()
    assert isinstance(provider, HttpChatProvider)
    assert provider.system_prompt == ctx.template.system_preamble


def test_gemini_client_tracing_follows_flag(monkeypatch: pytest.MonkeyPatch) -> None:
    calls: list[dict] = []

    def fake_client(api_key: str, **kwargs) -> GeminiClient:
        calls.append(kwargs)
        return GeminiClient(client=None, model=kwargs["model"], temperature=0.0)  # type: ignore[arg-type]

    monkeypatch.setattr("src.harness.create_gemini_client", fake_client)
    monkeypatch.setenv("GEMINI_API_KEY", "key")
    config = ProviderConfig(kind=ProviderKind.GEMINI, model="gemini-2.0-flash", api_key_env=None)

    build_provider_factory(config, PROJECT_ROOT, traced=True)
    build_provider_factory(config, PROJECT_ROOT)

    assert [call["traced"] for call in calls] == [True, False]
