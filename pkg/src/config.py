from __future__ import annotations

import logging
import os
from pathlib import Path
from typing import Any, Mapping

import yaml
from pydantic import BaseModel, Field, ValidationError, model_validator

from src.enums import (
    AdapterKind,
    EmbedderKind,
    ProviderKind,
    Strategy,
    UnknownStepPolicy,
)

logger = logging.getLogger(__name__)


class ProviderConfig(BaseModel):
    kind: ProviderKind = ProviderKind.SCRIPTED
    endpoint: str | None = None
    model: str = "gpt-4o-mini"
    api_key_env: str | None = "MTP_API_KEY"
    timeout_seconds: float = Field(default=30.0, gt=0.0)
    max_retries: int = Field(default=3, ge=1)
    backoff_base_seconds: float = Field(default=1.0, ge=0.0)
    backoff_factor: float = Field(default=2.0, ge=1.0)
    temperature: float = Field(default=0.0, ge=0.0)
    script_path: Path | None = None

    @model_validator(mode="after")
    def _validate_kind(self) -> "ProviderConfig":
        if self.kind is ProviderKind.HTTP and not self.endpoint:
            raise ValueError("provider.endpoint is required for kind 'http'")
        return self


class EmbedderConfig(BaseModel):
    kind: EmbedderKind = EmbedderKind.HASHED
    dimension: int = Field(default=256, ge=1)
    ngram: int = Field(default=3, ge=1)
    seed: int = Field(default=20240917, ge=0)
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None

    @model_validator(mode="after")
    def _validate_kind(self) -> "EmbedderConfig":
        if self.kind is EmbedderKind.HTTP and not (self.endpoint and self.model):
            raise ValueError("embedder.endpoint and embedder.model are required for kind 'http'")
        return self


class ReplannerSection(BaseModel):
    max_trials: int = Field(default=3, ge=1)
    strategy: Strategy = Strategy.MTP
    adapter: AdapterKind = AdapterKind.RULE_BASED
    memory_env_filter: str | None = None
    unknown_step_policy: UnknownStepPolicy = UnknownStepPolicy.FAIL_STEP


class WorldConfig(BaseModel):
    init_drift: float = Field(default=0.05, ge=0.0)
    grasp_radius: float = Field(default=0.02, gt=0.0)


class HarnessConfig(BaseModel):
    repeats: int = Field(default=3, ge=1)
    seed: int = 0
    jitter: float = Field(default=0.03, ge=0.0)
    workers: int = Field(default=0, ge=0)


class PromptConfig(BaseModel):
    registry_dir: Path = Path("prompts")
    name: str = "mtp"
    preamble_file: str = "preamble.txt"
    generation_file: str = "generation.jinja"
    adaptation_file: str = "adaptation.jinja"
    replan_file: str = "replan.jinja"


class TrackingConfig(BaseModel):
    enabled: bool = False
    project: str | None = None


class AppConfig(BaseModel):
    provider: ProviderConfig = Field(default_factory=ProviderConfig)
    embedder: EmbedderConfig = Field(default_factory=EmbedderConfig)
    replanner: ReplannerSection = Field(default_factory=ReplannerSection)
    world: WorldConfig = Field(default_factory=WorldConfig)
    harness: HarnessConfig = Field(default_factory=HarnessConfig)
    prompt: PromptConfig = Field(default_factory=PromptConfig)
    tracking: TrackingConfig = Field(default_factory=TrackingConfig)


class ConfigLoadResult(BaseModel):
    """Result of loading configuration file."""

    config: AppConfig
    path: Path

    model_config = {"frozen": True}


def find_project_root(start: Path | None = None) -> Path:
    """Nearest ancestor holding ``pyproject.toml``; falls back to the cwd."""
    here = (start or Path(__file__)).resolve()
    for candidate in (here, *here.parents):
        if (candidate / "pyproject.toml").exists():
            return candidate
    return Path.cwd()


def _read_raw_config(config_path: Path) -> dict[str, Any]:
    try:
        raw = yaml.safe_load(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise RuntimeError(f"Config file not found: {config_path}") from exc
    except yaml.YAMLError as exc:
        raise RuntimeError(f"Invalid YAML in {config_path}: {exc}") from exc

    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise RuntimeError(
            f"Invalid config root in {config_path}: expected mapping, got {type(raw)}"
        )
    return raw


def format_validation_errors(exc: ValidationError) -> str:
    parts = []
    for err in exc.errors():
        loc = ".".join(str(segment) for segment in err["loc"])
        prefix = f"{loc}: " if loc else ""
        parts.append(f"{prefix}{err['msg']}")
    return "\n".join(parts)


def _build_config(raw: Mapping[str, Any], *, source: Path) -> ConfigLoadResult:
    try:
        config = AppConfig.model_validate(raw)
    except ValidationError as exc:
        raise RuntimeError(
            f"Config validation failed for {source}:\n{format_validation_errors(exc)}"
        ) from exc
    return ConfigLoadResult(config=config, path=source)


def load_config(config_path: Path) -> ConfigLoadResult:
    """Load config from disk."""
    raw = _read_raw_config(config_path)
    return _build_config(raw, source=config_path)


def load_config_data(
    raw: Mapping[str, Any], *, source: Path | str = "<in-memory>"
) -> ConfigLoadResult:
    """Validate an already decoded config mapping (tests, embedding callers)."""
    return _build_config(raw, source=Path(source))


def resolve_config_path(project_root: Path, cli_path: Path | None) -> Path:
    if cli_path is not None:
        return cli_path

    env_raw = os.getenv("CONFIG_FILE_PATH")
    if env_raw:
        return Path(env_raw)

    return project_root / "config.yaml"


def resolve_data_path(project_root: Path, path: Path) -> Path:
    return path if path.is_absolute() else project_root / path
