from __future__ import annotations

import os
from pathlib import Path


def read_dotenv(dotenv_path: Path) -> dict[str, str]:
    """Parse ``KEY=value`` lines; comments and malformed lines are skipped."""
    if not dotenv_path.exists():
        return {}

    values: dict[str, str] = {}
    for raw_line in dotenv_path.read_text(encoding="utf-8").splitlines():
        line = raw_line.strip().removeprefix("export ").strip()
        if not line or line.startswith("#") or "=" not in line:
            continue
        key, value = line.split("=", 1)
        key = key.strip()
        if key:
            values[key] = value.strip().strip("'").strip('"')
    return values


def load_env(project_root: Path) -> None:
    """Export ``.env`` values that the process environment does not already set."""
    for key, value in read_dotenv(project_root / ".env").items():
        os.environ.setdefault(key, value)


def require_secret(var_name: str) -> str:
    value = os.getenv(var_name)
    if not value:
        raise RuntimeError(f"Missing {var_name} in environment or .env")
    return value


def optional_secret(var_name: str | None) -> str | None:
    if not var_name:
        return None
    return os.getenv(var_name) or None
