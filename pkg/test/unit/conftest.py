from __future__ import annotations

import pytest
from factories import PROJECT_ROOT

from src.prompting import PromptTemplate, load_prompt_template


@pytest.fixture
def template() -> PromptTemplate:
    return load_prompt_template(PROJECT_ROOT / "prompts", "mtp")
