from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from jinja2 import Environment, FileSystemLoader, StrictUndefined, UndefinedError
from pydantic import BaseModel

from src.composer_dsl import parse_program, render_objects_line, render_program
from src.errors import ParseError, UnfilledSlot

MEMORY_SECTION = "## Successful example from memory"
FAILED_SECTION = "## Failed plan"


class PromptExample(BaseModel):
    """A worked (instruction, program) pair shown to the model."""

    instruction: str
    code: str

    model_config = {"frozen": True}


@dataclass(frozen=True)
class PromptTemplate:
    env: Environment
    system_preamble: str
    generation_file: str = "generation.jinja"
    adaptation_file: str = "adaptation.jinja"
    replan_file: str = "replan.jinja"
    examples: tuple[PromptExample, ...] = field(default=())

    def with_examples(self, examples: Iterable[PromptExample]) -> "PromptTemplate":
        checked = []
        for index, example in enumerate(examples):
            try:
                program = parse_program(example.code)
            except ParseError as exc:
                raise ParseError(exc.reason, line=exc.line, index=index) from exc
            checked.append(
                example.model_copy(update={"code": render_program(program).rstrip("\n")})
            )
        return replace(self, examples=tuple(checked))

    def render(self, template_file: str, **slots: Any) -> str:
        for slot, value in slots.items():
            if value is None or (isinstance(value, str) and not value.strip()):
                raise UnfilledSlot(slot)
        template = self.env.get_template(template_file)
        try:
            return template.render(
                system_preamble=self.system_preamble,
                examples=self.examples,
                memory_section=MEMORY_SECTION,
                failed_section=FAILED_SECTION,
                **slots,
            )
        except UndefinedError as exc:
            raise UnfilledSlot(str(exc.message or "unknown")) from exc


def load_prompt_template(
    registry_dir: Path,
    name: str,
    *,
    preamble_file: str = "preamble.txt",
    generation_file: str = "generation.jinja",
    adaptation_file: str = "adaptation.jinja",
    replan_file: str = "replan.jinja",
) -> PromptTemplate:
    template_dir = registry_dir / name
    env = Environment(
        loader=FileSystemLoader(template_dir.as_posix()),
        autoescape=False,
        undefined=StrictUndefined,
        trim_blocks=True,
        lstrip_blocks=True,
        keep_trailing_newline=False,
    )
    preamble = (template_dir / preamble_file).read_text(encoding="utf-8").strip()
    return PromptTemplate(
        env=env,
        system_preamble=preamble,
        generation_file=generation_file,
        adaptation_file=adaptation_file,
        replan_file=replan_file,
    )


def _canonical(code: str) -> str:
    return render_program(parse_program(code)).rstrip("\n")


def build_generation_prompt(
    template: PromptTemplate, instruction: str, object_names: list[str] | None
) -> str:
    """Few-shot prompt ending with the scene's objects line and query comment."""
    if object_names is None:
        raise UnfilledSlot("object_names")
    return template.render(
        template.generation_file,
        instruction=instruction.strip(),
        objects_line=render_objects_line(object_names),
    )


def build_adaptation_prompt(
    template: PromptTemplate,
    source_code: str,
    source_env: str,
    *,
    target_env: str | None = None,
    object_names: list[str] | None = None,
    examples: Iterable[PromptExample] | None = None,
) -> str:
    """Target examples first, then the source program labelled with its environment.

    ``examples`` replaces the template's own examples when given.
    """
    if examples is not None:
        template = template.with_examples(examples)
    return template.render(
        template.adaptation_file,
        source_code=_canonical(source_code),
        source_env=source_env,
        target_env=target_env or "the current environment",
        objects_line=render_objects_line(object_names or []),
    )


def build_replan_prompt(
    template: PromptTemplate,
    failed_code: str | None,
    adapted_code: str,
    instruction: str,
    *,
    memory_env: str | None = None,
) -> str:
    """Ordering: examples, memory program, failed program, instruction.

    ``failed_code`` may be ``None`` when no earlier trial produced a program.
    """
    slots: dict[str, Any] = {
        "adapted_code": _canonical(adapted_code),
        "memory_env": memory_env or "unknown",
        "instruction": instruction.strip(),
        "has_failed_code": failed_code is not None,
    }
    if failed_code is not None:
        slots["failed_code"] = _canonical(failed_code)
    return template.render(template.replan_file, **slots)
