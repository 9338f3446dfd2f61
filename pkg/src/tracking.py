from __future__ import annotations

import logging
import os

from braintrust import init_logger, start_span
from pydantic import BaseModel

from src.enums import ErrorType, Strategy

logger = logging.getLogger(__name__)


class TrialTrackingContext(BaseModel):
    """One replanning trial as reported to Braintrust."""

    task_id: str
    environment: str
    instruction: str
    strategy: Strategy
    trial: int
    prompt: str | None = None
    program: str | None = None
    retrieved_query: str | None = None
    adapted: bool = False
    success: bool
    failure_reason: str | None = None
    error_type: ErrorType | None = None
    provider: str

    model_config = {"frozen": True}


class BraintrustTracker:
    """Braintrust span logger that switches itself off instead of failing runs."""

    def __init__(self, project: str | None = None, *, enabled: bool = True) -> None:
        self.project = project or os.getenv("BRAINTRUST_PROJECT_NAME")
        self._enabled = False
        self._disabled_reason: str | None = None

        if not enabled:
            self._disabled_reason = "tracking disabled in config"
            return
        if not self.project:
            self._disabled_reason = "BRAINTRUST_PROJECT_NAME not set"
            return

        try:
            init_logger(project=self.project)
            self._enabled = True
        except Exception as exc:  # noqa: BLE001 - observability should not fail the run
            self._disabled_reason = f"Failed to init braintrust logger: {exc}"

    @property
    def enabled(self) -> bool:
        return self._enabled

    @property
    def disabled_reason(self) -> str | None:
        return self._disabled_reason

    def log_trial(self, ctx: TrialTrackingContext) -> None:
        if not self._enabled:
            return

        try:
            with start_span(name=f"{ctx.task_id}#{ctx.trial}") as span:
                span.log(
                    input={"instruction": ctx.instruction, "prompt": ctx.prompt},
                    output=ctx.program,
                    metadata={
                        "task_id": ctx.task_id,
                        "environment": ctx.environment,
                        "strategy": ctx.strategy.value,
                        "retrieved_query": ctx.retrieved_query,
                        "adapted": ctx.adapted,
                        "failure_reason": ctx.failure_reason,
                        "error_type": ctx.error_type.value if ctx.error_type else None,
                        "provider": ctx.provider,
                    },
                    metrics={"success": 1 if ctx.success else 0, "trial": ctx.trial},
                )
        except Exception as exc:  # noqa: BLE001 - never fail an episode on tracking issues
            logger.debug("Braintrust logging failed for %s: %s", ctx.task_id, exc)
