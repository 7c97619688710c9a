"""Backend protocols and the runtime bundle evaluation and search consume."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol, runtime_checkable

from ..core import SamplingParams, Step, StepPrefix, TerminalDetector, answer_line_detector
from ..judging import JudgeBackend


@runtime_checkable
class GeneratorBackend(Protocol):
    """Anything that can propose the next step for a prefix."""

    def generate_step(self, prefix: StepPrefix, params: SamplingParams, seed: int) -> Step:
        ...


@runtime_checkable
class StepTask(Protocol):
    """Task adapter binding a tabular policy to actual step text.

    context_key collapses a prefix to the policy row it should read, emit
    renders an action at that prefix, and action_for inverts emit (lowest
    matching action index, None when the body matches nothing).
    """

    def context_key(self, prefix: StepPrefix) -> str:
        ...

    def n_actions(self) -> int:
        ...

    def emit(self, prefix: StepPrefix, action: int) -> str:
        ...

    def action_for(self, prefix: StepPrefix, body: str) -> Optional[int]:
        ...


@dataclass(frozen=True)
class ModelHandle:
    """One model's runtime faces: it both generates steps and judges them."""

    tag: str
    generator: GeneratorBackend
    judge: JudgeBackend
    detector: TerminalDetector = answer_line_detector
