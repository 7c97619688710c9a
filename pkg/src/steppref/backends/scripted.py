"""Deterministic fixture backends for tests and calibration baselines."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Optional, Sequence

from ..core import SamplingParams, Step, StepPrefix
from ..errors import GenerationError
from ..judging import FIRST, SECOND, UNPARSEABLE, JudgeVerdict
from ..seeding import rng_from


class ScriptedCompletion:
    """Completion backend that replays canned texts in order.

    Records every prompt it saw. Falls back to `default` once the script
    runs out; with no default, running out is an error.
    """

    def __init__(self, script: Sequence[str] = (), default: Optional[str] = None) -> None:
        self._script: Iterator[str] = iter(script)
        self._default = default
        self.prompts: list[str] = []

    def complete(self, prompt: str, params: SamplingParams) -> str:
        self.prompts.append(prompt)
        try:
            return next(self._script)
        except StopIteration:
            if self._default is None:
                raise GenerationError("scripted completions exhausted")
            return self._default


class ScriptedGenerator:
    """Generator that emits canned step bodies in order."""

    def __init__(self, bodies: Iterable[str]) -> None:
        self._bodies: Iterator[str] = iter(bodies)

    def generate_step(self, prefix: StepPrefix, params: SamplingParams, seed: int) -> Step:
        try:
            body = next(self._bodies)
        except StopIteration:
            raise GenerationError("scripted step bodies exhausted") from None
        return Step(index=prefix.next_index, body=body)


class FnGenerator:
    """Generator delegating to a plain function of (prefix, seed)."""

    def __init__(self, fn: Callable[[StepPrefix, int], str]) -> None:
        self._fn = fn

    def generate_step(self, prefix: StepPrefix, params: SamplingParams, seed: int) -> Step:
        return Step(index=prefix.next_index, body=self._fn(prefix, seed))


class ScriptedJudge:
    """Judge replaying a fixed verdict sequence ('first'/'second'/'unparseable')."""

    def __init__(self, verdicts: Sequence[str]) -> None:
        self._verdicts: Iterator[str] = iter(verdicts)
        self.n_calls = 0

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        self.n_calls += 1
        try:
            label = next(self._verdicts)
        except StopIteration:
            raise GenerationError("scripted verdicts exhausted") from None
        return JudgeVerdict(label, explanation="scripted", raw=label)


@dataclass(frozen=True)
class ConstantJudge:
    """Always answers the same label; 'first' makes every tournament tie."""

    label: str = FIRST

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        return JudgeVerdict(self.label, explanation="constant", raw=self.label)


@dataclass(frozen=True)
class RandomJudge:
    """Content-addressed fair coin; accuracy against any gold is ~0.5."""

    seed: int = 0

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        rng = rng_from(
            "random-judge",
            self.seed,
            prefix.question.id,
            *[s.raw for s in prefix.steps],
            cand_a.raw,
            cand_b.raw,
        )
        label = FIRST if rng.random() < 0.5 else SECOND
        return JudgeVerdict(label, explanation="coin", raw=label)


@dataclass(frozen=True)
class SwapFlipJudge:
    """Order-sensitive judge with a planted inconsistency rate.

    Presented in canonical (lexicographic) order it returns a fixed
    content-addressed base verdict. Presented swapped, it mirrors that
    base verdict but flips it with probability flip_prob, so the expected
    double-order consistency is exactly 1 - flip_prob.
    """

    flip_prob: float = 0.25
    seed: int = 0

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        canonical = cand_a.raw <= cand_b.raw
        lo, hi = (cand_a, cand_b) if canonical else (cand_b, cand_a)
        base_rng = rng_from(
            "swapflip-base",
            self.seed,
            prefix.question.id,
            *[s.raw for s in prefix.steps],
            lo.raw,
            hi.raw,
        )
        base = FIRST if base_rng.random() < 0.5 else SECOND
        if canonical:
            return JudgeVerdict(base, explanation="base order", raw=base)
        mirrored = SECOND if base == FIRST else FIRST
        flip_rng = rng_from(
            "swapflip-flip",
            self.seed,
            prefix.question.id,
            *[s.raw for s in prefix.steps],
            lo.raw,
            hi.raw,
        )
        if flip_rng.random() < self.flip_prob:
            mirrored = SECOND if mirrored == FIRST else FIRST
        return JudgeVerdict(mirrored, explanation="swapped order", raw=mirrored)


@dataclass(frozen=True)
class UnparseableJudge:
    """Returns a verdict that never parses; exercises the counting paths."""

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        return JudgeVerdict(UNPARSEABLE, explanation="", raw="no marker here")
