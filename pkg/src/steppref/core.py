"""Core text model: questions, steps, solutions, prefixes, prompt templates.

A reasoning trace is a sequence of single-line steps, each rendered as
"Step <n>: <content>" with indices running 1..n. Everything downstream
(search, judging, training, eval) moves these types around.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import (
    EmptyInput,
    MalformedStep,
    MissingPlaceholder,
    NonContiguousIndex,
)

STEP_LINE_RE = re.compile(r"^Step ([0-9]+): (.+)$")
ANSWER_MARKER = "Answer:"
BOXED_MARKER = "\\boxed{"


@dataclass(frozen=True)
class Question:
    """A problem statement; source is 'synthetic' or 'external'."""

    id: str
    text: str
    gold_answer: Optional[str] = None
    source: str = "synthetic"

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("question id must be non-empty")
        if not self.text.strip():
            raise ValueError("question text must be non-empty")


@dataclass(frozen=True)
class Step:
    """One reasoning step. The rendered line is always derivable from the fields."""

    index: int
    body: str

    def __post_init__(self) -> None:
        if self.index < 1:
            raise MalformedStep(f"step index must be >= 1, got {self.index}")
        if not self.body or not self.body.strip():
            raise MalformedStep("step body must be non-empty")
        if "\n" in self.body:
            raise MalformedStep("step body must be a single line")
        if self.body != self.body.strip():
            raise MalformedStep("step body must not carry leading/trailing whitespace")

    @property
    def raw(self) -> str:
        return f"Step {self.index}: {self.body}"


# A terminal detector inspects one step and returns the extracted answer
# string when the step ends the trajectory, else None.
TerminalDetector = Callable[[Step], Optional[str]]


def marker_answer(text: str) -> Optional[str]:
    """Text after the last 'Answer:' marker, trimmed; None if absent or blank."""
    pos = text.rfind(ANSWER_MARKER)
    if pos < 0:
        return None
    tail = text[pos + len(ANSWER_MARKER):].strip()
    return tail or None


def boxed_answer(text: str) -> Optional[str]:
    """Content of the last balanced \\boxed{...}; None if absent or unbalanced."""
    pos = text.rfind(BOXED_MARKER)
    if pos < 0:
        return None
    depth = 0
    start = pos + len(BOXED_MARKER)
    for i in range(start, len(text)):
        c = text[i]
        if c == "{":
            depth += 1
        elif c == "}":
            if depth == 0:
                return text[start:i]
            depth -= 1
    return None


def answer_line_detector(step: Step) -> Optional[str]:
    return marker_answer(step.body)


def boxed_detector(step: Step) -> Optional[str]:
    return boxed_answer(step.body)


@dataclass(frozen=True)
class Solution:
    """A full trace for one question.

    terminal is true exactly when the last step satisfied the detector the
    solution was built with, and answer is present exactly when terminal.
    """

    question_id: str
    steps: tuple[Step, ...]
    terminal: bool
    answer: Optional[str]

    def __post_init__(self) -> None:
        if not self.steps:
            raise MalformedStep("a solution needs at least one step")
        _check_contiguous(self.steps)
        if self.terminal != (self.answer is not None):
            raise ValueError("answer must be present exactly when terminal")

    @classmethod
    def from_steps(
        cls,
        question_id: str,
        steps: Sequence[Step],
        detector: TerminalDetector = answer_line_detector,
    ) -> "Solution":
        steps = tuple(steps)
        if not steps:
            raise MalformedStep("a solution needs at least one step")
        ans = detector(steps[-1])
        return cls(question_id=question_id, steps=steps, terminal=ans is not None, answer=ans)

    def render(self) -> str:
        return "\n".join(s.raw for s in self.steps)


def _check_contiguous(steps: Sequence[Step]) -> None:
    for pos, step in enumerate(steps, start=1):
        if step.index != pos:
            raise NonContiguousIndex(
                f"expected step index {pos}, got {step.index}"
            )


def step_from_raw(raw: str) -> Step:
    """Parse a single rendered step line back into a Step."""
    m = STEP_LINE_RE.match(raw)
    if m is None:
        raise MalformedStep(f"not a step line: {raw!r}")
    return Step(index=int(m.group(1)), body=m.group(2))


def parse_step_solution(
    text: str,
    detector: TerminalDetector = answer_line_detector,
    question_id: str = "",
) -> Solution:
    """Parse a rendered trace back into a Solution.

    Every non-blank line must carry the step prefix; indices must run 1..n.
    """
    steps: list[Step] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        m = STEP_LINE_RE.match(line)
        if m is None:
            raise MalformedStep(f"line {line_no} lacks the step prefix: {line!r}")
        steps.append(Step(index=int(m.group(1)), body=m.group(2)))
    if not steps:
        raise MalformedStep("no step lines found")
    _check_contiguous(steps)
    return Solution.from_steps(question_id, steps, detector)


@dataclass(frozen=True)
class StepPrefix:
    """A question plus the steps committed so far (possibly none)."""

    question: Question
    steps: tuple[Step, ...] = ()

    def __post_init__(self) -> None:
        _check_contiguous(self.steps)

    @property
    def next_index(self) -> int:
        return len(self.steps) + 1

    def extend(self, step: Step) -> "StepPrefix":
        if step.index != self.next_index:
            raise NonContiguousIndex(
                f"prefix expects next index {self.next_index}, got {step.index}"
            )
        return StepPrefix(self.question, self.steps + (step,))

    def rendered_steps(self) -> str:
        return "\n".join(s.raw for s in self.steps)


@dataclass(frozen=True)
class SamplingParams:
    """Decoding knobs shared by all generator backends.

    temperature 0 means greedy argmax; top_p keeps the smallest
    probability-sorted prefix whose mass reaches top_p.
    """

    temperature: float = 0.5
    top_p: float = 0.95
    max_tokens: int = 256
    stop: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not (self.temperature >= 0.0):
            raise ValueError(f"temperature must be >= 0, got {self.temperature}")
        if not (0.0 < self.top_p <= 1.0):
            raise ValueError(f"top_p must be in (0, 1], got {self.top_p}")
        if self.max_tokens < 1:
            raise ValueError(f"max_tokens must be >= 1, got {self.max_tokens}")


GREEDY = SamplingParams(temperature=0.0, top_p=1.0)


@dataclass(frozen=True)
class StepStats:
    """Aggregate shape of a batch of solutions, lengths in whitespace tokens."""

    n_solutions: int
    mean_step_num: Optional[float]
    mean_step_len: Optional[float]

    def __post_init__(self) -> None:
        if self.n_solutions == 0 and (
            self.mean_step_num is not None or self.mean_step_len is not None
        ):
            raise ValueError("means must be absent when there are no solutions")


def step_statistics(solutions: Sequence[Solution]) -> StepStats:
    """Mean steps per solution and mean tokens per step, pooled over all steps."""
    if not solutions:
        raise EmptyInput("step_statistics needs at least one solution")
    n_steps = [len(s.steps) for s in solutions]
    lengths = [len(step.body.split()) for s in solutions for step in s.steps]
    return StepStats(
        n_solutions=len(solutions),
        mean_step_num=sum(n_steps) / len(solutions),
        mean_step_len=sum(lengths) / len(lengths),
    )


@dataclass(frozen=True)
class PromptTemplate:
    """Plain-text template with literal {name} placeholders.

    str.format is deliberately avoided: problem text may contain braces
    (boxed answers), so placeholders are replaced literally instead.
    """

    text: str
    required: tuple[str, ...]

    def render(self, **values: str) -> str:
        for name in self.required:
            if "{" + name + "}" not in self.text:
                raise MissingPlaceholder(f"template lacks placeholder {{{name}}}")
            if name not in values:
                raise MissingPlaceholder(f"no value supplied for {{{name}}}")
        out = self.text
        for name, value in values.items():
            out = out.replace("{" + name + "}", value)
        return out

    @classmethod
    def from_file(cls, path: str | Path, required: Sequence[str]) -> "PromptTemplate":
        return cls(text=Path(path).read_text(encoding="utf-8"), required=tuple(required))


def default_template(name: str, required: Sequence[str]) -> PromptTemplate:
    """Load one of the packaged templates (reasoning, judge, scoring, segment)."""
    text = resources.files("steppref.templates").joinpath(f"{name}.txt").read_text(
        encoding="utf-8"
    )
    return PromptTemplate(text=text, required=tuple(required))


GENERATION_PLACEHOLDERS = ("question", "prior_steps")
JUDGE_PLACEHOLDERS = ("question", "prior_steps", "candidate_a", "candidate_b")
SCORING_PLACEHOLDERS = ("question", "solution")
SEGMENT_PLACEHOLDERS = ("solution",)


def generation_template() -> PromptTemplate:
    return default_template("reasoning", GENERATION_PLACEHOLDERS)


def judge_template() -> PromptTemplate:
    return default_template("judge", JUDGE_PLACEHOLDERS)


def scoring_template() -> PromptTemplate:
    return default_template("scoring", SCORING_PLACEHOLDERS)


def segment_template() -> PromptTemplate:
    return default_template("segment", SEGMENT_PLACEHOLDERS)


def render_prefix(prefix: StepPrefix, template: PromptTemplate) -> str:
    """Generation prompt for the next step; empty prefixes render an empty block."""
    return template.render(
        question=prefix.question.text,
        prior_steps=prefix.rendered_steps(),
    )
