"""Pairwise step judging: prompts, verdict parsing, and calibration metrics.

A judge sees a question, the committed steps, and two candidate next
steps, and must end its reply with [[A]] or [[B]]. parse_verdict is total:
any completion maps to first, second, or unparseable.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence, runtime_checkable

from .core import (
    PromptTemplate,
    SamplingParams,
    Question,
    Solution,
    Step,
    StepPrefix,
    judge_template,
)
from .errors import CandidateMismatch, UnparseableScore

FIRST = "first"
SECOND = "second"
UNPARSEABLE = "unparseable"

_MARKER_RE = re.compile(r"\[\[(A|B)\]\]")
_INT_RE = re.compile(r"-?[0-9]+")


@dataclass(frozen=True)
class JudgeVerdict:
    """Outcome of one pairwise comparison as presented (A = first argument)."""

    preferred: str  # first | second | unparseable
    explanation: str = ""
    raw: str = ""

    def __post_init__(self) -> None:
        if self.preferred not in (FIRST, SECOND, UNPARSEABLE):
            raise ValueError(f"bad verdict label: {self.preferred!r}")

    def flipped(self) -> "JudgeVerdict":
        """The same underlying choice seen under swapped presentation order."""
        if self.preferred == UNPARSEABLE:
            return self
        other = SECOND if self.preferred == FIRST else FIRST
        return JudgeVerdict(other, self.explanation, self.raw)


@runtime_checkable
class JudgeBackend(Protocol):
    """Anything that can compare two candidate next steps for a prefix."""

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        ...


@runtime_checkable
class CompletionBackend(Protocol):
    """Anything that maps a text prompt to a text completion."""

    def complete(self, prompt: str, params: SamplingParams) -> str:
        ...


def assemble_judge_prompt(
    prefix: StepPrefix,
    cand_a: Step,
    cand_b: Step,
    template: Optional[PromptTemplate] = None,
) -> str:
    """Fill the judge template; candidates must continue the prefix."""
    for cand in (cand_a, cand_b):
        if cand.index != prefix.next_index:
            raise CandidateMismatch(
                f"candidate index {cand.index} does not continue a "
                f"{len(prefix.steps)}-step prefix"
            )
    template = template or judge_template()
    prior = prefix.rendered_steps() or "(none)"
    return template.render(
        question=prefix.question.text,
        prior_steps=prior,
        candidate_a=cand_a.raw,
        candidate_b=cand_b.raw,
    )


def parse_verdict(completion: str) -> JudgeVerdict:
    """Last [[A]]/[[B]] marker wins; no marker means unparseable.

    Total on purpose: a malformed completion is a value the caller counts,
    not an exception.
    """
    matches = list(_MARKER_RE.finditer(completion))
    if not matches:
        return JudgeVerdict(UNPARSEABLE, explanation="", raw=completion)
    last = matches[-1]
    preferred = FIRST if last.group(1) == "A" else SECOND
    return JudgeVerdict(
        preferred,
        explanation=completion[: last.start()].strip(),
        raw=completion,
    )


@dataclass
class JudgeCallStats:
    """Mutable counters threaded through batches of comparisons."""

    n_calls: int = 0
    n_unparseable: int = 0


def pairwise_O(
    prefix: StepPrefix,
    first_cand: Step,
    second_cand: Step,
    backend: JudgeBackend,
    stats: Optional[JudgeCallStats] = None,
) -> int:
    """1 when the backend prefers the first-presented candidate, else 0.

    Unparseable verdicts score 0 for the first candidate and bump the
    unparseable counter.
    """
    verdict = backend.compare(prefix, first_cand, second_cand)
    if stats is not None:
        stats.n_calls += 1
        if verdict.preferred == UNPARSEABLE:
            stats.n_unparseable += 1
    return 1 if verdict.preferred == FIRST else 0


@dataclass(frozen=True)
class PairwiseJudgment:
    """A labeled comparison: which of the two candidates is really better."""

    prefix: StepPrefix
    cand_a: Step
    cand_b: Step
    gold: str  # first | second

    def __post_init__(self) -> None:
        if self.gold not in (FIRST, SECOND):
            raise ValueError(f"gold must be first/second, got {self.gold!r}")


@dataclass(frozen=True)
class JudgeCalibration:
    n_pairs: int
    consistency: float
    agreement: Optional[float]
    n_unparseable: int


def consistency_agreement(
    records: Sequence[PairwiseJudgment],
    backend: JudgeBackend,
) -> JudgeCalibration:
    """Double-order calibration.

    Each pair is judged twice with the presentation order swapped. A pair
    counts as consistent only when both verdicts parse and name the same
    underlying candidate (denominator: all pairs). Agreement is the share
    of parseable first-order verdicts that match gold (denominator:
    parseable first-order verdicts; None when nothing parsed).
    """
    if not records:
        from .errors import EmptyInput

        raise EmptyInput("consistency_agreement needs at least one record")
    consistent = 0
    agree = 0
    parseable_first = 0
    unparseable = 0
    for rec in records:
        v1 = backend.compare(rec.prefix, rec.cand_a, rec.cand_b)
        v2 = backend.compare(rec.prefix, rec.cand_b, rec.cand_a)
        for v in (v1, v2):
            if v.preferred == UNPARSEABLE:
                unparseable += 1
        if (
            v1.preferred != UNPARSEABLE
            and v2.preferred != UNPARSEABLE
            and v1.preferred == v2.flipped().preferred
        ):
            consistent += 1
        if v1.preferred != UNPARSEABLE:
            parseable_first += 1
            if v1.preferred == rec.gold:
                agree += 1
    return JudgeCalibration(
        n_pairs=len(records),
        consistency=consistent / len(records),
        agreement=(agree / parseable_first) if parseable_first else None,
        n_unparseable=unparseable,
    )


def judge_accuracy(
    records: Sequence[PairwiseJudgment],
    backend: JudgeBackend,
) -> float:
    """Share of records whose first-order verdict matches gold.

    Unparseable verdicts count as wrong; the denominator is all records.
    """
    if not records:
        from .errors import EmptyInput

        raise EmptyInput("judge_accuracy needs at least one record")
    hits = 0
    for rec in records:
        v = backend.compare(rec.prefix, rec.cand_a, rec.cand_b)
        if v.preferred == rec.gold:
            hits += 1
    return hits / len(records)


@dataclass(frozen=True)
class CompletionJudge:
    """LLM-as-judge over a completion backend: assemble, complete, parse."""

    backend: CompletionBackend
    template: Optional[PromptTemplate] = None
    params: SamplingParams = SamplingParams(temperature=0.0, top_p=1.0)

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        prompt = assemble_judge_prompt(prefix, cand_a, cand_b, self.template)
        return parse_verdict(self.backend.complete(prompt, self.params))


def score_solution(
    question: Question,
    solution: Solution,
    backend: CompletionBackend,
    template: Optional[PromptTemplate] = None,
    params: SamplingParams = SamplingParams(temperature=0.0, top_p=1.0),
) -> int:
    """Whole-solution 0..5 additive score, the coarse judging baseline.

    The last integer in the completion is the score; a missing or
    out-of-range integer raises UnparseableScore.
    """
    from .core import scoring_template

    template = template or scoring_template()
    prompt = template.render(question=question.text, solution=solution.render())
    completion = backend.complete(prompt, params)
    matches = _INT_RE.findall(completion)
    if not matches:
        raise UnparseableScore(f"no integer in completion: {completion!r}")
    value = int(matches[-1])
    if not (0 <= value <= 5):
        raise UnparseableScore(f"score {value} outside [0, 5]")
    return value
