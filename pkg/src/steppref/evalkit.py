"""Accuracy evaluation: greedy decoding and test-time search.

Greedy decodes one step at a time at temperature 0. Test-time search
samples tts_n candidates per level and commits the tournament winner
(lowest index on a tie), with no rollback and no preference pairs.
Accuracy is exact string match of the extracted answer after trimming,
reported as an exact count alongside the float.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

from .backends.base import ModelHandle
from .core import (
    GREEDY,
    Question,
    SamplingParams,
    Solution,
    StepPrefix,
    StepStats,
    boxed_answer,
    marker_answer,
    step_statistics,
)
from .datasets import resolve_questions
from .errors import EmptyInput, MissingGold, NoAnswerFound
from .search import CandidateSet, run_tournament
from .seeding import derive_seed

GREEDY_MODE = "greedy"
TTS_MODE = "tts"


@dataclass(frozen=True)
class EvalConfig:
    mode: str = GREEDY_MODE
    tts_n: int = 6
    tts_sampling: SamplingParams = field(
        default_factory=lambda: SamplingParams(temperature=0.5, top_p=0.95, max_tokens=256)
    )
    benchmarks: tuple[str, ...] = ()
    max_steps: int = 20

    def __post_init__(self) -> None:
        if self.mode not in (GREEDY_MODE, TTS_MODE):
            raise ValueError(f"unknown eval mode {self.mode!r}")
        if self.tts_n < 2:
            raise ValueError(f"tts_n must be >= 2, got {self.tts_n}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")


@dataclass(frozen=True)
class BenchmarkResult:
    """Accuracy kept as an exact count next to the float."""

    n_questions: int
    n_correct: int

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_questions if self.n_questions else 0.0

    def to_dict(self) -> dict:
        return {
            "n_questions": self.n_questions,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
        }


@dataclass(frozen=True)
class EvalReport:
    mode: str
    benchmarks: Mapping[str, BenchmarkResult]
    step_stats: StepStats
    judge_accuracy: Optional[float] = None

    @property
    def n_questions(self) -> int:
        return sum(b.n_questions for b in self.benchmarks.values())

    @property
    def n_correct(self) -> int:
        return sum(b.n_correct for b in self.benchmarks.values())

    @property
    def accuracy(self) -> float:
        n = self.n_questions
        return self.n_correct / n if n else 0.0

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "benchmarks": {k: v.to_dict() for k, v in sorted(self.benchmarks.items())},
            "n_questions": self.n_questions,
            "n_correct": self.n_correct,
            "accuracy": self.accuracy,
            "step_stats": {
                "n_solutions": self.step_stats.n_solutions,
                "mean_step_num": self.step_stats.mean_step_num,
                "mean_step_len": self.step_stats.mean_step_len,
            },
            "judge_accuracy": self.judge_accuracy,
        }


def extract_answer(solution: Solution, kind: str = "synthetic") -> str:
    """Answer text of a terminal solution: marker-based or boxed."""
    if not solution.terminal:
        raise ValueError("extract_answer needs a terminal solution")
    if kind == "synthetic":
        found = marker_answer(solution.steps[-1].body)
    elif kind == "boxed":
        found = boxed_answer(solution.render())
    else:
        raise ValueError(f"unknown answer kind {kind!r}")
    if found is None:
        raise NoAnswerFound(f"no {kind} answer in: {solution.steps[-1].body!r}")
    return found


def greedy_solve(
    handle: ModelHandle,
    question: Question,
    max_steps: int,
    seed: int = 0,
) -> Solution:
    """Temperature-0 decode until terminal or the step cap."""
    prefix = StepPrefix(question)
    for level in range(1, max_steps + 1):
        step = handle.generator.generate_step(
            prefix, GREEDY, derive_seed(seed, "greedy", question.id, level)
        )
        prefix = prefix.extend(step)
        if handle.detector(step) is not None:
            break
    return Solution.from_steps(question.id, prefix.steps, handle.detector)


def tts_solve(
    handle: ModelHandle,
    question: Question,
    cfg: EvalConfig,
    seed: int = 0,
) -> Solution:
    """Sample tts_n candidates per level, commit the tournament winner."""
    prefix = StepPrefix(question)
    for level in range(1, cfg.max_steps + 1):
        cands = CandidateSet(
            level=level,
            candidates=tuple(
                handle.generator.generate_step(
                    prefix,
                    cfg.tts_sampling,
                    derive_seed(seed, "tts", question.id, level, i),
                )
                for i in range(cfg.tts_n)
            ),
        )
        result = run_tournament(prefix, cands, handle.judge)
        # ties commit the lowest index; there is no rollback in this mode
        step = cands.candidates[result.best_index]
        prefix = prefix.extend(step)
        if handle.detector(step) is not None:
            break
    return Solution.from_steps(question.id, prefix.steps, handle.detector)


def _solve(handle: ModelHandle, question: Question, cfg: EvalConfig, seed: int) -> Solution:
    if cfg.mode == GREEDY_MODE:
        return greedy_solve(handle, question, cfg.max_steps, seed)
    return tts_solve(handle, question, cfg, seed)


def _grade(solution: Solution, gold: str, kind: str) -> bool:
    if not solution.terminal:
        return False
    try:
        return extract_answer(solution, kind).strip() == gold.strip()
    except NoAnswerFound:
        return False


def eval_accuracy(
    handle: ModelHandle,
    questions: Sequence[Question],
    cfg: EvalConfig,
    seed: int = 0,
    answer_kind: str = "synthetic",
) -> tuple[BenchmarkResult, list[Solution]]:
    """Accuracy on one question list; every question must carry a gold answer."""
    if not questions:
        raise EmptyInput("eval_accuracy needs at least one question")
    for q in questions:
        if q.gold_answer is None:
            raise MissingGold(f"question {q.id} has no gold answer")
    solutions = []
    correct = 0
    for question in questions:
        solution = _solve(handle, question, cfg, seed)
        solutions.append(solution)
        if _grade(solution, question.gold_answer, answer_kind):
            correct += 1
    return BenchmarkResult(n_questions=len(questions), n_correct=correct), solutions


def evaluate(
    handle: ModelHandle,
    cfg: EvalConfig,
    seed: int = 0,
    judge_accuracy: Optional[float] = None,
    answer_kind: str = "synthetic",
) -> EvalReport:
    """Run every configured benchmark and pool the step statistics."""
    if not cfg.benchmarks:
        raise EmptyInput("no benchmarks configured")
    results: dict[str, BenchmarkResult] = {}
    all_solutions: list[Solution] = []
    for spec in cfg.benchmarks:
        questions = resolve_questions(spec)
        result, solutions = eval_accuracy(handle, questions, cfg, seed, answer_kind)
        results[spec] = result
        all_solutions.extend(solutions)
    return EvalReport(
        mode=cfg.mode,
        benchmarks=results,
        step_stats=step_statistics(all_solutions),
        judge_accuracy=judge_accuracy,
    )
