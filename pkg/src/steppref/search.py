"""Step-by-step candidate search with pairwise self-judging.

At each level the generator proposes `width` candidate next steps. Every
candidate is scored by how many comparisons it wins: in ordered_full mode
all width*(width-1) ordered pairs are judged and candidate i gains a point
whenever it wins as the first-presented argument; single_pass judges each
unordered pair once and credits the winner. Either way scores live in
[0, width-1].

The argmax (lowest index on equal scores) is committed and paired against
the argmin as a preference pair. When every candidate scores the same the
level is a tie: the previous committed step and its pair are discarded and
both levels are regenerated with fresh seeds (a tie at level 1 just
resamples level 1). Each tie consumes one unit of rollback budget.
Aborted trajectories contribute no pairs.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Optional, Sequence

from .core import (
    Question,
    SamplingParams,
    Solution,
    Step,
    StepPrefix,
    TerminalDetector,
    answer_line_detector,
)
from .errors import GenerationError, MalformedStep, NonContiguousIndex, StepprefError
from .judging import JudgeBackend, JudgeCallStats, pairwise_O
from .seeding import derive_seed

ORDERED_FULL = "ordered_full"
SINGLE_PASS = "single_pass"

COMPLETED = "completed"
ABORTED_MAX_STEPS = "aborted_max_steps"
ABORTED_ROLLBACKS = "aborted_rollback_budget"


@dataclass(frozen=True)
class SearchConfig:
    width: int = 6
    max_steps: int = 20
    max_rollbacks: int = 20
    sampling: SamplingParams = field(
        default_factory=lambda: SamplingParams(temperature=0.5, top_p=0.95, max_tokens=256)
    )
    comparison_mode: str = ORDERED_FULL

    def __post_init__(self) -> None:
        if self.width < 2:
            raise ValueError(f"width must be >= 2, got {self.width}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.max_rollbacks < 0:
            raise ValueError(f"max_rollbacks must be >= 0, got {self.max_rollbacks}")
        if self.comparison_mode not in (ORDERED_FULL, SINGLE_PASS):
            raise ValueError(f"unknown comparison mode {self.comparison_mode!r}")


@dataclass(frozen=True)
class CandidateSet:
    level: int
    candidates: tuple[Step, ...]

    def __post_init__(self) -> None:
        if len(self.candidates) < 2:
            raise ValueError("a candidate set needs at least two candidates")
        for cand in self.candidates:
            if cand.index != self.level:
                raise NonContiguousIndex(
                    f"candidate index {cand.index} does not match level {self.level}"
                )


@dataclass(frozen=True)
class TournamentResult:
    scores: tuple[int, ...]
    best_index: int
    worst_index: int
    tie: bool
    comparisons: tuple[tuple[int, int, int], ...]  # (i, j, O) in call order


@dataclass(frozen=True)
class StepPreferencePair:
    """Chosen/rejected next steps at one prefix, tagged with their producer."""

    question_id: str
    prefix_steps: tuple[Step, ...]
    chosen: Step
    rejected: Step
    level: int
    producer_version: str

    def __post_init__(self) -> None:
        if self.chosen.raw == self.rejected.raw:
            raise ValueError("chosen and rejected must differ")
        if self.chosen.index != self.level or self.rejected.index != self.level:
            raise NonContiguousIndex("pair steps must sit at the pair's level")
        if self.level != len(self.prefix_steps) + 1:
            raise NonContiguousIndex("level must extend the prefix by one")


@dataclass(frozen=True)
class TrajectoryOutcome:
    question_id: str
    status: str
    solution: Optional[Solution]
    pairs: tuple[StepPreferencePair, ...]
    rollbacks: int

    def __post_init__(self) -> None:
        if self.status not in (COMPLETED, ABORTED_MAX_STEPS, ABORTED_ROLLBACKS):
            raise ValueError(f"unknown status {self.status!r}")
        if self.status != COMPLETED and self.pairs:
            raise ValueError("aborted trajectories must carry no pairs")


class TraceSink:
    """Collects search events and optionally appends them as JSON lines."""

    def __init__(self, path: Optional[str | Path] = None) -> None:
        self.events: list[dict] = []
        self._fh: Optional[IO[str]] = None
        if path is not None:
            self._fh = open(path, "a", encoding="utf-8")

    def emit(self, **event: object) -> None:
        self.events.append(event)
        if self._fh is not None:
            self._fh.write(json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n")

    def extend(self, events: Sequence[dict]) -> None:
        for event in events:
            self.emit(**event)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.flush()
            self._fh.close()
            self._fh = None

    def __enter__(self) -> "TraceSink":
        return self

    def __exit__(self, *exc: object) -> None:
        self.close()


def sample_candidates(
    prefix: StepPrefix,
    cfg: SearchConfig,
    generator,
    seed: int,
) -> CandidateSet:
    """Draw `width` candidate next steps with per-candidate derived seeds."""
    candidates = []
    for i in range(cfg.width):
        try:
            step = generator.generate_step(prefix, cfg.sampling, derive_seed(seed, "cand", i))
        except StepprefError:
            raise
        except Exception as e:  # backend bugs become a typed failure
            raise GenerationError(f"generator failed on candidate {i}: {e}") from e
        if step.index != prefix.next_index:
            raise MalformedStep(
                f"generator produced index {step.index}, expected {prefix.next_index}"
            )
        candidates.append(step)
    return CandidateSet(level=prefix.next_index, candidates=tuple(candidates))


def run_tournament(
    prefix: StepPrefix,
    cands: CandidateSet,
    judge: JudgeBackend,
    mode: str = ORDERED_FULL,
    stats: Optional[JudgeCallStats] = None,
) -> TournamentResult:
    """Score every candidate by pairwise wins; ties keep the lowest index."""
    n = len(cands.candidates)
    scores = [0] * n
    comparisons: list[tuple[int, int, int]] = []
    if mode == ORDERED_FULL:
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                o = pairwise_O(prefix, cands.candidates[i], cands.candidates[j], judge, stats)
                scores[i] += o
                comparisons.append((i, j, o))
    elif mode == SINGLE_PASS:
        for i in range(n):
            for j in range(i + 1, n):
                o = pairwise_O(prefix, cands.candidates[i], cands.candidates[j], judge, stats)
                scores[i] += o
                scores[j] += 1 - o
                comparisons.append((i, j, o))
    else:
        raise ValueError(f"unknown comparison mode {mode!r}")
    best = max(range(n), key=lambda k: (scores[k], -k))
    worst = min(range(n), key=lambda k: (scores[k], k))
    return TournamentResult(
        scores=tuple(scores),
        best_index=best,
        worst_index=worst,
        tie=scores[best] == scores[worst],
        comparisons=tuple(comparisons),
    )


def search_trajectory(
    question: Question,
    cfg: SearchConfig,
    generator,
    judge: JudgeBackend,
    seed: int,
    producer_version: str = "unversioned",
    detector: TerminalDetector = answer_line_detector,
    trace: Optional[TraceSink] = None,
    stats: Optional[JudgeCallStats] = None,
) -> TrajectoryOutcome:
    """Search one question to completion or abort; see the module docstring."""
    committed: list[Step] = []
    pairs: list[StepPreferencePair] = []
    rollbacks = 0
    attempt = 0

    def emit(**event: object) -> None:
        if trace is not None:
            trace.emit(question_id=question.id, **event)

    while True:
        level = len(committed) + 1
        prefix = StepPrefix(question, tuple(committed))
        cands = sample_candidates(
            prefix, cfg, generator, derive_seed(seed, "level", level, "attempt", attempt)
        )
        emit(
            event="sample",
            level=level,
            attempt=attempt,
            candidates=[c.raw for c in cands.candidates],
        )
        result = run_tournament(prefix, cands, judge, cfg.comparison_mode, stats)
        for i, j, o in result.comparisons:
            emit(event="compare", level=level, i=i, j=j, o=o)

        best = cands.candidates[result.best_index]
        worst = cands.candidates[result.worst_index]
        # equal texts with unequal scores can only come from order-sensitive
        # judges; such a level carries no usable preference either
        if result.tie or best.raw == worst.raw:
            rollbacks += 1
            if rollbacks > cfg.max_rollbacks:
                emit(event="abort", status=ABORTED_ROLLBACKS, rollbacks=rollbacks - 1)
                return TrajectoryOutcome(
                    question_id=question.id,
                    status=ABORTED_ROLLBACKS,
                    solution=None,
                    pairs=(),
                    rollbacks=rollbacks - 1,
                )
            if level > 1:
                discarded = committed.pop()
                pairs.pop()
                emit(
                    event="rollback",
                    level=level,
                    discarded_step=discarded.raw,
                    rollbacks=rollbacks,
                )
            else:
                emit(event="rollback", level=level, discarded_step=None, rollbacks=rollbacks)
            attempt += 1
            continue

        pairs.append(
            StepPreferencePair(
                question_id=question.id,
                prefix_steps=tuple(committed),
                chosen=best,
                rejected=worst,
                level=level,
                producer_version=producer_version,
            )
        )
        committed.append(best)
        emit(
            event="commit",
            level=level,
            step=best.raw,
            best=result.best_index,
            worst=result.worst_index,
            scores=list(result.scores),
        )
        if detector(best) is not None:
            solution = Solution.from_steps(question.id, tuple(committed), detector)
            emit(event="complete", steps=len(committed), pairs=len(pairs), rollbacks=rollbacks)
            return TrajectoryOutcome(
                question_id=question.id,
                status=COMPLETED,
                solution=solution,
                pairs=tuple(pairs),
                rollbacks=rollbacks,
            )
        if len(committed) >= cfg.max_steps:
            emit(event="abort", status=ABORTED_MAX_STEPS, rollbacks=rollbacks)
            return TrajectoryOutcome(
                question_id=question.id,
                status=ABORTED_MAX_STEPS,
                solution=None,
                pairs=(),
                rollbacks=rollbacks,
            )
