"""Dataset records, JSONL serialization, and the judge-training set builder.

Every file starts with a header line {"schema": <kind>, "version": <int>};
readers refuse files of a different kind or a newer version. Body lines
are one JSON object per record, UTF-8, sorted keys, so identical inputs
serialize to identical bytes.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, runtime_checkable

from .core import (
    Question,
    SamplingParams,
    Step,
    StepPrefix,
    TerminalDetector,
    answer_line_detector,
    boxed_answer,
    step_from_raw,
)
from .errors import (
    AnnotatorError,
    ContentAltered,
    EmptyInput,
    IoError,
    MalformedLine,
    SchemaMismatch,
    StepprefError,
)
from .judging import FIRST, SECOND, UNPARSEABLE, CompletionBackend, JudgeBackend
from .search import StepPreferencePair
from .seeding import derive_seed, rng_from

SCHEMA_VERSIONS = {"ift": 1, "eft": 1, "ppd": 1, "questions": 1}


# --- record types ---------------------------------------------------------


@dataclass(frozen=True)
class IFTRecord:
    """A question with a segmented gold reasoning trace."""

    question: Question
    steps: tuple[Step, ...]
    answer: str

    def __post_init__(self) -> None:
        if not self.steps:
            raise ValueError("an instruction record needs at least one step")


@dataclass(frozen=True)
class EFTRecord:
    """A labeled candidate pair for judge training or evaluation."""

    question: Question
    prefix_steps: tuple[Step, ...]
    cand_a: Step
    cand_b: Step
    gold: str  # first | second
    explanation: str = ""
    provenance: str = ""

    def __post_init__(self) -> None:
        if self.gold not in (FIRST, SECOND):
            raise ValueError(f"gold must be first/second, got {self.gold!r}")
        if self.cand_a.raw == self.cand_b.raw:
            raise ValueError("candidates must differ")


# --- json codecs -----------------------------------------------------------


def _question_to_dict(q: Question) -> dict:
    return {"id": q.id, "text": q.text, "gold_answer": q.gold_answer, "source": q.source}


def _question_from_dict(d: Mapping) -> Question:
    return Question(
        id=str(d["id"]),
        text=str(d["text"]),
        gold_answer=None if d.get("gold_answer") is None else str(d["gold_answer"]),
        source=str(d.get("source", "synthetic")),
    )


def _encode(kind: str, record) -> dict:
    if kind == "ift":
        return {
            "question": _question_to_dict(record.question),
            "steps": [s.raw for s in record.steps],
            "answer": record.answer,
        }
    if kind == "eft":
        return {
            "question": _question_to_dict(record.question),
            "prefix_steps": [s.raw for s in record.prefix_steps],
            "cand_a": record.cand_a.raw,
            "cand_b": record.cand_b.raw,
            "gold": record.gold,
            "explanation": record.explanation,
            "provenance": record.provenance,
        }
    if kind == "ppd":
        return {
            "question_id": record.question_id,
            "prefix_steps": [s.raw for s in record.prefix_steps],
            "chosen": record.chosen.raw,
            "rejected": record.rejected.raw,
            "level": record.level,
            "producer_version": record.producer_version,
        }
    if kind == "questions":
        return _question_to_dict(record)
    raise ValueError(f"unknown dataset kind {kind!r}")


def _decode(kind: str, d: Mapping):
    if kind == "ift":
        return IFTRecord(
            question=_question_from_dict(d["question"]),
            steps=tuple(step_from_raw(r) for r in d["steps"]),
            answer=str(d["answer"]),
        )
    if kind == "eft":
        return EFTRecord(
            question=_question_from_dict(d["question"]),
            prefix_steps=tuple(step_from_raw(r) for r in d["prefix_steps"]),
            cand_a=step_from_raw(d["cand_a"]),
            cand_b=step_from_raw(d["cand_b"]),
            gold=str(d["gold"]),
            explanation=str(d.get("explanation", "")),
            provenance=str(d.get("provenance", "")),
        )
    if kind == "ppd":
        return StepPreferencePair(
            question_id=str(d["question_id"]),
            prefix_steps=tuple(step_from_raw(r) for r in d["prefix_steps"]),
            chosen=step_from_raw(d["chosen"]),
            rejected=step_from_raw(d["rejected"]),
            level=int(d["level"]),
            producer_version=str(d["producer_version"]),
        )
    if kind == "questions":
        return _question_from_dict(d)
    raise ValueError(f"unknown dataset kind {kind!r}")


def write_jsonl(path: str | Path, kind: str, records: Sequence) -> None:
    """Write a header line plus one record per line; empty sets are legal."""
    if kind not in SCHEMA_VERSIONS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    lines = [json.dumps({"schema": kind, "version": SCHEMA_VERSIONS[kind]}, sort_keys=True)]
    for record in records:
        lines.append(json.dumps(_encode(kind, record), sort_keys=True, ensure_ascii=False))
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n", encoding="utf-8")
        tmp.replace(path)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def read_jsonl(path: str | Path, kind: str) -> list:
    """Read and validate a dataset file of the given kind."""
    if kind not in SCHEMA_VERSIONS:
        raise ValueError(f"unknown dataset kind {kind!r}")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    if not text:
        raise SchemaMismatch(f"{path} is empty; expected a header line")
    # split on \n only: splitlines() would also break records on
    # characters like U+2028 that are legal inside JSON strings
    lines = text.split("\n")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise SchemaMismatch(f"{path} header is not JSON: {e}") from e
    if not isinstance(header, dict) or header.get("schema") != kind:
        raise SchemaMismatch(
            f"{path} holds schema {header.get('schema')!r}, expected {kind!r}"
        )
    if int(header.get("version", -1)) > SCHEMA_VERSIONS[kind]:
        raise SchemaMismatch(
            f"{path} version {header['version']} is newer than supported "
            f"{SCHEMA_VERSIONS[kind]}"
        )
    records = []
    for line_no, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            records.append(_decode(kind, d))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError, StepprefError) as e:
            raise MalformedLine(line_no, str(e)) from e
    return records


# --- question sources -------------------------------------------------------


def load_numina_jsonl(path: str | Path) -> list[Question]:
    """Load the external shape: headerless lines of {"problem", "solution"}.

    The gold answer is the last boxed value in the solution when present.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    questions = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            d = json.loads(line)
            problem = str(d["problem"])
            solution = str(d.get("solution", ""))
        except (json.JSONDecodeError, KeyError, TypeError) as e:
            raise MalformedLine(line_no, str(e)) from e
        questions.append(
            Question(
                id=f"numina-{line_no}",
                text=problem,
                gold_answer=boxed_answer(solution),
                source="external",
            )
        )
    return questions


def resolve_questions(source: str) -> list[Question]:
    """A question pool from a suite spec ('synth:seed:n:depth') or a questions file."""
    from .synth import SUITE_PREFIX, suite_questions

    if source.startswith(SUITE_PREFIX):
        return suite_questions(source)
    return read_jsonl(source, "questions")


# --- judge-training set construction ----------------------------------------


@runtime_checkable
class StepScorer(Protocol):
    """Anything scoring one candidate step at a prefix, higher is better."""

    def score(self, prefix: StepPrefix, step: Step) -> float:
        ...


@dataclass(frozen=True)
class EFTBuildConfig:
    simulation_depth: int = 3
    num_iterations: int = 100
    width: int = 4
    sampling: SamplingParams = field(
        default_factory=lambda: SamplingParams(temperature=0.7, top_p=0.95, max_tokens=256)
    )

    def __post_init__(self) -> None:
        if self.simulation_depth < 1:
            raise ValueError("simulation_depth must be >= 1")
        if self.num_iterations < 1:
            raise ValueError("num_iterations must be >= 1")
        if self.width < 2:
            raise ValueError("width must be >= 2")


def build_eft(
    questions: Sequence[Question],
    scorer: StepScorer,
    generator,
    annotator: JudgeBackend,
    cfg: EFTBuildConfig,
    seed: int = 0,
    detector: TerminalDetector = answer_line_detector,
) -> list[EFTRecord]:
    """Scored greedy expansion plus a double-order annotation filter.

    Each iteration walks from the root for simulation_depth levels: sample
    `width` children, score each, keep (argmax, argmin) as a raw pair when
    their scores differ, then descend along the argmax. Raw pairs are then
    judged twice with swapped presentation order and a record survives only
    when both verdicts parse, agree on the underlying winner, and that
    winner is the scorer's argmax. Stored candidate order is itself a
    seeded coin so gold is not always 'first'.
    """
    if not questions:
        raise EmptyInput("build_eft needs at least one question")
    raw_pairs: dict[tuple, tuple[StepPrefix, Step, Step]] = {}
    for question in questions:
        for it in range(cfg.num_iterations):
            prefix = StepPrefix(question)
            for depth_i in range(cfg.simulation_depth):
                level_seed = derive_seed(seed, "eft", question.id, it, depth_i)
                cands = [
                    generator.generate_step(prefix, cfg.sampling, derive_seed(level_seed, c))
                    for c in range(cfg.width)
                ]
                scores = [scorer.score(prefix, cand) for cand in cands]
                best_i = max(range(len(cands)), key=lambda k: (scores[k], -k))
                worst_i = min(range(len(cands)), key=lambda k: (scores[k], k))
                best, worst = cands[best_i], cands[worst_i]
                if scores[best_i] > scores[worst_i] and best.raw != worst.raw:
                    key = (
                        question.id,
                        tuple(s.raw for s in prefix.steps),
                        best.raw,
                        worst.raw,
                    )
                    raw_pairs.setdefault(key, (prefix, best, worst))
                prefix = prefix.extend(best)
                if detector(best) is not None:
                    break

    records: list[EFTRecord] = []
    for (qid, _, _, _), (prefix, best, worst) in raw_pairs.items():
        v1 = annotator.compare(prefix, best, worst)
        v2 = annotator.compare(prefix, worst, best)
        if v1.preferred == UNPARSEABLE or v2.preferred == UNPARSEABLE:
            continue
        agree = v1.preferred == v2.flipped().preferred
        if not agree or v1.preferred != FIRST:
            # the double-order verdicts must both name the scorer argmax
            continue
        swap = rng_from("eft-order", seed, qid, best.raw, worst.raw).random() < 0.5
        cand_a, cand_b = (worst, best) if swap else (best, worst)
        records.append(
            EFTRecord(
                question=prefix.question,
                prefix_steps=prefix.steps,
                cand_a=cand_a,
                cand_b=cand_b,
                gold=SECOND if swap else FIRST,
                explanation=v1.explanation,
                provenance="scored-expansion+double-order",
            )
        )
    return records


# --- solution segmentation ---------------------------------------------------


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_WS = re.compile(r"\s+")


def _squash(text: str) -> str:
    return _WS.sub(" ", text).strip()


def segment_solution(
    text: str,
    annotator: Optional[CompletionBackend] = None,
    params: SamplingParams = SamplingParams(temperature=0.0, top_p=1.0),
) -> list[Step]:
    """Split a solution into steps without altering any information.

    Rule-based by default: sentence-ish chunks per line. With an annotator,
    the completion must come back as step lines. Either way the
    whitespace-squashed concatenation of bodies must equal the squashed
    input, else ContentAltered.
    """
    if not text.strip():
        raise EmptyInput("nothing to segment")
    if annotator is None:
        bodies = []
        for line in text.splitlines():
            for chunk in _SENTENCE_SPLIT.split(line):
                if chunk.strip():
                    bodies.append(_squash(chunk))
    else:
        from .core import segment_template

        prompt = segment_template().render(solution=text)
        try:
            completion = annotator.complete(prompt, params)
        except StepprefError as e:
            raise AnnotatorError(f"segmentation backend failed: {e}") from e
        from .core import parse_step_solution

        bodies = [s.body for s in parse_step_solution(completion).steps]
    if _squash(" ".join(bodies)) != _squash(text):
        raise ContentAltered("segmentation changed the solution text")
    return [Step(index=i, body=b) for i, b in enumerate(bodies, start=1)]
