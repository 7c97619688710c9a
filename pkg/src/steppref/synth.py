"""Synthetic integer-chain tasks with exact oracles.

A question is a start value and a chain of (op, operand) instructions over
add/sub/mul. A depth-d question is solved in exactly d steps: each step
applies the next instruction and states the running value, and the final
step also states the answer. The rendered question text fully determines
the chain, so oracles and task adapters are stateless.

The toy action vocabulary has six step templates per state:

    0 exact     apply the next op correctly (final step adds the answer)
    1 high      correct op, value off by +1
    2 low       correct op, value off by -1
    3 wrong_op  flipped operator, faithfully computed
    4 stop      premature "Answer: <current value>"
    5 skip      "Answer: <next value>" (only correct on the final step)

The oracle measures a candidate step by err = |stated - expected| plus 1
when its terminal-ness is wrong; err 0 means correct. Smaller err wins a
comparison; ties prefer the first argument.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

from .core import Question, Step, StepPrefix
from .errors import NotSynthetic, UnknownAction
from .judging import FIRST, SECOND, JudgeVerdict
from .seeding import rng_from

OPS = ("add", "sub", "mul")
ACTIONS = ("exact", "high", "low", "wrong_op", "stop", "skip")
CORRECT_ACTION = 0
MAGNITUDE_CAP = 10**6

# err assigned when a step states no number at all
_UNPARSEABLE_ERR = 10**9

_TEXT_RE = re.compile(
    r"^Start with (-?[0-9]+)\.((?: Apply (?:add|sub|mul) [0-9]+\.)*)"
    r" Report the final value\.$"
)
_OP_RE = re.compile(r" Apply (add|sub|mul) ([0-9]+)\.")
_VALUE_RE = re.compile(r"value = (-?[0-9]+)")
_INT_RE = re.compile(r"-?[0-9]+")
_ANSWER_RE = re.compile(r"Answer: (-?[0-9]+)")


def apply_op(op: str, operand: int, value: int) -> int:
    if op == "add":
        return value + operand
    if op == "sub":
        return value - operand
    if op == "mul":
        return value * operand
    raise ValueError(f"unknown op {op!r}")


def flip_op(op: str) -> str:
    """The operator a confused solver would reach for instead."""
    return {"add": "sub", "sub": "add", "mul": "add"}[op]


@dataclass(frozen=True)
class SynthQuestion:
    """One instruction chain plus its derived gold trace."""

    qid: str
    start_value: int
    ops: tuple[tuple[str, int], ...]

    def __post_init__(self) -> None:
        if not self.ops:
            raise ValueError("a synthetic question needs at least one op")
        for op, operand in self.ops:
            if op not in OPS:
                raise ValueError(f"unknown op {op!r}")
            if not (1 <= operand <= 9):
                raise ValueError(f"operand {operand} outside [1, 9]")

    @property
    def depth(self) -> int:
        return len(self.ops)

    @property
    def gold_trace(self) -> tuple[int, ...]:
        values = []
        v = self.start_value
        for op, operand in self.ops:
            v = apply_op(op, operand, v)
            values.append(v)
        return tuple(values)

    @property
    def gold_answer(self) -> int:
        return self.gold_trace[-1]

    def render_text(self) -> str:
        parts = [f"Start with {self.start_value}."]
        parts += [f"Apply {op} {operand}." for op, operand in self.ops]
        parts.append("Report the final value.")
        return " ".join(parts)

    def to_question(self) -> Question:
        return Question(
            id=self.qid,
            text=self.render_text(),
            gold_answer=str(self.gold_answer),
            source="synthetic",
        )

    @classmethod
    def from_question(cls, question: Question) -> "SynthQuestion":
        return _parse_synth(question.id, question.text)


@lru_cache(maxsize=4096)
def _parse_synth(qid: str, text: str) -> SynthQuestion:
    m = _TEXT_RE.match(text)
    if m is None:
        raise NotSynthetic(f"not a synthetic instruction chain: {text!r}")
    start = int(m.group(1))
    ops = tuple((op, int(operand)) for op, operand in _OP_RE.findall(m.group(2)))
    if not ops:
        raise NotSynthetic(f"no instructions found in: {text!r}")
    return SynthQuestion(qid=qid, start_value=start, ops=ops)


def gen_questions(seed: int, n: int, depth: int) -> list[SynthQuestion]:
    """Deterministic question batch.

    Start values land in [0, 20], operands in [1, 9] (mul draws from
    [2, 9] so no instruction is an identity), and any op that would push
    an intermediate value past |1e6| is redrawn. The stream is sequential
    per question, so the first k questions of a larger batch match the
    batch of size k.
    """
    if n < 1 or depth < 1:
        raise ValueError("n and depth must be >= 1")
    rng = rng_from("synth-questions", seed, depth)
    out = []
    for i in range(n):
        start = int(rng.integers(0, 21))
        value = start
        ops: list[tuple[str, int]] = []
        for _ in range(depth):
            while True:
                op = OPS[int(rng.integers(0, 3))]
                lo = 2 if op == "mul" else 1
                operand = int(rng.integers(lo, 10))
                nxt = apply_op(op, operand, value)
                if abs(nxt) <= MAGNITUDE_CAP:
                    break
            ops.append((op, operand))
            value = nxt
        out.append(SynthQuestion(qid=f"synth-{seed}-d{depth}-{i}", start_value=start, ops=tuple(ops)))
    return out


SUITE_PREFIX = "synth:"


def parse_suite_spec(spec: str) -> tuple[int, int, int]:
    """'synth:<seed>:<n>:<depth>' -> (seed, n, depth)."""
    if not spec.startswith(SUITE_PREFIX):
        raise ValueError(f"not a synthetic suite spec: {spec!r}")
    parts = spec[len(SUITE_PREFIX):].split(":")
    if len(parts) != 3:
        raise ValueError(f"suite spec needs seed:n:depth, got {spec!r}")
    try:
        seed, n, depth = (int(p) for p in parts)
    except ValueError as e:
        raise ValueError(f"non-integer field in suite spec {spec!r}") from e
    return seed, n, depth


def suite_questions(spec: str) -> list[Question]:
    seed, n, depth = parse_suite_spec(spec)
    return [sq.to_question() for sq in gen_questions(seed, n, depth)]


# --- state replay and step grading --------------------------------------


@dataclass(frozen=True)
class SynthState:
    """Where a trace stands: the running value and ops consumed so far."""

    value: int
    applied: int
    depth: int

    @property
    def exhausted(self) -> bool:
        return self.applied >= self.depth

    @property
    def final_step(self) -> bool:
        return self.applied == self.depth - 1


def replay_state(sq: SynthQuestion, steps: Sequence[Step]) -> SynthState:
    """State after the given prefix, trusting the values the steps state.

    A solver continues from what it wrote, even when wrong, so replay reads
    the stated running value instead of recomputing the gold one. Lines
    without a stated value advance nothing.
    """
    value = sq.start_value
    applied = 0
    for step in steps:
        m = _VALUE_RE.search(step.body)
        if m is not None and applied < sq.depth:
            value = int(m.group(1))
            applied += 1
    return SynthState(value=value, applied=applied, depth=sq.depth)


def expected_step(sq: SynthQuestion, state: SynthState) -> tuple[int, bool]:
    """(expected stated value, whether the step should be terminal)."""
    if state.exhausted:
        raise NotSynthetic("prefix already consumed every instruction")
    op, operand = sq.ops[state.applied]
    return apply_op(op, operand, state.value), state.final_step


def emit_action(sq: SynthQuestion, state: SynthState, action: int) -> str:
    """Render the body for one vocabulary action at the given state."""
    if not (0 <= action < len(ACTIONS)):
        raise UnknownAction(f"action {action} outside vocabulary of {len(ACTIONS)}")
    if state.exhausted:
        raise NotSynthetic("no instruction left to emit a step for")
    op, operand = sq.ops[state.applied]
    target = apply_op(op, operand, state.value)
    name = ACTIONS[action]
    if name == "stop":
        return f"Answer: {state.value}"
    if name == "skip":
        return f"Answer: {target}"
    if name == "wrong_op":
        shown_value = apply_op(flip_op(op), operand, state.value)
    elif name == "high":
        shown_value = target + 1
    elif name == "low":
        shown_value = target - 1
    else:
        shown_value = target
    body = f"Apply {op} {operand}: value = {shown_value}."
    if state.final_step:
        body += f" Answer: {shown_value}"
    return body


def action_for_body(sq: SynthQuestion, state: SynthState, body: str) -> Optional[int]:
    """Lowest action index whose emission matches the body, else None."""
    for action in range(len(ACTIONS)):
        if emit_action(sq, state, action) == body:
            return action
    return None


def step_error(sq: SynthQuestion, state: SynthState, body: str) -> int:
    """Distance of a candidate step from the expected one; 0 means correct."""
    expected_value, want_terminal = expected_step(sq, state)
    stated = _INT_RE.findall(body)
    if not stated:
        return _UNPARSEABLE_ERR
    is_terminal = "Answer:" in body
    err = abs(int(stated[-1]) - expected_value)
    if is_terminal != want_terminal:
        err += 1
    return err


# --- oracles -------------------------------------------------------------


def _question_state(prefix: StepPrefix) -> tuple[SynthQuestion, SynthState]:
    sq = SynthQuestion.from_question(prefix.question)
    state = replay_state(sq, prefix.steps)
    if state.exhausted:
        raise NotSynthetic("prefix already terminal; nothing left to judge")
    return sq, state


def candidate_errors(prefix: StepPrefix, cand_a: Step, cand_b: Step) -> tuple[int, int]:
    """Oracle step errors for two candidates at the same prefix."""
    sq, state = _question_state(prefix)
    return step_error(sq, state, cand_a.body), step_error(sq, state, cand_b.body)


def oracle_judge(prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
    """Exact comparison by step error; ties prefer the first argument."""
    err_a, err_b = candidate_errors(prefix, cand_a, cand_b)
    preferred = FIRST if err_a <= err_b else SECOND
    return JudgeVerdict(
        preferred,
        explanation=f"step errors: first={err_a}, second={err_b}",
        raw=f"oracle errors {err_a} vs {err_b}",
    )


def oracle_prm(prefix: StepPrefix, step: Step) -> float:
    """Score in (0, 1]: 1 when the step is exactly right, else 1/(1+err)."""
    sq, state = _question_state(prefix)
    return 1.0 / (1.0 + step_error(sq, state, step.body))


class OracleJudge:
    """Judge backend wrapper around oracle_judge."""

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        return oracle_judge(prefix, cand_a, cand_b)


class OracleScorer:
    """Step scorer backend wrapper around oracle_prm."""

    def score(self, prefix: StepPrefix, step: Step) -> float:
        return oracle_prm(prefix, step)


# --- task adapter for the toy policy -------------------------------------


class SynthTask:
    """Maps prefixes to tabular context keys and actions to step bodies.

    Context keys depend only on (depth, ops consumed, running value), so
    distinct questions that reach the same state share one policy row and
    training generalizes across the suite.
    """

    name = "synth"

    def context_key(self, prefix: StepPrefix) -> str:
        sq = SynthQuestion.from_question(prefix.question)
        state = replay_state(sq, prefix.steps)
        op, operand = (
            sq.ops[state.applied] if not state.exhausted else ("end", 0)
        )
        return (
            f"synth|d={state.depth}|k={state.applied}|v={state.value}"
            f"|op={op}|b={operand}"
        )

    def n_actions(self) -> int:
        return len(ACTIONS)

    def action_names(self) -> tuple[str, ...]:
        return ACTIONS

    def emit(self, prefix: StepPrefix, action: int) -> str:
        sq = SynthQuestion.from_question(prefix.question)
        state = replay_state(sq, prefix.steps)
        return emit_action(sq, state, action)

    def action_for(self, prefix: StepPrefix, body: str) -> Optional[int]:
        sq = SynthQuestion.from_question(prefix.question)
        state = replay_state(sq, prefix.steps)
        if state.exhausted:
            return None
        return action_for_body(sq, state, body)


def make_judgments(
    questions: Sequence[Question],
    seed: int,
    n_records: int,
) -> list["PairwiseJudgment"]:
    """Oracle-labeled candidate pairs for judge calibration.

    Each record draws a random reachable prefix depth and two distinct
    actions; gold is the oracle's preference on the pair as presented.
    """
    from .judging import PairwiseJudgment

    if not questions:
        from .errors import EmptyInput

        raise EmptyInput("make_judgments needs at least one question")
    rng = rng_from("synth-judgments", seed)
    records: list[PairwiseJudgment] = []
    attempts = 0
    while len(records) < n_records:
        attempts += 1
        if attempts > 50 * n_records:
            raise RuntimeError("could not draw enough distinct candidate pairs")
        q = questions[int(rng.integers(0, len(questions)))]
        sq = SynthQuestion.from_question(q)
        level = int(rng.integers(0, sq.depth))
        # honest prefix: `level` correct steps along the gold trace
        values = (sq.start_value,) + sq.gold_trace
        steps = tuple(
            Step(k + 1, emit_action(sq, SynthState(values[k], k, sq.depth), CORRECT_ACTION))
            for k in range(level)
        )
        prefix = StepPrefix(q, steps)
        state = replay_state(sq, steps)
        a_action, b_action = rng.choice(len(ACTIONS), size=2, replace=False)
        body_a = emit_action(sq, state, int(a_action))
        body_b = emit_action(sq, state, int(b_action))
        if body_a == body_b:
            continue
        # drop err ties too: gold would be an arbitrary coin there
        if step_error(sq, state, body_a) == step_error(sq, state, body_b):
            continue
        cand_a = Step(prefix.next_index, body_a)
        cand_b = Step(prefix.next_index, body_b)
        gold = oracle_judge(prefix, cand_a, cand_b).preferred
        records.append(PairwiseJudgment(prefix, cand_a, cand_b, gold))
    return records
