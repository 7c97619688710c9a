"""Tabular softmax policy over step-template actions, plus its judge stand-in.

The toy policy is a dict from context keys to logit rows. Rows are never
created on read: lookups fall back to a deterministic per-key initializer,
so sampling and evaluation are pure and only training materializes state.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping, Optional

import numpy as np

from ..core import SamplingParams, Step, StepPrefix
from ..errors import IoError, SchemaMismatch, UnknownAction
from ..judging import FIRST, SECOND, JudgeVerdict
from ..seeding import rng_from
from ..synth import candidate_errors
from .base import StepTask

# default logit gaps used by the biased initializer
GOOD_GAP = math.log(15.0)
BAD_GAP = 1.0


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    e = np.exp(z)
    return e / e.sum()


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - math.log(float(np.exp(z).sum()))


@dataclass(frozen=True)
class RowInit:
    """Declarative, serializable recipe for unseen logit rows.

    kind 'zeros' yields uniform rows. kind 'biased' makes a seeded per-key
    draw: a share rho of keys put a logit gap of good_gap on the correct
    action, the rest put bad_gap on one uniformly drawn wrong action. rho
    is solved so the expected probability mass on the correct action
    equals correct_mass.
    """

    kind: str = "zeros"
    seed: int = 0
    correct_index: int = 0
    correct_mass: float = 0.6
    good_gap: float = GOOD_GAP
    bad_gap: float = BAD_GAP

    def __post_init__(self) -> None:
        if self.kind not in ("zeros", "biased"):
            raise ValueError(f"unknown row init kind {self.kind!r}")

    def good_share(self, n_actions: int) -> float:
        """rho solving E[p(correct)] = correct_mass for this vocabulary size."""
        p_good = math.exp(self.good_gap) / (math.exp(self.good_gap) + n_actions - 1)
        p_bad = 1.0 / (math.exp(self.bad_gap) + n_actions - 1)
        rho = (self.correct_mass - p_bad) / (p_good - p_bad)
        if not (0.0 <= rho <= 1.0):
            raise ValueError(
                f"correct_mass {self.correct_mass} unreachable with gaps "
                f"({self.good_gap:.3f}, {self.bad_gap:.3f}) and {n_actions} actions"
            )
        return rho

    def build(self, context_key: str, n_actions: int) -> np.ndarray:
        row = np.zeros(n_actions, dtype=np.float64)
        if self.kind == "zeros":
            return row
        rng = rng_from("row-init", self.seed, context_key)
        if rng.random() < self.good_share(n_actions):
            row[self.correct_index] = self.good_gap
        else:
            wrong = int(rng.integers(0, n_actions - 1))
            if wrong >= self.correct_index:
                wrong += 1
            row[wrong] = self.bad_gap
        return row

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "seed": self.seed,
            "correct_index": self.correct_index,
            "correct_mass": self.correct_mass,
            "good_gap": self.good_gap,
            "bad_gap": self.bad_gap,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "RowInit":
        return cls(
            kind=str(d["kind"]),
            seed=int(d["seed"]),
            correct_index=int(d["correct_index"]),
            correct_mass=float(d["correct_mass"]),
            good_gap=float(d["good_gap"]),
            bad_gap=float(d["bad_gap"]),
        )


@dataclass
class ToyPolicy:
    """Differentiable-by-hand tabular policy over a finite action vocabulary."""

    vocab: tuple[str, ...]
    version: int = 1
    row_init: RowInit = field(default_factory=RowInit)
    rows: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __post_init__(self) -> None:
        if len(self.vocab) < 2:
            raise ValueError("vocabulary needs at least two actions")

    @property
    def n_actions(self) -> int:
        return len(self.vocab)

    def row(self, context_key: str) -> np.ndarray:
        """Logit row for a context; reads never materialize state."""
        stored = self.rows.get(context_key)
        if stored is not None:
            return stored.copy()
        return self.row_init.build(context_key, self.n_actions)

    def set_row(self, context_key: str, logits: np.ndarray) -> None:
        arr = np.asarray(logits, dtype=np.float64)
        if arr.shape != (self.n_actions,):
            raise ValueError(f"row shape {arr.shape} != ({self.n_actions},)")
        self.rows[context_key] = arr.copy()

    def logprob(self, context_key: str, action: int) -> float:
        self._check_action(action)
        return float(_log_softmax(self.row(context_key))[action])

    def probs(self, context_key: str, params: SamplingParams) -> np.ndarray:
        """Post-temperature, post-top_p distribution (zeros outside the nucleus)."""
        row = self.row(context_key)
        if params.temperature == 0.0:
            out = np.zeros_like(row)
            out[int(np.argmax(row))] = 1.0
            return out
        p = _softmax(row / params.temperature)
        if params.top_p >= 1.0:
            return p
        order = np.argsort(-p, kind="stable")
        csum = np.cumsum(p[order])
        keep_n = int(np.searchsorted(csum, params.top_p, side="left")) + 1
        kept = order[:keep_n]
        out = np.zeros_like(p)
        out[kept] = p[kept]
        return out / out.sum()

    def sample(self, context_key: str, params: SamplingParams, seed: int) -> int:
        """Deterministic draw: same (row contents, params, seed) -> same action."""
        p = self.probs(context_key, params)
        if params.temperature == 0.0:
            return int(np.argmax(p))
        rng = rng_from("toy-sample", seed, context_key)
        return int(np.searchsorted(np.cumsum(p), rng.random(), side="right"))

    def copy(self) -> "ToyPolicy":
        return ToyPolicy(
            vocab=self.vocab,
            version=self.version,
            row_init=self.row_init,
            rows={k: v.copy() for k, v in self.rows.items()},
        )

    def _check_action(self, action: int) -> None:
        if not (0 <= action < self.n_actions):
            raise UnknownAction(
                f"action {action} outside vocabulary of {self.n_actions}"
            )


@dataclass(frozen=True)
class ReferencePolicy:
    """Frozen copy of a policy taken at the start of a training round.

    Rows are read-only; lookups for keys the source had never materialized
    fall back to the same initializer, so reference log-probs match what
    the source would have said at freeze time for every context.
    """

    vocab: tuple[str, ...]
    version: int
    row_init: RowInit
    rows: Mapping[str, np.ndarray]

    @classmethod
    def freeze(cls, policy: ToyPolicy) -> "ReferencePolicy":
        frozen: dict[str, np.ndarray] = {}
        for key, arr in policy.rows.items():
            copy = arr.copy()
            copy.setflags(write=False)
            frozen[key] = copy
        return cls(
            vocab=policy.vocab,
            version=policy.version,
            row_init=policy.row_init,
            rows=MappingProxyType(frozen),
        )

    def row(self, context_key: str) -> np.ndarray:
        stored = self.rows.get(context_key)
        if stored is not None:
            return stored.copy()
        return self.row_init.build(context_key, len(self.vocab))

    def logprob(self, context_key: str, action: int) -> float:
        if not (0 <= action < len(self.vocab)):
            raise UnknownAction(f"action {action} outside vocabulary of {len(self.vocab)}")
        return float(_log_softmax(self.row(context_key))[action])


# --- spec-level convenience ops ------------------------------------------


def default_policy(seed: int = 0, correct_mass: float = 0.6) -> ToyPolicy:
    """Fresh biased policy over the synthetic task vocabulary."""
    from ..synth import ACTIONS

    return ToyPolicy(
        vocab=ACTIONS,
        row_init=RowInit(kind="biased", seed=seed, correct_mass=correct_mass),
    )


def toy_step_logprob(policy: ToyPolicy, context_key: str, action: int) -> float:
    return policy.logprob(context_key, action)


def toy_sample_step(
    policy: ToyPolicy,
    task: StepTask,
    prefix: StepPrefix,
    params: SamplingParams,
    seed: int,
) -> Step:
    key = task.context_key(prefix)
    action = policy.sample(key, params, seed)
    return Step(index=prefix.next_index, body=task.emit(prefix, action))


@dataclass(frozen=True)
class ToyGenerator:
    """Generator backend view of (policy, task)."""

    policy: ToyPolicy
    task: StepTask

    def generate_step(self, prefix: StepPrefix, params: SamplingParams, seed: int) -> Step:
        return toy_sample_step(self.policy, self.task, prefix, params, seed)


# --- toy judge ------------------------------------------------------------


@dataclass(frozen=True)
class ToyJudgeConfig:
    """accuracy_q is the chance of answering like the oracle on decidable pairs."""

    accuracy_q: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not (0.5 <= self.accuracy_q <= 1.0):
            raise ValueError(f"accuracy_q must be in [0.5, 1], got {self.accuracy_q}")


@dataclass(frozen=True)
class ToyJudge:
    """Noisy judge over the synthetic oracle.

    On pairs the oracle can tell apart, it answers like the oracle with
    probability accuracy_q and flips otherwise. Oracle ties resolve to the
    first argument deterministically, with no noise. The flip coin is
    content-addressed (a hash of the judged texts and the configured
    seed, never a call counter), so verdicts are idempotent and
    independent of evaluation order.
    """

    cfg: ToyJudgeConfig = field(default_factory=ToyJudgeConfig)

    def compare(self, prefix: StepPrefix, cand_a: Step, cand_b: Step) -> JudgeVerdict:
        err_a, err_b = candidate_errors(prefix, cand_a, cand_b)
        if err_a == err_b:
            return JudgeVerdict(
                FIRST,
                explanation=f"oracle tie at error {err_a}",
                raw=f"tie {err_a}",
            )
        truth = FIRST if err_a < err_b else SECOND
        preferred = truth
        if self.cfg.accuracy_q < 1.0:
            rng = rng_from(
                "toy-judge",
                self.cfg.rng_seed,
                prefix.question.id,
                *[s.raw for s in prefix.steps],
                cand_a.raw,
                cand_b.raw,
            )
            if rng.random() >= self.cfg.accuracy_q:
                preferred = SECOND if truth == FIRST else FIRST
        flipped = " (noise flip)" if preferred != truth else ""
        return JudgeVerdict(
            preferred,
            explanation=f"step errors: first={err_a}, second={err_b}{flipped}",
            raw=f"errors {err_a} vs {err_b}{flipped}",
        )


def toy_judge(
    cfg: ToyJudgeConfig,
    prefix: StepPrefix,
    cand_a: Step,
    cand_b: Step,
) -> JudgeVerdict:
    return ToyJudge(cfg).compare(prefix, cand_a, cand_b)


# --- snapshot serialization ------------------------------------------------

POLICY_SCHEMA = "policy"
POLICY_VERSION = 1


def save_policy(
    policy: ToyPolicy,
    path: str | Path,
    tag: Optional[str] = None,
    parent: Optional[str] = None,
) -> None:
    """Write a policy as a flat JSON snapshot (schema 'policy', version 1)."""
    doc = {
        "schema": POLICY_SCHEMA,
        "version": POLICY_VERSION,
        "tag": tag,
        "parent": parent,
        "vocab": list(policy.vocab),
        "policy_version": policy.version,
        "row_init": policy.row_init.to_dict(),
        "rows": {k: [float(x) for x in v] for k, v in policy.rows.items()},
    }
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(json.dumps(doc, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
        tmp.replace(path)
    except OSError as e:
        raise IoError(f"cannot write policy snapshot {path}: {e}") from e


def load_policy(path: str | Path) -> tuple[ToyPolicy, Optional[str], Optional[str]]:
    """Read a snapshot back; returns (policy, tag, parent)."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise IoError(f"cannot read policy snapshot {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise SchemaMismatch(f"policy snapshot {path} is not JSON: {e}") from e
    if doc.get("schema") != POLICY_SCHEMA:
        raise SchemaMismatch(f"expected schema {POLICY_SCHEMA!r}, got {doc.get('schema')!r}")
    if int(doc.get("version", -1)) > POLICY_VERSION:
        raise SchemaMismatch(f"snapshot version {doc['version']} is newer than {POLICY_VERSION}")
    policy = ToyPolicy(
        vocab=tuple(doc["vocab"]),
        version=int(doc["policy_version"]),
        row_init=RowInit.from_dict(doc["row_init"]),
        rows={k: np.asarray(v, dtype=np.float64) for k, v in doc["rows"].items()},
    )
    return policy, doc.get("tag"), doc.get("parent")
