"""Step-wise preference optimization for the tabular policy.

Each preference pair pins one context row: chosen and rejected are
alternative next steps at the same prefix. The margin
x = beta * ((logp_theta(ch) - logp_ref(ch)) - (logp_theta(rj) - logp_ref(rj)))
gives loss softplus(-x), which sits at ln 2 exactly when the policy still
equals the reference or beta is zero. Gradients are analytic (see
_kernels), and plain gradient descent in a fixed reduction order keeps
training bitwise reproducible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Protocol, Sequence, runtime_checkable

import numpy as np

from . import _kernels
from .backends.base import StepTask
from .backends.toy import ReferencePolicy, ToyPolicy
from .core import Question, StepPrefix
from .errors import EmptyPairs, NonFiniteInput, UnknownAction
from .search import StepPreferencePair
from .seeding import rng_from


@dataclass(frozen=True)
class DPOConfig:
    beta: float = 0.1
    learning_rate: float = 0.05
    epochs: int = 1
    batch_size: Optional[int] = None  # None trains full-batch
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.beta) or self.beta < 0.0:
            raise NonFiniteInput(f"beta must be finite and >= 0, got {self.beta}")
        if not math.isfinite(self.learning_rate) or self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be finite and > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1 when set, got {self.batch_size}")


@dataclass(frozen=True)
class PairLogps:
    """The four log-probabilities one pair contributes to the loss."""

    policy_chosen: float
    policy_rejected: float
    ref_chosen: float
    ref_rejected: float

    def __post_init__(self) -> None:
        for name in ("policy_chosen", "policy_rejected", "ref_chosen", "ref_rejected"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise NonFiniteInput(f"{name} is not finite: {v}")


@dataclass(frozen=True)
class TrainReport:
    n_pairs: int
    n_contexts: int
    epochs: int
    initial_loss: float
    final_loss: float
    grad_norms: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "n_contexts": self.n_contexts,
            "epochs": self.epochs,
            "initial_loss": self.initial_loss,
            "final_loss": self.final_loss,
            "grad_norms": list(self.grad_norms),
        }


def dpo_loss(logps: PairLogps, beta: float) -> float:
    """softplus(-x) for one pair; strictly positive, ln 2 at the reference point."""
    if not math.isfinite(beta):
        raise NonFiniteInput(f"beta is not finite: {beta}")
    if beta < 0.0:
        raise ValueError(f"beta must be >= 0, got {beta}")
    a = beta * (logps.policy_chosen - logps.ref_chosen)
    b = beta * (logps.policy_rejected - logps.ref_rejected)
    return float(np.logaddexp(0.0, -(a - b)))


@runtime_checkable
class PairCodec(Protocol):
    """Maps a preference pair onto the tabular coordinates it trains."""

    def encode(self, pair: StepPreferencePair) -> tuple[str, int, int]:
        ...


@dataclass(frozen=True)
class TaskPairCodec:
    """Codec backed by a task adapter and a question pool keyed by id."""

    task: StepTask
    questions: Mapping[str, Question]

    def encode(self, pair: StepPreferencePair) -> tuple[str, int, int]:
        question = self.questions.get(pair.question_id)
        if question is None:
            raise UnknownAction(f"no question with id {pair.question_id!r} in the pool")
        prefix = StepPrefix(question, pair.prefix_steps)
        chosen = self.task.action_for(prefix, pair.chosen.body)
        rejected = self.task.action_for(prefix, pair.rejected.body)
        if chosen is None:
            raise UnknownAction(f"chosen step not in vocabulary: {pair.chosen.body!r}")
        if rejected is None:
            raise UnknownAction(f"rejected step not in vocabulary: {pair.rejected.body!r}")
        return self.task.context_key(prefix), chosen, rejected


def pair_logps(
    policy: ToyPolicy,
    ref: ReferencePolicy,
    pair: StepPreferencePair,
    codec: PairCodec,
) -> PairLogps:
    key, chosen, rejected = codec.encode(pair)
    return PairLogps(
        policy_chosen=policy.logprob(key, chosen),
        policy_rejected=policy.logprob(key, rejected),
        ref_chosen=ref.logprob(key, chosen),
        ref_rejected=ref.logprob(key, rejected),
    )


def _encode_batch(
    pairs: Sequence[StepPreferencePair],
    codec: PairCodec,
) -> tuple[list[str], np.ndarray, np.ndarray, np.ndarray]:
    keys: list[str] = []
    key_index: dict[str, int] = {}
    ctx = np.empty(len(pairs), dtype=np.int64)
    ch = np.empty(len(pairs), dtype=np.int64)
    rj = np.empty(len(pairs), dtype=np.int64)
    for i, pair in enumerate(pairs):
        key, chosen, rejected = codec.encode(pair)
        if key not in key_index:
            key_index[key] = len(keys)
            keys.append(key)
        ctx[i] = key_index[key]
        ch[i] = chosen
        rj[i] = rejected
    return keys, ctx, ch, rj


def train_dpo(
    policy: ToyPolicy,
    ref: ReferencePolicy,
    pairs: Sequence[StepPreferencePair],
    cfg: DPOConfig,
    codec: PairCodec,
) -> tuple[ToyPolicy, TrainReport]:
    """Gradient-descend the policy on preference pairs; returns a new policy.

    The input policy is left untouched; the result carries a bumped
    version. Context rows are reduced in first-appearance order and
    mini-batch shuffles are seeded, so identical inputs give bitwise
    identical parameters.
    """
    if not pairs:
        raise EmptyPairs("train_dpo needs at least one pair")
    if tuple(ref.vocab) != tuple(policy.vocab):
        raise ValueError("policy and reference vocabularies differ")

    keys, ctx, ch, rj = _encode_batch(pairs, codec)
    n_actions = policy.n_actions
    for i in range(len(pairs)):
        if not (0 <= ch[i] < n_actions) or not (0 <= rj[i] < n_actions):
            raise UnknownAction("encoded action outside the policy vocabulary")

    Z = np.stack([policy.row(k) for k in keys]).astype(np.float64)
    ref_ch = np.array([ref.logprob(keys[ctx[i]], int(ch[i])) for i in range(len(pairs))])
    ref_rj = np.array([ref.logprob(keys[ctx[i]], int(rj[i])) for i in range(len(pairs))])

    initial_loss = _kernels.batch_loss(Z, ctx, ch, rj, ref_ch, ref_rj, cfg.beta)
    grad_norms: list[float] = []
    n = len(pairs)
    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            _, gsq = _kernels.batch_step(Z, ctx, ch, rj, ref_ch, ref_rj, cfg.beta, cfg.learning_rate)
            grad_norms.append(math.sqrt(gsq))
            continue
        perm = rng_from("dpo-shuffle", cfg.rng_seed, epoch).permutation(n)
        total_gsq = 0.0
        for start in range(0, n, cfg.batch_size):
            sel = perm[start : start + cfg.batch_size]
            _, gsq = _kernels.batch_step(
                Z, ctx[sel], ch[sel], rj[sel], ref_ch[sel], ref_rj[sel],
                cfg.beta, cfg.learning_rate,
            )
            total_gsq += gsq
        grad_norms.append(math.sqrt(total_gsq))
    final_loss = _kernels.batch_loss(Z, ctx, ch, rj, ref_ch, ref_rj, cfg.beta)

    trained = policy.copy()
    for row_i, key in enumerate(keys):
        trained.set_row(key, Z[row_i])
    trained.version = policy.version + 1
    report = TrainReport(
        n_pairs=n,
        n_contexts=len(keys),
        epochs=cfg.epochs,
        initial_loss=initial_loss,
        final_loss=final_loss,
        grad_norms=tuple(grad_norms),
    )
    return trained, report
