"""Preference-loss math and the tabular training loop."""
import math

import numpy as np
import pytest

from steppref.backends.toy import ReferencePolicy, default_policy
from steppref.core import Question, Step, StepPrefix
from steppref.dpo import (
    DPOConfig,
    PairLogps,
    TaskPairCodec,
    dpo_loss,
    pair_logps,
    train_dpo,
)
from steppref.errors import EmptyPairs, NonFiniteInput, UnknownAction
from steppref.search import StepPreferencePair
from steppref.synth import ACTIONS, SynthQuestion, SynthTask


def _question():
    return SynthQuestion(qid="q0", start_value=3, ops=(("add", 2), ("mul", 2))).to_question()


def _pair(question, chosen_action="exact", rejected_action="high"):
    task = SynthTask()
    prefix = StepPrefix(question)
    chosen = Step(1, task.emit(prefix, ACTIONS.index(chosen_action)))
    rejected = Step(1, task.emit(prefix, ACTIONS.index(rejected_action)))
    return StepPreferencePair(
        question_id=question.id,
        prefix_steps=(),
        chosen=chosen,
        rejected=rejected,
        level=1,
        producer_version="M1",
    )


def _codec(question):
    return TaskPairCodec(task=SynthTask(), questions={question.id: question})


def test_loss_ln2_when_policy_equals_reference():
    q = _question()
    policy = default_policy(seed=0)
    ref = ReferencePolicy.freeze(policy)
    logps = pair_logps(policy, ref, _pair(q), _codec(q))
    assert dpo_loss(logps, beta=0.7) == pytest.approx(math.log(2), abs=1e-15)


def test_loss_ln2_at_beta_zero():
    q = _question()
    policy = default_policy(seed=0)
    ref = ReferencePolicy.freeze(policy)
    # move the policy away from the reference; beta 0 still gives ln 2
    key = SynthTask().context_key(StepPrefix(q))
    policy.set_row(key, np.array([3.0, -1.0, 0.5, 0.0, 2.0, -3.0]))
    logps = pair_logps(policy, ref, _pair(q), _codec(q))
    assert dpo_loss(logps, beta=0.0) == pytest.approx(math.log(2), abs=1e-15)
    assert dpo_loss(logps, beta=0.5) != pytest.approx(math.log(2), abs=1e-6)


def test_loss_input_validation():
    with pytest.raises(NonFiniteInput):
        PairLogps(float("nan"), 0.0, 0.0, 0.0)
    good = PairLogps(-1.0, -1.0, -1.0, -1.0)
    with pytest.raises(NonFiniteInput):
        dpo_loss(good, float("inf"))
    with pytest.raises(ValueError):
        dpo_loss(good, -0.1)


def test_config_validation():
    with pytest.raises(ValueError):
        DPOConfig(learning_rate=0.0)
    with pytest.raises(ValueError):
        DPOConfig(epochs=0)
    with pytest.raises(ValueError):
        DPOConfig(batch_size=0)
    with pytest.raises(NonFiniteInput):
        DPOConfig(beta=-1.0)


def test_train_requires_pairs():
    policy = default_policy(seed=0)
    q = _question()
    with pytest.raises(EmptyPairs):
        train_dpo(policy, ReferencePolicy.freeze(policy), [], DPOConfig(), _codec(q))


def test_codec_unknown_question_and_body():
    q = _question()
    codec = _codec(q)
    pair = _pair(q)
    foreign = StepPreferencePair(
        question_id="missing",
        prefix_steps=(),
        chosen=pair.chosen,
        rejected=pair.rejected,
        level=1,
        producer_version="M1",
    )
    with pytest.raises(UnknownAction):
        codec.encode(foreign)
    off_vocab = StepPreferencePair(
        question_id=q.id,
        prefix_steps=(),
        chosen=Step(1, "free-form text not in the vocabulary"),
        rejected=pair.rejected,
        level=1,
        producer_version="M1",
    )
    with pytest.raises(UnknownAction):
        codec.encode(off_vocab)


def test_train_moves_chosen_over_rejected():
    q = _question()
    policy = default_policy(seed=0)
    ref = ReferencePolicy.freeze(policy)
    codec = _codec(q)
    pair = _pair(q)
    key, ch, rj = codec.encode(pair)
    before = policy.row(key)
    trained, report = train_dpo(
        policy, ref, [pair] * 8, DPOConfig(beta=0.5, learning_rate=0.5, epochs=3), codec
    )
    after = trained.row(key)
    assert after[ch] > before[ch]
    assert after[rj] < before[rj]
    assert report.final_loss < report.initial_loss
    assert report.initial_loss == pytest.approx(math.log(2), abs=1e-12)
    assert report.n_pairs == 8 and report.n_contexts == 1
    assert len(report.grad_norms) == 3


def test_train_leaves_input_policy_untouched():
    q = _question()
    policy = default_policy(seed=0)
    snapshot = {k: v.copy() for k, v in policy.rows.items()}
    version = policy.version
    trained, _ = train_dpo(
        policy,
        ReferencePolicy.freeze(policy),
        [_pair(q)],
        DPOConfig(learning_rate=1.0),
        _codec(q),
    )
    assert policy.version == version
    assert set(policy.rows) == set(snapshot)
    assert trained.version == version + 1
    assert trained is not policy


def test_train_bitwise_deterministic_minibatch():
    q = _question()
    pairs = [_pair(q), _pair(q, "exact", "low"), _pair(q, "high", "stop")] * 4
    cfg = DPOConfig(beta=0.3, learning_rate=0.2, epochs=4, batch_size=2, rng_seed=5)

    def run():
        policy = default_policy(seed=1)
        trained, report = train_dpo(
            policy, ReferencePolicy.freeze(policy), pairs, cfg, _codec(q)
        )
        return trained, report

    a, ra = run()
    b, rb = run()
    assert set(a.rows) == set(b.rows)
    for k in a.rows:
        assert (a.rows[k] == b.rows[k]).all()
    assert ra == rb


def test_minibatch_order_is_seeded():
    q = _question()
    pairs = [_pair(q), _pair(q, "exact", "low"), _pair(q, "high", "stop")] * 4

    def final_rows(seed):
        policy = default_policy(seed=1)
        cfg = DPOConfig(beta=0.3, learning_rate=0.2, epochs=2, batch_size=1, rng_seed=seed)
        trained, _ = train_dpo(policy, ReferencePolicy.freeze(policy), pairs, cfg, _codec(q))
        return trained

    a = final_rows(0)
    b = final_rows(0)
    for k in a.rows:
        assert (a.rows[k] == b.rows[k]).all()


def test_vocab_mismatch_rejected():
    q = _question()
    policy = default_policy(seed=0)
    ref = ReferencePolicy(
        vocab=("a", "b"), version=1, row_init=policy.row_init, rows={}
    )
    with pytest.raises(ValueError):
        train_dpo(policy, ref, [_pair(q)], DPOConfig(), _codec(q))
