"""JSONL round trips, schema guards, and the judge-training set builder."""
import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from steppref.backends.scripted import ConstantJudge, ScriptedCompletion, UnparseableJudge
from steppref.backends.toy import ToyGenerator, default_policy
from steppref.core import Question, Step, StepPrefix
from steppref.datasets import (
    EFTBuildConfig,
    EFTRecord,
    IFTRecord,
    build_eft,
    load_numina_jsonl,
    read_jsonl,
    resolve_questions,
    segment_solution,
    write_jsonl,
)
from steppref.errors import (
    ContentAltered,
    EmptyInput,
    IoError,
    MalformedLine,
    SchemaMismatch,
)
from steppref.judging import FIRST, SECOND
from steppref.search import StepPreferencePair
from steppref.synth import OracleJudge, OracleScorer, SynthTask, oracle_judge, suite_questions


def _q(i=0):
    return Question(id=f"q{i}", text=f"question number {i}", gold_answer=str(i))


def test_ppd_round_trip(tmp_path):
    pairs = [
        StepPreferencePair("q0", (), Step(1, "alpha"), Step(1, "beta"), 1, "M2"),
        StepPreferencePair(
            "q1", (Step(1, "first"),), Step(2, "gamma"), Step(2, "delta"), 2, "M2"
        ),
    ]
    path = tmp_path / "d.jsonl"
    write_jsonl(path, "ppd", pairs)
    assert read_jsonl(path, "ppd") == pairs


def test_ift_round_trip(tmp_path):
    records = [
        IFTRecord(question=_q(0), steps=(Step(1, "work"), Step(2, "Answer: 0")), answer="0"),
    ]
    path = tmp_path / "ift.jsonl"
    write_jsonl(path, "ift", records)
    assert read_jsonl(path, "ift") == records


def test_eft_round_trip(tmp_path):
    records = [
        EFTRecord(
            question=_q(1),
            prefix_steps=(Step(1, "lead"),),
            cand_a=Step(2, "good"),
            cand_b=Step(2, "bad"),
            gold=FIRST,
            explanation="why",
            provenance="M3",
        ),
    ]
    path = tmp_path / "eft.jsonl"
    write_jsonl(path, "eft", records)
    assert read_jsonl(path, "eft") == records


def test_questions_round_trip(tmp_path):
    qs = suite_questions("synth:1:5:2")
    path = tmp_path / "qs.jsonl"
    write_jsonl(path, "questions", qs)
    assert read_jsonl(path, "questions") == qs


def test_empty_file_is_legal(tmp_path):
    path = tmp_path / "empty.jsonl"
    write_jsonl(path, "ppd", [])
    assert read_jsonl(path, "ppd") == []
    header = json.loads(path.read_text().splitlines()[0])
    assert header == {"schema": "ppd", "version": 1}


def test_identical_inputs_identical_bytes(tmp_path):
    pairs = [StepPreferencePair("q", (), Step(1, "a"), Step(1, "b"), 1, "M1")]
    p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(p1, "ppd", pairs)
    write_jsonl(p2, "ppd", pairs)
    assert p1.read_bytes() == p2.read_bytes()


def test_read_rejects_wrong_kind(tmp_path):
    path = tmp_path / "d.jsonl"
    write_jsonl(path, "ppd", [])
    with pytest.raises(SchemaMismatch):
        read_jsonl(path, "ift")


def test_read_rejects_newer_version(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"schema": "ppd", "version": 99}\n')
    with pytest.raises(SchemaMismatch):
        read_jsonl(path, "ppd")


def test_read_rejects_missing_header(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text("")
    with pytest.raises(SchemaMismatch):
        read_jsonl(path, "ppd")


def test_malformed_line_carries_number(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"schema": "ppd", "version": 1}\n{not json}\n')
    with pytest.raises(MalformedLine) as exc:
        read_jsonl(path, "ppd")
    assert exc.value.line_no == 2


def test_malformed_record_fields(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"schema": "ppd", "version": 1}\n{"question_id": "q"}\n')
    with pytest.raises(MalformedLine):
        read_jsonl(path, "ppd")


def test_missing_file(tmp_path):
    with pytest.raises(IoError):
        read_jsonl(tmp_path / "nope.jsonl", "ppd")


def test_unknown_kind():
    with pytest.raises(ValueError):
        write_jsonl("x.jsonl", "bogus", [])
    with pytest.raises(ValueError):
        read_jsonl("x.jsonl", "bogus")


_BODY = st.text(
    alphabet=st.characters(blacklist_categories=("Cs", "Cc")),
    min_size=1,
    max_size=24,
).filter(lambda s: s == s.strip() and s.strip() != "" and "\n" not in s)


@st.composite
def _ppd_records(draw):
    n_prefix = draw(st.integers(0, 3))
    prefix = tuple(Step(i + 1, draw(_BODY)) for i in range(n_prefix))
    level = n_prefix + 1
    chosen = Step(level, draw(_BODY))
    rejected_body = draw(_BODY.filter(lambda b: b != chosen.body))
    return StepPreferencePair(
        question_id=draw(st.text(min_size=1, max_size=10)),
        prefix_steps=prefix,
        chosen=chosen,
        rejected=Step(level, rejected_body),
        level=level,
        producer_version=draw(st.sampled_from(["M1", "M2", "unversioned"])),
    )


@settings(max_examples=40, deadline=None)
@given(st.lists(_ppd_records(), max_size=6))
def test_ppd_round_trip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("ppd") / "d.jsonl"
    write_jsonl(path, "ppd", records)
    assert read_jsonl(path, "ppd") == records


@st.composite
def _eft_records(draw):
    n_prefix = draw(st.integers(0, 2))
    prefix = tuple(Step(i + 1, draw(_BODY)) for i in range(n_prefix))
    level = n_prefix + 1
    a = Step(level, draw(_BODY))
    b = Step(level, draw(_BODY.filter(lambda x: x != a.body)))
    return EFTRecord(
        question=Question(id="q", text="t"),
        prefix_steps=prefix,
        cand_a=a,
        cand_b=b,
        gold=draw(st.sampled_from([FIRST, SECOND])),
        explanation=draw(st.text(max_size=20)),
        provenance=draw(st.text(max_size=8)),
    )


@settings(max_examples=40, deadline=None)
@given(st.lists(_eft_records(), max_size=5))
def test_eft_round_trip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("eft") / "d.jsonl"
    write_jsonl(path, "eft", records)
    assert read_jsonl(path, "eft") == records


@st.composite
def _ift_records(draw):
    n = draw(st.integers(1, 4))
    steps = tuple(Step(i + 1, draw(_BODY)) for i in range(n))
    return IFTRecord(question=Question(id="q", text="t"), steps=steps, answer=draw(_BODY))


@settings(max_examples=40, deadline=None)
@given(st.lists(_ift_records(), max_size=5))
def test_ift_round_trip_property(tmp_path_factory, records):
    path = tmp_path_factory.mktemp("ift") / "d.jsonl"
    write_jsonl(path, "ift", records)
    assert read_jsonl(path, "ift") == records


def test_eft_record_validation():
    with pytest.raises(ValueError):
        EFTRecord(_q(), (), Step(1, "same"), Step(1, "same"), FIRST)
    with pytest.raises(ValueError):
        EFTRecord(_q(), (), Step(1, "a"), Step(1, "b"), "best")


def test_load_numina(tmp_path):
    path = tmp_path / "n.jsonl"
    path.write_text(
        '{"problem": "What is 2+2?", "solution": "It is \\\\boxed{4}."}\n'
        '{"problem": "Open question", "solution": "no box"}\n'
    )
    qs = load_numina_jsonl(path)
    assert len(qs) == 2
    assert qs[0].gold_answer == "4"
    assert qs[0].source == "external"
    assert qs[1].gold_answer is None
    path.write_text('{"solution": "missing problem"}\n')
    with pytest.raises(MalformedLine):
        load_numina_jsonl(path)


def test_resolve_questions(tmp_path):
    synth = resolve_questions("synth:2:4:2")
    assert len(synth) == 4
    path = tmp_path / "qs.jsonl"
    write_jsonl(path, "questions", synth)
    assert resolve_questions(str(path)) == synth


def test_build_eft_oracle_annotator_golds(questions6):
    cfg = EFTBuildConfig(simulation_depth=3, num_iterations=8, width=4)
    scorer = OracleScorer()
    gen = ToyGenerator(default_policy(seed=0), SynthTask())
    records = build_eft(questions6, scorer, gen, OracleJudge(), cfg, seed=3)
    assert records, "oracle annotation should keep at least some pairs"
    for r in records:
        # the annotated winner is always the scorer's argmax
        gold_step = r.cand_a if r.gold == FIRST else r.cand_b
        other = r.cand_b if r.gold == FIRST else r.cand_a
        prefix = StepPrefix(r.question, r.prefix_steps)
        assert scorer.score(prefix, gold_step) > scorer.score(prefix, other)


def test_build_eft_inconsistent_annotator_empty(questions6):
    cfg = EFTBuildConfig(simulation_depth=3, num_iterations=8, width=4)
    gen = ToyGenerator(default_policy(seed=0), SynthTask())
    # always-first judges contradict themselves under swapped order
    records = build_eft(questions6, OracleScorer(), gen, ConstantJudge(FIRST), cfg, seed=3)
    assert records == []
    records = build_eft(questions6, OracleScorer(), gen, UnparseableJudge(), cfg, seed=3)
    assert records == []


def test_build_eft_gold_not_always_first(questions20):
    cfg = EFTBuildConfig(simulation_depth=3, num_iterations=40, width=4)
    gen = ToyGenerator(default_policy(seed=1), SynthTask())
    records = build_eft(questions20, OracleScorer(), gen, OracleJudge(), cfg, seed=5)
    golds = {r.gold for r in records}
    assert golds == {FIRST, SECOND}


def test_build_eft_empty_questions():
    with pytest.raises(EmptyInput):
        build_eft([], OracleScorer(), None, OracleJudge(), EFTBuildConfig())


def test_segment_rule_based():
    steps = segment_solution("First do this. Then do that. Answer: 4")
    assert [s.index for s in steps] == [1, 2, 3]
    assert steps[0].body == "First do this."
    assert steps[2].body == "Answer: 4"


def test_segment_with_annotator():
    text = "Compute the sum. Report it."
    good = ScriptedCompletion(["Step 1: Compute the sum.\nStep 2: Report it."])
    steps = segment_solution(text, annotator=good)
    assert len(steps) == 2
    rewriter = ScriptedCompletion(["Step 1: Something entirely different."])
    with pytest.raises(ContentAltered):
        segment_solution(text, annotator=rewriter)


def test_segment_empty():
    with pytest.raises(EmptyInput):
        segment_solution("   ")
