"""Tournament scoring, rollback semantics, and trajectory bookkeeping."""
import itertools

import pytest

from steppref.backends.scripted import ConstantJudge, ScriptedGenerator, ScriptedJudge
from steppref.core import Question, SamplingParams, Step, StepPrefix
from steppref.errors import GenerationError, MalformedStep
from steppref.judging import FIRST, SECOND, JudgeVerdict
from steppref.search import (
    ABORTED_MAX_STEPS,
    ABORTED_ROLLBACKS,
    COMPLETED,
    CandidateSet,
    SearchConfig,
    StepPreferencePair,
    TraceSink,
    TrajectoryOutcome,
    run_tournament,
    sample_candidates,
    search_trajectory,
)


class PlantedOrderJudge:
    """Consistent total order over candidate bodies: lower rank wins."""

    def __init__(self, rank):
        self.rank = dict(rank)

    def compare(self, prefix, cand_a, cand_b):
        label = FIRST if self.rank[cand_a.body] < self.rank[cand_b.body] else SECOND
        return JudgeVerdict(label, explanation="planted", raw=label)


def _prefix():
    return StepPrefix(Question(id="q", text="anything"))


def _cands(n):
    return CandidateSet(level=1, candidates=tuple(Step(1, f"cand {i}") for i in range(n)))


def test_tournament_matches_planted_order_spot():
    # permutation maps candidate i to its rank; 0 is best
    for perm in ((2, 0, 1, 3), (3, 2, 1, 0)):
        judge = PlantedOrderJudge({f"cand {i}": r for i, r in enumerate(perm)})
        result = run_tournament(_prefix(), _cands(4), judge)
        brute = tuple(sum(1 for j in range(4) if j != i and perm[i] < perm[j]) for i in range(4))
        # only the first-presented side collects the win, so a consistent
        # judge hands each candidate one point per strictly-worse rival
        assert result.scores == brute
        assert perm[result.best_index] == 0
        assert perm[result.worst_index] == 3
        assert not result.tie


def test_tournament_antisymmetric_score_sum():
    for w in range(2, 6):
        for perm in itertools.permutations(range(w)):
            judge = PlantedOrderJudge({f"cand {i}": r for i, r in enumerate(perm)})
            result = run_tournament(_prefix(), _cands(w), judge)
            assert sum(result.scores) == w * (w - 1) // 2


def test_tournament_tie_break_lowest_index():
    judge = ConstantJudge(FIRST)
    result = run_tournament(_prefix(), _cands(3), judge)
    # every candidate wins as presented-first: all scores equal
    assert result.scores == (2, 2, 2)
    assert result.best_index == 0 and result.worst_index == 0
    assert result.tie


def test_tournament_comparison_count():
    judge = PlantedOrderJudge({f"cand {i}": i for i in range(5)})
    result = run_tournament(_prefix(), _cands(5), judge)
    assert len(result.comparisons) == 5 * 4


def test_sample_candidates_width_and_index():
    gen = ScriptedGenerator([f"b{i}" for i in range(3)])
    cfg = SearchConfig(width=3, max_steps=5, max_rollbacks=2)
    cands = sample_candidates(_prefix(), cfg, gen, seed=0)
    assert len(cands.candidates) == 3
    assert all(c.index == 1 for c in cands.candidates)


def test_sample_candidates_rejects_wrong_index():
    class BadGen:
        def generate_step(self, prefix, params, seed):
            return Step(7, "way off")

    cfg = SearchConfig(width=2, max_steps=5, max_rollbacks=2)
    with pytest.raises(MalformedStep):
        sample_candidates(_prefix(), cfg, BadGen(), seed=0)


def test_sample_candidates_wraps_backend_crash():
    class CrashGen:
        def generate_step(self, prefix, params, seed):
            raise RuntimeError("backend fell over")

    cfg = SearchConfig(width=2, max_steps=5, max_rollbacks=2)
    with pytest.raises(GenerationError):
        sample_candidates(_prefix(), cfg, CrashGen(), seed=0)


def _run_scripted(bodies, verdicts, max_steps=6, max_rollbacks=4, trace=None):
    q = Question(id="q", text="scripted run")
    cfg = SearchConfig(width=2, max_steps=max_steps, max_rollbacks=max_rollbacks)
    return search_trajectory(
        q,
        cfg,
        ScriptedGenerator(bodies),
        ScriptedJudge(verdicts),
        seed=0,
        producer_version="M1",
        trace=trace,
    )


def test_completed_trajectory_pairs():
    bodies = ["work a", "work b", "Answer: 5", "work c"]
    # each level: (0,1) then (1,0); 'first'+'second' both favor candidate 0
    verdicts = [FIRST, SECOND, FIRST, SECOND]
    out = _run_scripted(bodies, verdicts)
    assert out.status == COMPLETED
    assert out.solution is not None and out.solution.answer == "5"
    assert len(out.pairs) == 2
    assert out.pairs[0].chosen.body == "work a"
    assert out.pairs[0].rejected.body == "work b"
    assert out.pairs[1].level == 2
    assert out.rollbacks == 0


def test_rollback_discards_previous_level_pair():
    bodies = [
        "a1", "b1",           # level 1, attempt 0
        "c1", "d1",           # level 2 ties -> rollback to level 1
        "a2", "b2",           # level 1, attempt 1
        "c2", "d2",           # level 2, attempt 1
        "Answer: 9", "e1",    # level 3 completes
    ]
    verdicts = [
        FIRST, SECOND,        # level 1: candidate a1 wins
        FIRST, FIRST,         # level 2: both presentations win -> tie
        FIRST, SECOND,
        FIRST, SECOND,
        FIRST, SECOND,
    ]
    trace = TraceSink()
    out = _run_scripted(bodies, verdicts, trace=trace)
    assert out.status == COMPLETED
    assert out.rollbacks == 1
    chosen_bodies = [p.chosen.body for p in out.pairs]
    assert chosen_bodies == ["a2", "c2", "Answer: 9"]
    # the pre-rollback level-1 pair (a1 over b1) is gone
    assert all(p.chosen.body != "a1" for p in out.pairs)
    rollback_events = [e for e in trace.events if e["event"] == "rollback"]
    assert len(rollback_events) == 1
    assert rollback_events[0]["level"] == 2
    assert rollback_events[0]["discarded_step"] == "Step 1: a1"


def test_level_one_tie_consumes_budget_without_discard():
    bodies = ["a", "b", "c", "d", "Answer: 1", "e"]
    verdicts = [FIRST, FIRST, FIRST, SECOND, FIRST, SECOND]
    trace = TraceSink()
    out = _run_scripted(bodies, verdicts, trace=trace)
    assert out.status == COMPLETED
    assert out.rollbacks == 1
    rollback_events = [e for e in trace.events if e["event"] == "rollback"]
    assert rollback_events[0]["level"] == 1
    assert rollback_events[0]["discarded_step"] is None


def test_identical_candidates_trigger_rollback():
    # same body twice: even a decisive judge yields no usable pair
    bodies = ["same", "same", "x", "y", "Answer: 2", "z"]
    verdicts = [FIRST, SECOND, FIRST, SECOND, FIRST, SECOND]
    trace = TraceSink()
    out = _run_scripted(bodies, verdicts, trace=trace)
    assert out.status == COMPLETED
    assert out.rollbacks == 1
    assert all(p.chosen.raw != p.rejected.raw for p in out.pairs)


def test_abort_on_rollback_budget():
    # judge always ties; budget of 2 allows 2 retries then aborts
    bodies = [f"b{i}" for i in range(8)]
    verdicts = [FIRST, FIRST] * 4
    out = _run_scripted(bodies, verdicts, max_rollbacks=2)
    assert out.status == ABORTED_ROLLBACKS
    assert out.pairs == ()
    assert out.solution is None
    assert out.rollbacks == 2


def test_abort_on_max_steps():
    # generator never emits an answer line
    bodies = [f"v{i}" for i in range(20)]
    verdicts = [FIRST, SECOND] * 10
    out = _run_scripted(bodies, verdicts, max_steps=3)
    assert out.status == ABORTED_MAX_STEPS
    assert out.pairs == ()
    assert out.rollbacks == 0


def test_aborted_trajectories_carry_no_pairs():
    for status, kwargs in (
        (ABORTED_ROLLBACKS, dict(bodies=[f"b{i}" for i in range(8)], verdicts=[FIRST, FIRST] * 4, max_rollbacks=1)),
        (ABORTED_MAX_STEPS, dict(bodies=[f"v{i}" for i in range(8)], verdicts=[FIRST, SECOND] * 4, max_steps=2)),
    ):
        out = _run_scripted(kwargs["bodies"], kwargs["verdicts"],
                            max_steps=kwargs.get("max_steps", 6),
                            max_rollbacks=kwargs.get("max_rollbacks", 4))
        assert out.status == status
        assert out.pairs == ()


def test_trajectory_outcome_validation():
    with pytest.raises(ValueError):
        TrajectoryOutcome(
            question_id="q",
            status=ABORTED_MAX_STEPS,
            solution=None,
            pairs=(StepPreferencePair("q", (), Step(1, "a"), Step(1, "b"), 1, "M1"),),
            rollbacks=0,
        )


def test_pair_validation():
    from steppref.errors import NonContiguousIndex

    with pytest.raises(ValueError):
        StepPreferencePair("q", (), Step(1, "same"), Step(1, "same"), 1, "M1")
    with pytest.raises(NonContiguousIndex):
        StepPreferencePair("q", (), Step(1, "a"), Step(1, "b"), 2, "M1")
    with pytest.raises(NonContiguousIndex):
        StepPreferencePair("q", (Step(1, "p"),), Step(1, "a"), Step(1, "b"), 1, "M1")


def test_trace_sink_writes_jsonl(tmp_path):
    path = tmp_path / "trace.jsonl"
    with TraceSink(path) as sink:
        bodies = ["x", "y", "Answer: 3", "w"]
        verdicts = [FIRST, SECOND, FIRST, SECOND]
        q = Question(id="q7", text="traced run")
        cfg = SearchConfig(width=2, max_steps=4, max_rollbacks=2)
        search_trajectory(q, cfg, ScriptedGenerator(bodies), ScriptedJudge(verdicts),
                          seed=0, trace=sink)
    import json

    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert all(e["question_id"] == "q7" for e in lines)
    kinds = [e["event"] for e in lines]
    assert kinds[0] == "sample"
    assert "commit" in kinds and kinds[-1] == "complete"


def test_deterministic_trace_replay():
    bodies = ["a1", "b1", "c1", "d1", "a2", "b2", "c2", "d2", "Answer: 9", "e1"]
    verdicts = [FIRST, SECOND, FIRST, FIRST, FIRST, SECOND, FIRST, SECOND, FIRST, SECOND]
    t1, t2 = TraceSink(), TraceSink()
    out1 = _run_scripted(list(bodies), list(verdicts), trace=t1)
    out2 = _run_scripted(list(bodies), list(verdicts), trace=t2)
    assert out1.pairs == out2.pairs
    assert t1.events == t2.events


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(width=1)
    with pytest.raises(ValueError):
        SearchConfig(max_steps=0)
    with pytest.raises(ValueError):
        SearchConfig(max_rollbacks=-1)
    with pytest.raises(ValueError):
        SearchConfig(comparison_mode="bogus")
