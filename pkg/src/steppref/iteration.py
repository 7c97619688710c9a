"""Self-improvement rounds: search, collect pairs, train, evaluate, repeat.

One model plays both roles in a round: it generates the candidate steps
and it judges them. Round n searches the question sample with model M_n,
turns the committed levels into preference pairs tagged M_n, trains
against a reference frozen at the round start, and the result is M_{n+1}.

A run directory looks like:

    run_dir/
      manifest.json            append-only record of completed rounds
      M1/policy.snapshot       initial parameters (plus baseline eval.json)
      M1/ppd.jsonl M1/trace.jsonl   products of searching with M1
      M2/policy.snapshot M2/eval.json    trained result and its eval
      ...

Every artifact is a pure function of (config, master seed), so a killed
run can be resumed: completed rounds are skipped via the manifest and the
rest regenerate byte-identically. Manifest entries carry wall_time_s,
which is the only field that differs between reruns.
"""
from __future__ import annotations

import hashlib
import json
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .backends.base import ModelHandle, StepTask
from .backends.toy import (
    ReferencePolicy,
    ToyGenerator,
    ToyJudge,
    ToyJudgeConfig,
    ToyPolicy,
    load_policy,
    save_policy,
)
from .core import Question, TerminalDetector, answer_line_detector
from .datasets import resolve_questions, write_jsonl
from .dpo import DPOConfig, TaskPairCodec, TrainReport, train_dpo
from .errors import (
    ConfigError,
    IoError,
    NoPairsGenerated,
    PairProvenanceError,
)
from .evalkit import EvalConfig, EvalReport, evaluate
from .judging import JudgeBackend, judge_accuracy
from .search import (
    COMPLETED,
    SearchConfig,
    StepPreferencePair,
    TraceSink,
    TrajectoryOutcome,
    search_trajectory,
)
from .seeding import derive_seed, rng_from
from .synth import NotSynthetic, SynthTask, make_judgments

MANIFEST_SCHEMA = "manifest"
MANIFEST_VERSION = 1
_TAG_RE = re.compile(r"^M([0-9]+)$")

N_JUDGE_EVAL_RECORDS = 200


def make_tag(n: int) -> str:
    return f"M{n}"


def tag_index(tag: str) -> Optional[int]:
    """The n in 'M<n>', or None for foreign tags."""
    m = _TAG_RE.match(tag)
    return int(m.group(1)) if m else None


def check_pair_provenance(pairs: Sequence[StepPreferencePair], target_tag: str) -> None:
    """Refuse pairs produced by the training target or anything newer."""
    target = tag_index(target_tag)
    if target is None:
        raise ValueError(f"target tag {target_tag!r} is not of the form M<n>")
    for pair in pairs:
        produced = tag_index(pair.producer_version)
        if produced is not None and produced >= target:
            raise PairProvenanceError(
                f"pair produced by {pair.producer_version} cannot train {target_tag}"
            )


@dataclass(frozen=True)
class ModelSnapshot:
    tag: str
    policy: ToyPolicy
    parent: Optional[str] = None


@dataclass(frozen=True)
class IterationConfig:
    n_iterations: int
    questions_per_iteration: tuple[int, ...]
    question_source: str
    master_seed: int = 0
    search: SearchConfig = field(default_factory=SearchConfig)
    dpo: DPOConfig = field(default_factory=DPOConfig)
    judge: ToyJudgeConfig = field(default_factory=ToyJudgeConfig)
    eval_suite: EvalConfig = field(default_factory=EvalConfig)
    run_dir: str = "run"

    def __post_init__(self) -> None:
        if self.n_iterations < 0:
            raise ValueError(f"n_iterations must be >= 0, got {self.n_iterations}")
        if len(self.questions_per_iteration) != self.n_iterations:
            raise ValueError(
                f"questions_per_iteration has {len(self.questions_per_iteration)} "
                f"entries for {self.n_iterations} iterations"
            )
        for k in self.questions_per_iteration:
            if k < 1:
                raise ValueError("each iteration needs at least one question")

    def to_dict(self) -> dict:
        """Config echo for the manifest; run_dir is placement, not semantics."""
        return {
            "n_iterations": self.n_iterations,
            "questions_per_iteration": list(self.questions_per_iteration),
            "question_source": self.question_source,
            "master_seed": self.master_seed,
            "search": {
                "width": self.search.width,
                "max_steps": self.search.max_steps,
                "max_rollbacks": self.search.max_rollbacks,
                "temperature": self.search.sampling.temperature,
                "top_p": self.search.sampling.top_p,
                "max_tokens": self.search.sampling.max_tokens,
                "comparison_mode": self.search.comparison_mode,
            },
            "dpo": {
                "beta": self.dpo.beta,
                "learning_rate": self.dpo.learning_rate,
                "epochs": self.dpo.epochs,
                "batch_size": self.dpo.batch_size,
                "rng_seed": self.dpo.rng_seed,
            },
            "judge": {
                "accuracy_q": self.judge.accuracy_q,
                "rng_seed": self.judge.rng_seed,
            },
            "eval": {
                "mode": self.eval_suite.mode,
                "tts_n": self.eval_suite.tts_n,
                "tts_temperature": self.eval_suite.tts_sampling.temperature,
                "tts_top_p": self.eval_suite.tts_sampling.top_p,
                "benchmarks": list(self.eval_suite.benchmarks),
                "max_steps": self.eval_suite.max_steps,
            },
        }


@dataclass(frozen=True)
class IterationResult:
    snapshot: ModelSnapshot
    ppd_path: Path
    n_pairs: int
    n_completed: int
    n_aborted_max_steps: int
    n_aborted_rollbacks: int
    total_rollbacks: int
    train_report: TrainReport
    eval_report: Optional[EvalReport]


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def config_hash(echo: dict) -> str:
    return hashlib.sha256(json.dumps(echo, sort_keys=True).encode("utf-8")).hexdigest()


def _write_json(path: Path, doc: dict) -> None:
    try:
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(
            json.dumps(doc, sort_keys=True, ensure_ascii=False, indent=2) + "\n",
            encoding="utf-8",
        )
        tmp.replace(path)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def load_manifest(run_dir: str | Path) -> Optional[dict]:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        return None
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise IoError(f"cannot read manifest {path}: {e}") from e


def save_manifest(run_dir: str | Path, manifest: dict) -> None:
    _write_json(Path(run_dir) / "manifest.json", manifest)


def _measure_judge_accuracy(
    judge: JudgeBackend,
    questions: Sequence[Question],
    master_seed: int,
    tag: str,
) -> Optional[float]:
    try:
        records = make_judgments(
            questions, derive_seed(master_seed, "judge-eval", tag), N_JUDGE_EVAL_RECORDS
        )
    except NotSynthetic:
        return None
    return judge_accuracy(records, judge)


def _evaluate_snapshot(
    snapshot: ModelSnapshot,
    cfg: IterationConfig,
    judge: JudgeBackend,
    task: StepTask,
    detector: TerminalDetector,
    pool: Sequence[Question],
) -> Optional[EvalReport]:
    if not cfg.eval_suite.benchmarks:
        return None
    handle = ModelHandle(
        tag=snapshot.tag,
        generator=ToyGenerator(snapshot.policy, task),
        judge=judge,
        detector=detector,
    )
    return evaluate(
        handle,
        cfg.eval_suite,
        seed=derive_seed(cfg.master_seed, "eval", snapshot.tag),
        judge_accuracy=_measure_judge_accuracy(judge, pool, cfg.master_seed, snapshot.tag),
    )


def run_iteration(
    source: ModelSnapshot,
    questions: Sequence[Question],
    cfg: IterationConfig,
    judge_of_m: JudgeBackend,
    task: Optional[StepTask] = None,
    detector: TerminalDetector = answer_line_detector,
    pool: Optional[Sequence[Question]] = None,
) -> IterationResult:
    """One full round: search with the source model, train its successor.

    The source model both generates and judges (judge_of_m stands in for
    its judging face). Files land under run_dir: the source tag's dir gets
    ppd.jsonl and trace.jsonl, the target tag's dir gets policy.snapshot
    and eval.json. Pre-existing products of the same round are overwritten,
    which makes interrupted rounds safe to redo.
    """
    task = task or SynthTask()
    pool = pool if pool is not None else questions
    run_dir = Path(cfg.run_dir)
    source_index = tag_index(source.tag)
    if source_index is None:
        raise ValueError(f"source tag {source.tag!r} is not of the form M<n>")
    target_tag = make_tag(source_index + 1)

    src_dir = run_dir / source.tag
    tgt_dir = run_dir / target_tag
    src_dir.mkdir(parents=True, exist_ok=True)
    tgt_dir.mkdir(parents=True, exist_ok=True)
    trace_path = src_dir / "trace.jsonl"
    if trace_path.exists():
        trace_path.unlink()

    generator = ToyGenerator(source.policy, task)
    outcomes: list[TrajectoryOutcome] = []
    with TraceSink(trace_path) as trace:
        for question in questions:
            outcomes.append(
                search_trajectory(
                    question,
                    cfg.search,
                    generator,
                    judge_of_m,
                    seed=derive_seed(cfg.master_seed, "traj", source.tag, question.id),
                    producer_version=source.tag,
                    detector=detector,
                    trace=trace,
                )
            )

    pairs = [pair for outcome in outcomes if outcome.status == COMPLETED for pair in outcome.pairs]
    n_completed = sum(1 for o in outcomes if o.status == COMPLETED)
    if not pairs:
        raise NoPairsGenerated(
            f"{source.tag} completed {n_completed}/{len(outcomes)} trajectories "
            "but produced no preference pairs"
        )
    check_pair_provenance(pairs, target_tag)
    ppd_path = src_dir / "ppd.jsonl"
    write_jsonl(ppd_path, "ppd", pairs)

    questions_by_id = {q.id: q for q in pool}
    for q in questions:
        questions_by_id.setdefault(q.id, q)
    codec = TaskPairCodec(task=task, questions=questions_by_id)
    ref = ReferencePolicy.freeze(source.policy)
    trained, train_report = train_dpo(source.policy, ref, pairs, cfg.dpo, codec)
    snapshot = ModelSnapshot(tag=target_tag, policy=trained, parent=source.tag)
    save_policy(trained, tgt_dir / "policy.snapshot", tag=target_tag, parent=source.tag)

    eval_report = _evaluate_snapshot(snapshot, cfg, judge_of_m, task, detector, pool)
    if eval_report is not None:
        _write_json(tgt_dir / "eval.json", {"tag": target_tag, **eval_report.to_dict()})

    return IterationResult(
        snapshot=snapshot,
        ppd_path=ppd_path,
        n_pairs=len(pairs),
        n_completed=n_completed,
        n_aborted_max_steps=sum(1 for o in outcomes if o.status == "aborted_max_steps"),
        n_aborted_rollbacks=sum(1 for o in outcomes if o.status == "aborted_rollback_budget"),
        total_rollbacks=sum(o.rollbacks for o in outcomes),
        train_report=train_report,
        eval_report=eval_report,
    )


def _entry_files(run_dir: Path, paths: dict[str, Path]) -> dict:
    out = {}
    for name, path in paths.items():
        if path.exists():
            out[name] = {"path": str(path.relative_to(run_dir)), "sha256": _sha256(path)}
    return out


def run_pipeline(
    cfg: IterationConfig,
    initial_policy: ToyPolicy,
    judge: Optional[JudgeBackend] = None,
    task: Optional[StepTask] = None,
    detector: TerminalDetector = answer_line_detector,
    resume: bool = True,
    quiet: bool = False,
) -> dict:
    """Run (or resume) the whole loop; returns the final manifest.

    Completed rounds recorded in the manifest are skipped; anything else
    is (re)computed. Rerunning a finished pipeline is a no-op. The config
    echo inside an existing manifest must match the given config.
    """
    task = task or SynthTask()
    judge = judge if judge is not None else ToyJudge(cfg.judge)
    run_dir = Path(cfg.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    pool = resolve_questions(cfg.question_source)
    for i, k in enumerate(cfg.questions_per_iteration):
        if k > len(pool):
            raise ConfigError(
                f"iteration {i} wants {k} questions but the pool holds {len(pool)}"
            )

    echo = cfg.to_dict()
    h = config_hash(echo)
    manifest = load_manifest(run_dir)
    if manifest is None:
        manifest = {
            "schema": MANIFEST_SCHEMA,
            "version": MANIFEST_VERSION,
            "config": echo,
            "config_hash": h,
            "master_seed": cfg.master_seed,
            "baseline": None,
            "entries": [],
        }
    else:
        if not resume:
            raise ConfigError(f"{run_dir} already holds a manifest; resume not requested")
        if manifest.get("config_hash") != h:
            raise ConfigError(
                "existing manifest was produced by a different config; refusing to mix runs"
            )

    def log(msg: str) -> None:
        if not quiet:
            print(f"[iterate] {msg}", flush=True)

    m1_dir = run_dir / make_tag(1)
    m1_dir.mkdir(exist_ok=True)
    m1_path = m1_dir / "policy.snapshot"
    if m1_path.exists():
        policy, tag, parent = load_policy(m1_path)
        current = ModelSnapshot(tag=tag or make_tag(1), policy=policy, parent=parent)
    else:
        current = ModelSnapshot(tag=make_tag(1), policy=initial_policy, parent=None)
        save_policy(initial_policy, m1_path, tag=current.tag, parent=None)
    log(f"pool {len(pool)} questions from {cfg.question_source}; starting at {current.tag}")

    if manifest["baseline"] is None and cfg.eval_suite.benchmarks:
        baseline = _evaluate_snapshot(current, cfg, judge, task, detector, pool)
        _write_json(m1_dir / "eval.json", {"tag": current.tag, **baseline.to_dict()})
        manifest["baseline"] = {
            "tag": current.tag,
            "eval": baseline.to_dict(),
            "files": _entry_files(
                run_dir,
                {"snapshot": m1_path, "eval": m1_dir / "eval.json"},
            ),
        }
        save_manifest(run_dir, manifest)
        log(f"baseline {current.tag} accuracy {baseline.accuracy:.3f}")

    done = {int(e["iteration"]) for e in manifest["entries"]}
    for i in range(cfg.n_iterations):
        target_tag = make_tag(i + 2)
        if i in done:
            policy, tag, parent = load_policy(run_dir / target_tag / "policy.snapshot")
            current = ModelSnapshot(tag=tag or target_tag, policy=policy, parent=parent)
            log(f"iteration {i} already complete; loaded {current.tag}")
            continue
        t0 = time.monotonic()
        k = cfg.questions_per_iteration[i]
        sel = rng_from(cfg.master_seed, "qsel", i).choice(len(pool), size=k, replace=False)
        questions = [pool[int(j)] for j in sel]
        result = run_iteration(
            current, questions, cfg, judge, task=task, detector=detector, pool=pool
        )
        entry = {
            "iteration": i,
            "source_tag": current.tag,
            "tag": result.snapshot.tag,
            "n_questions": k,
            "n_pairs": result.n_pairs,
            "n_completed": result.n_completed,
            "n_aborted_max_steps": result.n_aborted_max_steps,
            "n_aborted_rollbacks": result.n_aborted_rollbacks,
            "total_rollbacks": result.total_rollbacks,
            "train": result.train_report.to_dict(),
            "eval": result.eval_report.to_dict() if result.eval_report else None,
            "files": _entry_files(
                run_dir,
                {
                    "ppd": result.ppd_path,
                    "trace": run_dir / current.tag / "trace.jsonl",
                    "snapshot": run_dir / result.snapshot.tag / "policy.snapshot",
                    "eval": run_dir / result.snapshot.tag / "eval.json",
                },
            ),
            "wall_time_s": round(time.monotonic() - t0, 3),
        }
        manifest["entries"].append(entry)
        save_manifest(run_dir, manifest)
        acc = f"{result.eval_report.accuracy:.3f}" if result.eval_report else "n/a"
        log(
            f"iteration {i}: {current.tag} -> {result.snapshot.tag}, "
            f"{result.n_pairs} pairs from {result.n_completed}/{k} trajectories, "
            f"accuracy {acc}"
        )
        current = result.snapshot
    return manifest
