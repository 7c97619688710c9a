"""Command line interface.

Subcommands cover the whole loop at desk scale: generate preference
data, train on it, evaluate snapshots, run the full self-improvement
pipeline, calibrate judges, inspect datasets, serve the test stub, and
time the update kernels.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import config as cfgmod
from .backends.base import ModelHandle
from .backends.remote import RemoteCompletion, RemoteGenerator, remote_judge
from .backends.toy import (
    ReferencePolicy,
    ToyGenerator,
    ToyJudge,
    ToyJudgeConfig,
    default_policy,
    load_policy,
    save_policy,
)
from .bench import format_bench, run_bench
from .core import SamplingParams, Solution, answer_line_detector, step_statistics
from .datasets import (
    EFTBuildConfig,
    build_eft,
    read_jsonl,
    resolve_questions,
    write_jsonl,
)
from .dpo import TaskPairCodec, train_dpo
from .errors import ConfigError, StepprefError
from .evalkit import evaluate
from .iteration import check_pair_provenance, make_tag, run_pipeline, tag_index
from .judging import FIRST, consistency_agreement, judge_accuracy
from .search import COMPLETED, TraceSink, search_trajectory
from .seeding import derive_seed
from .stubserver import serve_forever
from .synth import OracleScorer, SynthTask, make_judgments


def _doc(args: argparse.Namespace) -> dict:
    path = getattr(args, "config", None)
    return cfgmod.load_config(path) if path else {}


def _emit(args: argparse.Namespace, doc: dict, human: str) -> None:
    if getattr(args, "json", False):
        print(json.dumps(doc, sort_keys=True, indent=2))
    else:
        print(human)


def _policy_from_args(args: argparse.Namespace) -> tuple:
    """(policy, tag): a stored snapshot, or a fresh seeded default."""
    if getattr(args, "snapshot", None):
        policy, tag, _parent = load_policy(args.snapshot)
        return policy, tag or make_tag(1)
    return default_policy(seed=args.init_seed), make_tag(1)


def _merged_section(doc: dict, section: str, overrides: dict) -> dict:
    merged = dict(doc.get(section, {}))
    merged.update({k: v for k, v in overrides.items() if v is not None})
    return merged


# --- subcommand handlers ---------------------------------------------------


def cmd_iterate(args: argparse.Namespace) -> int:
    doc = _doc(args)
    overrides = {
        "n_iterations": args.iterations,
        "questions_per_iteration": args.questions,
        "question_source": args.question_source,
        "master_seed": args.master_seed,
        "run_dir": args.run_dir,
        "judge": {"accuracy_q": args.judge_q},
    }
    cfg = cfgmod.iteration_config(doc.get("iteration", {}), overrides)
    if args.dry_run:
        effective = {"run_dir": cfg.run_dir, **cfg.to_dict()}
        print(json.dumps(effective, sort_keys=True, indent=2))
        return 0
    initial = default_policy(seed=derive_seed(cfg.master_seed, "policy-init"))
    manifest = run_pipeline(cfg, initial, resume=args.resume, quiet=args.json)
    entries = manifest["entries"]
    final_tag = entries[-1]["tag"] if entries else make_tag(1)
    _emit(args, manifest, f"done: {len(entries)} iterations, final model {final_tag}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    doc = _doc(args)
    merged = _merged_section(
        doc,
        "eval",
        {
            "mode": args.mode,
            "tts_n": args.tts_n,
            "tts_temperature": args.temperature,
            "tts_top_p": args.top_p,
            "benchmarks": args.benchmark or None,
            "max_steps": args.max_steps,
        },
    )
    cfg = cfgmod.eval_config(merged)
    if not cfg.benchmarks:
        raise ConfigError("no benchmarks given; pass --benchmark or set [eval].benchmarks")
    policy, tag = _policy_from_args(args)
    judge = ToyJudge(ToyJudgeConfig(accuracy_q=args.judge_q, rng_seed=args.judge_seed))
    handle = ModelHandle(
        tag=tag,
        generator=ToyGenerator(policy, SynthTask()),
        judge=judge,
        detector=answer_line_detector,
    )
    report = evaluate(handle, cfg, seed=args.seed)
    lines = [f"model {tag}, mode {cfg.mode}"]
    for name, result in report.benchmarks.items():
        lines.append(
            f"  {name}: {result.n_correct}/{result.n_questions} = {result.accuracy:.3f}"
        )
    lines.append(f"overall: {report.n_correct}/{report.n_questions} = {report.accuracy:.3f}")
    _emit(args, {"tag": tag, **report.to_dict()}, "\n".join(lines))
    return 0


def _search_outcomes(questions, search_cfg, make_backends, seed, tag, parallelism):
    """Run one trajectory per question; traces stay in per-question order."""

    def one(item):
        index, question = item
        generator, judge = make_backends()
        sink = TraceSink(None)
        outcome = search_trajectory(
            question,
            search_cfg,
            generator,
            judge,
            seed=derive_seed(seed, "traj", tag, question.id),
            producer_version=tag,
            trace=sink,
        )
        return index, outcome, sink.events

    items = list(enumerate(questions))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            results = list(pool.map(one, items))
    else:
        results = [one(item) for item in items]
    results.sort(key=lambda r: r[0])
    return [(outcome, events) for _, outcome, events in results]


def cmd_gen_ppd(args: argparse.Namespace) -> int:
    doc = _doc(args)
    merged = _merged_section(
        doc,
        "search",
        {
            "width": args.width,
            "max_steps": args.max_steps,
            "max_rollbacks": args.max_rollbacks,
            "temperature": args.temperature,
            "top_p": args.top_p,
            "comparison_mode": args.comparison_mode,
        },
    )
    search_cfg = cfgmod.search_config(merged)
    questions = resolve_questions(args.question_source)
    if args.n is not None:
        questions = questions[: args.n]
    if not questions:
        raise ConfigError("question source resolved to zero questions")

    if args.backend == "toy":
        policy, tag = _policy_from_args(args)
        task = SynthTask()
        judge_cfg = ToyJudgeConfig(accuracy_q=args.judge_q, rng_seed=args.judge_seed)

        def make_backends():
            return ToyGenerator(policy, task), ToyJudge(judge_cfg)

        parallelism = 1
    else:
        if "remote" not in doc:
            raise ConfigError("--backend remote needs a --config file with a [remote] table")
        rc = cfgmod.remote_config(doc["remote"])
        tag = args.producer_tag or make_tag(1)

        def make_backends():
            # one connection pool per worker; requests sessions are not
            # safe to share across threads
            return RemoteGenerator(RemoteCompletion(rc)), remote_judge(rc)

        parallelism = args.parallelism or rc.parallelism
    if args.producer_tag:
        tag = args.producer_tag

    outcomes = _search_outcomes(
        questions, search_cfg, make_backends, args.seed, tag, parallelism
    )
    if args.trace:
        with TraceSink(args.trace) as sink:
            for _, events in outcomes:
                sink.extend(events)
    pairs = [p for o, _ in outcomes if o.status == COMPLETED for p in o.pairs]
    counts = {
        "n_questions": len(questions),
        "n_completed": sum(1 for o, _ in outcomes if o.status == COMPLETED),
        "n_aborted": sum(1 for o, _ in outcomes if o.status != COMPLETED),
        "n_pairs": len(pairs),
        "producer": tag,
        "out": str(args.out),
    }
    write_jsonl(args.out, "ppd", pairs)
    _emit(
        args,
        counts,
        f"{counts['n_pairs']} pairs from {counts['n_completed']}/{counts['n_questions']} "
        f"completed trajectories -> {args.out}",
    )
    return 0


def cmd_train_dpo(args: argparse.Namespace) -> int:
    doc = _doc(args)
    merged = _merged_section(
        doc,
        "dpo",
        {
            "beta": args.beta,
            "learning_rate": args.learning_rate,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
            "rng_seed": args.seed,
        },
    )
    dpo_cfg = cfgmod.dpo_config(merged)
    policy, source_tag = _policy_from_args(args)
    source_index = tag_index(source_tag)
    target_tag = args.target_tag or make_tag((source_index or 1) + 1)
    pairs = read_jsonl(args.ppd, "ppd")
    check_pair_provenance(pairs, target_tag)
    questions = {q.id: q for q in resolve_questions(args.question_source)}
    codec = TaskPairCodec(task=SynthTask(), questions=questions)
    ref = ReferencePolicy.freeze(policy)
    trained, report = train_dpo(policy, ref, pairs, dpo_cfg, codec)
    save_policy(trained, args.out, tag=target_tag, parent=source_tag)
    _emit(
        args,
        {"source": source_tag, "target": target_tag, "out": str(args.out), **report.to_dict()},
        f"{source_tag} -> {target_tag}: {report.n_pairs} pairs over {report.n_contexts} "
        f"contexts, loss {report.initial_loss:.6f} -> {report.final_loss:.6f}, "
        f"saved {args.out}",
    )
    return 0


def cmd_build_eft(args: argparse.Namespace) -> int:
    questions = resolve_questions(args.question_source)
    if args.n is not None:
        questions = questions[: args.n]
    policy, _tag = _policy_from_args(args)
    build_cfg = EFTBuildConfig(
        simulation_depth=args.sim_depth,
        num_iterations=args.num_iterations,
        width=args.width,
        sampling=SamplingParams(temperature=args.temperature, top_p=args.top_p),
    )
    records = build_eft(
        questions,
        OracleScorer(),
        ToyGenerator(policy, SynthTask()),
        ToyJudge(ToyJudgeConfig(accuracy_q=args.judge_q, rng_seed=args.judge_seed)),
        build_cfg,
        seed=args.seed,
    )
    write_jsonl(args.out, "eft", records)
    _emit(
        args,
        {"n_records": len(records), "n_questions": len(questions), "out": str(args.out)},
        f"{len(records)} filtered records from {len(questions)} questions -> {args.out}",
    )
    return 0


def cmd_judge_eval(args: argparse.Namespace) -> int:
    questions = resolve_questions(args.question_source)
    records = make_judgments(questions, args.seed, args.n)
    judge = ToyJudge(ToyJudgeConfig(accuracy_q=args.judge_q, rng_seed=args.judge_seed))
    accuracy = judge_accuracy(records, judge)
    calibration = consistency_agreement(records, judge)
    doc = {
        "n_records": len(records),
        "accuracy": accuracy,
        "consistency": calibration.consistency,
        "agreement": calibration.agreement,
        "n_unparseable": calibration.n_unparseable,
    }
    _emit(
        args,
        doc,
        f"accuracy {accuracy:.3f}, consistency {calibration.consistency:.3f} "
        f"over {len(records)} oracle-labeled pairs",
    )
    return 0


def _solutions_for_stats(path: str, kind: str) -> list[Solution]:
    if kind == "auto":
        try:
            first = Path(path).read_text(encoding="utf-8").splitlines()[0]
            kind = json.loads(first).get("schema", "")
        except (OSError, IndexError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot sniff schema of {path}: {e}") from e
    if kind == "ift":
        records = read_jsonl(path, "ift")
        return [Solution.from_steps(r.question.id, r.steps) for r in records]
    if kind == "eft":
        records = read_jsonl(path, "eft")
        return [
            Solution.from_steps(
                r.question.id,
                r.prefix_steps + ((r.cand_a,) if r.gold == FIRST else (r.cand_b,)),
            )
            for r in records
        ]
    if kind == "ppd":
        records = read_jsonl(path, "ppd")
        return [
            Solution.from_steps(r.question_id, r.prefix_steps + (r.chosen,))
            for r in records
        ]
    raise ConfigError(f"no step statistics for schema kind {kind!r}")


def cmd_stats(args: argparse.Namespace) -> int:
    solutions = _solutions_for_stats(args.input, args.kind)
    stats = step_statistics(solutions)
    _emit(
        args,
        {
            "n_solutions": stats.n_solutions,
            "mean_step_num": stats.mean_step_num,
            "mean_step_len": stats.mean_step_len,
        },
        f"{stats.n_solutions} solutions, {stats.mean_step_num:.2f} steps each, "
        f"{stats.mean_step_len:.2f} tokens per step",
    )
    return 0


def cmd_stub_server(args: argparse.Namespace) -> int:
    serve_forever(
        args.host,
        args.port,
        fixture=args.fixture,
        default_content=args.default_content,
        verbose=not args.quiet,
    )
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    result = run_bench(
        n_pairs=args.n_pairs,
        n_contexts=args.n_contexts,
        n_actions=args.n_actions,
        repeats=args.repeats,
        seed=args.seed,
    )
    _emit(args, result, format_bench(result))
    return 0


# --- parser ----------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", help="TOML config file")
    p.add_argument("--json", action="store_true", help="machine-readable output")


def _add_policy_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--snapshot", help="policy snapshot to load")
    p.add_argument(
        "--init-seed", type=int, default=0,
        help="seed for a fresh default policy when no snapshot is given",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="steppref",
        description="step-level preference search, training, and self-improvement",
    )
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("iterate", help="run the full self-improvement loop")
    _add_common(p)
    p.add_argument("--run-dir", help="artifact directory")
    p.add_argument("--iterations", type=int, help="number of rounds")
    p.add_argument("--questions", type=int, help="questions per round")
    p.add_argument("--question-source", help="synth:seed:n:depth or a questions file")
    p.add_argument("--master-seed", type=int, help="seed the whole run derives from")
    p.add_argument("--judge-q", type=float, help="judge accuracy on decidable pairs")
    p.add_argument("--resume", action="store_true", help="continue an interrupted run")
    p.add_argument("--dry-run", action="store_true", help="print effective config and exit")
    p.set_defaults(handler=cmd_iterate)

    p = sub.add_parser("eval", help="measure answer accuracy of a snapshot")
    _add_common(p)
    _add_policy_source(p)
    p.add_argument("--mode", choices=["greedy", "tts"], help="decoding regime")
    p.add_argument("--tts-n", type=int, help="candidates per step in tts mode")
    p.add_argument("--temperature", type=float, help="tts sampling temperature")
    p.add_argument("--top-p", type=float, help="tts nucleus mass")
    p.add_argument(
        "--benchmark", action="append",
        help="benchmark spec (repeatable): synth:seed:n:depth or a questions file",
    )
    p.add_argument("--max-steps", type=int, help="step budget per question")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--judge-q", type=float, default=1.0)
    p.add_argument("--judge-seed", type=int, default=0)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gen-ppd", help="search questions and write preference pairs")
    _add_common(p)
    _add_policy_source(p)
    p.add_argument("--question-source", required=True)
    p.add_argument("--n", type=int, help="only the first n questions of the pool")
    p.add_argument("--out", required=True, help="output ppd JSONL path")
    p.add_argument("--trace", help="also write search trace JSONL here")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--judge-q", type=float, default=1.0)
    p.add_argument("--judge-seed", type=int, default=0)
    p.add_argument("--producer-tag", help="version tag stamped on the pairs")
    p.add_argument("--backend", choices=["toy", "remote"], default="toy")
    p.add_argument("--parallelism", type=int, help="worker threads for remote search")
    p.add_argument("--width", type=int)
    p.add_argument("--max-steps", type=int)
    p.add_argument("--max-rollbacks", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", type=float)
    p.add_argument("--comparison-mode", choices=["ordered_full", "single_pass"])
    p.set_defaults(handler=cmd_gen_ppd)

    p = sub.add_parser("train-dpo", help="train a snapshot on preference pairs")
    _add_common(p)
    _add_policy_source(p)
    p.add_argument("--ppd", required=True, help="preference pairs JSONL")
    p.add_argument("--out", required=True, help="trained snapshot path")
    p.add_argument("--question-source", required=True, help="pool the pairs refer to")
    p.add_argument("--target-tag", help="tag for the trained snapshot")
    p.add_argument("--beta", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, help="0 trains full-batch")
    p.add_argument("--seed", type=int, help="mini-batch shuffle seed")
    p.set_defaults(handler=cmd_train_dpo)

    p = sub.add_parser("build-eft", help="build a filtered judge-training set")
    _add_common(p)
    _add_policy_source(p)
    p.add_argument("--question-source", required=True)
    p.add_argument("--n", type=int, help="only the first n questions")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--judge-q", type=float, default=1.0, help="annotator accuracy")
    p.add_argument("--judge-seed", type=int, default=0)
    p.add_argument("--sim-depth", type=int, default=3)
    p.add_argument("--num-iterations", type=int, default=100)
    p.add_argument("--width", type=int, default=4)
    p.add_argument("--temperature", type=float, default=0.7)
    p.add_argument("--top-p", type=float, default=0.95)
    p.set_defaults(handler=cmd_build_eft)

    p = sub.add_parser("judge-eval", help="judge accuracy and order-consistency")
    _add_common(p, config=False)
    p.add_argument("--question-source", required=True)
    p.add_argument("--n", type=int, default=500, help="number of labeled pairs")
    p.add_argument("--seed", type=int, default=0, help="pair sampling seed")
    p.add_argument("--judge-q", type=float, default=1.0)
    p.add_argument("--judge-seed", type=int, default=0)
    p.set_defaults(handler=cmd_judge_eval)

    p = sub.add_parser("stats", help="step statistics of a dataset file")
    _add_common(p, config=False)
    p.add_argument("--input", required=True)
    p.add_argument("--kind", choices=["auto", "ift", "eft", "ppd"], default="auto")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("stub-server", help="run the scriptable completions server")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--fixture", help="JSON array of scripted responses")
    p.add_argument("--default-content", default="Step 1: stub reply\nAnswer: 0")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(handler=cmd_stub_server)

    p = sub.add_parser("bench", help="time the jitted vs numpy update kernels")
    _add_common(p, config=False)
    p.add_argument("--n-pairs", type=int, default=20000)
    p.add_argument("--n-contexts", type=int, default=512)
    p.add_argument("--n-actions", type=int, default=6)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_bench)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "handler"):
        parser.print_help()
        return 2
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StepprefError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
