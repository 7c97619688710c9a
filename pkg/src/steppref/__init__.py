"""Step-level preference search, self-judging, and iterative training.

The package builds a closed self-improvement loop around one model that
plays two roles: it proposes candidate next steps for a reasoning
prefix, and it judges candidate pairs. Tournament search over the
candidates commits the winner, pairs it with the loser, and the pairs
train the next model version with a step-wise preference objective.

Everything runs at desk scale against a differentiable tabular policy
and a synthetic arithmetic task with an exact oracle, so each stage of
the loop is verifiable end to end. The same interfaces also run against
any OpenAI-compatible completion server.
"""
from __future__ import annotations

from .core import (
    Question,
    SamplingParams,
    Solution,
    Step,
    StepPrefix,
    StepStats,
    parse_step_solution,
    step_statistics,
)
from .backends import (
    ModelHandle,
    ReferencePolicy,
    RowInit,
    ToyGenerator,
    ToyJudge,
    ToyJudgeConfig,
    ToyPolicy,
    default_policy,
    load_policy,
    save_policy,
)
from .dpo import DPOConfig, TrainReport, dpo_loss, train_dpo
from .errors import StepprefError
from .evalkit import EvalConfig, EvalReport, evaluate
from .iteration import IterationConfig, ModelSnapshot, run_iteration, run_pipeline
from .judging import FIRST, SECOND, UNPARSEABLE, JudgeVerdict, pairwise_O
from .search import (
    SearchConfig,
    StepPreferencePair,
    TrajectoryOutcome,
    run_tournament,
    search_trajectory,
)
from .synth import SynthTask, gen_questions, oracle_judge, oracle_prm

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "DPOConfig",
    "EvalConfig",
    "EvalReport",
    "FIRST",
    "IterationConfig",
    "JudgeVerdict",
    "ModelHandle",
    "ModelSnapshot",
    "Question",
    "ReferencePolicy",
    "RowInit",
    "SECOND",
    "SamplingParams",
    "SearchConfig",
    "Solution",
    "Step",
    "StepPrefix",
    "StepPreferencePair",
    "StepStats",
    "StepprefError",
    "SynthTask",
    "ToyGenerator",
    "ToyJudge",
    "ToyJudgeConfig",
    "ToyPolicy",
    "TrainReport",
    "TrajectoryOutcome",
    "UNPARSEABLE",
    "default_policy",
    "dpo_loss",
    "evaluate",
    "gen_questions",
    "load_policy",
    "oracle_judge",
    "oracle_prm",
    "pairwise_O",
    "parse_step_solution",
    "run_iteration",
    "run_pipeline",
    "run_tournament",
    "save_policy",
    "search_trajectory",
    "step_statistics",
    "train_dpo",
]
