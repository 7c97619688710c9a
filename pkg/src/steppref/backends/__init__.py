"""Generation and judging backends: tabular toy, scripted fixtures, remote HTTP."""
from __future__ import annotations

from .base import GeneratorBackend, ModelHandle, StepTask
from .toy import (
    ReferencePolicy,
    RowInit,
    ToyGenerator,
    ToyJudge,
    ToyJudgeConfig,
    ToyPolicy,
    default_policy,
    load_policy,
    save_policy,
    toy_sample_step,
    toy_step_logprob,
)

__all__ = [
    "GeneratorBackend",
    "ModelHandle",
    "StepTask",
    "ReferencePolicy",
    "RowInit",
    "ToyGenerator",
    "ToyJudge",
    "ToyJudgeConfig",
    "ToyPolicy",
    "default_policy",
    "load_policy",
    "save_policy",
    "toy_sample_step",
    "toy_step_logprob",
]
