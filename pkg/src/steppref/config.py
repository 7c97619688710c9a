"""TOML configuration files with ${VAR} environment interpolation.

Sections mirror the dataclass configs one to one, with flat keys:

    [search]
    width = 6
    temperature = 0.5

    [dpo]
    beta = 0.1
    batch_size = 0        # 0 means full-batch (TOML has no null)

    [remote]
    base_url = "http://127.0.0.1:8080"
    api_key_env_var = "STEPPREF_API_KEY"

Unknown keys fail loudly: a typo must never silently fall back to a
default. String values may embed ${NAME}; the variable must be set.
"""
from __future__ import annotations

import re
import os
from pathlib import Path
from typing import Mapping, Optional

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - 3.10 fallback
    import tomli as tomllib

from .backends.remote import RemoteBackendConfig
from .backends.toy import ToyJudgeConfig
from .core import SamplingParams
from .dpo import DPOConfig
from .errors import ConfigError
from .evalkit import EvalConfig
from .iteration import IterationConfig
from .search import SearchConfig

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def interpolate_env(value):
    """Replace ${VAR} inside strings, recursively through containers."""
    if isinstance(value, str):

        def sub(m: re.Match) -> str:
            name = m.group(1)
            if name not in os.environ:
                raise ConfigError(f"environment variable {name} is not set")
            return os.environ[name]

        return _ENV_RE.sub(sub, value)
    if isinstance(value, dict):
        return {k: interpolate_env(v) for k, v in value.items()}
    if isinstance(value, list):
        return [interpolate_env(v) for v in value]
    return value


def load_config(path: str | Path) -> dict:
    try:
        raw = Path(path).read_bytes()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    try:
        doc = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"config {path} is not valid TOML: {e}") from e
    return interpolate_env(doc)


def _reject_unknown(section: str, d: Mapping, allowed: tuple[str, ...]) -> None:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown [{section}] option(s): {sorted(unknown)}")


def _build(section: str, d: Mapping, allowed: tuple[str, ...], ctor, **kwargs):
    _reject_unknown(section, d, allowed)
    try:
        return ctor(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [{section}] config: {e}") from e


def search_config(d: Mapping) -> SearchConfig:
    allowed = (
        "width", "max_steps", "max_rollbacks",
        "temperature", "top_p", "max_tokens", "comparison_mode",
    )
    _reject_unknown("search", d, allowed)
    base = SearchConfig()
    sampling = SamplingParams(
        temperature=float(d.get("temperature", base.sampling.temperature)),
        top_p=float(d.get("top_p", base.sampling.top_p)),
        max_tokens=int(d.get("max_tokens", base.sampling.max_tokens)),
    )
    return _build(
        "search", d, allowed, SearchConfig,
        width=int(d.get("width", base.width)),
        max_steps=int(d.get("max_steps", base.max_steps)),
        max_rollbacks=int(d.get("max_rollbacks", base.max_rollbacks)),
        sampling=sampling,
        comparison_mode=str(d.get("comparison_mode", base.comparison_mode)),
    )


def dpo_config(d: Mapping) -> DPOConfig:
    allowed = ("beta", "learning_rate", "epochs", "batch_size", "rng_seed")
    base = DPOConfig()
    batch = d.get("batch_size", 0 if base.batch_size is None else base.batch_size)
    return _build(
        "dpo", d, allowed, DPOConfig,
        beta=float(d.get("beta", base.beta)),
        learning_rate=float(d.get("learning_rate", base.learning_rate)),
        epochs=int(d.get("epochs", base.epochs)),
        batch_size=None if int(batch) == 0 else int(batch),
        rng_seed=int(d.get("rng_seed", base.rng_seed)),
    )


def judge_config(d: Mapping) -> ToyJudgeConfig:
    allowed = ("accuracy_q", "rng_seed")
    base = ToyJudgeConfig()
    return _build(
        "judge", d, allowed, ToyJudgeConfig,
        accuracy_q=float(d.get("accuracy_q", base.accuracy_q)),
        rng_seed=int(d.get("rng_seed", base.rng_seed)),
    )


def eval_config(d: Mapping) -> EvalConfig:
    allowed = ("mode", "tts_n", "tts_temperature", "tts_top_p", "benchmarks", "max_steps")
    _reject_unknown("eval", d, allowed)
    base = EvalConfig()
    benchmarks = d.get("benchmarks", list(base.benchmarks))
    if isinstance(benchmarks, str):
        benchmarks = [benchmarks]
    sampling = SamplingParams(
        temperature=float(d.get("tts_temperature", base.tts_sampling.temperature)),
        top_p=float(d.get("tts_top_p", base.tts_sampling.top_p)),
        max_tokens=base.tts_sampling.max_tokens,
    )
    return _build(
        "eval", d, allowed, EvalConfig,
        mode=str(d.get("mode", base.mode)),
        tts_n=int(d.get("tts_n", base.tts_n)),
        tts_sampling=sampling,
        benchmarks=tuple(str(b) for b in benchmarks),
        max_steps=int(d.get("max_steps", base.max_steps)),
    )


def remote_config(d: Mapping) -> RemoteBackendConfig:
    allowed = (
        "base_url", "model_name", "api_key_env_var",
        "timeout_ms", "max_retries", "parallelism", "backoff_base_s",
    )
    _reject_unknown("remote", d, allowed)
    if "base_url" not in d or "model_name" not in d:
        raise ConfigError("[remote] needs base_url and model_name")
    base = RemoteBackendConfig(base_url=str(d["base_url"]), model_name=str(d["model_name"]))
    return _build(
        "remote", d, allowed, RemoteBackendConfig,
        base_url=base.base_url,
        model_name=base.model_name,
        api_key_env_var=str(d.get("api_key_env_var", base.api_key_env_var)),
        timeout_ms=int(d.get("timeout_ms", base.timeout_ms)),
        max_retries=int(d.get("max_retries", base.max_retries)),
        parallelism=int(d.get("parallelism", base.parallelism)),
        backoff_base_s=float(d.get("backoff_base_s", base.backoff_base_s)),
    )


def iteration_config(d: Mapping, overrides: Optional[Mapping] = None) -> IterationConfig:
    """Build the loop config from an [iteration] table plus CLI overrides.

    Overrides use the same keys and win over the file; nested sections
    (search, dpo, judge, eval) merge key by key.
    """
    allowed = (
        "n_iterations", "questions_per_iteration", "question_source",
        "master_seed", "run_dir", "search", "dpo", "judge", "eval",
    )
    merged = dict(d)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("search", "dpo", "judge", "eval"):
            sub = dict(merged.get(key, {}))
            sub.update({k: v for k, v in value.items() if v is not None})
            merged[key] = sub
        else:
            merged[key] = value
    _reject_unknown("iteration", merged, allowed)
    for key in ("n_iterations", "questions_per_iteration", "question_source"):
        if key not in merged:
            raise ConfigError(f"[iteration] needs {key}")
    qpi = merged["questions_per_iteration"]
    if isinstance(qpi, int):
        qpi = [qpi] * int(merged["n_iterations"])
    try:
        return IterationConfig(
            n_iterations=int(merged["n_iterations"]),
            questions_per_iteration=tuple(int(k) for k in qpi),
            question_source=str(merged["question_source"]),
            master_seed=int(merged.get("master_seed", 0)),
            search=search_config(merged.get("search", {})),
            dpo=dpo_config(merged.get("dpo", {})),
            judge=judge_config(merged.get("judge", {})),
            eval_suite=eval_config(merged.get("eval", {})),
            run_dir=str(merged.get("run_dir", "run")),
        )
    except (TypeError, ValueError) as e:
        raise ConfigError(f"bad [iteration] config: {e}") from e
