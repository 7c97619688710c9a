"""Backend speaking the OpenAI-compatible chat completions protocol.

Works against any server exposing POST {base_url}/v1/chat/completions,
including the bundled stub server used in tests. Retries are limited to
faults that plausibly clear on their own: HTTP 429, HTTP 5xx, timeouts,
and connection errors. Anything else in the 4xx range fails immediately.
"""
from __future__ import annotations

import logging
import os
import re
import time
from dataclasses import dataclass
from typing import Callable, Optional

import requests

from ..core import (
    PromptTemplate,
    SamplingParams,
    Step,
    StepPrefix,
    generation_template,
    render_prefix,
)
from ..errors import (
    ConfigError,
    HttpError,
    MalformedResponse,
    MalformedStep,
    RetriesExhausted,
    Timeout,
)
from ..judging import CompletionJudge

log = logging.getLogger(__name__)

COMPLETIONS_PATH = "/v1/chat/completions"


@dataclass(frozen=True)
class RemoteBackendConfig:
    base_url: str
    model_name: str
    api_key_env_var: str = ""
    timeout_ms: int = 30000
    max_retries: int = 3
    parallelism: int = 4
    backoff_base_s: float = 0.5

    def __post_init__(self) -> None:
        if not self.base_url:
            raise ConfigError("base_url must not be empty")
        if not self.model_name:
            raise ConfigError("model_name must not be empty")
        if self.timeout_ms <= 0:
            raise ConfigError(f"timeout_ms must be positive, got {self.timeout_ms}")
        if self.max_retries < 0:
            raise ConfigError(f"max_retries must be >= 0, got {self.max_retries}")
        if self.parallelism < 1:
            raise ConfigError(f"parallelism must be >= 1, got {self.parallelism}")
        if self.backoff_base_s < 0:
            raise ConfigError(f"backoff_base_s must be >= 0, got {self.backoff_base_s}")

    @property
    def endpoint(self) -> str:
        return self.base_url.rstrip("/") + COMPLETIONS_PATH

    def headers(self) -> dict[str, str]:
        """Bearer auth only when the named env var is set and non-empty."""
        out = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env_var, "") if self.api_key_env_var else ""
        if key:
            out["Authorization"] = f"Bearer {key}"
        return out


def _retryable_status(status: int) -> bool:
    return status == 429 or 500 <= status < 600


def _extract_content(doc: object) -> str:
    try:
        content = doc["choices"][0]["message"]["content"]  # type: ignore[index]
    except (KeyError, IndexError, TypeError) as e:
        raise MalformedResponse(f"response lacks choices[0].message.content: {e}") from e
    if not isinstance(content, str):
        raise MalformedResponse(f"message content is {type(content).__name__}, not str")
    return content


def remote_complete(
    cfg: RemoteBackendConfig,
    prompt: str,
    params: SamplingParams,
    seed: Optional[int] = None,
    session: Optional[requests.Session] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> str:
    """One completion with retry. max_retries counts attempts after the first."""
    payload: dict = {
        "model": cfg.model_name,
        "messages": [{"role": "user", "content": prompt}],
        "temperature": params.temperature,
        "top_p": params.top_p,
        "max_tokens": params.max_tokens,
    }
    if seed is not None:
        payload["seed"] = seed
    post = session.post if session is not None else requests.post
    timeout_s = cfg.timeout_ms / 1000.0
    last: Optional[BaseException] = None
    last_status: Optional[int] = None
    for attempt in range(cfg.max_retries + 1):
        if attempt:
            delay = cfg.backoff_base_s * 2 ** (attempt - 1)
            log.warning(
                "retrying %s (attempt %d/%d) after %.2fs: %s",
                cfg.endpoint,
                attempt,
                cfg.max_retries,
                delay,
                last_status if last_status is not None else last,
            )
            sleep(delay)
        try:
            resp = post(
                cfg.endpoint, json=payload, headers=cfg.headers(), timeout=timeout_s
            )
        except requests.Timeout as e:
            last, last_status = e, None
            continue
        except requests.ConnectionError as e:
            last, last_status = e, None
            continue
        if _retryable_status(resp.status_code):
            last, last_status = None, resp.status_code
            continue
        if resp.status_code != 200:
            raise HttpError(resp.status_code, f"{cfg.endpoint}: {resp.text[:200]}")
        try:
            doc = resp.json()
        except ValueError as e:
            raise MalformedResponse(f"response is not JSON: {e}") from e
        return _extract_content(doc)
    if last_status is not None:
        raise RetriesExhausted(
            f"{cfg.endpoint} still returning {last_status} after "
            f"{cfg.max_retries + 1} attempts"
        )
    if isinstance(last, requests.Timeout):
        raise Timeout(
            f"{cfg.endpoint} timed out on all {cfg.max_retries + 1} attempts "
            f"({cfg.timeout_ms} ms each)"
        ) from last
    raise RetriesExhausted(
        f"cannot connect to {cfg.endpoint} after {cfg.max_retries + 1} attempts: {last}"
    ) from last


class RemoteCompletion:
    """CompletionBackend over a remote server, one session for the lifetime."""

    def __init__(
        self,
        cfg: RemoteBackendConfig,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.cfg = cfg
        self.sleep = sleep
        self.session = requests.Session()
        self.n_calls = 0

    def complete(self, prompt: str, params: SamplingParams) -> str:
        self.n_calls += 1
        return remote_complete(
            self.cfg, prompt, params, session=self.session, sleep=self.sleep
        )

    def close(self) -> None:
        self.session.close()


def coerce_step_text(text: str, index: int) -> Step:
    """First non-blank reply line becomes step `index`, whatever it was labeled.

    Remote models drift: they echo a different step number, skip the label,
    or pad with blank lines. The search loop owns the numbering, so the
    stated index is discarded and only the body is kept.
    """
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        m = re.match(r"^Step\s+\d+\s*:\s*(.*)$", line)
        body = m.group(1).strip() if m else line
        if not body:
            break
        return Step(index=index, body=body)
    raise MalformedStep(f"reply has no usable step line: {text[:120]!r}")


class RemoteGenerator:
    """GeneratorBackend that prompts a remote model for one step at a time."""

    def __init__(
        self,
        backend: RemoteCompletion,
        template: Optional[PromptTemplate] = None,
    ) -> None:
        self.backend = backend
        self.template = template or generation_template()

    def generate_step(self, prefix: StepPrefix, params: SamplingParams, seed: int) -> Step:
        prompt = render_prefix(prefix, self.template)
        text = remote_complete(
            self.backend.cfg,
            prompt,
            params,
            seed=seed,
            session=self.backend.session,
            sleep=self.backend.sleep,
        )
        self.backend.n_calls += 1
        return coerce_step_text(text, prefix.next_index)


def remote_judge(
    cfg: RemoteBackendConfig,
    params: Optional[SamplingParams] = None,
    sleep: Callable[[float], None] = time.sleep,
) -> CompletionJudge:
    """Pairwise judge running over the remote completion endpoint."""
    backend = RemoteCompletion(cfg, sleep=sleep)
    if params is None:
        return CompletionJudge(backend)
    return CompletionJudge(backend, params=params)


__all__ = [
    "COMPLETIONS_PATH",
    "RemoteBackendConfig",
    "RemoteCompletion",
    "RemoteGenerator",
    "coerce_step_text",
    "remote_complete",
    "remote_judge",
]
