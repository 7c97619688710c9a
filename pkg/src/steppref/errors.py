"""Exception taxonomy for the whole package.

Every error raised on purpose derives from StepprefError so callers can
catch one base type at CLI boundaries.
"""
from __future__ import annotations


class StepprefError(Exception):
    """Base class for all package errors."""


class ConfigError(StepprefError):
    """Invalid configuration file, flag combination, or field value."""


# --- core text model ---------------------------------------------------


class MalformedStep(StepprefError):
    """A line or body does not fit the 'Step <n>: <content>' shape."""


class NonContiguousIndex(StepprefError):
    """Step indices do not run 1..n without gaps."""


class MissingPlaceholder(StepprefError):
    """A prompt template lacks a required named placeholder."""


class EmptyInput(StepprefError):
    """An aggregate operation received nothing to aggregate."""


# --- backends ----------------------------------------------------------


class UnknownAction(StepprefError):
    """An action index or step text falls outside the policy vocabulary."""


class GenerationError(StepprefError):
    """A generator backend failed to produce a candidate step."""


class HttpError(StepprefError):
    """Non-retryable HTTP failure from a remote backend."""

    def __init__(self, status: int, detail: str = "") -> None:
        super().__init__(f"http status {status}" + (f": {detail}" if detail else ""))
        self.status = status


class Timeout(StepprefError):
    """A remote request timed out with no retry budget left."""


class RetriesExhausted(StepprefError):
    """Retryable remote failures used up the whole attempt budget."""


class MalformedResponse(StepprefError):
    """A remote response was not the documented completion shape."""


# --- judging -----------------------------------------------------------


class CandidateMismatch(StepprefError):
    """A judged candidate's index does not continue the given prefix."""


class UnparseableScore(StepprefError):
    """A scoring completion contains no usable integer in [0, 5]."""


# --- training ----------------------------------------------------------


class NonFiniteInput(StepprefError):
    """A log-probability or hyperparameter is NaN or infinite."""


class EmptyPairs(StepprefError):
    """Training was asked to run on an empty preference set."""


# --- datasets ----------------------------------------------------------


class IoError(StepprefError):
    """Filesystem failure while reading or writing a dataset."""


class SchemaMismatch(StepprefError):
    """A JSONL file declares a different kind or a newer version."""


class MalformedLine(StepprefError):
    """A JSONL body line failed to parse or validate."""

    def __init__(self, line_no: int, reason: str) -> None:
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class ContentAltered(StepprefError):
    """Segmentation changed the underlying solution text."""


class AnnotatorError(StepprefError):
    """An annotation backend failed while labeling records."""


# --- iteration and eval ------------------------------------------------


class NoPairsGenerated(StepprefError):
    """A whole iteration produced no preference pairs."""


class PairProvenanceError(StepprefError):
    """Training pairs were produced by the target model or a newer one."""


class NoAnswerFound(StepprefError):
    """A terminal solution carries no extractable answer."""


class MissingGold(StepprefError):
    """Accuracy evaluation needs a gold answer the question lacks."""


# --- synthetic tasks ---------------------------------------------------


class NotSynthetic(StepprefError):
    """An oracle was asked about a question it cannot parse."""
