"""Hot numeric kernels for preference training.

Two interchangeable implementations of the same batch update: a numba
@njit kernel and a pure-numpy fallback. Setting STEPPREF_NO_NUMBA=1 (or
lacking numba entirely) selects the fallback; `steppref bench` times both.

A batch step works on a dense logit matrix Z (contexts x actions) and
per-pair arrays: ctx (row index), ch/rj (chosen/rejected action), and the
frozen reference log-probs of chosen and rejected. With
x = beta * ((lp_ch - ref_ch) - (lp_rj - ref_rj)), the mean loss is
softplus(-x) and its gradient wrt the touched row is
-(1 - sigmoid(x)) * beta * (onehot(ch) - onehot(rj)) / n; both candidates
share one row, so the softmax terms cancel.
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAS_NUMBA = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        def wrap(fn):
            return fn

        if args and callable(args[0]):
            return args[0]
        return wrap


ENV_FLAG = "STEPPREF_NO_NUMBA"


def use_numba() -> bool:
    """True when the jitted path is both available and not disabled."""
    return HAS_NUMBA and os.environ.get(ENV_FLAG, "") not in ("1", "true", "yes")


def _np_logps(Z: np.ndarray, ctx: np.ndarray, act: np.ndarray) -> np.ndarray:
    rows = Z[ctx]
    m = rows.max(axis=1)
    lse = m + np.log(np.exp(rows - m[:, None]).sum(axis=1))
    return rows[np.arange(len(ctx)), act] - lse


def batch_loss_numpy(
    Z: np.ndarray,
    ctx: np.ndarray,
    ch: np.ndarray,
    rj: np.ndarray,
    ref_ch: np.ndarray,
    ref_rj: np.ndarray,
    beta: float,
) -> float:
    x = beta * ((_np_logps(Z, ctx, ch) - ref_ch) - (_np_logps(Z, ctx, rj) - ref_rj))
    return float(np.mean(np.logaddexp(0.0, -x)))


def batch_step_numpy(
    Z: np.ndarray,
    ctx: np.ndarray,
    ch: np.ndarray,
    rj: np.ndarray,
    ref_ch: np.ndarray,
    ref_rj: np.ndarray,
    beta: float,
    lr: float,
) -> tuple[float, float]:
    """One gradient-descent step on Z in place.

    Returns (mean loss before the update, squared L2 norm of the gradient).
    """
    n = len(ctx)
    x = beta * ((_np_logps(Z, ctx, ch) - ref_ch) - (_np_logps(Z, ctx, rj) - ref_rj))
    loss = float(np.mean(np.logaddexp(0.0, -x)))
    # 1 - sigmoid(x), computed through the stable softplus form
    coef = np.exp(-np.logaddexp(0.0, x)) * beta / n
    grad = np.zeros_like(Z)
    np.subtract.at(grad, (ctx, ch), coef)
    np.add.at(grad, (ctx, rj), coef)
    Z -= lr * grad
    return loss, float(np.sum(grad * grad))


@njit(cache=True)
def _nb_logp(Z, row, act):  # pragma: no cover - jitted
    m = Z[row, 0]
    for a in range(Z.shape[1]):
        if Z[row, a] > m:
            m = Z[row, a]
    s = 0.0
    for a in range(Z.shape[1]):
        s += math.exp(Z[row, a] - m)
    return Z[row, act] - (m + math.log(s))


@njit(cache=True)
def _nb_softplus(v):  # pragma: no cover - jitted
    # log(1 + e^v), stable on both tails
    if v > 0.0:
        return v + math.log1p(math.exp(-v))
    return math.log1p(math.exp(v))


@njit(cache=True)
def batch_loss_numba(Z, ctx, ch, rj, ref_ch, ref_rj, beta):  # pragma: no cover - jitted
    n = len(ctx)
    total = 0.0
    for i in range(n):
        x = beta * (
            (_nb_logp(Z, ctx[i], ch[i]) - ref_ch[i])
            - (_nb_logp(Z, ctx[i], rj[i]) - ref_rj[i])
        )
        total += _nb_softplus(-x)
    return total / n


@njit(cache=True)
def batch_step_numba(Z, ctx, ch, rj, ref_ch, ref_rj, beta, lr):  # pragma: no cover - jitted
    n = len(ctx)
    grad = np.zeros_like(Z)
    total = 0.0
    for i in range(n):
        x = beta * (
            (_nb_logp(Z, ctx[i], ch[i]) - ref_ch[i])
            - (_nb_logp(Z, ctx[i], rj[i]) - ref_rj[i])
        )
        total += _nb_softplus(-x)
        coef = math.exp(-_nb_softplus(x)) * beta / n
        grad[ctx[i], ch[i]] -= coef
        grad[ctx[i], rj[i]] += coef
    gsq = 0.0
    for r in range(grad.shape[0]):
        for a in range(grad.shape[1]):
            gsq += grad[r, a] * grad[r, a]
            Z[r, a] -= lr * grad[r, a]
    return total / n, gsq


def batch_loss(Z, ctx, ch, rj, ref_ch, ref_rj, beta: float) -> float:
    if use_numba():
        return float(batch_loss_numba(Z, ctx, ch, rj, ref_ch, ref_rj, beta))
    return batch_loss_numpy(Z, ctx, ch, rj, ref_ch, ref_rj, beta)


def batch_step(Z, ctx, ch, rj, ref_ch, ref_rj, beta: float, lr: float) -> tuple[float, float]:
    if use_numba():
        loss, gsq = batch_step_numba(Z, ctx, ch, rj, ref_ch, ref_rj, beta, lr)
        return float(loss), float(gsq)
    return batch_step_numpy(Z, ctx, ch, rj, ref_ch, ref_rj, beta, lr)
