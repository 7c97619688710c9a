"""Timing harness for the preference-update kernels.

Runs the same synthetic batch through the jitted and the pure-numpy
update paths, reports best-of-N wall times, and checks that both paths
land on numerically indistinguishable parameters. The jitted path is
timed only when the JIT compiler is importable; compilation happens in
an untimed warmup call.
"""
from __future__ import annotations

import time
from typing import Optional

import numpy as np

from ._kernels import (
    HAS_NUMBA,
    _np_logps,
    batch_step_numba,
    batch_step_numpy,
    use_numba,
)
from .seeding import rng_from


def make_batch(
    n_pairs: int, n_contexts: int, n_actions: int, seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Synthetic encoded batch: (Z, ctx, ch, rj, ref_ch, ref_rj)."""
    rng = rng_from("bench-batch", seed)
    Z = rng.normal(0.0, 1.0, size=(n_contexts, n_actions))
    ctx = rng.integers(0, n_contexts, size=n_pairs)
    ch = rng.integers(0, n_actions, size=n_pairs)
    # rejected differs from chosen by a nonzero cyclic offset
    rj = (ch + rng.integers(1, n_actions, size=n_pairs)) % n_actions
    ref_ch = _np_logps(Z, ctx, ch)
    ref_rj = _np_logps(Z, ctx, rj)
    return Z, ctx, ch, rj, ref_ch, ref_rj


def _time_step(fn, batch, beta: float, lr: float, repeats: int) -> float:
    Z0, ctx, ch, rj, ref_ch, ref_rj = batch
    best = float("inf")
    for _ in range(repeats):
        Z = Z0.copy()  # the step mutates Z, so each rep starts fresh
        t0 = time.perf_counter()
        fn(Z, ctx, ch, rj, ref_ch, ref_rj, beta, lr)
        best = min(best, time.perf_counter() - t0)
    return best


def run_bench(
    n_pairs: int = 20000,
    n_contexts: int = 512,
    n_actions: int = 6,
    repeats: int = 5,
    seed: int = 0,
    beta: float = 0.1,
    lr: float = 0.05,
) -> dict:
    if n_pairs < 1 or n_contexts < 1 or n_actions < 2 or repeats < 1:
        raise ValueError("bench sizes must be positive (n_actions >= 2)")
    batch = make_batch(n_pairs, n_contexts, n_actions, seed)
    Z0, ctx, ch, rj, ref_ch, ref_rj = batch

    numpy_s = _time_step(batch_step_numpy, batch, beta, lr, repeats)
    numba_s: Optional[float] = None
    max_abs_diff: Optional[float] = None
    if HAS_NUMBA:
        warm = Z0.copy()
        batch_step_numba(warm, ctx, ch, rj, ref_ch, ref_rj, beta, lr)  # compile
        numba_s = _time_step(batch_step_numba, batch, beta, lr, repeats)
        Za, Zb = Z0.copy(), Z0.copy()
        batch_step_numpy(Za, ctx, ch, rj, ref_ch, ref_rj, beta, lr)
        batch_step_numba(Zb, ctx, ch, rj, ref_ch, ref_rj, beta, lr)
        max_abs_diff = float(np.max(np.abs(Za - Zb)))
    return {
        "n_pairs": n_pairs,
        "n_contexts": n_contexts,
        "n_actions": n_actions,
        "repeats": repeats,
        "numpy_s": numpy_s,
        "numba_s": numba_s,
        "numba_available": HAS_NUMBA,
        "active_backend": "numba" if use_numba() else "numpy",
        "speedup": (numpy_s / numba_s) if numba_s else None,
        "max_abs_diff": max_abs_diff,
    }


def format_bench(result: dict) -> str:
    lines = [
        f"batch: {result['n_pairs']} pairs, {result['n_contexts']} contexts, "
        f"{result['n_actions']} actions (best of {result['repeats']})",
        f"numpy: {result['numpy_s'] * 1e3:.3f} ms",
    ]
    if result["numba_s"] is not None:
        lines.append(f"numba: {result['numba_s'] * 1e3:.3f} ms")
        lines.append(f"speedup: {result['speedup']:.2f}x")
        lines.append(f"max parameter difference: {result['max_abs_diff']:.3e}")
    else:
        lines.append("numba: not available")
    lines.append(f"active backend: {result['active_backend']}")
    return "\n".join(lines)
