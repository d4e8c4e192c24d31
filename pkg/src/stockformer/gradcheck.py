"""Central finite-difference checks against reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward, no_grad

# Gradients smaller than this are compared absolutely; below it, truncation
# and cancellation noise of an h=1e-5 difference dominate the ratio.
RELATIVE_FLOOR = 1e-6


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: int
    worst_index: tuple
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = RELATIVE_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckResult:
    """Compare ``backward`` of the scalar ``fn()`` with central differences.

    ``fn`` must rebuild the graph from ``params`` on each call.  With
    ``max_entries`` set, a seeded random subset of coordinates per parameter
    is perturbed instead of all of them.
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    analytic = [p.grad.data.copy() if p.grad is not None else np.zeros_like(p.data) for p in params]

    rng = np.random.default_rng(seed)
    worst = (0.0, -1, ())
    checked = 0
    with no_grad():
        for pi, p in enumerate(params):
            flat_idx = np.arange(p.data.size)
            if max_entries is not None and p.data.size > max_entries:
                flat_idx = np.sort(rng.choice(p.data.size, size=max_entries, replace=False))
            for fi in flat_idx:
                idx = np.unravel_index(fi, p.data.shape)
                orig = p.data[idx]
                p.data[idx] = orig + h
                up = fn().item()
                p.data[idx] = orig - h
                down = fn().item()
                p.data[idx] = orig
                numeric = (up - down) / (2.0 * h)
                err = float(relative_error(np.array(analytic[pi][idx]), np.array(numeric)))
                checked += 1
                if err > worst[0]:
                    worst = (err, pi, idx)
    return GradCheckResult(max_rel_error=worst[0], worst_param=worst[1], worst_index=worst[2], checked=checked)
