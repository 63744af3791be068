"""Central finite-difference oracle for reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, backward, no_grad
from .errors import ConfigError, NondeterministicError


def relative_errors(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))


def gradient_errors(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[float]:
    """Worst relative error per parameter between backward() and central differences.

    ``f`` is re-evaluated with each coordinate nudged by ``+-step``.  With
    ``max_coords`` only a random subset of coordinates per tensor is probed.
    Raises :class:`NondeterministicError` when two evaluations at the same
    point disagree, since the oracle is meaningless then.
    """
    if step <= 0:
        raise ConfigError("finite-difference step must be positive")
    loss = f()
    with no_grad():
        again = f()
    if not np.array_equal(loss.data, again.data):
        raise NondeterministicError("f returned different values for identical inputs")
    analytic = backward(loss, params)

    worst = []
    for p in params:
        # perturbations below go through a flat view, so the buffer must be a
        # C-ordered ndarray (numpy scalars and strided views would copy)
        if not isinstance(p.data, np.ndarray) or not p.data.flags.c_contiguous:
            p.data = np.array(p.data, dtype=np.float64, order="C")
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        a = analytic[p].reshape(-1)
        err = 0.0
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + step
                up = f().item()
                flat[i] = orig - step
                down = f().item()
                flat[i] = orig
                num = (up - down) / (2.0 * step)
                err = max(err, float(relative_errors(a[i], num)))
        worst.append(err)
    return worst


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-5) -> float:
    """Max over all coordinates of ``|analytic - central| / max(1, |analytic|)``."""
    errs = gradient_errors(f, params, step)
    return max(errs, default=0.0)
