"""Forward-pass wall-clock timing of the SSD kernels over sequence length.

Kernels:

``naive``    quadratic path (mask built a block of rows at a time)
``chunked``  blocked linear-time path on a given log-decay sequence
``ssd``      discretize step sizes, then the chunked path (no time deltas)
``tissd``    same as ``ssd`` with time deltas fused into the step sizes

All timings run without the autodiff tape.  ``dim`` is the total value width
``heads * head_dim``.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import ssd
from .autodiff import Tensor, no_grad
from .errors import ConfigError

KERNELS = ("naive", "chunked", "ssd", "tissd")
DEFAULT_TS = (256, 512, 1024, 2048, 4096, 8192, 16384)


@dataclass(frozen=True)
class BenchRow:
    kernel: str
    T: int
    dim: int
    median_seconds: float


def _inputs(T: int, dim: int, heads: int, state: int, seed: int):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(T, dim))
    B = rng.normal(size=(T, state)) / np.sqrt(state)
    C = rng.normal(size=(T, state)) / np.sqrt(state)
    delta = rng.uniform(0.001, 0.1, T)
    A = -rng.uniform(1.0, 16.0, heads)
    D = rng.uniform(0.5, 2.0, T)
    return X, B, C, delta, A, D


def _runner(kernel: str, T: int, dim: int, heads: int, state: int, chunk: int, seed: int):
    X, B, C, delta, A, D = _inputs(T, dim, heads, state, seed)
    cfg = ssd.KernelConfig(heads=heads, head_dim=dim // heads, state=state, chunk=chunk)
    log_decay = delta[None, :] * A[:, None]
    if kernel == "naive":
        return lambda: ssd.quadratic_ssd_numpy(X, B, C, log_decay)
    if kernel == "chunked":
        decay = ssd.DecaySequence(Tensor(log_decay))
        return lambda: ssd.chunked_ssd_forward(X, B, C, decay, cfg)
    if kernel == "ssd":
        return lambda: ssd.ssd_apply(X, B, C, delta, A, cfg)
    if kernel == "tissd":
        return lambda: ssd.tissd_apply(X, B, C, delta, D, A, cfg)
    raise ConfigError(f"unknown kernel {kernel!r}; choose from {KERNELS}")


def time_call(fn, repeats: int = 5, warmup: int = 1) -> float:
    """Median wall-clock seconds of ``fn()`` after ``warmup`` discarded calls."""
    if repeats < 1 or warmup < 0:
        raise ConfigError("repeats must be >= 1 and warmup >= 0")
    with no_grad():
        for _ in range(warmup):
            fn()
        samples = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def run_bench(Ts: Sequence[int] = DEFAULT_TS, dims: Sequence[int] = (16,),
              kernels: Sequence[str] = KERNELS, repeats: int = 3, warmup: int = 1,
              heads: int = 2, state: int = 8, chunk: int = 64, seed: int = 0) -> list[BenchRow]:
    """Time every (kernel, dim, T) combination; rows come back in that order."""
    for k in kernels:
        if k not in KERNELS:
            raise ConfigError(f"unknown kernel {k!r}; choose from {KERNELS}")
    for d in dims:
        if d % heads:
            raise ConfigError(f"dim {d} not divisible by {heads} heads")
    rows = []
    for k in kernels:
        for d in dims:
            for T in Ts:
                fn = _runner(k, T, d, heads, state, chunk, seed)
                rows.append(BenchRow(k, T, d, time_call(fn, repeats, warmup)))
    return rows


def loglog_slope(rows: Sequence[BenchRow], kernel: str, dim: int | None = None) -> float:
    """Least-squares slope of log(time) against log(T)."""
    sel = [r for r in rows if r.kernel == kernel and (dim is None or r.dim == dim)]
    if len(sel) < 2:
        raise ConfigError(f"need at least two lengths to fit a slope for {kernel}")
    x = np.log([r.T for r in sel])
    y = np.log([r.median_seconds for r in sel])
    return float(np.polyfit(x, y, 1)[0])


def overhead(rows: Sequence[BenchRow], T: int, dim: int | None = None) -> float:
    """``(tissd - ssd) / ssd`` forward time at length ``T``."""
    def pick(kernel):
        for r in rows:
            if r.kernel == kernel and r.T == T and (dim is None or r.dim == dim):
                return r.median_seconds
        raise ConfigError(f"no {kernel} timing at T={T}")
    base = pick("ssd")
    return (pick("tissd") - base) / base


def rows_csv(rows: Sequence[BenchRow]) -> str:
    out = ["kernel,T,dim,median_seconds"]
    out += [f"{r.kernel},{r.T},{r.dim},{r.median_seconds:.6e}" for r in rows]
    return "\n".join(out) + "\n"


def slopes_csv(rows: Sequence[BenchRow]) -> str:
    out = ["kernel,dim,loglog_slope"]
    seen = []
    for r in rows:
        if (r.kernel, r.dim) not in seen:
            seen.append((r.kernel, r.dim))
    for k, d in seen:
        if sum(1 for r in rows if r.kernel == k and r.dim == d) >= 2:
            out.append(f"{k},{d},{loglog_slope(rows, k, d):.4f}")
    return "\n".join(out) + "\n"
