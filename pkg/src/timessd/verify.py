"""Self-check suite behind ``timessd verify``: kernel parity, mask structure,
gradient checks and metric oracles.  Each check returns a :class:`Check`."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import ssd, temporal
from .autodiff import Tensor
from .gradcheck import finite_diff_check
from .metrics import metrics, rank_of_target
from .trainer import TINY, verify_gradients
from .model import ModelConfig


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name:<22} {self.detail}"


def _random_case(rng, T_max):
    T = int(rng.integers(1, T_max + 1))
    H = int(rng.choice([1, 4]))
    N = int(rng.choice([4, 32]))
    P = int(rng.integers(1, 5))
    Q = int(rng.integers(1, T + 1))
    X = rng.normal(size=(T, H * P))
    B = rng.normal(size=(T, N))
    C = rng.normal(size=(T, N))
    log_decay = -rng.exponential(0.5, (H, T))
    return X, B, C, log_decay, ssd.KernelConfig(H, P, N, Q)


def kernel_parity(cases: int = 200, T_max: int = 512, seed: int = 0, tol: float = 1e-10) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    with ad.no_grad():
        for _ in range(cases):
            X, B, C, ld, cfg = _random_case(rng, T_max)
            decay = ssd.DecaySequence(Tensor(ld))
            fast = ssd.chunked_ssd_forward(X, B, C, decay, cfg)[0].data
            ref = ssd.naive_ssd_forward(X, B, C, ssd.build_mask(decay)).data
            worst = max(worst, float(np.abs(fast - ref).max() / max(np.abs(ref).max(), 1e-300)))
    return Check("kernel-parity", worst <= tol, f"{cases} cases, T<={T_max}, worst rel {worst:.2e}")


def time_identity(seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    T, H, P, N = 40, 2, 3, 5
    X, B, C = rng.normal(size=(T, H * P)), rng.normal(size=(T, N)), rng.normal(size=(T, N))
    delta, A = rng.uniform(0.01, 0.5, T), -rng.uniform(1, 4, H)
    cfg = ssd.KernelConfig(H, P, N, 8)
    with ad.no_grad():
        plain = ssd.ssd_apply(X, B, C, delta, A, cfg).data
        ones = ssd.tissd_apply(X, B, C, delta, np.ones(T), A, cfg).data
    same = np.array_equal(plain, ones)
    return Check("time-identity", same, "D=1 bitwise equal to plain SSD" if same else "D=1 differs")


def mask_structure(samples: int = 1000, T_max: int = 24, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    worst = 0.0
    ok = True
    for _ in range(samples):
        T = int(rng.integers(1, T_max + 1))
        ld = -rng.exponential(1.0, (1, T))
        L = ssd.build_mask(ssd.DecaySequence(Tensor(ld))).data[0]
        ok &= bool(np.all(np.diag(L) == 1.0)) and bool(np.all(np.triu(L, 1) == 0.0))
        if T > 1:
            # L[i, j] = a_i * L[i-1, j] below the diagonal, checked in the log domain
            i, j = np.tril_indices(T, -1)
            worst = max(worst, float(np.abs(np.log(L[i, j]) - (ld[0, i] + np.log(L[i - 1, j]))).max()))
    ok &= worst <= 1e-12
    return Check("mask-structure", ok, f"{samples} sequences, worst log recurrence gap {worst:.1e}")


def _sq(t: Tensor) -> Tensor:
    return ad.sum_(t * t)


def _op_cases(rng) -> dict[str, Callable]:
    def t(*shape, scale=1.0):
        return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)

    x, w, g, b = t(3, 5), t(5, 4), t(5), t(5)
    ld = Tensor(-np.abs(rng.normal(size=(2, 7))), requires_grad=True)
    Xs, Bs, Cs = t(7, 4), t(7, 3), t(7, 3)
    kern, cb = t(3, 5), t(5)
    d = t(2, 6)
    W1, W2, bb1, bb2 = t(6, 6, scale=0.4), t(6, 6, scale=0.4), t(6), t(6)
    start = np.array([0, 2])
    return {
        "silu": ((lambda: ad.sum_(ad.silu(x) * x)), [x]),
        "softplus": ((lambda: _sq(ad.softplus(x))), [x]),
        "gelu": ((lambda: ad.sum_(ad.gelu(x) * x)), [x]),
        "matmul": ((lambda: ad.sum_(ad.sigmoid(x @ w))), [x, w]),
        "layer_norm": ((lambda: ad.sum_(ad.layer_norm(x, g, b) * x)), [x, g, b]),
        "log_softmax": ((lambda: ad.cross_entropy(x, np.array([1, 0, 4]))), [x]),
        "causal_conv": ((lambda: _sq(ad.causal_conv1d(x, kern, cb, start=1))), [x, kern, cb]),
        "segsum": ((lambda: ad.sum_(ad.exp(ssd.segsum(ld)) * ad.exp(ssd.segsum(ld)))), [ld]),
        "chunked_ssd": ((lambda: _sq(ssd.chunked_ssd_forward(
            Xs, Bs, Cs, ssd.DecaySequence(ld), ssd.KernelConfig(2, 2, 3, 3))[0])), [Xs, Bs, Cs, ld]),
        "delta_gate": ((lambda: _sq(temporal.gate_deltas(d, W1, bb1, W2, bb2))), [d, W1, bb1, W2, bb2]),
        "delta_enhance": ((lambda: _sq(temporal.enhance_deltas(d, kern[:, 0], cb[0], start))), [d, kern]),
    }


def op_gradients(seed: int = 0, tol: float = 1e-4) -> Check:
    rng = np.random.default_rng(seed)
    failed, worst = [], 0.0
    for name, (f, params) in _op_cases(rng).items():
        err = finite_diff_check(f, params, 1e-5)
        worst = max(worst, err)
        if err >= tol:
            failed.append(f"{name}={err:.1e}")
    detail = f"worst rel {worst:.2e}" + (f"; failed: {', '.join(failed)}" if failed else "")
    return Check("op-gradients", not failed, detail)


def model_gradients(quick: bool = False, tol: float = 1e-4) -> Check:
    cfg = ModelConfig(**TINY)
    rep = verify_gradients(cfg, max_coords=6 if quick else None, tolerance=tol)
    name, err = rep.worst()
    bad = [k for k, e in rep.errors.items() if e >= tol]
    detail = f"worst {name} {err:.2e}" + (f"; failed: {', '.join(bad)}" if bad else "")
    return Check("model-gradients", rep.passed, detail)


def metric_oracles(samples: int = 1000, seed: int = 0) -> Check:
    rng = np.random.default_rng(seed)
    ok = True
    for _ in range(samples):
        V = int(rng.integers(2, 31))
        scores = rng.integers(0, 5, V + 1).astype(float)   # many ties
        scores[0] = -np.inf
        target = int(rng.integers(1, V + 1))
        order = sorted(range(1, V + 1), key=lambda i: (-scores[i], i != target))
        # pessimistic: the target goes after every item with an equal score
        brute = 1 + sum(1 for i in order if i != target and scores[i] >= scores[target])
        ok &= rank_of_target(scores, target) == brute
    hr, ndcg, mrr = metrics([3], 10)
    ok &= hr == 1.0 and ndcg == 0.5 and abs(mrr - 1 / 3) < 1e-15
    return Check("metric-oracles", bool(ok), f"{samples} random score vectors + closed forms")


@contextlib.contextmanager
def corrupted_silu_rule():
    """Swap in a wrong SiLU derivative (the plain sigmoid) for negative controls."""
    original = ad.silu_grad
    ad.silu_grad = lambda x: 1.0 / (1.0 + np.exp(-x))
    try:
        yield
    finally:
        ad.silu_grad = original


def run_suite(quick: bool = False, corrupt_rule: bool = False) -> list[Check]:
    ctx = corrupted_silu_rule() if corrupt_rule else contextlib.nullcontext()
    with ctx:
        return [
            kernel_parity(cases=40 if quick else 200, T_max=64 if quick else 512),
            time_identity(),
            mask_structure(samples=200 if quick else 1000),
            op_gradients(),
            model_gradients(quick=quick),
            metric_oracles(samples=200 if quick else 1000),
        ]
