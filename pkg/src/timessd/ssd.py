"""Structured state-space duality kernels.

Shapes used throughout (a leading batch axis ``b`` is optional on every input):

    X      (b, T, H*P)   values, split into H heads of width P
    B, C   (b, T, N)     input/output projections shared across heads
    decay  (b, H, T)     per-step log decay; entry i links positions i-1 -> i

The output is ``Y[i] = sum_{j<=i} L[i, j] * (C[i] . B[j]) * X[j]`` per head,
where ``L[i, j] = prod_{k=j+1..i} a_k`` is lower-triangular 1-semiseparable
with a unit diagonal.  :func:`naive_ssd_forward` materializes ``L`` (O(T^2));
:func:`chunked_ssd_forward` splits the sequence into blocks and carries a
recurrent state between them (O(T)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor, make_node
from .errors import ConfigError, ShapeError

MODES = ("exact-exp", "linear-approx")


@dataclass
class KernelConfig:
    heads: int = 4
    head_dim: int = 32
    state: int = 32
    chunk: int = 16
    mode: str = "exact-exp"

    def __post_init__(self):
        if self.chunk < 1:
            raise ConfigError(f"chunk length must be >= 1, got {self.chunk}")
        if self.mode not in MODES:
            raise ConfigError(f"unknown kernel mode {self.mode!r}; expected one of {MODES}")
        if self.heads < 1 or self.head_dim < 1 or self.state < 1:
            raise ConfigError("heads, head_dim and state must be positive")


@dataclass
class DecaySequence:
    """Log-magnitude of per-step decay factors.

    ``negative`` marks factors below zero; it is only set in linear-approx mode,
    where raw products ``delta * A`` stand in for ``exp(delta * A)``.
    """

    log_decay: Tensor
    negative: np.ndarray | None = None


@dataclass
class ChunkState:
    """Recurrent carry after the last chunk, shape (b, H, N, P)."""

    state: Tensor


def _parity(counts: np.ndarray) -> np.ndarray:
    return 1.0 - 2.0 * (counts % 2)


def _lower(T: int, k: int = 0) -> np.ndarray:
    return np.tril(np.ones((T, T), dtype=bool), k)


def _segsum_np(x: np.ndarray) -> np.ndarray:
    T = x.shape[-1]
    xx = np.broadcast_to(x[..., :, None], x.shape + (T,))
    s = np.cumsum(np.where(_lower(T, -1), xx, 0), axis=-2)
    return s


def segsum(log_decay) -> Tensor:
    """``S[..., i, j] = sum_{k=j+1..i} x[k]`` for i >= j, ``-inf`` above the diagonal.

    Built by accumulating along rows rather than subtracting prefix sums, so
    long segments do not lose precision and ``-inf`` entries stay exact.
    """
    x = as_tensor(log_decay)
    T = x.shape[-1]
    low = _lower(T)
    s = np.where(low, _segsum_np(x.data), -np.inf)

    def vjp(g):
        g = np.where(low, g, 0.0)
        r = np.flip(np.cumsum(np.flip(g, -2), axis=-2), -2)
        return ((r * _lower(T, -1)).sum(axis=-1),)

    return make_node(s, (x,), vjp)


def _segcount(flags: np.ndarray) -> np.ndarray:
    return _segsum_np(flags.astype(np.int64))


def build_mask(decay: DecaySequence) -> Tensor:
    """Materialize the (..., H, T, T) lower-triangular decay mask."""
    L = ad.exp(segsum(decay.log_decay))
    if decay.negative is not None:
        T = decay.negative.shape[-1]
        sign = np.where(_lower(T), _parity(_segcount(decay.negative)), 1.0)
        L = L * sign
    return L


def _check_inputs(X: Tensor, B: Tensor, C: Tensor, T: int, H: int):
    if B.shape != C.shape:
        raise ShapeError(f"B {B.shape} and C {C.shape} differ")
    if X.shape[-2] != T or B.shape[-2] != T:
        raise ShapeError(f"sequence lengths differ: X {X.shape}, B {B.shape}, decay T={T}")
    if X.shape[-1] % H:
        raise ShapeError(f"width {X.shape[-1]} not divisible by {H} heads")


def naive_ssd_forward(X, B, C, mask) -> Tensor:
    """Reference path: ``Y = (L o C B^T) X`` with the mask materialized."""
    X, B, C, mask = (as_tensor(t) for t in (X, B, C, mask))
    H, T = mask.shape[-3], mask.shape[-1]
    _check_inputs(X, B, C, T, H)
    P = X.shape[-1] // H
    Xh = X.reshape(X.shape[:-1] + (H, P))
    scores = ad.einsum("...in,...jn->...ij", C, B)
    Y = ad.einsum("...hij,...ij,...jhp->...ihp", mask, scores, Xh)
    return Y.reshape(X.shape)


def chunked_ssd_forward(X, B, C, decay: DecaySequence, cfg: KernelConfig,
                        initial_state: Tensor | None = None) -> tuple[Tensor, ChunkState]:
    """Blocked linear-time path; numerically matches :func:`naive_ssd_forward`.

    Within each chunk of length ``cfg.chunk`` the output is computed densely;
    across chunks a (H, N, P) state is carried:
    ``state <- total_decay(chunk) * state + sum_j decay(j -> chunk end) B_j X_j^T``.
    Positions past ``T`` are padded with zero inputs and zero log decay.
    """
    if cfg.chunk < 1:
        raise ConfigError("chunk length must be >= 1")
    X, B, C = (as_tensor(t) for t in (X, B, C))
    logd = as_tensor(decay.log_decay)
    neg = decay.negative
    unbatched = X.ndim == 2
    if unbatched:
        X, B, C, logd = X[None], B[None], C[None], logd[None]
        neg = None if neg is None else neg[None]
        if initial_state is not None:
            initial_state = as_tensor(initial_state)[None]
    nb, T, HP = X.shape
    H, N, Q = logd.shape[-2], B.shape[-1], cfg.chunk
    _check_inputs(X, B, C, logd.shape[-1], H)
    P = HP // H

    pad = (-T) % Q
    X, B, C = (ad.pad_end(t, 1, pad) for t in (X, B, C))
    logd = ad.pad_end(logd, -1, pad)
    if neg is not None and pad:
        neg = np.concatenate([neg, np.zeros(neg.shape[:-1] + (pad,), dtype=bool)], axis=-1)
    nc = (T + pad) // Q

    Xc = X.reshape(nb, nc, Q, H, P)
    Bc = B.reshape(nb, nc, Q, N)
    Cc = C.reshape(nb, nc, Q, N)
    A = logd.reshape(nb, H, nc, Q)

    S = segsum(A)
    intra = ad.exp(S)
    to_end = ad.exp(S[..., -1, :])
    A_cum = ad.cumsum(A, axis=-1)
    from_start = ad.exp(A_cum)
    total = ad.exp(A_cum[..., -1])
    if neg is not None:
        flags = neg.reshape(nb, H, nc, Q)
        counts = _segcount(flags)
        cum = np.cumsum(flags, axis=-1)
        intra = intra * np.where(_lower(Q), _parity(counts), 1.0)
        to_end = to_end * _parity(counts[..., -1, :])
        from_start = from_start * _parity(cum)
        total = total * _parity(cum[..., -1])

    # contractions as batched matmuls over (b, h, c); head axis moved forward
    Xt = ad.transpose(Xc, (0, 3, 1, 2, 4))                       # (b, h, c, Q, P)
    G = ad.matmul(Cc, ad.transpose(Bc, (0, 1, 3, 2)))             # (b, c, Q, Q)
    y_diag = ad.matmul(G[:, None] * intra, Xt)
    Bw = Bc[:, None] * to_end[..., None]                          # (b, h, c, Q, N)
    chunk_states = ad.matmul(ad.transpose(Bw, (0, 1, 2, 4, 3)), Xt)  # (b, h, c, N, P)

    if initial_state is None:
        carry = Tensor(np.zeros((nb, H, N, P)))
    else:
        carry = as_tensor(initial_state)
    incoming = []
    for c in range(nc):
        incoming.append(carry)
        carry = carry * total[:, :, c, None, None] + chunk_states[:, :, c]
    y_off = ad.matmul(Cc[:, None], ad.stack(incoming, axis=2)) * from_start[..., None]

    Y = ad.transpose(y_diag + y_off, (0, 2, 3, 1, 4)).reshape(nb, nc * Q, HP)[:, :T]
    if unbatched:
        return Y[0], ChunkState(carry[0])
    return Y, ChunkState(carry)


def discretize(delta, A, B, d=None, mode: str = "exact-exp", valid=None) -> tuple[DecaySequence, Tensor]:
    """Fuse step sizes with time deltas and discretize.

    ``dhat = delta * d`` (``d`` omitted means ``dhat = delta`` exactly), then
    ``log a = dhat * A_h`` per head and ``Bbar = dhat * B``.  In linear-approx
    mode the raw product ``dhat * A_h`` is the decay factor itself.
    Positions with ``valid == False`` get ``dhat = 0`` and a unit decay factor.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown kernel mode {mode!r}")
    delta, A, B = as_tensor(delta), as_tensor(A), as_tensor(B)
    dhat = delta if d is None else delta * d
    if valid is not None:
        dhat = dhat * np.asarray(valid, dtype=np.float64)
    a = dhat[..., None, :] * A[:, None]
    B_bar = dhat[..., None] * B
    if mode == "exact-exp":
        return DecaySequence(a), B_bar

    if valid is not None:
        a = ad.where(np.asarray(valid, dtype=bool)[..., None, :], a, 1.0)
    if np.any(np.abs(a.data) >= 1.0):
        warnings.warn("linear-approx decay factor with |a| >= 1; products may diverge",
                      RuntimeWarning, stacklevel=2)
    return DecaySequence(ad.log(ad.abs_(a)), negative=a.data < 0), B_bar


def tissd_apply(X, B, C, delta, D, A, cfg: KernelConfig, valid=None,
                kernel: str = "chunked") -> Tensor:
    """Time-aware SSD map ``Y = (L o C Bbar^T) X`` with time deltas ``D`` fused into the steps.

    ``D=None`` is the plain (time-agnostic) kernel; ``D`` of all ones gives the
    same floating-point result.
    """
    decay, B_bar = discretize(delta, A, B, D, cfg.mode, valid)
    if kernel == "naive":
        return naive_ssd_forward(X, B_bar, C, build_mask(decay))
    if kernel != "chunked":
        raise ConfigError(f"unknown kernel {kernel!r}")
    return chunked_ssd_forward(X, B_bar, C, decay, cfg)[0]


def ssd_apply(X, B, C, delta, A, cfg: KernelConfig, valid=None, kernel: str = "chunked") -> Tensor:
    return tissd_apply(X, B, C, delta, None, A, cfg, valid, kernel)


def quadratic_ssd_numpy(X: np.ndarray, B: np.ndarray, C: np.ndarray, log_decay: np.ndarray,
                        row_block: int = 512) -> np.ndarray:
    """Untaped O(T^2) forward that builds the mask a block of rows at a time.

    Same arithmetic as :func:`naive_ssd_forward` but with bounded memory, for
    timing long sequences.  Unbatched inputs only.
    """
    T, HP = X.shape
    H = log_decay.shape[0]
    P = HP // H
    Xh = X.reshape(T, H, P)
    cs = np.cumsum(log_decay, axis=-1)
    Y = np.empty((T, H, P))
    cols = np.arange(T)
    for r0 in range(0, T, row_block):
        r1 = min(r0 + row_block, T)
        rows = np.arange(r0, r1)
        seg = cs[:, r0:r1, None] - cs[:, None, :]
        L = np.where(rows[:, None] >= cols[None, :], np.exp(np.minimum(seg, 0.0)), 0.0)
        G = C[r0:r1] @ B.T
        Y[r0:r1] = np.einsum("hij,ij,jhp->ihp", L, G, Xh, optimize=True)
    return Y.reshape(T, HP)
