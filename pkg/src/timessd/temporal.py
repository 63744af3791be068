"""Interaction time-difference pipeline.

Raw timestamps become backward differences, are layer-normalized over each
sequence's valid positions, gated by a causal two-layer map, smoothed by a
clamped causal convolution, and finally passed between stacked layers through
a scalar gated residual.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, as_tensor
from .errors import ConfigError, DataError, ShapeError


def time_deltas(timestamps, valid=None) -> np.ndarray:
    """``d[0] = 0`` and ``d[i] = t[i] - t[i-1]`` between consecutive valid positions.

    Pad positions (``valid == False``) get 0.  A decrease between valid
    positions means the sequence was not sorted and raises :class:`DataError`.
    """
    ts = np.asarray(timestamps, dtype=np.float64)
    ok = np.ones(ts.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    d = np.zeros_like(ts)
    if ts.shape[-1] < 2:
        return d
    step = ts[..., 1:] - ts[..., :-1]
    both = ok[..., 1:] & ok[..., :-1]
    if np.any(both & (step < 0)):
        raise DataError("timestamps decrease within a sequence")
    d[..., 1:] = np.where(both, step, 0.0)
    return d


def normalize_deltas(d, valid=None, gain=None, bias=None, dropout_rate: float = 0.0,
                     train: bool = False, rng=None, eps: float = 1e-5) -> Tensor:
    """Layer-norm over the time axis (valid positions only), then dropout."""
    d = as_tensor(d)
    mask = np.ones(d.shape) if valid is None else np.asarray(valid, dtype=np.float64)
    out = ad.layer_norm(d, gain, bias, eps=eps, mask=mask)
    return ad.dropout(out, dropout_rate, train, rng)


_ACTIVATIONS = {"silu": ad.silu, "softplus": ad.softplus}


def causal_triu(T: int) -> np.ndarray:
    """Mask for a ``(T, T)`` weight applied as ``d @ W``: output k sees inputs t <= k."""
    return np.triu(np.ones((T, T)))


@dataclass
class DeltaPathParams:
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor
    conv_w: Tensor
    conv_b: Tensor
    gate: Tensor

    @classmethod
    def init(cls, T: int, K: int, rng: np.random.Generator, std: float | None = None):
        std = 1.0 / np.sqrt(T) if std is None else std
        kernel = np.zeros(K)
        kernel[0] = 1.0
        return cls(
            w1=Tensor(rng.normal(0.0, std, (T, T)), requires_grad=True),
            b1=Tensor(np.zeros(T), requires_grad=True),
            w2=Tensor(rng.normal(0.0, std, (T, T)), requires_grad=True),
            b2=Tensor(np.zeros(T), requires_grad=True),
            conv_w=Tensor(kernel, requires_grad=True),
            conv_b=Tensor(0.0, requires_grad=True),
            gate=Tensor(0.0, requires_grad=True),
        )

    def tensors(self) -> dict[str, Tensor]:
        return dict(vars(self))


def gate_deltas(d, w1, b1, w2, b2) -> Tensor:
    """``d * sigmoid(silu(d W1 + b1) W2 + b2)`` with causally masked weights."""
    d = as_tensor(d)
    T = d.shape[-1]
    if as_tensor(w1).shape != (T, T) or as_tensor(w2).shape != (T, T):
        raise ShapeError(f"delta length {T} does not match gate weights {as_tensor(w1).shape}")
    tri = causal_triu(T)
    hidden = ad.silu(ad.matmul(d[..., None, :], w1 * tri)[..., 0, :] + b1)
    alpha = ad.sigmoid(ad.matmul(hidden[..., None, :], w2 * tri)[..., 0, :] + b2)
    return alpha * d


def enhance_deltas(d, kernel, bias=None, start=None, activation: str = "silu") -> Tensor:
    """``act(sum_m d[max(t-m, s)] * kernel[m] + bias)`` on a single channel.

    ``activation`` is ``"silu"`` or ``"softplus"``; the latter keeps the result
    strictly positive so it can scale step sizes directly.
    """
    if activation not in _ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}")
    d = as_tensor(d)
    kernel = as_tensor(kernel)
    b = None if bias is None else ad.reshape(as_tensor(bias), (1,))
    conv = ad.causal_conv1d(d[..., None], kernel[:, None], b, start=start)
    return _ACTIVATIONS[activation](conv[..., 0])


def layer_transition(d_in, d_used, gate) -> Tensor:
    """Gated residual ``s * d_used + (1 - s) * d_in`` with ``s = sigmoid(gate)``."""
    s = ad.sigmoid(gate)
    return s * d_used + (1.0 - s) * d_in


def delta_path(d, p: DeltaPathParams, valid=None, start=None, mode: str = "exact-exp"):
    """One layer's worth of delta processing.

    Returns ``(d_kernel, d_next)``: the vector fused into the SSD step sizes
    and the vector handed to the next layer.  In exact-exp mode the enhanced
    deltas go through softplus first so step sizes (and hence decays in
    (0, 1]) stay valid; linear-approx mode passes them on raw.
    """
    gated = gate_deltas(d, p.w1, p.b1, p.w2, p.b2)
    enhanced = enhance_deltas(gated, p.conv_w, p.conv_b, start)
    vf = None if valid is None else np.asarray(valid, dtype=np.float64)
    if vf is not None:
        enhanced = enhanced * vf
    d_kernel = ad.softplus(enhanced) if mode == "exact-exp" else enhanced
    if vf is not None:
        d_kernel = d_kernel * vf
    return d_kernel, layer_transition(d, enhanced, p.gate)
