"""Time-aware SSD sequential recommender.

Item ids are embedded, passed through stacked layers of (time-aware SSD block
+ feed-forward network), and the hidden state at the final position is scored
against the tied item embedding table.  Sequences are left-padded with id 0.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import ssd, temporal
from .autodiff import Tensor
from .errors import ConfigError, DataError

CHECKPOINT_FORMAT = "timessd-checkpoint/1"


@dataclass
class ModelConfig:
    n_items: int
    max_len: int = 50
    d_model: int = 64
    expand: int = 2
    d_state: int = 32
    heads: int = 4
    d_conv: int = 4
    n_layers: int = 2
    dropout: float = 0.2
    chunk: int = 16
    mode: str = "exact-exp"
    no_time: bool = False
    no_ffn: bool = False
    init_std: float = 0.02
    zero_out_proj: bool = False

    def __post_init__(self):
        if self.n_items < 1 or self.max_len < 1 or self.n_layers < 0:
            raise ConfigError("n_items and max_len must be positive, n_layers non-negative")
        if (self.d_model * self.expand) % self.heads:
            raise ConfigError("d_model * expand must be divisible by heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.mode not in ssd.MODES:
            raise ConfigError(f"unknown kernel mode {self.mode!r}")

    @property
    def vocab(self) -> int:
        return self.n_items + 1

    @property
    def d_inner(self) -> int:
        return self.d_model * self.expand

    def kernel_config(self) -> ssd.KernelConfig:
        return ssd.KernelConfig(heads=self.heads, head_dim=self.d_inner // self.heads,
                                state=self.d_state, chunk=self.chunk, mode=self.mode)


def init_params(cfg: ModelConfig, seed: int = 0) -> dict[str, Tensor]:
    rng = ad.philox(seed)
    D, Di, N, K, T = cfg.d_model, cfg.d_inner, cfg.d_state, cfg.d_conv, cfg.max_len
    p: dict[str, np.ndarray] = {}

    def linear(name, fan_in, fan_out, bias=True):
        p[f"{name}.weight"] = rng.normal(0.0, 1.0 / np.sqrt(fan_in), (fan_in, fan_out))
        if bias:
            p[f"{name}.bias"] = np.zeros(fan_out)

    def norm(name, width):
        p[f"{name}.gain"] = np.ones(width)
        p[f"{name}.bias"] = np.zeros(width)

    emb = rng.normal(0.0, cfg.init_std, (cfg.vocab, D))
    emb[0] = 0.0
    p["item_emb"] = emb
    norm("emb_norm", D)
    if not cfg.no_time:
        norm("delta_norm", T)
    for i in range(cfg.n_layers):
        pre = f"layers.{i}"
        norm(f"{pre}.norm1", D)
        linear(f"{pre}.expand", D, Di, bias=False)
        linear(f"{pre}.in_proj", Di, Di + 2 * N + 1)
        dt0 = np.exp(rng.uniform(np.log(1e-3), np.log(1e-1)))
        p[f"{pre}.in_proj.bias"][-1] = dt0 + np.log(-np.expm1(-dt0))
        p[f"{pre}.conv.weight"] = rng.normal(0.0, 1.0 / np.sqrt(K), (K, Di + 2 * N))
        p[f"{pre}.conv.bias"] = np.zeros(Di + 2 * N)
        p[f"{pre}.A_log"] = np.log(rng.uniform(1.0, 16.0, cfg.heads))
        linear(f"{pre}.out_proj", Di, D, bias=False)
        if cfg.zero_out_proj:
            p[f"{pre}.out_proj.weight"][:] = 0.0
        if not cfg.no_time:
            dp = temporal.DeltaPathParams.init(T, K, rng)
            for k, v in dp.tensors().items():
                p[f"{pre}.delta.{k}"] = v.data
        if not cfg.no_ffn:
            norm(f"{pre}.norm2", D)
            linear(f"{pre}.ffn.fc1", D, 4 * D)
            linear(f"{pre}.ffn.fc2", 4 * D, D)
    return {k: Tensor(v, requires_grad=True, name=k) for k, v in p.items()}


def _first_valid(valid: np.ndarray) -> np.ndarray:
    if not valid.any(axis=-1).all():
        raise DataError("sequence with no valid positions")
    return valid.argmax(axis=-1)


class TimeAwareSSDRec:
    """Parameters plus forward/loss for the recommender.

    ``params`` is a flat name -> Tensor dict; everything else is stateless so a
    model is fully described by (config, params).
    """

    def __init__(self, cfg: ModelConfig, params: dict[str, Tensor] | None = None, seed: int = 0):
        self.cfg = cfg
        self.params = init_params(cfg, seed) if params is None else params

    # -- building blocks ---------------------------------------------------

    def embed(self, items, valid, train=False, rng=None) -> Tensor:
        items = np.asarray(items)
        if items.size and (items.min() < 0 or items.max() >= self.cfg.vocab):
            raise DataError(f"item id outside [0, {self.cfg.vocab})")
        p = self.params
        x = ad.embedding(p["item_emb"], items)
        x = ad.dropout(x, self.cfg.dropout, train, rng)
        x = ad.layer_norm(x, p["emb_norm.gain"], p["emb_norm.bias"])
        return x * valid[..., None]

    def layer(self, i: int, x: Tensor, d: Tensor | None, valid, start, train=False, rng=None):
        """One time-aware SSD layer; returns ``(x_next, d_next)``."""
        cfg, p = self.cfg, self.params
        pre = f"layers.{i}"
        Di, N = cfg.d_inner, cfg.d_state
        vm = valid[..., None]

        u = ad.layer_norm(x, p[f"{pre}.norm1.gain"], p[f"{pre}.norm1.bias"])
        u = u @ p[f"{pre}.expand.weight"]
        z = u @ p[f"{pre}.in_proj.weight"] + p[f"{pre}.in_proj.bias"]
        xbc = ad.silu(ad.causal_conv1d(z[..., :Di + 2 * N], p[f"{pre}.conv.weight"],
                                       p[f"{pre}.conv.bias"], start=start))
        xs = xbc[..., :Di] * vm
        Bm = xbc[..., Di:Di + N]
        Cm = xbc[..., Di + N:]
        delta = ad.softplus(z[..., Di + 2 * N])

        d_kernel = d_next = None
        if d is not None:
            dp = temporal.DeltaPathParams(**{k: p[f"{pre}.delta.{k}"] for k in
                                             ("w1", "b1", "w2", "b2", "conv_w", "conv_b", "gate")})
            d_kernel, d_next = temporal.delta_path(d, dp, valid, start, cfg.mode)

        A = -ad.exp(p[f"{pre}.A_log"])
        y = ssd.tissd_apply(xs, Bm, Cm, delta, d_kernel, A, cfg.kernel_config(), valid=valid)
        y = y @ p[f"{pre}.out_proj.weight"]
        x = x + ad.dropout(y, cfg.dropout, train, rng)

        if not cfg.no_ffn:
            h = ad.layer_norm(x, p[f"{pre}.norm2.gain"], p[f"{pre}.norm2.bias"])
            h = ad.gelu(h @ p[f"{pre}.ffn.fc1.weight"] + p[f"{pre}.ffn.fc1.bias"])
            h = h @ p[f"{pre}.ffn.fc2.weight"] + p[f"{pre}.ffn.fc2.bias"]
            x = x + ad.dropout(h, cfg.dropout, train, rng)
        return x * vm, d_next

    def hidden(self, items, timestamps, valid=None, train=False, rng=None) -> Tensor:
        """Per-position output states, shape (batch, T, d_model)."""
        items = np.atleast_2d(np.asarray(items, dtype=np.int64))
        valid = items > 0 if valid is None else np.atleast_2d(np.asarray(valid, dtype=bool))
        vf = valid.astype(np.float64)
        start = _first_valid(valid)
        x = self.embed(items, vf, train, rng)
        d = None
        if not self.cfg.no_time:
            if items.shape[-1] != self.cfg.max_len:
                raise DataError(f"time-aware model needs length {self.cfg.max_len}, got {items.shape[-1]}")
            raw = temporal.time_deltas(np.atleast_2d(timestamps), valid)
            d = temporal.normalize_deltas(raw, valid, self.params["delta_norm.gain"],
                                          self.params["delta_norm.bias"],
                                          self.cfg.dropout, train, rng)
        for i in range(self.cfg.n_layers):
            x, d = self.layer(i, x, d, valid, start, train, rng)
        return x

    def logits(self, items, timestamps, valid=None, train=False, rng=None) -> Tensor:
        """Dot products of the last hidden state with every item row; pad column is -inf."""
        h = self.hidden(items, timestamps, valid, train, rng)
        pref = h[:, -1, :]
        raw = ad.einsum("bd,vd->bv", pref, self.params["item_emb"])
        pad = np.zeros(self.cfg.vocab, dtype=bool)
        pad[0] = True
        return ad.where(pad, -np.inf, raw)

    def forward(self, items, timestamps, valid=None) -> Tensor:
        """Next-item probability over the catalog (softmax of :meth:`logits`)."""
        return ad.softmax(self.logits(items, timestamps, valid))

    def loss(self, items, timestamps, targets, valid=None, train=False, rng=None) -> Tensor:
        """Full-catalog cross-entropy at the final position; pad targets are skipped."""
        targets = np.asarray(targets)
        rows = np.nonzero(targets > 0)[0]
        if rows.size == 0:
            raise DataError("every target is the pad id")
        logits = self.logits(items, timestamps, valid, train, rng)
        if rows.size < targets.size:
            logits = logits[rows]
        return ad.cross_entropy(logits, targets[rows])

    # -- persistence -------------------------------------------------------

    def save(self, path) -> None:
        """Write config and parameters into one ``.npz`` container."""
        arrays = {f"param/{k}": v.data for k, v in self.params.items()}
        arrays["format"] = np.array(CHECKPOINT_FORMAT)
        arrays["config"] = np.array(json.dumps(asdict(self.cfg), sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "TimeAwareSSDRec":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"checkpoint not found: {path}")
        with np.load(path, allow_pickle=False) as z:
            if "format" not in z or str(z["format"]) != CHECKPOINT_FORMAT:
                raise DataError(f"{path} is not a {CHECKPOINT_FORMAT} file")
            raw = json.loads(str(z["config"]))
            known = {f.name for f in fields(ModelConfig)}
            cfg = ModelConfig(**{k: v for k, v in raw.items() if k in known})
            params = {k[len("param/"):]: Tensor(z[k], requires_grad=True, name=k[len("param/"):])
                      for k in z.files if k.startswith("param/")}
        return cls(cfg, params)


def loss_from_scores(scores, targets) -> Tensor:
    """Mean of ``-log(score[target])`` for probability rows ``scores``."""
    scores = ad.as_tensor(scores)
    targets = np.asarray(targets)
    keep = targets > 0
    if not keep.any():
        raise DataError("every target is the pad id")
    rows = np.nonzero(keep)[0]
    return ad.mean(-ad.log(scores[rows, targets[rows]]))
