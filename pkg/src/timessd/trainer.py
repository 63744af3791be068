"""Adam training loop, full-catalog evaluation and gradient verification."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, backward, no_grad
from .data import SequenceDataset, batchify, examples, make_batch
from .errors import ConfigError, DataError, DivergenceError
from .gradcheck import gradient_errors
from .metrics import DEFAULT_KS, RankingReport, rank_of_target
from .model import ModelConfig, TimeAwareSSDRec

log = logging.getLogger(__name__)

HISTORY_HEADER = "epoch,loss,hr10,ndcg10,mrr10"


@dataclass
class TrainConfig:
    lr: float = 0.01
    batch: int = 128
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 50
    patience: int = 10
    seed: int = 0
    clip: float = 0.0          # global-norm clipping, 0 disables
    eval_batch: int = 256
    mask_seen: bool = False

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ConfigError("betas must lie in [0, 1)")
        if self.batch < 1 or self.epochs < 1 or self.patience < 0:
            raise ConfigError("batch and epochs must be positive, patience non-negative")


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, pad_row: str | None = "item_emb") -> AdamState:
    """One bias-corrected Adam update in place; the pad embedding row stays zero.

    Any non-finite gradient aborts before a single parameter changes.
    """
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise DivergenceError(f"non-finite gradient in {', '.join(sorted(bad))}; step {state.step + 1} skipped")
    b1, b2 = cfg.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        if p.data.shape != g.shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, parameter {p.data.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data = np.asarray(p.data - cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps))
    if pad_row is not None and pad_row in params:
        params[pad_row].data[0] = 0.0
    return state


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


def evaluate(model: TimeAwareSSDRec, ds: SequenceDataset, split: str = "test",
             ks=DEFAULT_KS, batch: int = 256, mask_seen: bool = False) -> RankingReport:
    """Rank each held-out target against the full catalog.

    With ``mask_seen`` every item in the user's input history (other than the
    target itself) is pushed to the bottom of the ranking.
    """
    ranks = []
    with no_grad():
        for b in batchify(ds, model.cfg.max_len, batch, split):
            scores = model.logits(b.items, b.timestamps, b.valid).data.copy()
            if mask_seen:
                for r, (u, e) in enumerate(zip(b.users, b.ends)):
                    seen = np.unique(ds.items[u - 1][:e])
                    seen = seen[seen != b.targets[r]]
                    scores[r, seen] = -np.inf
            ranks.append(rank_of_target(scores, b.targets))
    if not ranks:
        raise DataError(f"no users with a {split} target")
    return RankingReport.from_ranks(np.concatenate(ranks), ks)


@dataclass
class TrainResult:
    history: list[tuple[int, float, float, float, float]]
    best_epoch: int
    best_params: dict[str, np.ndarray]
    initial_loss: float

    def history_csv(self) -> str:
        rows = [HISTORY_HEADER]
        rows += [f"{e},{l!r},{h!r},{n!r},{m!r}" for e, l, h, n, m in self.history]
        return "\n".join(rows) + "\n"


def train(model: TimeAwareSSDRec, ds: SequenceDataset, cfg: TrainConfig,
          out_dir=None, verbose: bool = False) -> TrainResult:
    """Mini-batch Adam with early stopping on validation NDCG@10.

    Training stops once ``patience`` consecutive epochs fail to beat the best
    validation NDCG@10 (so ``patience=0`` runs one epoch).  The best parameters
    are restored into ``model`` before returning and, with ``out_dir``, written
    to ``best.npz`` alongside ``history.csv``.  ``initial_loss`` is the loss of
    the very first batch before any update.
    """
    if not examples(ds, "train"):
        raise DataError("dataset has no training examples")
    params = model.params
    names = list(params)
    state = AdamState()
    data_rng = np.random.default_rng(cfg.seed)
    drop_rng = ad.philox(cfg.seed + 1)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history = []
    best = (-np.inf, 0, {k: p.data.copy() for k, p in params.items()})
    initial = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        losses, weights = [], []
        for b in batchify(ds, model.cfg.max_len, cfg.batch, "train", rng=data_rng):
            loss = model.loss(b.items, b.timestamps, b.targets, b.valid, train=True, rng=drop_rng)
            value = float(loss.data)
            if not np.isfinite(value):
                _restore(model, best[2])
                raise DivergenceError(f"loss became {value} in epoch {epoch}; best parameters restored")
            if initial is None:
                initial = value
            grads = backward(loss, [params[k] for k in names])
            grads = {k: grads[params[k]] for k in names}
            for p in params.values():
                p.grad = None
            if cfg.clip > 0:
                grads = clip_global_norm(grads, cfg.clip)
            adam_step(params, grads, state, cfg)
            losses.append(value)
            weights.append(len(b.targets))
        mean_loss = float(np.average(losses, weights=weights))
        rep = evaluate(model, ds, "valid", ks=(10,), batch=cfg.eval_batch, mask_seen=cfg.mask_seen)
        row = (epoch, mean_loss, rep[("hr", 10)], rep[("ndcg", 10)], rep[("mrr", 10)])
        history.append(row)
        if verbose:
            log.info("epoch %d loss %.4f hr10 %.4f ndcg10 %.4f mrr10 %.4f", *row)
        if row[3] > best[0]:
            best = (row[3], epoch, {k: p.data.copy() for k, p in params.items()})
            stale = 0
            if out is not None:
                model.save(out / "best.npz")
        else:
            stale += 1
        if out is not None:
            (out / "history.csv").write_text(TrainResult(history, 0, {}, 0.0).history_csv())
        if stale >= cfg.patience:
            break
    _restore(model, best[2])
    return TrainResult(history, best[1], best[2], float(initial))


def _restore(model: TimeAwareSSDRec, snapshot: dict[str, np.ndarray]):
    for k, v in snapshot.items():
        model.params[k].data = v.copy()


# ------------------------------------------------------------ verification

TINY = dict(n_items=20, max_len=8, d_model=8, expand=2, d_state=4, heads=2, d_conv=4,
            n_layers=2, dropout=0.0, chunk=4)


@dataclass
class GradientReport:
    errors: dict[str, float]
    tolerance: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())

    def worst(self) -> tuple[str, float]:
        if not self.errors:
            return "", 0.0
        k = max(self.errors, key=self.errors.get)
        return k, self.errors[k]

    def table(self) -> str:
        lines = [f"{name:<32} {err:.3e} {'ok' if err < self.tolerance else 'FAIL'}"
                 for name, err in self.errors.items()]
        return "\n".join(lines)


def _group(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "layers":
        return ".".join(parts[:3])
    return parts[0]


def tiny_batch(cfg: ModelConfig, seed: int = 0, batch: int = 3):
    """Left-padded toy batch with strictly increasing timestamps."""
    rng = np.random.default_rng(seed)
    T = cfg.max_len
    items = rng.integers(1, cfg.vocab, (batch, T))
    lengths = np.linspace(T, max(2, T // 2), batch).astype(int)
    valid = np.arange(T)[None, :] >= (T - lengths)[:, None]
    items = np.where(valid, items, 0)
    ts = np.cumsum(rng.integers(1, 10_000, (batch, T)), axis=1).astype(float)
    ts = np.where(valid, ts, ts[np.arange(batch), T - lengths][:, None])
    targets = rng.integers(1, cfg.vocab, batch)
    return items, ts, valid, targets


def verify_gradients(cfg: ModelConfig | None = None, step: float = 1e-5, seed: int = 0,
                     max_coords: int | None = None, tolerance: float = 1e-4) -> GradientReport:
    """Finite-difference check of the full loss, reported per parameter group."""
    cfg = cfg or ModelConfig(**TINY)
    if cfg.dropout:
        raise ConfigError("gradient verification needs dropout = 0")
    model = TimeAwareSSDRec(cfg, seed=seed)
    rng = np.random.default_rng(seed)
    # move away from the symmetric init so every path carries signal
    for name, p in model.params.items():
        p.data = np.asarray(p.data + rng.normal(0.0, 0.1, p.data.shape))
    model.params["item_emb"].data[0] = 0.0
    items, ts, valid, targets = tiny_batch(cfg, seed)
    names = [k for k in model.params if k != "item_emb"] + ["item_emb"]
    tensors = [model.params[k] for k in names]
    if not tensors:
        return GradientReport({}, tolerance)
    errs = gradient_errors(lambda: model.loss(items, ts, targets, valid), tensors, step,
                           max_coords=max_coords, rng=rng)
    groups: dict[str, float] = {}
    for name, e in zip(names, errs):
        g = _group(name)
        groups[g] = max(groups.get(g, 0.0), e)
    return GradientReport(groups, tolerance)
