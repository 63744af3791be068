"""Full-catalog ranking metrics (HR, NDCG, MRR at cut-off K)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

DEFAULT_KS = (10, 20, 50)
METRIC_NAMES = ("hr", "ndcg", "mrr")


def rank_of_target(scores, targets) -> np.ndarray:
    """1-based rank of each target; items tied with the target rank ahead of it.

    ``scores`` is (V,) or (B, V) with column 0 the pad id, which never counts.
    """
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = np.atleast_1d(np.asarray(targets))
    if t.shape[0] != s.shape[0]:
        raise DataError(f"{s.shape[0]} score rows for {t.shape[0]} targets")
    if np.any(t < 1) or np.any(t >= s.shape[1]):
        raise DataError("target id outside [1, vocab)")
    rows = np.arange(len(t))
    own = s[rows, t]
    ahead = s[:, 1:] >= own[:, None]
    # the target itself is in the >= count, so the count already is 1 + others
    ranks = ahead.sum(axis=1)
    return ranks if np.ndim(targets) else ranks[0]


def metrics(ranks, k: int) -> tuple[float, float, float]:
    """(HR@k, NDCG@k, MRR@k) averaged over ``ranks``."""
    r = np.asarray(ranks, dtype=np.float64)
    if r.size == 0:
        raise DataError("no ranks to evaluate")
    if np.any(r < 1):
        raise DataError("ranks are 1-based")
    hit = r <= k
    hr = float(hit.mean())
    ndcg = float(np.where(hit, 1.0 / np.log2(r + 1.0), 0.0).mean())
    mrr = float(np.where(hit, 1.0 / r, 0.0).mean())
    return hr, ndcg, mrr


@dataclass
class RankingReport:
    ks: tuple[int, ...] = DEFAULT_KS
    values: dict[tuple[str, int], float] = field(default_factory=dict)
    count: int = 0

    @classmethod
    def from_ranks(cls, ranks, ks=DEFAULT_KS) -> "RankingReport":
        rep = cls(tuple(ks), {}, int(np.size(ranks)))
        for k in rep.ks:
            for name, v in zip(METRIC_NAMES, metrics(ranks, k)):
                rep.values[(name, k)] = v
        return rep

    def __getitem__(self, key: tuple[str, int]) -> float:
        return self.values[key]

    def table(self) -> str:
        lines = [f"{'K':>4} {'HR':>8} {'NDCG':>8} {'MRR':>8}   (n={self.count})"]
        for k in self.ks:
            lines.append(f"{k:>4} " + " ".join(f"{self.values[(m, k)]:8.4f}" for m in METRIC_NAMES))
        return "\n".join(lines)

    def csv(self) -> str:
        rows = ["metric,K,value"]
        for k in self.ks:
            for m in METRIC_NAMES:
                rows.append(f"{m},{k},{self.values[(m, k)]!r}")
        return "\n".join(rows) + "\n"
