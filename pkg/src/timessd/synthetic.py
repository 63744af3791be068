"""Synthetic event logs where the next item depends on the elapsed-time gap.

Items are grouped into categories.  Each event arrives after a gap drawn from
one of two regimes; the gap that *preceded* the latest event decides where the
user goes next:

* short gap (minutes): the next item comes from the latest item's category;
* long gap (days): the next item comes from the partner category ``(c+1) % C``.

The gap is visible in the history timestamps, so a model that reads time
differences can tell the two regimes apart while a time-blind model must hedge
between both categories.  With ``m`` items per category the best achievable
next-item loss is ``ln m`` when the gap is used and ``ln m + H(p_long)`` when
it is not.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import EventLog

DAY = 86_400


@dataclass(frozen=True)
class TimeGapSpec:
    n_users: int = 500
    n_items: int = 200
    items_per_category: int = 8
    min_len: int = 15
    max_len: int = 40
    p_long: float = 0.3
    short_gap: tuple[int, int] = (30, 600)
    long_gap: tuple[int, int] = (DAY, 7 * DAY)
    start_time: int = 1_600_000_000

    @property
    def n_categories(self) -> int:
        return self.n_items // self.items_per_category


def category_of(item: int, spec: TimeGapSpec = TimeGapSpec()) -> int:
    """Category of a 1-based synthetic item id."""
    return (item - 1) // spec.items_per_category


def generate(spec: TimeGapSpec = TimeGapSpec(), seed: int = 0) -> EventLog:
    """Draw a log with string user/item keys (``u<n>``, ``i<n>``) and integer seconds."""
    rng = np.random.default_rng(seed)
    C, m = spec.n_categories, spec.items_per_category
    users, items, times = [], [], []
    for u in range(1, spec.n_users + 1):
        n = int(rng.integers(spec.min_len, spec.max_len + 1))
        t = spec.start_time + int(rng.integers(0, 30 * DAY))
        cat = int(rng.integers(C))
        into_prev = into_cur = False     # long gap into event j-1 / into event j
        for _ in range(n):
            if into_prev:
                cat = (cat + 1) % C
            users.append(f"u{u}")
            items.append(f"i{cat * m + int(rng.integers(m)) + 1}")
            times.append(t)
            gap_long = bool(rng.random() < spec.p_long)
            lo, hi = spec.long_gap if gap_long else spec.short_gap
            t += int(rng.integers(lo, hi + 1))
            into_prev, into_cur = into_cur, gap_long
    return EventLog(users, items, np.asarray(times, dtype=np.int64), source=f"synthetic:{seed}")
