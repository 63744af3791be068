"""Event-log ingestion, k-core filtering, leave-one-out splits and batching.

On-disk layout of a processed dataset directory (all UTF-8, ``\\n`` endings):

``id_map.tsv``
    ``# timessd-idmap/1`` header, then ``kind<TAB>raw_key<TAB>int_id`` with
    kind in {user, item}; ids are 1-based and contiguous per kind.
``sequences.tsv``
    ``# timessd-sequences/1`` header, then one user per line:
    ``user_id<TAB>item item ...<TAB>ts ts ...`` (space-separated, time order).
``stats.txt``
    ``key = value`` lines: format, users, items, interactions, avg_length,
    max_length, sparsity, k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, DataError, IngestError

log = logging.getLogger(__name__)

IDMAP_HEADER = "# timessd-idmap/1"
SEQ_HEADER = "# timessd-sequences/1"
STATS_FORMAT = "timessd-stats/1"


@dataclass(frozen=True)
class Format:
    """Which columns hold user, item and timestamp, and how rows are split."""

    delimiter: str = ","
    user_col: int = 0
    item_col: int = 1
    time_col: int = 2
    skip_header: bool = False

    @classmethod
    def preset(cls, name: str) -> "Format":
        presets = {
            "ml-1m": cls("::", 0, 1, 3, False),
            "csv": cls(",", 0, 1, 2, True),
            "tsv": cls("\t", 0, 1, 2, False),
        }
        if name not in presets:
            raise ConfigError(f"unknown format {name!r}; choose from {sorted(presets)}")
        return presets[name]


@dataclass
class EventLog:
    users: list[str]
    items: list[str]
    timestamps: np.ndarray
    source: str = ""
    rejected: int = 0
    rejected_samples: list[str] = field(default_factory=list)

    def __len__(self):
        return len(self.users)

    def subset(self, keep: np.ndarray) -> "EventLog":
        idx = np.nonzero(keep)[0]
        return EventLog([self.users[i] for i in idx], [self.items[i] for i in idx],
                        self.timestamps[idx], self.source)


def ingest(path, fmt: Format = Format(), max_malformed: float = 0.01) -> EventLog:
    """Parse a delimited event file into an :class:`EventLog`.

    Rows that lack a column or carry a non-integer / negative timestamp are
    counted; more than ``max_malformed`` of them aborts with an
    :class:`IngestError` quoting a few offending lines.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such file: {path}")
    users, items, times = [], [], []
    bad: list[str] = []
    n_bad = total = 0
    need = max(fmt.user_col, fmt.item_col, fmt.time_col)
    with open(path, encoding="utf-8", errors="replace") as fh:
        if fmt.skip_header:
            next(fh, None)
        for lineno, line in enumerate(fh, start=2 if fmt.skip_header else 1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            total += 1
            parts = line.split(fmt.delimiter)
            try:
                if len(parts) <= need:
                    raise ValueError("missing column")
                ts = int(parts[fmt.time_col].strip())
                if ts < 0:
                    raise ValueError("negative timestamp")
            except ValueError:
                n_bad += 1
                if len(bad) < 5:
                    bad.append(f"line {lineno}: {line[:80]}")
                continue
            users.append(parts[fmt.user_col].strip())
            items.append(parts[fmt.item_col].strip())
            times.append(ts)
    if total and n_bad / total > max_malformed:
        raise IngestError(f"{n_bad}/{total} malformed rows in {path}:\n  " + "\n  ".join(bad))
    if n_bad:
        log.warning("%s: skipped %d malformed rows", path, n_bad)
    return EventLog(users, items, np.asarray(times, dtype=np.int64), str(path), n_bad, bad)


def k_core_filter(events: EventLog, k: int = 5) -> EventLog:
    """Drop users, then items, with fewer than ``k`` events until nothing changes."""
    if k < 1:
        raise ConfigError("k must be >= 1")
    _, ucode = np.unique(np.asarray(events.users, dtype=object), return_inverse=True)
    _, icode = np.unique(np.asarray(events.items, dtype=object), return_inverse=True)
    keep = np.ones(len(events), dtype=bool)
    while True:
        before = keep.sum()
        ucount = np.bincount(ucode[keep], minlength=ucode.max(initial=-1) + 1)
        keep &= ucount[ucode] >= k
        icount = np.bincount(icode[keep], minlength=icode.max(initial=-1) + 1)
        keep &= icount[icode] >= k
        if keep.sum() == before:
            break
    if not keep.any():
        raise DataError(f"dataset too sparse: nothing survives {k}-core filtering")
    return events.subset(keep)


@dataclass
class SequenceDataset:
    """Per-user chronological sequences with contiguous 1-based ids (0 is pad).

    For user ``u`` (1-based) ``items[u-1]`` and ``times[u-1]`` hold the whole
    history; the last event is the test target, the one before it the
    validation target, and everything earlier is training data.
    """

    user_keys: list[str]
    item_keys: list[str]
    items: list[np.ndarray]
    times: list[np.ndarray]
    k: int = 0

    @property
    def n_users(self) -> int:
        return len(self.user_keys)

    @property
    def n_items(self) -> int:
        return len(self.item_keys)

    @property
    def n_interactions(self) -> int:
        return int(sum(len(s) for s in self.items))

    @property
    def short_users(self) -> int:
        """Users with fewer than 3 events (no valid/test targets)."""
        return sum(len(s) < 3 for s in self.items)

    def stats(self) -> dict[str, object]:
        lengths = np.array([len(s) for s in self.items])
        n = self.n_interactions
        return {
            "format": STATS_FORMAT,
            "users": self.n_users,
            "items": self.n_items,
            "interactions": n,
            "avg_length": f"{lengths.mean():.4f}" if len(lengths) else "0",
            "max_length": int(lengths.max(initial=0)),
            "sparsity": f"{1.0 - n / max(self.n_users * self.n_items, 1):.6f}",
            "k": self.k,
        }

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "id_map.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(IDMAP_HEADER + "\n")
            for kind, keys in (("user", self.user_keys), ("item", self.item_keys)):
                for i, key in enumerate(keys, start=1):
                    fh.write(f"{kind}\t{key}\t{i}\n")
        with open(out / "sequences.tsv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write(SEQ_HEADER + "\n")
            for u, (its, ts) in enumerate(zip(self.items, self.times), start=1):
                fh.write(f"{u}\t{' '.join(map(str, its))}\t{' '.join(map(str, ts))}\n")
        with open(out / "stats.txt", "w", encoding="utf-8", newline="\n") as fh:
            for key, value in self.stats().items():
                fh.write(f"{key} = {value}\n")

    @classmethod
    def load(cls, in_dir) -> "SequenceDataset":
        src = Path(in_dir)
        for name in ("id_map.tsv", "sequences.tsv"):
            if not (src / name).is_file():
                raise FileNotFoundError(f"{src / name} missing; run prepare-data first")
        keys: dict[str, list[str]] = {"user": [], "item": []}
        with open(src / "id_map.tsv", encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != IDMAP_HEADER:
                raise DataError(f"{src / 'id_map.tsv'}: unexpected header")
            for line in fh:
                kind, key, idx = line.rstrip("\n").split("\t")
                if int(idx) != len(keys[kind]) + 1:
                    raise DataError(f"non-contiguous {kind} id {idx}")
                keys[kind].append(key)
        items, times = [], []
        with open(src / "sequences.tsv", encoding="utf-8") as fh:
            if fh.readline().rstrip("\n") != SEQ_HEADER:
                raise DataError(f"{src / 'sequences.tsv'}: unexpected header")
            for line in fh:
                _, its, ts = line.rstrip("\n").split("\t")
                items.append(np.array(its.split(), dtype=np.int64))
                times.append(np.array(ts.split(), dtype=np.int64))
        k = 0
        if (src / "stats.txt").is_file():
            stats = read_stats(src / "stats.txt")
            k = int(stats.get("k", 0))
        return cls(keys["user"], keys["item"], items, times, k)


def read_stats(path) -> dict[str, str]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if "=" in line:
                key, value = line.split("=", 1)
                out[key.strip()] = value.strip()
    return out


def build_sequences(events: EventLog, k: int = 0) -> SequenceDataset:
    """Group events by user in time order (ties keep file order) and assign ids.

    Ids follow first appearance in the log, which makes the result a pure
    function of the input file.
    """
    user_ids: dict[str, int] = {}
    item_ids: dict[str, int] = {}
    u = np.empty(len(events), dtype=np.int64)
    it = np.empty(len(events), dtype=np.int64)
    for n, (uk, ik) in enumerate(zip(events.users, events.items)):
        u[n] = user_ids.setdefault(uk, len(user_ids) + 1)
        it[n] = item_ids.setdefault(ik, len(item_ids) + 1)
    order = np.lexsort((events.timestamps, u))
    u, it, ts = u[order], it[order], events.timestamps[order]
    cuts = np.flatnonzero(np.diff(u)) + 1
    items = np.split(it, cuts)
    times = np.split(ts, cuts)
    ds = SequenceDataset(list(user_ids), list(item_ids), items, times, k)
    if ds.short_users:
        log.warning("%d users have < 3 events and are left out of valid/test", ds.short_users)
    return ds


@dataclass
class Batch:
    items: np.ndarray       # (B, T) int, 0 = pad, left-padded
    timestamps: np.ndarray  # (B, T) float, pads copy the first valid timestamp
    valid: np.ndarray       # (B, T) bool
    targets: np.ndarray     # (B,) int
    users: np.ndarray       # (B,) 1-based user ids
    ends: np.ndarray        # (B,) history is items[u-1][:end]


def examples(ds: SequenceDataset, split: str) -> list[tuple[int, int]]:
    """``(user, end)`` pairs: history ``seq[:end]`` predicts ``seq[end]``.

    ``train`` yields every prefix of the training part (all but the last two
    events); ``valid`` and ``test`` yield one pair per user with >= 3 events.
    """
    out = []
    for u, seq in enumerate(ds.items, start=1):
        n = len(seq)
        if split == "train":
            out.extend((u, e) for e in range(1, n - 2))
        elif split == "valid":
            if n >= 3:
                out.append((u, n - 2))
        elif split == "test":
            if n >= 3:
                out.append((u, n - 1))
        else:
            raise ConfigError(f"unknown split {split!r}")
    return out


def make_batch(ds: SequenceDataset, pairs, max_len: int) -> Batch:
    B = len(pairs)
    items = np.zeros((B, max_len), dtype=np.int64)
    times = np.zeros((B, max_len))
    valid = np.zeros((B, max_len), dtype=bool)
    targets = np.empty(B, dtype=np.int64)
    for r, (u, e) in enumerate(pairs):
        s = max(0, e - max_len)
        its = ds.items[u - 1][s:e]
        ts = ds.times[u - 1][s:e]
        n = len(its)
        items[r, max_len - n:] = its
        times[r, max_len - n:] = ts
        times[r, :max_len - n] = ts[0] if n else 0
        valid[r, max_len - n:] = True
        targets[r] = ds.items[u - 1][e]
    users = np.array([u for u, _ in pairs], dtype=np.int64)
    ends = np.array([e for _, e in pairs], dtype=np.int64)
    return Batch(items, times, valid, targets, users, ends)


def batchify(ds: SequenceDataset, max_len: int, batch_size: int, split: str = "train",
             rng: np.random.Generator | None = None) -> Iterator[Batch]:
    """Stream fixed-length batches; keeps the most recent ``max_len`` events per row."""
    if max_len < 1 or batch_size < 1:
        raise ConfigError("max_len and batch_size must be positive")
    pairs = examples(ds, split)
    if rng is not None:
        pairs = [pairs[i] for i in rng.permutation(len(pairs))]
    for i in range(0, len(pairs), batch_size):
        yield make_batch(ds, pairs[i:i + batch_size], max_len)
