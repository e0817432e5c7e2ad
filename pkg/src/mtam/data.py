"""Event-log ingestion, filtering, sequence splitting and split persistence."""
from __future__ import annotations

import csv
import gzip
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, IngestionError, OrderingError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("user", "item", "category", "timestamp")
SPLIT_FORMAT = "mtam-dataset"
SPLIT_VERSION = 1
PAD = "<pad>"


@dataclass(frozen=True)
class BehaviorSequence:
    """One user's behaviors in time order (internal ids; 0 is padding)."""

    items: np.ndarray
    categories: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        n = len(self.items)
        if len(self.categories) != n or len(self.times) != n:
            raise DataError("items, categories and times must have equal length")

    def __len__(self) -> int:
        return len(self.items)

    @classmethod
    def from_lists(cls, items, categories, times) -> "BehaviorSequence":
        return cls(np.asarray(items, dtype=np.int64), np.asarray(categories, dtype=np.int64),
                   np.asarray(times, dtype=np.float64))

    @property
    def positions(self) -> np.ndarray:
        return np.arange(len(self), dtype=np.int64)

    def window(self, max_len: int) -> "BehaviorSequence":
        """The most recent ``max_len`` behaviors."""
        if len(self) <= max_len:
            return self
        return BehaviorSequence(self.items[-max_len:], self.categories[-max_len:], self.times[-max_len:])

    def check_order(self) -> None:
        if len(self.times) > 1 and np.any(np.diff(self.times) < 0):
            raise OrderingError("timestamps must be non-decreasing")


@dataclass(frozen=True)
class TrainingExample:
    prefix: BehaviorSequence
    label_item: int
    label_time: float
    user: int = -1


@dataclass
class EventLog:
    users: list
    items: list
    categories: list
    timestamps: np.ndarray
    malformed: int = 0

    def __len__(self) -> int:
        return len(self.users)


@dataclass
class Vocab:
    users: list
    items: list
    categories: list

    def __post_init__(self):
        self._item_index = None
        self._cat_index = None

    def item_id(self, external: str) -> int:
        if self._item_index is None:
            self._item_index = {e: i for i, e in enumerate(self.items)}
        return self._item_index[external]

    def category_id(self, external: str) -> int:
        if self._cat_index is None:
            self._cat_index = {e: i for i, e in enumerate(self.categories)}
        return self._cat_index[external]


@dataclass
class IndexedSequences:
    sequences: list
    vocab: Vocab


@dataclass
class DatasetSplit:
    train: list
    test: list
    vocab: Vocab
    sequences: list = field(default_factory=list)
    valid: list = field(default_factory=list)

    @property
    def n_items(self) -> int:
        return len(self.vocab.items) - 1

    @property
    def n_categories(self) -> int:
        return len(self.vocab.categories) - 1

    @property
    def stats(self) -> dict:
        return dataset_stats(self.sequences, self.n_items, self.n_categories)


def dataset_stats(sequences, n_items: int, n_categories: int) -> dict:
    m = len(sequences)
    events = int(sum(len(s) for s in sequences))
    return {
        "users": m,
        "items": n_items,
        "categories": n_categories,
        "events": events,
        "avg_behaviors": events / m if m else 0.0,
        "density": events / (m * n_items) if m and n_items else 0.0,
    }


# ---------------------------------------------------------------------------
# ingestion


def _open_text(path):
    path = Path(path)
    if path.suffix == ".gz":
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8", newline="")
    return open(path, "r", encoding="utf-8", newline="")


def ingest(path, fmt: str | None = None, max_malformed: float = 0.01) -> EventLog:
    """Read a delimited ``user,item,category,timestamp`` file with a header row.

    ``fmt`` is ``"csv"``, ``"tsv"`` or None to pick the delimiter from the
    header line. Rows with the wrong field count or a timestamp that is not a
    non-negative number are counted as malformed and skipped; more than
    ``max_malformed`` of them (as a fraction of data rows) is an error.
    """
    with _open_text(path) as fh:
        header_line = fh.readline()
        if not header_line.strip():
            raise FormatError(f"{path}: missing header row")
        if fmt is None:
            delim = "\t" if "\t" in header_line else ","
        else:
            delim = {"csv": ",", "tsv": "\t"}.get(fmt)
            if delim is None:
                raise FormatError(f"unknown format {fmt!r}")
        header = [h.strip().lower() for h in next(csv.reader([header_line], delimiter=delim))]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        cols = [header.index(c) for c in REQUIRED_COLUMNS]
        width = len(header)
        users, items, cats, times = [], [], [], []
        malformed = total = 0
        for row in csv.reader(fh, delimiter=delim):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            total += 1
            if len(row) != width:
                malformed += 1
                continue
            u, i, c, t = (row[k].strip() for k in cols)
            try:
                ts = float(t)
            except ValueError:
                malformed += 1
                continue
            if not np.isfinite(ts) or ts < 0 or not u or not i:
                malformed += 1
                continue
            users.append(u)
            items.append(i)
            cats.append(c)
            times.append(ts)
    if malformed:
        log.warning("%s: %d of %d rows malformed and skipped", path, malformed, total)
        if malformed > max_malformed * total:
            raise IngestionError(f"{path}: {malformed} of {total} rows malformed (limit {max_malformed:.1%})")
    return EventLog(users, items, cats, np.asarray(times, dtype=np.float64), malformed)


def sample_users(log_: EventLog, fraction: float, rng: np.random.Generator) -> EventLog:
    """Keep a random ``fraction`` of users (rounded) with all of their events."""
    if not 0 < fraction <= 1:
        raise DataError("sample fraction must be in (0, 1]")
    distinct = list(dict.fromkeys(log_.users))
    n_keep = max(1, int(round(fraction * len(distinct))))
    chosen = {distinct[i] for i in rng.permutation(len(distinct))[:n_keep]}
    keep = [k for k, u in enumerate(log_.users) if u in chosen]
    return EventLog([log_.users[k] for k in keep], [log_.items[k] for k in keep],
                    [log_.categories[k] for k in keep], log_.timestamps[keep], log_.malformed)


# ---------------------------------------------------------------------------
# filtering and indexing


def filter_and_index(log_: EventLog, min_user_len: int = 10, min_item_count: int = 30) -> IndexedSequences:
    """Drop rare items and short users until neither filter removes anything.

    Internal ids are dense and assigned in order of first appearance in the
    file; id 0 is the padding entry in every vocabulary. Each user's events
    are sorted by timestamp, keeping file order among equal timestamps.
    """
    if len(log_) == 0:
        raise DataError("event log is empty")
    users = np.asarray(log_.users, dtype=object)
    items = np.asarray(log_.items, dtype=object)
    alive = np.ones(len(log_), dtype=bool)
    while True:
        before = int(alive.sum())
        _, inv, counts = np.unique(items[alive], return_inverse=True, return_counts=True)
        idx = np.flatnonzero(alive)
        alive[idx[counts[inv] < min_item_count]] = False
        _, inv, counts = np.unique(users[alive], return_inverse=True, return_counts=True)
        idx = np.flatnonzero(alive)
        alive[idx[counts[inv] < min_user_len]] = False
        if int(alive.sum()) == before:
            break
    rows = np.flatnonzero(alive)
    if rows.size == 0:
        raise DataError("no events left after filtering")

    user_ids: dict = {}
    item_ids: dict = {PAD: 0}
    cat_ids: dict = {PAD: 0}
    per_user: dict = {}
    for k in rows:
        u = log_.users[k]
        if u not in user_ids:
            user_ids[u] = len(user_ids)
            per_user[u] = []
        it = item_ids.setdefault(log_.items[k], len(item_ids))
        ct = cat_ids.setdefault(log_.categories[k], len(cat_ids))
        per_user[u].append((it, ct, log_.timestamps[k]))
    sequences = []
    for u in user_ids:
        ev = per_user[u]
        order = np.argsort(np.array([e[2] for e in ev]), kind="stable")
        sequences.append(BehaviorSequence.from_lists([ev[o][0] for o in order], [ev[o][1] for o in order],
                                                     [ev[o][2] for o in order]))
    vocab = Vocab(list(user_ids), list(item_ids), list(cat_ids))
    return IndexedSequences(sequences, vocab)


# ---------------------------------------------------------------------------
# splitting


def split_user(seq: BehaviorSequence, user: int = -1):
    """Expand one history into (train pairs, test pair)."""
    n = len(seq)
    if n < 2:
        raise DataError("a sequence needs at least two behaviors to split")

    def pair(end):
        return TrainingExample(BehaviorSequence(seq.items[:end], seq.categories[:end], seq.times[:end]),
                               int(seq.items[end]), float(seq.times[end]), user)

    return [pair(end) for end in range(1, n - 1)], pair(n - 1)


def split_sequences(indexed: IndexedSequences, holdout_last_train: bool = False) -> DatasetSplit:
    """Every prefix/next-item pair for training, the final pair of each user for test.

    With ``holdout_last_train`` the last training pair of each user moves to
    a validation list instead.
    """
    train, test, valid = [], [], []
    for u, seq in enumerate(indexed.sequences):
        pairs, last = split_user(seq, u)
        if holdout_last_train and pairs:
            valid.append(pairs.pop())
        train.extend(pairs)
        test.append(last)
    return DatasetSplit(train, test, indexed.vocab, list(indexed.sequences), valid)


# ---------------------------------------------------------------------------
# persistence


def save_split(split: DatasetSplit, directory, extra: dict | None = None) -> Path:
    """Write ``manifest.json`` plus little-endian arrays to ``arrays.bin``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seqs = split.sequences
    lengths = np.array([len(s) for s in seqs], dtype="<i8")
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype("<i8")

    def cat(attr, dtype):
        parts = [getattr(s, attr) for s in seqs]
        return np.concatenate(parts).astype(dtype) if parts else np.zeros(0, dtype=dtype)

    def example_index(examples):
        return np.array([[e.user, len(e.prefix)] for e in examples], dtype="<i8").reshape(-1, 2)

    arrays = {
        "offsets": offsets,
        "items": cat("items", "<i8"),
        "categories": cat("categories", "<i8"),
        "times": cat("times", "<f8"),
        "train_index": example_index(split.train),
        "test_index": example_index(split.test),
        "valid_index": example_index(split.valid),
    }
    directory_entries, blobs, pos = {}, [], 0
    for name, arr in arrays.items():
        raw = np.ascontiguousarray(arr).tobytes()
        directory_entries[name] = {"dtype": arr.dtype.str, "shape": list(arr.shape), "offset": pos, "nbytes": len(raw)}
        blobs.append(raw)
        pos += len(raw)
    manifest = {
        "format": SPLIT_FORMAT,
        "version": SPLIT_VERSION,
        "stats": split.stats,
        "vocab": {"users": split.vocab.users, "items": split.vocab.items, "categories": split.vocab.categories},
        "arrays": directory_entries,
    }
    if extra:
        manifest["extra"] = extra
    (directory / "arrays.bin").write_bytes(b"".join(blobs))
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    return directory


def load_split(directory) -> DatasetSplit:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
        payload = (directory / "arrays.bin").read_bytes()
    except FileNotFoundError as exc:
        raise DataError(f"not a dataset directory: {directory} ({exc.filename} missing)") from None
    if manifest.get("format") != SPLIT_FORMAT or manifest.get("version") != SPLIT_VERSION:
        raise FormatError(f"{directory}: unsupported dataset format {manifest.get('format')}/{manifest.get('version')}")
    arrays = {}
    for name, ent in manifest["arrays"].items():
        raw = payload[ent["offset"]:ent["offset"] + ent["nbytes"]]
        arrays[name] = np.frombuffer(raw, dtype=np.dtype(ent["dtype"])).reshape(ent["shape"]).astype(
            np.float64 if ent["dtype"].endswith("f8") else np.int64)
    off = arrays["offsets"]
    seqs = [BehaviorSequence(arrays["items"][a:b], arrays["categories"][a:b], arrays["times"][a:b])
            for a, b in zip(off[:-1], off[1:])]

    def rebuild(index):
        out = []
        for user, end in index:
            s = seqs[user]
            out.append(TrainingExample(BehaviorSequence(s.items[:end], s.categories[:end], s.times[:end]),
                                       int(s.items[end]), float(s.times[end]), int(user)))
        return out

    v = manifest["vocab"]
    return DatasetSplit(rebuild(arrays["train_index"]), rebuild(arrays["test_index"]),
                        Vocab(v["users"], v["items"], v["categories"]), seqs, rebuild(arrays["valid_index"]))
