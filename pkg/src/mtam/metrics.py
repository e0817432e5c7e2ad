"""HR@K / NDCG@K, the metric report file, and popularity baselines."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ContractError, FormatError
from .model import RankingResult, examples_to_batch, forward_batch, score_corpus, top_k

REPORT_FORMAT = "mtam-metrics/1"


def label_ranks(scores: np.ndarray, labels) -> np.ndarray:
    """1-based rank of each label among real items (columns >= 1).

    Higher score ranks first; equal scores rank the lower item id first.
    """
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    real = scores[:, 1:]
    own = scores[np.arange(len(labels)), labels][:, None]
    ids = np.arange(1, scores.shape[1])[None, :]
    ahead = (real > own) | ((real == own) & (ids < labels[:, None]))
    return 1 + ahead.sum(axis=1)


def hit_and_ndcg(ranks, Ks) -> dict:
    ranks = np.asarray(ranks, dtype=np.int64)
    out = {}
    for K in Ks:
        hit = ranks <= K
        gain = np.where(hit, 1.0 / np.log2(1.0 + ranks), 0.0)
        out[int(K)] = {"HR": float(hit.mean()) if ranks.size else 0.0,
                       "NDCG": float(gain.mean()) if ranks.size else 0.0}
    return out


@dataclass
class MetricReport:
    metrics: dict
    n_users: int
    wall_time: float = 0.0
    label: str = ""
    extra: dict = field(default_factory=dict)

    def hr(self, K: int) -> float:
        return self.metrics[K]["HR"]

    def ndcg(self, K: int) -> float:
        return self.metrics[K]["NDCG"]

    def same_metrics(self, other: "MetricReport") -> bool:
        """Equality of everything except wall-clock time."""
        return self.metrics == other.metrics and self.n_users == other.n_users and self.label == other.label

    def to_text(self) -> str:
        lines = [f"format = {REPORT_FORMAT}"]
        if self.label:
            lines.append(f"model = {self.label}")
        lines.append(f"n_users = {self.n_users}")
        for K in sorted(self.metrics):
            lines.append(f"HR@{K} = {self.metrics[K]['HR']!r}")
            lines.append(f"NDCG@{K} = {self.metrics[K]['NDCG']!r}")
        for k in sorted(self.extra):
            lines.append(f"{k} = {self.extra[k]}")
        lines.append(f"wall_time = {self.wall_time:.3f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        kv = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        if kv.get("format") != REPORT_FORMAT:
            raise FormatError(f"not a metric report ({kv.get('format')!r})")
        metrics: dict = {}
        extra = {}
        for key, value in kv.items():
            if key.startswith(("HR@", "NDCG@")):
                name, K = key.split("@")
                metrics.setdefault(int(K), {})[name] = float(value)
            elif key not in ("format", "model", "n_users", "wall_time"):
                extra[key] = value
        return cls(metrics, int(kv["n_users"]), float(kv.get("wall_time", 0.0)), kv.get("model", ""), extra)


def evaluate(params, examples: list, Ks=(10,), batch_size: int = 256, label: str = "") -> MetricReport:
    """Rank every real item for each example and score the label's position.

    Items the user has already seen stay in the candidate set.
    """
    if not examples:
        raise ContractError("no evaluation examples")
    start = time.perf_counter()
    ranks = []
    with ag.no_tape():
        for lo in range(0, len(examples), batch_size):
            chunk = examples[lo:lo + batch_size]
            batch = examples_to_batch(chunk, params.config.max_len)
            user = forward_batch(params, batch)
            ranks.append(label_ranks(score_corpus(params, user), batch.labels))
    ranks = np.concatenate(ranks)
    return MetricReport(hit_and_ndcg(ranks, Ks), len(examples), time.perf_counter() - start, label)


# ---------------------------------------------------------------------------
# popularity baselines


def training_counts(split) -> np.ndarray:
    """Per-item interaction counts over every behavior except each user's held-out last one."""
    counts = np.zeros(split.n_items + 1, dtype=np.int64)
    for e in split.test:
        np.add.at(counts, e.prefix.items, 1)
    return counts


def user_counts(split, user: int) -> np.ndarray:
    counts = np.zeros(split.n_items + 1, dtype=np.int64)
    for e in split.test:
        if e.user == user:
            np.add.at(counts, e.prefix.items, 1)
    return counts


def _pop_scores(global_counts, own=None) -> np.ndarray:
    # the user's own items come first, ordered by own count only; the rest
    # follow in global order
    s = global_counts.astype(np.float64)
    if own is not None:
        s = np.where(own > 0, own * (global_counts.max() + 1.0), s)
    s[0] = -np.inf
    return s


def top_pop(split, K: int) -> RankingResult:
    return top_k(_pop_scores(training_counts(split)), K)


def p_pop(split, user: int, K: int) -> RankingResult:
    """The user's own most frequent items, then globally popular ones."""
    return top_k(_pop_scores(training_counts(split), user_counts(split, user)), K)


def evaluate_popularity(split, kind: str, Ks=(10,)) -> MetricReport:
    start = time.perf_counter()
    glob = training_counts(split)
    ranks = []
    for e in split.test:
        own = None
        if kind == "p-pop":
            own = np.zeros_like(glob)
            np.add.at(own, e.prefix.items, 1)
        elif kind != "top-pop":
            raise ContractError(f"unknown baseline {kind!r}")
        ranks.append(label_ranks(_pop_scores(glob, own)[None, :], [e.label_item])[0])
    return MetricReport(hit_and_ndcg(np.array(ranks), Ks), len(split.test), time.perf_counter() - start, kind)
