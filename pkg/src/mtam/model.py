"""End-to-end recommender: embed, encode, remember, read, score.

Every ablation is one ``variant`` string over the same code path:

=====================  ==========  ===============  ================  ======
variant                rnn gate    attention gate   memory source     hops
=====================  ==========  ===============  ================  ======
mtam                   learned     learned          embeddings        k
gru                    1           --               --                0
tgru                   learned     --               --                0
mtam-gateoff-rnn       1           learned          embeddings        k
mtam-gateoff-attn      learned     1                embeddings        k
mtam-hidden-mem        learned     learned          hidden states     k
=====================  ==========  ===============  ================  ======
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import BehaviorSequence
from .embeddings import EmbeddingTables, embed_batch
from .errors import ContractError, DataError
from .memory import HopParams, read_multi_hop, write_memory_batch
from .recurrent import GruParams, TemporalGateParams, encode_batch

VARIANTS = ("mtam", "gru", "tgru", "mtam-gateoff-rnn", "mtam-gateoff-attn", "mtam-hidden-mem")
INIT_SCHEMES = ("uniform", "glorot")


@dataclass
class ModelConfig:
    n_items: int
    n_categories: int
    d: int = 128
    max_len: int = 50
    memory_slots: int = 50
    hops: int = 1
    variant: str = "mtam"
    dropout: float = 0.5
    l2: float = 1e-5
    time_divisor: float = 1.0
    init: str = "uniform"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.init not in INIT_SCHEMES:
            raise ContractError(f"unknown init scheme {self.init!r}; choose from {', '.join(INIT_SCHEMES)}")
        if self.hops < 0:
            raise ContractError("hops must be >= 0")

    @property
    def rnn_gate(self) -> float | None:
        return 1.0 if self.variant in ("gru", "mtam-gateoff-rnn") else None

    @property
    def attention_gate(self) -> float | None:
        return 1.0 if self.variant == "mtam-gateoff-attn" else None

    @property
    def effective_hops(self) -> int:
        return 0 if self.variant in ("gru", "tgru") else self.hops

    @property
    def memory_source(self) -> str:
        return "hidden" if self.variant == "mtam-hidden-mem" else "embeddings"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelParams:
    tables: EmbeddingTables
    gru: GruParams
    tgate: TemporalGateParams
    hops: HopParams
    config: ModelConfig

    @classmethod
    def init(cls, config: ModelConfig, rng: np.random.Generator) -> "ModelParams":
        """Draw every tensor from ``rng``.

        ``uniform``: weights U(-0.08, 0.08), embeddings U(-0.1, 0.1).
        ``glorot``: weights U(-a, a) with a = sqrt(6 / (rows + cols)),
        embeddings U(-1/sqrt(d), 1/sqrt(d)). Biases start at zero either way.
        """
        c = config
        glorot = c.init == "glorot"
        w = None if glorot else 0.08
        tables = EmbeddingTables.init(c.n_items, c.n_categories, c.max_len, c.d, rng, None if glorot else 0.1)
        gru = GruParams.init(c.d, rng, w)
        tgate = TemporalGateParams.init(c.d, rng, w)
        hops = HopParams.init(c.d, c.memory_slots, c.hops, rng, w)
        return cls(tables, gru, tgate, hops, config)

    def named_parameters(self) -> dict:
        """Every tensor, in a fixed order, keyed by a dotted name."""
        out = {}
        for prefix, group in (("emb", self.tables), ("gru", self.gru), ("tgate", self.tgate), ("hops", self.hops)):
            for k, v in group.parameters().items():
                out[f"{prefix}.{k}"] = v
        return out

    def active_parameters(self) -> dict:
        """The tensors the configured variant actually reads."""
        c = self.config
        out = {}
        for name, t in self.named_parameters().items():
            if name.startswith("tgate.") and c.rnn_gate is not None:
                continue
            if name.startswith("hops."):
                if c.effective_hops == 0:
                    continue
                if name.startswith("hops.gate.") and c.attention_gate is not None:
                    continue
                if name.startswith("hops.W_Q.") and int(name.rsplit(".", 1)[1]) > c.effective_hops:
                    continue
            out[name] = t
        return out

    def zero_grad(self) -> None:
        for t in self.named_parameters().values():
            t.grad = None

    def copy(self) -> "ModelParams":
        fresh = ModelParams.init(self.config, np.random.default_rng(0))
        for (_, dst), (_, src) in zip(fresh.named_parameters().items(), self.named_parameters().items()):
            dst.values[...] = src.values
        return fresh


@dataclass
class Batch:
    items: np.ndarray
    categories: np.ndarray
    times: np.ndarray
    step_mask: np.ndarray
    lengths: np.ndarray
    t_target: np.ndarray
    labels: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.lengths)


def make_batch(prefixes: list, t_targets, max_len: int, labels=None) -> Batch:
    """Right-pad the last ``max_len`` behaviors of each prefix into (B, T) arrays."""
    if not prefixes:
        raise ContractError("empty batch")
    wins = [p.window(max_len) for p in prefixes]
    lengths = np.array([len(w) for w in wins], dtype=np.int64)
    if lengths.min() < 1:
        raise ContractError("every prefix needs at least one behavior")
    B, T = len(wins), int(lengths.max())
    items = np.zeros((B, T), dtype=np.int64)
    cats = np.zeros((B, T), dtype=np.int64)
    times = np.zeros((B, T))
    for b, w in enumerate(wins):
        n = len(w)
        items[b, :n] = w.items
        cats[b, :n] = w.categories
        times[b, :n] = w.times
        times[b, n:] = w.times[-1]
    step_mask = (np.arange(T)[None, :] < lengths[:, None]).astype(np.int64)
    t_target = np.asarray(t_targets, dtype=np.float64).reshape(B)
    last = times[np.arange(B), lengths - 1]
    if np.any(t_target < last):
        raise ContractError("target time precedes the last behavior")
    lab = None if labels is None else np.asarray(labels, dtype=np.int64).reshape(B)
    return Batch(items, cats, times, step_mask, lengths, t_target, lab)


def examples_to_batch(examples: list, max_len: int) -> Batch:
    return make_batch([e.prefix for e in examples], [e.label_time for e in examples], max_len,
                      [e.label_item for e in examples])


def _dropout(x: Tensor, rate: float, rng) -> Tensor:
    if rng is None or rate <= 0:
        return x
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return ag.mul(x, ag.constant(keep))


def forward_batch(params: ModelParams, batch: Batch, rng: np.random.Generator | None = None,
                  trace: list | None = None, short_out: list | None = None) -> Tensor:
    """User vectors (B, d). Dropout is applied only when ``rng`` is given."""
    c = params.config
    rate = c.dropout
    E = embed_batch(params.tables, batch.items, batch.categories, batch.step_mask)
    E = _dropout(E, rate, rng)
    H = encode_batch(params.gru, params.tgate, E, batch.times, batch.step_mask, c.rnn_gate, c.time_divisor)
    c_short = ag.select(H, H.shape[1] - 1, axis=1)
    if short_out is not None:
        short_out.append(c_short)
    user = c_short
    if c.effective_hops > 0:
        source = H if c.memory_source == "hidden" else E
        mem = write_memory_batch(source, batch.times, batch.lengths, c.memory_slots)
        B, d = c_short.shape
        q = ag.reshape(c_short, (B, 1, d))
        out = read_multi_hop(params.hops, q, batch.t_target, mem, c.effective_hops, c.attention_gate,
                             c.time_divisor, trace)
        user = ag.reshape(out, (B, d))
    return _dropout(user, rate, rng)


def forward_user(params: ModelParams, prefix: BehaviorSequence, t_target: float) -> Tensor:
    """The (1, d) user vector at ``t_target`` for one prefix."""
    if len(prefix) == 0:
        raise ContractError("empty prefix")
    prefix.check_order()
    return forward_batch(params, make_batch([prefix], [t_target], params.config.max_len))


def score_corpus(params: ModelParams, user_vec) -> np.ndarray:
    """Dot products against every item row; the padding column is -inf."""
    u = user_vec.values if isinstance(user_vec, Tensor) else np.asarray(user_vec)
    scores = np.atleast_2d(u) @ params.tables.item_table.values.T
    scores[:, 0] = -np.inf
    return scores


def regularizer(params: ModelParams) -> Tensor:
    terms = [ag.sq_norm(t, skip_first_row=name.startswith("emb."))
             for name, t in params.active_parameters().items()]
    total = terms[0]
    for t in terms[1:]:
        total = ag.add(total, t)
    return total


def loss_from_batch(params: ModelParams, batch: Batch, rng=None, l2: float | None = None) -> Tensor:
    if batch.labels is None:
        raise ContractError("batch has no labels")
    if np.any(batch.labels < 1) or np.any(batch.labels > params.config.n_items):
        raise DataError("label must be a real item id (1..N)")
    user = forward_batch(params, batch, rng)
    logits = ag.matmul(user, params.tables.item_table, transpose_b=True)
    valid = np.ones(logits.shape[1], dtype=bool)
    valid[0] = False
    loss = ag.softmax_cross_entropy(logits, batch.labels, valid)
    l2 = params.config.l2 if l2 is None else l2
    if l2 > 0:
        loss = ag.add(loss, ag.scale(regularizer(params), l2))
    return loss


def loss_batch(params: ModelParams, batch: list, rng=None, l2: float | None = None) -> Tensor:
    """Mean cross-entropy over ``TrainingExample`` items plus the L2 penalty."""
    if not batch:
        raise ContractError("empty batch")
    return loss_from_batch(params, examples_to_batch(batch, params.config.max_len), rng, l2)


@dataclass
class RankingResult:
    items: list
    scores: list


def top_k(scores: np.ndarray, K: int) -> RankingResult:
    """Highest ``K`` of a 1-D score vector over real items (index >= 1); ties go to the lower id."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    n_real = s.size - 1
    if not 1 <= K <= n_real:
        raise ContractError(f"K must be in [1, {n_real}], got {K}")
    ids = np.arange(1, s.size)
    order = np.lexsort((ids, -s[1:]))[:K]
    return RankingResult([int(i) for i in ids[order]], [float(v) for v in s[1:][order]])


def recommend_topk(params: ModelParams, prefix: BehaviorSequence, t_target: float, K: int) -> RankingResult:
    N = params.config.n_items + 1  # table rows, padding included
    if not 1 <= K < N:
        raise ContractError(f"K must satisfy 1 <= K < {N}")
    with ag.no_tape():
        user = forward_user(params, prefix, t_target)
    return top_k(score_corpus(params, user)[0], K)
