"""Finite-difference gradient suites on micro-instances.

Each suite builds a tiny problem (d=4, L=3, N=6, two hops), re-draws every
parameter from a wide uniform so no unit sits in a flat region, and
compares the tape gradient of a scalar objective against central
differences for every parameter tensor.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import AttentionGateParams, time_attention
from .data import BehaviorSequence
from .memory import HopParams, read_multi_hop, write_memory_batch
from .model import VARIANTS, ModelConfig, ModelParams, loss_from_batch, make_batch
from .recurrent import GruParams, TemporalGateParams, encode_batch

SCOPES = ("rnn", "attention", "memory", "model")
TOLERANCE = 1e-4
EPS = 1e-4

D, L, N, N_CAT, HOPS = 4, 3, 6, 3, 2


@dataclass
class CheckRow:
    suite: str
    tensor: str
    error: float
    tol: float = TOLERANCE

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _spread(tensors: dict, rng: np.random.Generator, scale: float = 0.5) -> None:
    for name, t in tensors.items():
        t.values[...] = rng.uniform(-scale, scale, size=t.shape)
        if name.startswith("emb."):
            t.values[0] = 0.0


def _check_all(suite: str, f, tensors: dict, eps: float | None = None) -> list:
    eps = EPS if eps is None else eps
    rows = []
    for name, t in tensors.items():
        rows.append(CheckRow(suite, name, ag.grad_check(lambda _t: f(), t, eps)))
    return rows


def _projection(rng, shape):
    return ag.constant(rng.normal(size=shape))


def _micro_times(rng, B, T):
    gaps = rng.integers(0, 6, size=(B, T)).astype(np.float64)
    return np.cumsum(gaps, axis=1)


def check_rnn(seed: int = 0) -> list:
    """Gated and ungated recurrences, through the fused batch op."""
    rng = np.random.default_rng(seed)
    gru = GruParams.init(D, rng)
    gate = TemporalGateParams.init(D, rng)
    B, T = 2, 3
    X = ag.parameter(rng.normal(size=(B, T, D)), "X")
    mask = np.array([[1, 1, 1], [1, 1, 0]])
    X.values *= mask[:, :, None]
    times = _micro_times(rng, B, T)
    R = _projection(rng, (B, T, D))
    rows = []
    for label, override, params in (("rnn/tgru", None, {**_prefixed("gru", gru), **_prefixed("tgate", gate)}),
                                    ("rnn/gru", 1.0, _prefixed("gru", gru))):
        _spread(params, rng)

        def f(override=override):
            H = encode_batch(gru, gate, X, times, mask, override)
            return ag.sum_all(ag.mul(H, R))

        rows += _check_all(label, f, {**params, "X": X})
    return rows


def check_attention(seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    lq, lk = 2, L
    params = AttentionGateParams.init(lq, lk, D, rng)
    _spread(_prefixed("attn", params), rng)
    q = ag.parameter(rng.normal(size=(2, lq, D)), "q")
    k = ag.parameter(rng.normal(size=(2, lk, D)), "k")
    v = ag.parameter(rng.normal(size=(2, lk, D)), "v")
    t_q = np.array([[9.0, 12.0], [4.0, 7.0]])
    t_k = np.array([[1.0, 3.0, 8.0], [0.0, 2.0, 0.0]])
    mask = np.array([[1, 1, 1], [1, 1, 0]])
    R = _projection(rng, (2, lq, D))
    rows = []
    for label, override in (("attention/gated", None), ("attention/dot", 1.0)):
        tensors = {"q": q, "k": k, "v": v}
        if override is None:
            tensors.update(_prefixed("attn", params))

        def f(override=override):
            out = time_attention(params, q, t_q, k, t_k, v, mask, override)
            return ag.sum_all(ag.mul(out, R))

        rows += _check_all(label, f, tensors)
    return rows


def check_memory(seed: int = 0) -> list:
    """Multi-hop reader over a batched FIFO memory, including the written source."""
    rng = np.random.default_rng(seed)
    hops = HopParams.init(D, L, HOPS, rng)
    _spread(_prefixed("hops", hops), rng)
    B, T = 2, 4
    source = ag.parameter(rng.normal(size=(B, T, D)), "source")
    times = _micro_times(rng, B, T)
    lengths = np.array([4, 2])
    t_target = times[np.arange(B), lengths - 1] + 3.0
    c0 = ag.parameter(rng.normal(size=(B, 1, D)), "c_short")
    R = _projection(rng, (B, 1, D))

    def f():
        mem = write_memory_batch(source, times, lengths, L)
        out = read_multi_hop(hops, c0, t_target, mem, HOPS)
        return ag.sum_all(ag.mul(out, R))

    return _check_all("memory", f, {**_prefixed("hops", hops), "source": source, "c_short": c0})


def micro_model(variant: str, seed: int = 0, hops: int = HOPS) -> ModelParams:
    cfg = ModelConfig(n_items=N, n_categories=N_CAT, d=D, max_len=L, memory_slots=L, hops=hops,
                      variant=variant, dropout=0.0, l2=1e-3)
    rng = np.random.default_rng(seed)
    params = ModelParams.init(cfg, rng)
    _spread(params.named_parameters(), rng)
    return params


def micro_batch(seed: int = 0):
    rng = np.random.default_rng(seed + 1)
    prefixes = [
        BehaviorSequence.from_lists([1, 4, 2, 6], [1, 2, 1, 3], [0, 2, 3, 7]),
        BehaviorSequence.from_lists([5, 3], [3, 2], [1, 4]),
        BehaviorSequence.from_lists([2], [1], [5]),
    ]
    t_target = [9.0, 6.0, 5.0]
    labels = rng.integers(1, N + 1, size=3)
    return make_batch(prefixes, t_target, L, labels)


def check_model(seed: int = 0, variants=VARIANTS) -> list:
    rows = []
    batch = micro_batch(seed)
    for variant in variants:
        params = micro_model(variant, seed)
        rows += _check_all(f"model/{variant}", lambda: loss_from_batch(params, batch),
                           params.active_parameters())
    return rows


SUITES = {"rnn": check_rnn, "attention": check_attention, "memory": check_memory, "model": check_model}


def run(scope: str = "all", seed: int = 0) -> list:
    if scope == "all":
        names = SCOPES
    elif scope in SUITES:
        names = (scope,)
    else:
        raise ValueError(f"unknown scope {scope!r}; choose from all, {', '.join(SCOPES)}")
    rows = []
    for name in names:
        rows += SUITES[name](seed)
    return rows


def format_table(rows: list, elapsed: float | None = None) -> str:
    width = max([len(f"{r.suite}:{r.tensor}") for r in rows] + [10])
    lines = [f"{'tensor':<{width}}  {'max rel err':>12}  status"]
    for r in rows:
        lines.append(f"{r.suite + ':' + r.tensor:<{width}}  {r.error:12.3e}  {'pass' if r.ok else 'FAIL'}")
    bad = [r for r in rows if not r.ok]
    tail = f"{len(rows) - len(bad)}/{len(rows)} tensors within {TOLERANCE:g}"
    if elapsed is not None:
        tail += f" ({elapsed:.1f}s)"
    lines.append(tail)
    for r in bad:
        lines.append(f"FAILED {r.suite}:{r.tensor} relative error {r.error:.3e}")
    return "\n".join(lines)


def timed_run(scope: str = "all", seed: int = 0):
    start = time.perf_counter()
    rows = run(scope, seed)
    return rows, time.perf_counter() - start


def _prefixed(prefix: str, group) -> dict:
    return {f"{prefix}.{k}": v for k, v in group.parameters().items()}
