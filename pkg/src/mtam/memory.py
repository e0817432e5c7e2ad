"""FIFO user memory and the multi-hop time-aware reader."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .attention import AttentionGateParams, time_attention
from .autograd import Tensor
from .errors import ContractError, DegenerateRowError


@dataclass
class MemoryState:
    """Newest-first slots; unused slots are zero vectors with time 0 and mask 0.

    Unbatched: slots (L, d), times/mask (L,). Batched: a leading batch axis.
    """

    slots: Tensor
    times: np.ndarray
    mask: np.ndarray

    @property
    def L(self) -> int:
        return self.slots.shape[-2]


@dataclass
class HopParams:
    W_Q: list
    W_K: Tensor
    W_V: Tensor
    gate: AttentionGateParams

    @property
    def hops(self) -> int:
        return len(self.W_Q)

    @classmethod
    def init(cls, d: int, L: int, hops: int, rng: np.random.Generator, scale: float | None = 0.08) -> "HopParams":
        def u(shape, name):
            return ag.init_uniform(rng, shape, name, scale)

        # Draw order is fixed so a model with more hops shares its first draws.
        W_K = u((d, d), "hops.W_K")
        W_V = u((d, d), "hops.W_V")
        gate = AttentionGateParams.init(1, L, d, rng, scale, prefix="hops.gate")
        W_Q = [u((d, d), f"hops.W_Q.{k + 1}") for k in range(hops)]
        return cls(W_Q, W_K, W_V, gate)

    def parameters(self) -> dict:
        out = {f"W_Q.{k + 1}": w for k, w in enumerate(self.W_Q)}
        out.update({"W_K": self.W_K, "W_V": self.W_V})
        out.update({f"gate.{k}": v for k, v in self.gate.parameters().items()})
        return out


def write_memory(history: list, L: int, d: int | None = None) -> MemoryState:
    """Keep the latest ``L`` behavior embeddings, newest first, zero-padded on the right.

    An empty history gives a fully masked state of width ``d``.
    """
    if L < 1:
        raise ContractError("memory needs at least one slot")
    kept = list(reversed(history[-L:])) if history else []
    if kept:
        d = kept[0].vector.shape[-1]
    elif d is None:
        raise ContractError("width d is required for an empty history")
    rows = [b.vector for b in kept]
    pad = L - len(kept)
    if pad:
        rows.append(ag.constant(np.zeros((pad, d))))
    slots = ag.concat(rows, axis=0)
    times = np.zeros(L)
    times[:len(kept)] = [b.timestamp for b in kept]
    mask = np.zeros(L, dtype=np.int64)
    mask[:len(kept)] = 1
    return MemoryState(slots, times, mask)


def write_memory_batch(source: Tensor, times: np.ndarray, lengths: np.ndarray, L: int) -> MemoryState:
    """Batched writer over a right-padded (B, T, d) source.

    Slot ``j`` of row ``b`` holds step ``lengths[b] - 1 - j``.
    """
    B, T, d = source.shape
    j = np.arange(L)[None, :]
    steps = lengths[:, None] - 1 - j
    mask = (steps >= 0).astype(np.int64)
    steps = np.where(mask == 1, steps, 0)
    flat_ids = np.arange(B)[:, None] * T + steps
    gathered = ag.gather_rows(ag.reshape(source, (B * T, d)), flat_ids)
    slots = ag.mul(gathered, ag.constant(mask[:, :, None].astype(np.float64)))
    slot_times = np.where(mask == 1, np.take_along_axis(times, steps, axis=1), 0.0)
    return MemoryState(slots, slot_times, mask)


def read_once(hop: int, params: HopParams, query: Tensor, t_target, mem: MemoryState,
              gate_override: float | None = None, time_divisor: float = 1.0) -> Tensor:
    """Single time-aware read with the hop's query projection (hops count from 1)."""
    if not np.asarray(mem.mask).astype(bool).any(axis=-1).all():
        raise DegenerateRowError("memory has no filled slot")
    t_q = np.asarray(t_target, dtype=np.float64)[..., None]
    q = ag.matmul(query, params.W_Q[hop - 1])
    k = ag.matmul(mem.slots, params.W_K)
    v = ag.matmul(mem.slots, params.W_V)
    return time_attention(params.gate, q, t_q, k, mem.times, v, mem.mask, gate_override, time_divisor)


def read_multi_hop(params: HopParams, c_short: Tensor, t_target, mem: MemoryState, hops: int,
                   gate_override: float | None = None, time_divisor: float = 1.0,
                   trace: list | None = None) -> Tensor:
    """Residual stack of ``hops`` reads; zero hops returns ``c_short`` itself.

    If ``trace`` is a list, each hop's attention output is appended to it.
    """
    if hops < 0:
        raise ContractError("hop count must be non-negative")
    if hops > params.hops:
        raise ContractError(f"{hops} hops requested but only {params.hops} query projections exist")
    c = c_short
    for k in range(1, hops + 1):
        o = read_once(k, params, c, t_target, mem, gate_override, time_divisor)
        if trace is not None:
            trace.append(o)
        c = ag.add(c, o)
    return c
