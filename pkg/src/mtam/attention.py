"""Scaled dot-product attention and its time-gated variant.

Functions accept either unbatched operands, with queries (l_x, d) and keys
(l_y, d) and times as 1-D arrays, or batched operands with a leading batch
axis on everything. The gate parameters are position-wise (l_x, l_y)
matrices shared across the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .errors import DegenerateRowError, DimensionError


@dataclass
class AttentionGateParams:
    W_delta: Tensor
    W_gdelta: Tensor
    W_gtau: Tensor
    b_delta: Tensor
    b_tau: Tensor
    b_g: Tensor
    W_tau: Tensor

    @property
    def extents(self) -> tuple:
        return self.W_delta.shape

    @classmethod
    def init(cls, l_x: int, l_y: int, d: int, rng: np.random.Generator, scale: float | None = 0.08,
             prefix: str = "attn") -> "AttentionGateParams":
        def u(shape, name):
            return ag.init_uniform(rng, shape, f"{prefix}.{name}", scale)

        def z(name):
            return ag.parameter(np.zeros((l_x, l_y)), f"{prefix}.{name}")

        return cls(u((l_x, l_y), "W_delta"), u((l_x, l_y), "W_gdelta"), u((l_x, l_y), "W_gtau"),
                   z("b_delta"), z("b_tau"), z("b_g"), u((d, d), "W_tau"))

    def parameters(self) -> dict:
        return {"W_delta": self.W_delta, "W_gdelta": self.W_gdelta, "W_gtau": self.W_gtau,
                "b_delta": self.b_delta, "b_tau": self.b_tau, "b_g": self.b_g, "W_tau": self.W_tau}


@dataclass
class TimedSequence:
    vectors: Tensor
    times: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(self.times.shape, dtype=np.int64)
        self.mask = np.asarray(self.mask)
        if self.times.shape != self.vectors.shape[:-1] or self.mask.shape != self.times.shape:
            raise DimensionError(f"times {self.times.shape} / mask {self.mask.shape} do not align "
                                 f"with vectors {self.vectors.shape}")


def interval_matrix(t_x, t_y) -> np.ndarray:
    """Pairwise signed differences ``C[..., i, j] = t_x[..., i] - t_y[..., j]``."""
    t_x = np.asarray(t_x, dtype=np.float64)
    t_y = np.asarray(t_y, dtype=np.float64)
    return t_x[..., :, None] - t_y[..., None, :]


def _softmax_mask(mask, l_x: int):
    if mask is None:
        return None
    mask = np.asarray(mask).astype(bool)
    keep = np.broadcast_to(mask[..., None, :], mask.shape[:-1] + (l_x, mask.shape[-1]))
    if not keep.any(axis=-1).all():
        raise DegenerateRowError("every key is masked")
    return keep


def _attend(logits: Tensor, v: Tensor, mask) -> Tensor:
    d = v.shape[-1]
    weights = ag.row_softmax(ag.scale(logits, 1.0 / np.sqrt(d)), _softmax_mask(mask, logits.shape[-2]))
    return ag.matmul(weights, v)


def dot_attention(q: Tensor, k: Tensor, v: Tensor, mask=None) -> Tensor:
    """``softmax(q k^T / sqrt(d)) v`` with masked keys excluded."""
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise DimensionError(f"attention shapes q {q.shape}, k {k.shape}, v {v.shape}")
    return _attend(ag.matmul(q, k, transpose_b=True), v, mask)


def time_gate(params: AttentionGateParams, x: Tensor, t_x, y: Tensor, t_y, time_divisor: float = 1.0) -> Tensor:
    """Pairwise temporal gate in (0, 1), shaped like the (l_x, l_y) parameters.

    The semantic term is ``tanh(x W_tau y^T + b_tau)``.
    """
    l_x, l_y = x.shape[-2], y.shape[-2]
    if (l_x, l_y) != params.extents:
        raise DimensionError(f"gate parameters built for {params.extents}, got ({l_x}, {l_y})")
    gaps = np.abs(interval_matrix(t_x, t_y)) / time_divisor
    delta = ag.tanh(ag.add(ag.mul(ag.log1p(ag.constant(gaps)), params.W_delta), params.b_delta))
    sem = ag.matmul(ag.matmul(x, params.W_tau), y, transpose_b=True)
    tau = ag.tanh(ag.add(sem, params.b_tau))
    return ag.sigmoid(ag.add(ag.add(ag.mul(delta, params.W_gdelta), ag.mul(tau, params.W_gtau)), params.b_g))


def time_attention(params: AttentionGateParams, q: Tensor, t_q, k: Tensor, t_k, v: Tensor, mask=None,
                   gate_override: float | None = None, time_divisor: float = 1.0) -> Tensor:
    """Scaled dot-product attention whose logits are multiplied by the temporal gate.

    With ``gate_override=1.0`` the gate is skipped and the result is plain
    :func:`dot_attention`.
    """
    if q.shape[-1] != k.shape[-1] or k.shape != v.shape:
        raise DimensionError(f"attention shapes q {q.shape}, k {k.shape}, v {v.shape}")
    return ag.matmul(time_score(params, q, t_q, k, t_k, mask, gate_override, time_divisor), v)


def time_score(params: AttentionGateParams, q: Tensor, t_q, k: Tensor, t_k, mask=None,
               gate_override: float | None = None, time_divisor: float = 1.0) -> Tensor:
    """The attention weights alone (rows sum to one over unmasked keys)."""
    logits = ag.matmul(q, k, transpose_b=True)
    if gate_override is None:
        logits = ag.mul(logits, time_gate(params, q, t_q, k, t_k, time_divisor))
    elif gate_override != 1.0:
        logits = ag.scale(logits, float(gate_override))
    return ag.row_softmax(ag.scale(logits, 1.0 / np.sqrt(k.shape[-1])), _softmax_mask(mask, q.shape[-2]))


def time_attention_seq(params: AttentionGateParams, q: TimedSequence, kv: TimedSequence,
                       gate_override: float | None = None, time_divisor: float = 1.0) -> Tensor:
    """Time-aware attention of ``q`` over ``kv`` used as both keys and values."""
    return time_attention(params, q.vectors, q.times, kv.vectors, kv.times, kv.vectors, kv.mask,
                          gate_override, time_divisor)


def time_gate_seq(params: AttentionGateParams, x: TimedSequence, y: TimedSequence,
                  time_divisor: float = 1.0) -> Tensor:
    return time_gate(params, x.vectors, x.times, y.vectors, y.times, time_divisor)
