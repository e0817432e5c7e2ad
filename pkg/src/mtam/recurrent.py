"""GRU and time-gated GRU (T-GRU) cells.

Two routes compute the same recurrence:

* ``gru_step`` / ``tgru_step`` / ``encode_short_term`` build every gate out
  of elementary tape ops, one behavior at a time;
* ``encode_batch`` runs a whole right-padded batch through the fused kernel
  (compiled or numpy) and records a single tape op with its own backward.

The first is the readable reference and the oracle for the second.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import kernels
from .autograd import Tensor
from .errors import ContractError, DimensionError, OrderingError


def _uniform(rng, shape, scale, name):
    return ag.init_uniform(rng, shape, name, scale)


def _zeros(shape, name):
    return ag.parameter(np.zeros(shape), name)


@dataclass
class GruParams:
    W_z: Tensor
    W_r: Tensor
    W_h: Tensor
    b_z: Tensor
    b_r: Tensor
    b_h: Tensor

    @property
    def d(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, scale: float | None = 0.08) -> "GruParams":
        return cls(_uniform(rng, (2 * d, d), scale, "gru.W_z"), _uniform(rng, (2 * d, d), scale, "gru.W_r"),
                   _uniform(rng, (2 * d, d), scale, "gru.W_h"), _zeros((1, d), "gru.b_z"),
                   _zeros((1, d), "gru.b_r"), _zeros((1, d), "gru.b_h"))

    def parameters(self) -> dict:
        return {"W_z": self.W_z, "W_r": self.W_r, "W_h": self.W_h,
                "b_z": self.b_z, "b_r": self.b_r, "b_h": self.b_h}


@dataclass
class TemporalGateParams:
    W_delta: Tensor
    b_delta: Tensor
    W_tau: Tensor
    b_tau: Tensor
    W_gdelta: Tensor
    W_gtau: Tensor
    b_g: Tensor

    @classmethod
    def init(cls, d: int, rng: np.random.Generator, scale: float | None = 0.08) -> "TemporalGateParams":
        return cls(_uniform(rng, (1, d), scale, "tgate.W_delta"), _zeros((1, d), "tgate.b_delta"),
                   _uniform(rng, (2 * d, d), scale, "tgate.W_tau"), _zeros((1, d), "tgate.b_tau"),
                   _uniform(rng, (1, d), scale, "tgate.W_gdelta"), _uniform(rng, (1, d), scale, "tgate.W_gtau"),
                   _zeros((1, d), "tgate.b_g"))

    def parameters(self) -> dict:
        return {"W_delta": self.W_delta, "b_delta": self.b_delta, "W_tau": self.W_tau, "b_tau": self.b_tau,
                "W_gdelta": self.W_gdelta, "W_gtau": self.W_gtau, "b_g": self.b_g}


@dataclass
class RnnState:
    h: Tensor
    t_prev: float

    @classmethod
    def zeros(cls, d: int, t_prev: float = 0.0, rows: int = 1) -> "RnnState":
        return cls(ag.constant(np.zeros((rows, d))), t_prev)


def _check_width(params: GruParams, x: Tensor, state: RnnState) -> None:
    d = params.d
    if x.shape[-1] != d or state.h.shape[-1] != d:
        raise DimensionError(f"width mismatch: params d={d}, x {x.shape}, h {state.h.shape}")


def _gru_parts(params: GruParams, x: Tensor, h: Tensor):
    xh = ag.concat([x, h], axis=-1)
    z = ag.sigmoid(ag.add(ag.matmul(xh, params.W_z), params.b_z))
    r = ag.sigmoid(ag.add(ag.matmul(xh, params.W_r), params.b_r))
    xrh = ag.concat([x, ag.mul(h, r)], axis=-1)
    cand = ag.tanh(ag.add(ag.matmul(xrh, params.W_h), params.b_h))
    return xh, z, cand


def _mix(z: Tensor, history: Tensor, cand: Tensor) -> Tensor:
    return ag.add(history, ag.mul(ag.sub(ag.constant(1.0), z), cand))


def gru_step(params: GruParams, x: Tensor, state: RnnState) -> RnnState:
    _check_width(params, x, state)
    _, z, cand = _gru_parts(params, x, state.h)
    return RnnState(_mix(z, ag.mul(z, state.h), cand), state.t_prev)


def log_interval(t_now, t_prev, time_divisor: float = 1.0) -> np.ndarray:
    gap = np.asarray(t_now, dtype=np.float64) - np.asarray(t_prev, dtype=np.float64)
    if np.any(gap < 0):
        raise OrderingError(f"negative time interval ({float(np.min(gap))} s)")
    return np.log1p(gap / time_divisor)


def _temporal_gate(gate: TemporalGateParams, xh: Tensor, dt) -> Tensor:
    rows = xh.shape[0]
    gap = ag.constant(np.broadcast_to(np.asarray(dt, dtype=np.float64), (rows,)).reshape(rows, 1))
    delta = ag.tanh(ag.add(ag.mul(ag.log1p(gap), gate.W_delta), gate.b_delta))
    tau = ag.tanh(ag.add(ag.matmul(xh, gate.W_tau), gate.b_tau))
    return ag.sigmoid(ag.add(ag.add(ag.mul(delta, gate.W_gdelta), ag.mul(tau, gate.W_gtau)), gate.b_g))


def temporal_gate_step(gate: TemporalGateParams, x: Tensor, state: RnnState, t_now,
                       time_divisor: float = 1.0) -> Tensor:
    """Gate values in (0, 1)^d for stepping from ``state.t_prev`` to ``t_now``."""
    gap = np.asarray(t_now, dtype=np.float64) - np.asarray(state.t_prev, dtype=np.float64)
    if np.any(gap < 0):
        raise OrderingError(f"negative time interval ({float(np.min(gap))} s)")
    return _temporal_gate(gate, ag.concat([x, state.h], axis=-1), gap / time_divisor)


def tgru_step(gru: GruParams, gate: TemporalGateParams, x: Tensor, state: RnnState, t_now,
              gate_override: float | None = None, time_divisor: float = 1.0) -> RnnState:
    """One T-GRU update; the history term is scaled by the temporal gate.

    ``gate_override`` pins the gate to a constant instead of computing it
    (1.0 turns the cell back into a plain GRU).
    """
    _check_width(gru, x, state)
    gap = np.asarray(t_now, dtype=np.float64) - np.asarray(state.t_prev, dtype=np.float64)
    if np.any(gap < 0):
        raise OrderingError(f"negative time interval ({float(np.min(gap))} s)")
    xh, z, cand = _gru_parts(gru, x, state.h)
    if gate_override is None:
        g = _temporal_gate(gate, xh, gap / time_divisor)
        history = ag.mul(ag.mul(z, g), state.h)
    elif gate_override == 1.0:
        history = ag.mul(z, state.h)
    else:
        history = ag.mul(ag.mul(z, ag.constant(gate_override)), state.h)
    return RnnState(_mix(z, history, cand), t_now)


def encode_short_term(gru: GruParams, gate: TemporalGateParams, seq: list,
                      gate_override: float | None = None, time_divisor: float = 1.0) -> Tensor:
    """Fold ``tgru_step`` over behavior embeddings and return the last hidden state.

    The first step sees interval 0 and the zero initial state.
    """
    if not seq:
        raise ContractError("cannot encode an empty sequence")
    state = RnnState.zeros(gru.d, t_prev=seq[0].timestamp)
    for b in seq:
        state = tgru_step(gru, gate, b.vector, state, b.timestamp, gate_override, time_divisor)
    return state.h


# ---------------------------------------------------------------------------
# fused batch route


def batch_log_intervals(times: np.ndarray, step_mask: np.ndarray, time_divisor: float = 1.0) -> np.ndarray:
    """log1p of the gap to the previous behavior per step; 0 on the first and padded steps."""
    gaps = np.zeros_like(times, dtype=np.float64)
    gaps[:, 1:] = times[:, 1:] - times[:, :-1]
    valid = step_mask.astype(bool).copy()
    valid[:, 0] = False
    valid[:, 1:] &= step_mask[:, :-1].astype(bool)
    gaps = np.where(valid, gaps, 0.0)
    if np.any(gaps < 0):
        raise OrderingError("timestamps must be non-decreasing within each sequence")
    return np.log1p(gaps / time_divisor)


def encode_batch(gru: GruParams, gate: TemporalGateParams, X: Tensor, times: np.ndarray,
                 step_mask: np.ndarray, gate_override: float | None = None,
                 time_divisor: float = 1.0) -> Tensor:
    """All hidden states (B, T, d) of a right-padded batch.

    Padded steps carry the previous state forward, so ``H[:, -1]`` is each
    row's final state.
    """
    B, T, d = X.shape
    if d != gru.d:
        raise DimensionError(f"width mismatch: params d={d}, inputs {X.shape}")
    use_gate = gate_override is None
    ldt = np.ascontiguousarray(batch_log_intervals(times, step_mask, time_divisor).T)
    mask = np.ascontiguousarray(step_mask.T.astype(np.uint8))
    Xs = np.ascontiguousarray(X.values.transpose(1, 0, 2))
    if use_gate:
        inputs = (X, gru.W_z, gru.W_r, gru.W_h, gru.b_z, gru.b_r, gru.b_h, gate.W_tau, gate.b_tau,
                  gate.W_delta, gate.b_delta, gate.W_gdelta, gate.W_gtau, gate.b_g)
        Wzrt = np.concatenate([gru.W_z.values, gru.W_r.values, gate.W_tau.values], axis=1)
        bzrt = np.concatenate([gru.b_z.values, gru.b_r.values, gate.b_tau.values], axis=1).reshape(-1)
        gvals = [gate.W_delta.values.reshape(-1), gate.b_delta.values.reshape(-1),
                 gate.W_gdelta.values.reshape(-1), gate.W_gtau.values.reshape(-1), gate.b_g.values.reshape(-1)]
    else:
        inputs = (X, gru.W_z, gru.W_r, gru.W_h, gru.b_z, gru.b_r, gru.b_h)
        Wzrt = np.concatenate([gru.W_z.values, gru.W_r.values], axis=1)
        bzrt = np.concatenate([gru.b_z.values, gru.b_r.values], axis=1).reshape(-1)
        gvals = [None] * 5
    const = 1.0 if use_gate else float(gate_override)
    Wh = np.ascontiguousarray(gru.W_h.values)
    Hs, caches = kernels.recurrent_forward(Xs, ldt, mask, Wzrt, bzrt, Wh, gru.b_h.values.reshape(-1),
                                           *gvals, use_gate, const)
    out = np.ascontiguousarray(Hs[1:].transpose(1, 0, 2))
    return ag.record("recurrent_sequence", inputs, out, Xs=Xs, ldt=ldt, mask=mask, Hs=Hs, caches=caches,
                     Wzrt=Wzrt, Wh=Wh, use_gate=use_gate, const=const,
                     Wgd=gvals[2], Wgt=gvals[3])


def _bw_recurrent_sequence(rec, g):
    c = rec.ctx
    d = rec.inputs[0].shape[2]
    dH = np.ascontiguousarray(g.transpose(1, 0, 2))
    dX, dWzrt, dbzrt, dWh, dbh, dWd, dbd, dWgd, dWgt, dbg = kernels.recurrent_backward(
        dH, c["Xs"], c["ldt"], c["mask"], c["Hs"], c["caches"], c["Wzrt"], c["Wh"], c["Wgd"], c["Wgt"],
        c["use_gate"], c["const"])
    row = (1, d)
    grads = [dX.transpose(1, 0, 2), dWzrt[:, :d], dWzrt[:, d:2 * d], dWh,
             dbzrt[:d].reshape(row), dbzrt[d:2 * d].reshape(row), dbh.reshape(row)]
    if c["use_gate"]:
        grads += [dWzrt[:, 2 * d:], dbzrt[2 * d:].reshape(row), dWd.reshape(row), dbd.reshape(row),
                  dWgd.reshape(row), dWgt.reshape(row), dbg.reshape(row)]
    return tuple(grads)


ag.BACKWARD_RULES["recurrent_sequence"] = _bw_recurrent_sequence
