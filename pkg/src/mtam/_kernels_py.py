"""Pure-numpy kernels (fallback when the compiled extension is unavailable).

Array layout for the recurrence is step-major: ``X`` is (T, B, d) so each
step reads a contiguous (B, d) block. The packed input projection is
``[W_z | W_r | W_tau]`` of shape (2d, 3d), or (2d, 2d) without the gate.
"""
from __future__ import annotations

import numpy as np

NAME = "python"


def scatter_add_rows(out: np.ndarray, ids: np.ndarray, rows: np.ndarray) -> None:
    """``out[ids[i]] += rows[i]`` in index order (duplicates accumulate)."""
    np.add.at(out, ids, rows)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def recurrent_forward(X, ldt, mask, Wzrt, bzrt, Wh, bh, Wd, bd, Wgd, Wgt, bg, use_gate, gate_const):
    """Run the (T-)GRU recurrence over all steps.

    ``gate_const`` is only read when ``use_gate`` is false: the history term
    becomes ``(z * gate_const) * h``, so 1.0 reproduces plain GRU bit for bit.
    Returns the hidden states (T+1, B, d) with the zero initial state at index
    0, plus per-step caches for :func:`recurrent_backward`.
    """
    T, B, d = X.shape
    Hs = np.zeros((T + 1, B, d))
    Z = np.empty((T, B, d))
    R = np.empty((T, B, d))
    C = np.empty((T, B, d))
    G = np.empty((T, B, d)) if use_gate else None
    D = np.empty((T, B, d)) if use_gate else None
    U = np.empty((T, B, d)) if use_gate else None
    keep = mask.astype(bool)
    for s in range(T):
        x, h = X[s], Hs[s]
        xh = np.concatenate([x, h], axis=1)
        a = xh @ Wzrt + bzrt
        z = _sigmoid(a[:, :d])
        r = _sigmoid(a[:, d:2 * d])
        xrh = np.concatenate([x, r * h], axis=1)
        c = np.tanh(xrh @ Wh + bh)
        if use_gate:
            delta = np.tanh(ldt[s][:, None] * Wd + bd)
            tau = np.tanh(a[:, 2 * d:])
            g = _sigmoid(delta * Wgd + tau * Wgt + bg)
            hist = (z * g) * h
            G[s], D[s], U[s] = g, delta, tau
        elif gate_const == 1.0:
            hist = z * h
        else:
            hist = (z * gate_const) * h
        hn = hist + (1.0 - z) * c
        Hs[s + 1] = np.where(keep[s][:, None], hn, h)
        Z[s], R[s], C[s] = z, r, c
    return Hs, (Z, R, C, G, D, U)


def recurrent_backward(dH, X, ldt, mask, Hs, caches, Wzrt, Wh, Wgd, Wgt, use_gate, gate_const):
    """Backpropagate through :func:`recurrent_forward`.

    ``dH`` is the upstream gradient on Hs[1:] (T, B, d). Returns
    ``(dX, dWzrt, dbzrt, dWh, dbh, dWd, dbd, dWgd, dWgt, dbg)``; the gate
    entries are None when ``use_gate`` is false.
    """
    Z, R, C, G, D, U = caches
    T, B, d = X.shape
    nz = Wzrt.shape[1]
    dX = np.zeros_like(X)
    dWzrt = np.zeros_like(Wzrt)
    dbzrt = np.zeros(nz)
    dWh = np.zeros_like(Wh)
    dbh = np.zeros(d)
    if use_gate:
        dWd, dbd, dWgd, dWgt, dbg = (np.zeros(d) for _ in range(5))
    keep = mask.astype(bool)
    carry = np.zeros((B, d))
    for s in range(T - 1, -1, -1):
        x, h = X[s], Hs[s]
        z, r, c = Z[s], R[s], C[s]
        total = dH[s] + carry
        m = keep[s][:, None]
        dhs = np.where(m, total, 0.0)
        dh_prev = np.where(m, 0.0, total)
        if use_gate:
            g = G[s]
            dz = dhs * (g * h - c)
            dg = dhs * z * h
            dh_prev = dh_prev + dhs * (z * g)
        else:
            gc = 1.0 if gate_const == 1.0 else gate_const
            dz = dhs * (gc * h - c)
            dh_prev = dh_prev + dhs * (z * gc)
        dc = dhs * (1.0 - z)
        dac = dc * (1.0 - c * c)
        xrh = np.concatenate([x, r * h], axis=1)
        dWh += xrh.T @ dac
        dbh += dac.sum(axis=0)
        dxrh = dac @ Wh.T
        dx = dxrh[:, :d].copy()
        drh = dxrh[:, d:]
        dr = drh * h
        dh_prev = dh_prev + drh * r
        da = np.empty((B, nz))
        da[:, :d] = dz * z * (1.0 - z)
        da[:, d:2 * d] = dr * r * (1.0 - r)
        if use_gate:
            delta, tau = D[s], U[s]
            dag = dg * g * (1.0 - g)
            dWgd += (dag * delta).sum(axis=0)
            dWgt += (dag * tau).sum(axis=0)
            dbg += dag.sum(axis=0)
            dad = dag * Wgd * (1.0 - delta * delta)
            dWd += (dad * ldt[s][:, None]).sum(axis=0)
            dbd += dad.sum(axis=0)
            da[:, 2 * d:] = dag * Wgt * (1.0 - tau * tau)
        xh = np.concatenate([x, h], axis=1)
        dWzrt += xh.T @ da
        dbzrt += da.sum(axis=0)
        dxh = da @ Wzrt.T
        dx += dxh[:, :d]
        dh_prev = dh_prev + dxh[:, d:]
        dX[s] = dx
        carry = dh_prev
    if use_gate:
        return dX, dWzrt, dbzrt, dWh, dbh, dWd, dbd, dWgd, dWgt, dbg
    return dX, dWzrt, dbzrt, dWh, dbh, None, None, None, None, None
