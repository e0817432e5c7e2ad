"""Item, category and position tables and per-behavior embeddings.

A behavior embedding is the elementwise sum of its item row, category row
and position row, so it lives in the same d-dimensional space as the item
table used for retrieval. Row 0 of each table is padding. Positions are
0-based within the truncated window; position ``p`` uses row ``p + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .data import BehaviorSequence
from .errors import TableIndexError


@dataclass
class BehaviorEmbedding:
    vector: Tensor
    timestamp: float


@dataclass
class EmbeddingTables:
    item_table: Tensor
    category_table: Tensor
    position_table: Tensor

    @property
    def d(self) -> int:
        return self.item_table.shape[1]

    @property
    def max_len(self) -> int:
        return self.position_table.shape[0] - 1

    @classmethod
    def init(cls, n_items: int, n_categories: int, max_len: int, d: int, rng: np.random.Generator,
             scale: float | None = 0.1) -> "EmbeddingTables":
        """Uniform(-scale, scale) rows; ``scale=None`` means 1/sqrt(d).

        Tables hold ``n + 1`` rows with row 0 zeroed.
        """
        scale = 1.0 / np.sqrt(d) if scale is None else scale

        def table(rows, name):
            w = rng.uniform(-scale, scale, size=(rows + 1, d))
            w[0] = 0.0
            return ag.parameter(w, name)

        return cls(table(n_items, "item_table"), table(n_categories, "category_table"),
                   table(max_len, "position_table"))

    def parameters(self) -> dict:
        return {"item_table": self.item_table, "category_table": self.category_table,
                "position_table": self.position_table}


def _check_position(tables: EmbeddingTables, positions) -> None:
    positions = np.asarray(positions)
    if positions.size and (positions.min() < 0 or positions.max() >= tables.max_len):
        raise TableIndexError(f"position out of range for window of {tables.max_len}")


def embed_behavior(tables: EmbeddingTables, item: int, category: int, position: int, t: float) -> BehaviorEmbedding:
    _check_position(tables, [position])
    vec = ag.add(ag.add(ag.gather_rows(tables.item_table, [item]),
                        ag.gather_rows(tables.category_table, [category])),
                 ag.gather_rows(tables.position_table, [position + 1]))
    return BehaviorEmbedding(vec, float(t))


def embed_sequence(tables: EmbeddingTables, seq: BehaviorSequence) -> list:
    """Embed the last ``max_len`` behaviors of ``seq``, oldest first."""
    if len(seq) == 0:
        raise ValueError("cannot embed an empty sequence")
    seq.check_order()
    win = seq.window(tables.max_len)
    return [embed_behavior(tables, int(i), int(c), p, float(t))
            for p, (i, c, t) in enumerate(zip(win.items, win.categories, win.times))]


def embed_batch(tables: EmbeddingTables, items: np.ndarray, categories: np.ndarray,
                step_mask: np.ndarray) -> Tensor:
    """Embed a right-padded (B, T) batch into a (B, T, d) tensor.

    Padded steps come out as exact zero vectors.
    """
    B, T = items.shape
    _check_position(tables, [T - 1])
    pos = np.broadcast_to(np.arange(1, T + 1), (B, T)) * step_mask
    e = ag.add(ag.add(ag.gather_rows(tables.item_table, items),
                      ag.gather_rows(tables.category_table, categories)),
               ag.gather_rows(tables.position_table, pos))
    return ag.mul(e, ag.constant(step_mask[:, :, None].astype(np.float64)))
