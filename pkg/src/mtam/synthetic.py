"""A planted temporal-rule dataset.

Each user starts with two random filler items. After that, every behavior
is item ``A`` when the gap between the two preceding behaviors was under
the threshold, else item ``B``. Gaps are drawn independently as either
short (1 to 50 minutes) or long (2 to 48 hours), so the label is a pure
function of elapsed time and invisible to a model that ignores timestamps.
"""
from __future__ import annotations

import numpy as np

from .data import EventLog

ITEM_A = "A"
ITEM_B = "B"


def temporal_rule_log(n_users: int = 2000, rng: np.random.Generator | None = None, min_len: int = 10,
                      max_len: int = 20, n_fillers: int = 20, threshold: float = 3600.0) -> EventLog:
    """Event log with integer-second timestamps following the gap rule."""
    rng = np.random.default_rng(0) if rng is None else rng
    users, items, cats, times = [], [], [], []
    for u in range(n_users):
        n = int(rng.integers(min_len, max_len + 1))
        short = rng.random(n) < 0.5
        gaps = np.where(short, rng.integers(60, 3001, size=n), rng.integers(7200, 172801, size=n))
        gaps[0] = 0
        t = int(rng.integers(1_500_000_000, 1_600_000_000)) + np.cumsum(gaps)
        for j in range(n):
            if j < 2:
                item, cat = f"f{int(rng.integers(n_fillers))}", "filler"
            else:
                item = ITEM_A if t[j - 1] - t[j - 2] < threshold else ITEM_B
                cat = "rule"
            users.append(f"u{u}")
            items.append(item)
            cats.append(cat)
            times.append(float(t[j]))
    return EventLog(users, items, cats, np.asarray(times))
