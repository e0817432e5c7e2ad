from pathlib import Path

import numpy as np
import pytest

from mtam import autograd as ag

DATA_DIR = Path(__file__).parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _finite_checks_on():
    previous = ag.set_finite_checks(True)
    yield
    ag.set_finite_checks(previous)


def write_log(path, rows, header="user,item,category,timestamp", sep=","):
    lines = [header.replace(",", sep)] + [sep.join(str(v) for v in r) for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")
    return path
