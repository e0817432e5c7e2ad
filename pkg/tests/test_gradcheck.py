import pytest

from mtam import autograd as ag
from mtam import gradcheck as gc


@pytest.mark.parametrize("scope", gc.SCOPES)
def test_each_scope_passes(scope):
    rows = gc.run(scope, seed=0)
    assert rows
    assert all(r.ok for r in rows), gc.format_table(rows)
    assert all(r.suite.startswith(scope) for r in rows)


def test_model_suite_covers_every_active_tensor_of_every_variant():
    rows = gc.check_model(seed=1)
    for variant in gc.VARIANTS:
        names = {r.tensor for r in rows if r.suite == f"model/{variant}"}
        assert names == set(gc.micro_model(variant, 1).active_parameters())


def test_unknown_scope():
    with pytest.raises(ValueError):
        gc.run("everything")


def test_broken_rule_is_reported(monkeypatch):
    good = ag.BACKWARD_RULES["row_softmax"]
    monkeypatch.setitem(ag.BACKWARD_RULES, "row_softmax", lambda rec, g: tuple(-x for x in good(rec, g)))
    rows = gc.run("attention", seed=0)
    bad = [r for r in rows if not r.ok]
    assert bad
    table = gc.format_table(rows)
    assert f"FAILED {bad[0].suite}:{bad[0].tensor}" in table


def test_table_format():
    rows = [gc.CheckRow("rnn/x", "W", 1e-9, gc.TOLERANCE), gc.CheckRow("rnn/x", "b", 1.0, gc.TOLERANCE)]
    text = gc.format_table(rows, 0.5)
    assert "1/2 tensors within 0.0001 (0.5s)" in text
    assert text.splitlines()[-1].startswith("FAILED rnn/x:b")
