import gzip

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtam import data as D
from mtam.errors import DataError, FormatError, IngestionError

from conftest import write_log


def _log(rows):
    users, items, cats, times = zip(*rows) if rows else ((), (), (), ())
    return D.EventLog(list(users), list(items), list(cats), np.asarray(times, dtype=np.float64))


# --- ingest -----------------------------------------------------------------

def test_ingest_header_only(tmp_path):
    log = D.ingest(write_log(tmp_path / "e.csv", []))
    assert len(log) == 0


def test_ingest_three_rows(tmp_path):
    log = D.ingest(write_log(tmp_path / "e.csv", [("u1", "i1", "c1", 10), ("u1", "i2", "c1", 5), ("u2", "i1", "c2", 7)]))
    assert len(log) == 3
    assert log.users == ["u1", "u1", "u2"]
    np.testing.assert_array_equal(log.timestamps, [10.0, 5.0, 7.0])


def test_ingest_tab_and_column_order(tmp_path):
    path = write_log(tmp_path / "e.tsv", [(3, "c", "i", "u")], header="timestamp,category,item,user", sep="\t")
    log = D.ingest(path)
    assert (log.users, log.items, log.categories, log.timestamps.tolist()) == (["u"], ["i"], ["c"], [3.0])


def test_ingest_gzip(tmp_path):
    path = tmp_path / "e.csv.gz"
    with gzip.open(path, "wt") as fh:
        fh.write("user,item,category,timestamp\na,b,c,1\n")
    assert len(D.ingest(path)) == 1


def test_ingest_malformed_rows_counted(tmp_path):
    rows = [("u", "i", "c", k) for k in range(200)] + [("u", "i", "c", "yesterday")]
    log = D.ingest(write_log(tmp_path / "e.csv", rows))
    assert len(log) == 200 and log.malformed == 1


def test_ingest_too_many_malformed(tmp_path):
    rows = [("u", "i", "c", 1), ("u", "i", "c", -5), ("u", "i", "c")]
    with pytest.raises(IngestionError):
        D.ingest(write_log(tmp_path / "e.csv", rows))


def test_ingest_missing_column(tmp_path):
    with pytest.raises(FormatError, match="category"):
        D.ingest(write_log(tmp_path / "e.csv", [("u", "i", 1)], header="user,item,timestamp"))


# --- filtering --------------------------------------------------------------

def test_user_with_nine_events_removed():
    rows = [(u, "p", "c", t) for u in ("a", "b", "c") for t in range(10)] + [("short", "p", "c", t) for t in range(9)]
    idx = D.filter_and_index(_log(rows))
    assert idx.vocab.users == ["a", "b", "c"]


def test_item_with_29_occurrences_removed():
    rows = [(u, "p", "c", t) for u in ("a", "b", "c") for t in range(10)]
    rows += [(u, "q", "c", 100 + t) for u in ("a", "b", "c") for t in range(10)][:29]
    idx = D.filter_and_index(_log(rows))
    assert idx.vocab.items == [D.PAD, "p"]
    assert all(len(s) == 10 for s in idx.sequences)


def test_fixed_point_second_pass():
    # q occurs 29 times, so "a" falls to 9 events once q is gone and must go too
    rows = [(u, "p", "c", t) for u in ("b", "c", "d") for t in range(10)]
    rows += [("a", "p", "c", t) for t in range(9)] + [("a", "q", "c", 50)]
    rows += [("e", "q", "c", t) for t in range(28)]
    idx = D.filter_and_index(_log(rows))
    assert idx.vocab.users == ["b", "c", "d"]
    assert idx.vocab.items == [D.PAD, "p"]


def test_filter_result_is_fixed_point(rng):
    rows = [(f"u{rng.integers(40)}", f"i{rng.integers(25)}", "c", float(t)) for t in range(2000)]
    idx = D.filter_and_index(_log(rows), 10, 30)
    flat = [(idx.vocab.users[u], idx.vocab.items[i], "c", t)
            for u, s in enumerate(idx.sequences) for i, t in zip(s.items, s.times)]
    again = D.filter_and_index(_log(flat), 10, 30)
    assert again.vocab.users == idx.vocab.users
    assert [len(s) for s in again.sequences] == [len(s) for s in idx.sequences]


def test_filter_empty_results():
    with pytest.raises(DataError):
        D.filter_and_index(_log([]))
    with pytest.raises(DataError):
        D.filter_and_index(_log([("u", "i", "c", t) for t in range(5)]))


def test_sort_is_stable_on_ties():
    rows = [("u", "b", "c", 5), ("u", "a", "c", 5), ("u", "z", "c", 1)]
    idx = D.filter_and_index(_log(rows), 1, 1)
    v = idx.vocab
    assert [v.items[i] for i in idx.sequences[0].items] == ["z", "b", "a"]
    # ids follow first appearance in the file
    assert v.items == [D.PAD, "b", "a", "z"]


def test_vocab_round_trip():
    rows = [(f"u{k % 3}", f"i{k % 4}", f"c{k % 2}", k) for k in range(24)]
    idx = D.filter_and_index(_log(rows), 1, 1)
    v = idx.vocab
    for ext in ("i0", "i1", "i2", "i3"):
        assert v.items[v.item_id(ext)] == ext
    assert v.categories[v.category_id("c1")] == "c1"


# --- splitting --------------------------------------------------------------

def _seq(n):
    return D.BehaviorSequence.from_lists(np.arange(1, n + 1), np.ones(n, dtype=int), np.arange(n) * 10.0)


@pytest.mark.parametrize("n, n_train", [(4, 2), (2, 0), (10, 8)])
def test_split_counts(n, n_train):
    train, test = D.split_user(_seq(n))
    assert len(train) == n_train
    assert len(test.prefix) == n - 1 and test.label_item == n


def test_split_length_four_pairs():
    train, test = D.split_user(_seq(4))
    assert [(list(e.prefix.items), e.label_item, e.label_time) for e in train] == [([1], 2, 10.0), ([1, 2], 3, 20.0)]
    assert (list(test.prefix.items), test.label_item, test.label_time) == ([1, 2, 3], 4, 30.0)


def test_split_too_short():
    with pytest.raises(DataError):
        D.split_user(_seq(1))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(2, 30), min_size=1, max_size=8))
def test_split_conservation_and_no_leakage(lengths):
    seqs = [_seq(n) for n in lengths]
    split = D.split_sequences(D.IndexedSequences(seqs, D.Vocab([], [], [])))
    assert len(split.test) == len(lengths)
    assert len(split.train) == sum(max(0, n - 2) for n in lengths)
    test_pos = {(e.user, len(e.prefix)) for e in split.test}
    assert not test_pos & {(e.user, len(e.prefix)) for e in split.train}
    for e in split.test:
        assert len(e.prefix) == lengths[e.user] - 1


def test_holdout_last_train():
    split = D.split_sequences(D.IndexedSequences([_seq(5)], D.Vocab([], [], [])), holdout_last_train=True)
    assert len(split.train) == 2 and len(split.valid) == 1
    assert split.valid[0].label_item == 4


# --- sampling, stats and persistence ----------------------------------------

def test_sample_half_of_ten_users():
    rows = [(f"u{k}", "i", "c", t) for k in range(10) for t in range(3)]
    out = D.sample_users(_log(rows), 0.5, np.random.default_rng(0))
    assert len(set(out.users)) == 5 and len(out) == 15
    with pytest.raises(DataError):
        D.sample_users(_log(rows), 0.0, np.random.default_rng(0))


def test_density_example():
    seqs = [_seq(2), _seq(3), _seq(1)]
    stats = D.dataset_stats(seqs, 4, 1)
    assert stats["users"] == 3 and stats["events"] == 6
    assert stats["density"] == pytest.approx(6 / 12)
    assert stats["avg_behaviors"] == pytest.approx(2.0)


def test_save_load_round_trip(tmp_path):
    rows = [(f"u{k % 4}", f"i{k % 5}", f"c{k % 3}", float(k * 7 % 50)) for k in range(60)]
    split = D.split_sequences(D.filter_and_index(_log(rows), 3, 3), holdout_last_train=True)
    D.save_split(split, tmp_path / "ds")
    back = D.load_split(tmp_path / "ds")
    assert back.vocab.items == split.vocab.items and back.vocab.users == split.vocab.users
    for a, b in [(split.train, back.train), (split.test, back.test), (split.valid, back.valid)]:
        assert len(a) == len(b)
        for x, y in zip(a, b):
            assert x.label_item == y.label_item and x.label_time == y.label_time and x.user == y.user
            assert np.array_equal(x.prefix.items, y.prefix.items)
            assert np.array_equal(x.prefix.times, y.prefix.times)
    assert back.stats == split.stats


def test_load_errors(tmp_path):
    with pytest.raises(DataError):
        D.load_split(tmp_path)
    (tmp_path / "manifest.json").write_text('{"format": "other", "version": 1}')
    (tmp_path / "arrays.bin").write_bytes(b"")
    with pytest.raises(FormatError):
        D.load_split(tmp_path)


def test_same_bytes_same_split(tmp_path):
    rows = [(f"u{k % 6}", f"i{k % 4}", "c", float(k % 9)) for k in range(120)]
    path = write_log(tmp_path / "e.csv", rows)
    a = D.split_sequences(D.filter_and_index(D.ingest(path), 5, 5))
    b = D.split_sequences(D.filter_and_index(D.ingest(path), 5, 5))
    D.save_split(a, tmp_path / "a")
    D.save_split(b, tmp_path / "b")
    assert (tmp_path / "a" / "arrays.bin").read_bytes() == (tmp_path / "b" / "arrays.bin").read_bytes()
    assert (tmp_path / "a" / "manifest.json").read_text() == (tmp_path / "b" / "manifest.json").read_text()
