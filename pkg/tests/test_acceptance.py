"""Acceptance checks for the primary component.

Every test prints one line ``ACCEPTANCE <name>: PASS|FAIL (detail)`` and
then asserts, so ``pytest tests/test_acceptance.py`` (or running this file
directly) gives a readable scorecard. The two training experiments carry
the ``slow`` marker.
"""
import math
import subprocess
import sys
import time

import numpy as np
import pytest

from mtam import attention as at
from mtam import autograd as ag
from mtam import checkpoint
from mtam import data as D
from mtam import memory as mem
from mtam import metrics as MX
from mtam import model as M
from mtam import recurrent as rec
from mtam.cli import main
from mtam.embeddings import embed_batch
from mtam.seeding import Streams
from mtam.synthetic import temporal_rule_log
from mtam.train import TrainConfig, train

from conftest import DATA_DIR, write_log


def report(capsys, name, ok, detail=""):
    with capsys.disabled():
        print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{name}: {detail}"


def _random_model(seed, variant="mtam", hops=2, n_items=9, d=4, max_len=6):
    cfg = M.ModelConfig(n_items=n_items, n_categories=3, d=d, max_len=max_len, memory_slots=max_len, hops=hops,
                        variant=variant, dropout=0.0)
    p = M.ModelParams.init(cfg, np.random.default_rng(seed))
    rng = np.random.default_rng(seed + 10_000)
    for t in p.named_parameters().values():
        t.values[...] = rng.uniform(-0.7, 0.7, t.shape)
    return p


def _random_batch(rng, n_items=9, max_len=6, B=4):
    prefixes, targets = [], []
    for _ in range(B):
        n = int(rng.integers(1, max_len + 3))
        times = 1_600_000_000 + np.cumsum(rng.integers(0, 20_000, n)).astype(float)
        prefixes.append(D.BehaviorSequence.from_lists(rng.integers(1, n_items + 1, n), rng.integers(1, 4, n), times))
        targets.append(times[-1] + float(rng.integers(0, 20_000)))
    return M.make_batch(prefixes, targets, max_len)


def _shifted(batch, offset):
    return M.Batch(batch.items, batch.categories, batch.times + offset, batch.step_mask, batch.lengths,
                   batch.t_target + offset, batch.labels)


def _short_and_memory(p, batch):
    c = p.config
    E = embed_batch(p.tables, batch.items, batch.categories, batch.step_mask)
    H = rec.encode_batch(p.gru, p.tgate, E, batch.times, batch.step_mask, c.rnn_gate, c.time_divisor)
    c_short = ag.select(H, H.shape[1] - 1, axis=1)
    B, d = c_short.shape
    m = mem.write_memory_batch(E, batch.times, batch.lengths, c.memory_slots)
    return ag.reshape(c_short, (B, 1, d)), m, E, H


# --- gradient suite ---------------------------------------------------------

def test_gradient_suite_cli(capsys):
    start = time.perf_counter()
    res = subprocess.run([sys.executable, "-m", "mtam", "gradcheck", "--scope", "all"], capture_output=True,
                         text=True)
    elapsed = time.perf_counter() - start
    worst = [ln for ln in res.stdout.splitlines() if "tensors within" in ln]
    ok = res.returncode == 0 and elapsed < 60
    report(capsys, "gradient suite", ok, f"exit {res.returncode}, {elapsed:.1f}s, {worst[-1] if worst else ''}")


# --- reduction equivalences -------------------------------------------------

def test_reduction_tgru_gate_one_is_gru(capsys):
    bad = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d = int(rng.integers(2, 7))
        gru = rec.GruParams.init(d, rng, scale=0.8)
        gate = rec.TemporalGateParams.init(d, rng, scale=0.8)
        h = rng.uniform(-1, 1, (1, d))
        state = rec.RnnState(ag.constant(h), 1000.0)
        x = ag.constant(rng.normal(size=(1, d)))
        t_now = 1000.0 + float(rng.integers(0, 100_000))
        a = rec.tgru_step(gru, gate, x, state, t_now, gate_override=1.0).h.values
        b = rec.gru_step(gru, x, state).h.values
        if a.tobytes() != b.tobytes():
            bad.append(seed)
    report(capsys, "reduction T-GRU gate=1 == GRU", not bad, f"100 seeds, mismatching {bad}")


def test_reduction_time_attention_gate_one_is_dot(capsys):
    bad = []
    for seed in range(100):
        rng = np.random.default_rng(seed)
        d, l_y = int(rng.integers(2, 7)), int(rng.integers(1, 8))
        p = at.AttentionGateParams.init(1, l_y, d, rng, scale=0.8)
        q, k, v = (ag.constant(rng.normal(size=s)) for s in [(1, d), (l_y, d), (l_y, d)])
        mask = (rng.random(l_y) < 0.7).astype(int)
        mask[int(rng.integers(l_y))] = 1
        t_k = np.sort(rng.integers(0, 10**6, l_y)).astype(float)
        a = at.time_attention(p, q, [2e6], k, t_k, v, mask, gate_override=1.0).values
        b = at.dot_attention(q, k, v, mask).values
        if a.tobytes() != b.tobytes():
            bad.append(seed)
    report(capsys, "reduction time attention gate=1 == dot attention", not bad, f"100 seeds, mismatching {bad}")


def test_reduction_zero_hops_is_tgru(capsys):
    bad = []
    for seed in range(100):
        p = _random_model(seed, hops=0)
        batch = _random_batch(np.random.default_rng(seed))
        got = M.forward_batch(p, batch).values
        E = embed_batch(p.tables, batch.items, batch.categories, batch.step_mask)
        H = rec.encode_batch(p.gru, p.tgate, E, batch.times, batch.step_mask, None, p.config.time_divisor)
        if got.tobytes() != H.values[:, -1].tobytes():
            bad.append(seed)
    report(capsys, "reduction MTAM k'=0 == T-GRU encoder", not bad, f"100 seeds, mismatching {bad}")


# --- time shift -------------------------------------------------------------

def test_time_shift_invariance(capsys):
    worst = {"tgru": 0.0, "mtam": 0.0}
    for seed in range(20):
        batch = _random_batch(np.random.default_rng(seed))
        for variant in worst:
            p = _random_model(seed, variant=variant, hops=2 if variant == "mtam" else 0)
            a = M.forward_batch(p, batch).values
            b = M.forward_batch(p, _shifted(batch, 86_400.0 * 365)).values
            worst[variant] = max(worst[variant], float(np.max(np.abs(a - b))))
    ok = all(v == 0.0 for v in worst.values())
    report(capsys, "time-shift invariance", ok, f"max abs diff T-GRU {worst['tgru']}, attention {worst['mtam']}")


# --- normalization and masking ----------------------------------------------

def test_tscore_rows_and_masked_slots(capsys):
    worst_sum, worst_masked, worst_perturb = 0.0, 0.0, 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        p = _random_model(seed, hops=2)
        batch = _random_batch(rng)
        q, m, _, _ = _short_and_memory(p, batch)
        hp = p.hops
        t_q = batch.t_target[:, None]
        w = at.time_score(hp.gate, ag.matmul(q, hp.W_Q[0]), t_q, ag.matmul(m.slots, hp.W_K), m.times,
                          m.mask).values
        mask = np.asarray(m.mask, dtype=bool)
        worst_sum = max(worst_sum, float(np.max(np.abs(w.sum(axis=-1) - 1.0))))
        worst_masked = max(worst_masked, float(np.max(np.abs(w[:, 0][~mask]), initial=0.0)))
        junk = m.slots.values.copy()
        junk[~mask] = rng.normal(scale=100.0, size=(int((~mask).sum()), junk.shape[-1]))
        junk_times = np.where(mask, m.times, rng.uniform(0, 1e9, m.times.shape))
        noisy = mem.MemoryState(ag.constant(junk), junk_times, m.mask)
        a = mem.read_multi_hop(hp, q, batch.t_target, m, 2).values
        b = mem.read_multi_hop(hp, q, batch.t_target, noisy, 2).values
        worst_perturb = max(worst_perturb, float(np.max(np.abs(a - b))))
    ok = worst_sum <= 1e-12 and worst_masked == 0.0 and worst_perturb == 0.0
    report(capsys, "T-Score normalization and masking", ok,
           f"max |row sum - 1| {worst_sum:.2e}, masked weight {worst_masked}, perturbation diff {worst_perturb}")


# --- metrics ----------------------------------------------------------------

def _brute_force(scores, labels, K):
    hr = ndcg = 0.0
    for row, label in zip(scores, labels):
        order = sorted(range(1, len(row)), key=lambda i: (-row[i], i))
        rank = order.index(label) + 1
        if rank <= K:
            hr += 1.0
            ndcg += 1.0 / math.log2(1 + rank)
    return hr / len(labels), ndcg / len(labels)


def test_metric_oracle(capsys):
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(1000):
        n_users, n_items = int(rng.integers(1, 8)), int(rng.integers(2, 40))
        scores = rng.integers(0, 6, size=(n_users, n_items + 1)).astype(float)
        scores[:, 0] = -np.inf
        labels = rng.integers(1, n_items + 1, size=n_users)
        K = int(rng.integers(1, n_items + 1))
        got = MX.hit_and_ndcg(MX.label_ranks(scores, labels), [K])[K]
        mismatches += (got["HR"], got["NDCG"]) != _brute_force(scores, labels, K)
    rank3 = MX.hit_and_ndcg([3], [10])[10]["NDCG"]
    ok = mismatches == 0 and rank3 == 0.5
    report(capsys, "metric oracle", ok, f"1000 fixtures, {mismatches} mismatches; NDCG@10 at rank 3 = {rank3}")


# --- preprocessing ----------------------------------------------------------

# (user, item, category, timestamp); u1's rows are deliberately out of time order
FIXTURE_20 = [
    ("u1", "A", "x", 700), ("u1", "B", "y", 200), ("u2", "C", "y", 50), ("u1", "X", "z", 400),
    ("u1", "A", "x", 100), ("u2", "A", "x", 60), ("u1", "B", "y", 1100), ("u1", "A", "x", 900),
    ("u2", "B", "y", 70), ("u1", "C", "y", 600), ("u1", "B", "y", 900), ("u2", "C", "y", 80),
    ("u1", "A", "x", 300), ("u2", "A", "x", 90), ("u1", "B", "y", 500), ("u2", "B", "y", 95),
    ("u1", "A", "x", 1000), ("u2", "A", "x", 96), ("u1", "B", "y", 800), ("u2", "B", "y", 97),
]


def test_preprocessing_fixture(tmp_path, capsys):
    log = D.ingest(write_log(tmp_path / "fixture.csv", FIXTURE_20))
    # 10 events per user; no item can reach 30 in 20 events, so the item
    # threshold is scaled to 3 (C and X then fall out over two passes)
    idx = D.filter_and_index(log, min_user_len=10, min_item_count=3)
    split = D.split_sequences(idx)
    got_train = [(list(e.prefix.items), e.label_item, e.label_time) for e in split.train]
    got_test = [(list(e.prefix.items), e.label_item, e.label_time) for e in split.test]
    seq = [1, 2, 1, 2, 1, 2, 1, 2, 1, 2]
    times = [100, 200, 300, 500, 700, 800, 900, 900, 1000, 1100]
    want_train = [(seq[:n], seq[n], float(times[n])) for n in range(1, 9)]
    want_test = [(seq[:9], 2, 1100.0)]
    ok = (idx.vocab.users == ["u1"] and idx.vocab.items == [D.PAD, "A", "B"]
          and idx.vocab.categories == [D.PAD, "x", "y"]
          and idx.sequences[0].times.tolist() == [float(t) for t in times]
          and got_train == want_train and got_test == want_test)
    report(capsys, "preprocessing fixture", ok, f"{len(got_train)} train pairs, {len(got_test)} test pair")


# --- synthetic temporal task ------------------------------------------------

def _synthetic_split():
    return D.split_sequences(D.filter_and_index(temporal_rule_log(2000, Streams(0)["synthetic"]), 10, 30))


def _synthetic_cfg(variant, hops, epochs=3):
    return TrainConfig(lr0=0.3, d=32, max_len=20, hops=hops, variant=variant, epochs=epochs, dropout=0.5,
                       time_divisor=3600.0, seed=0, batch_size=32, init="glorot")


def _fit(split, cfg):
    p = M.ModelParams.init(cfg.model_config(split.n_items, split.n_categories), Streams(cfg.seed)["init"])
    train(p, split.train, cfg)
    return p


@pytest.mark.slow
def test_synthetic_temporal_task(capsys):
    start = time.perf_counter()
    split = _synthetic_split()
    hr = {}
    for variant, hops in (("mtam", 1), ("gru", 0)):
        p = _fit(split, _synthetic_cfg(variant, hops))
        hr[variant] = MX.evaluate(p, split.test, (1,)).hr(1)
    elapsed = time.perf_counter() - start
    ok = hr["mtam"] >= 0.95 and hr["gru"] <= 0.65 and elapsed < 600
    report(capsys, "synthetic temporal task", ok,
           f"MTAM HR@1 {hr['mtam']:.4f}, GRU HR@1 {hr['gru']:.4f}, {elapsed:.0f}s")


@pytest.mark.slow
def test_hop_sweep_and_residual(capsys):
    split = _synthetic_split()
    lines, worst_sub, exact = [], 0.0, True
    batch = M.examples_to_batch(split.test[:256], 20)
    for k in (0, 1, 2, 4):
        p = _fit(split, _synthetic_cfg("mtam", k, epochs=1))
        rep = MX.evaluate(p, split.test, (1, 10))
        lines.append(f"k'={k} HR@1 {rep.hr(1):.4f} HR@10 {rep.hr(10):.4f} NDCG@10 {rep.ndcg(10):.4f}")
        if k == 0:
            continue
        q, m, _, _ = _short_and_memory(p, batch)
        for j in range(1, k + 1):
            trace = []
            hi = mem.read_multi_hop(p.hops, q, batch.t_target, m, j, None, p.config.time_divisor, trace).values
            lo = mem.read_multi_hop(p.hops, q, batch.t_target, m, j - 1, None, p.config.time_divisor).values
            o = trace[-1].values
            exact &= hi.tobytes() == (lo + o).tobytes()
            worst_sub = max(worst_sub, float(np.max(np.abs((hi - lo) - o))))
    with capsys.disabled():
        for ln in lines:
            print(f"\n  hop sweep {ln}", end="")
    report(capsys, "hop sweep and residual", exact and len(lines) == 4,
           f"c(k) == c(k-1) + o(k) bitwise: {exact}; max |(c(k) - c(k-1)) - o(k)| {worst_sub:.1e}")


# --- desk-scale MovieLens ---------------------------------------------------

@pytest.mark.slow
def test_movielens_directional(capsys):
    start = time.perf_counter()
    split = D.split_sequences(D.filter_and_index(D.ingest(DATA_DIR / "ml100k.csv.gz")))
    top = MX.evaluate_popularity(split, "top-pop", (10,)).hr(10)
    hr = {}
    for variant, hops in (("gru", 0), ("mtam", 4)):
        cfg = TrainConfig(lr0=0.5, d=32, max_len=50, hops=hops, variant=variant, epochs=10, dropout=0.5,
                          time_divisor=3600.0, seed=0, batch_size=128, init="glorot")
        hr[variant] = MX.evaluate(_fit(split, cfg), split.test, (10,)).hr(10)
    elapsed = time.perf_counter() - start
    ok = hr["mtam"] > hr["gru"] > top and elapsed < 1800
    report(capsys, "MovieLens directional check", ok,
           f"{len(split.test)} users; HR@10 MTAM(k'=4) {hr['mtam']:.4f}, GRU {hr['gru']:.4f}, "
           f"Top-Pop {top:.4f}; {elapsed:.0f}s")


# --- determinism ------------------------------------------------------------

def test_determinism(tmp_path, capsys):
    events = tmp_path / "syn.csv"
    assert main(["synthetic", "--output", str(events), "--users", "150"]) == 0
    assert main(["preprocess", "--input", str(events), "--output", str(tmp_path / "ds")]) == 0
    digests, reports = [], []
    for run in ("a", "b"):
        ckpt = tmp_path / f"{run}.ckpt"
        assert main(["train", "--data", str(tmp_path / "ds"), "--out", str(ckpt), "--d", "8", "--max-len", "10",
                     "--hops", "2", "--epochs", "2", "--batch-size", "16", "--lr", "0.3"]) == 0
        rep = tmp_path / f"{run}.txt"
        assert main(["eval", "--data", str(tmp_path / "ds"), "--ckpt", str(ckpt), "--k", "1,5,10",
                     "--report", str(rep)]) == 0
        digests.append(checkpoint.digest(ckpt))
        reports.append(MX.MetricReport.from_text(rep.read_text()))
    ok = digests[0] == digests[1] and reports[0].same_metrics(reports[1])
    report(capsys, "determinism", ok, f"digest {digests[0][:16]}... vs {digests[1][:16]}..., "
                                      f"metrics equal {reports[0].same_metrics(reports[1])}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
