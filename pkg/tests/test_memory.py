import numpy as np
import pytest

from mtam import autograd as ag
from mtam import attention as at
from mtam import memory as mem
from mtam.embeddings import BehaviorEmbedding
from mtam.errors import ContractError, DegenerateRowError


def _history(rng, n, d=3):
    times = np.cumsum(rng.integers(1, 5000, size=n)).astype(float)
    return [BehaviorEmbedding(ag.constant(rng.normal(size=(1, d))), float(t)) for t in times]


def _hops(rng, d=3, L=4, hops=3, scale=0.8):
    p = mem.HopParams.init(d, L, hops, rng, scale)
    for t in p.parameters().values():
        t.values[...] = rng.uniform(-scale, scale, size=t.shape)
    return p


# --- writer -----------------------------------------------------------------

def test_write_two_of_four(rng):
    h = _history(rng, 2)
    m = mem.write_memory(h, 4)
    np.testing.assert_array_equal(m.slots.values[0], h[1].vector.values[0])
    np.testing.assert_array_equal(m.slots.values[1], h[0].vector.values[0])
    np.testing.assert_array_equal(m.slots.values[2:], 0.0)
    assert m.mask.tolist() == [1, 1, 0, 0]
    assert m.times.tolist() == [h[1].timestamp, h[0].timestamp, 0.0, 0.0]


def test_write_evicts_oldest(rng):
    h = _history(rng, 6)
    m = mem.write_memory(h, 4)
    for slot, b in enumerate([5, 4, 3, 2]):
        np.testing.assert_array_equal(m.slots.values[slot], h[b].vector.values[0])
    assert m.mask.tolist() == [1, 1, 1, 1]


def test_write_exact_fit(rng):
    assert mem.write_memory(_history(rng, 4), 4).mask.tolist() == [1, 1, 1, 1]


def test_write_empty_history():
    m = mem.write_memory([], 3, d=2)
    assert m.mask.tolist() == [0, 0, 0]
    with pytest.raises(ContractError):
        mem.write_memory([], 3)
    with pytest.raises(ContractError):
        mem.write_memory([], 0, d=2)


def test_eviction_keeps_last_ids():
    for n in range(1, 15):
        hist = [BehaviorEmbedding(ag.constant([[float(i), 0.0]]), float(i)) for i in range(n)]
        m = mem.write_memory(hist, 5)
        kept = m.slots.values[m.mask == 1, 0].tolist()
        assert kept == [float(i) for i in reversed(range(n))][:5]


def test_batch_writer_matches_per_user(rng):
    lengths = np.array([6, 2, 4])
    B, T, d, L = 3, 6, 3, 4
    src = rng.normal(size=(B, T, d))
    times = np.cumsum(rng.integers(1, 900, size=(B, T)), axis=1).astype(float)
    mb = mem.write_memory_batch(ag.constant(src), times, lengths, L)
    for b, n in enumerate(lengths):
        hist = [BehaviorEmbedding(ag.constant(src[b, s:s + 1]), times[b, s]) for s in range(n)]
        m = mem.write_memory(hist, L)
        np.testing.assert_array_equal(mb.slots.values[b], m.slots.values)
        np.testing.assert_array_equal(mb.times[b], m.times)
        np.testing.assert_array_equal(mb.mask[b], m.mask)


# --- reader -----------------------------------------------------------------

def test_read_single_slot_is_projected_value(rng):
    p = _hops(rng)
    h = _history(rng, 1)
    m = mem.write_memory(h, 4)
    o = mem.read_once(1, p, ag.constant(rng.normal(size=(1, 3))), 9e4, m).values
    np.testing.assert_allclose(o, h[0].vector.values @ p.W_V.values, rtol=1e-15)


def test_read_identity_projections_equal_slots(rng):
    p = _hops(rng, d=3, L=2)
    for w in [p.W_K, p.W_V] + p.W_Q:
        w.values[...] = np.eye(3)
    v = rng.normal(size=(1, 3))
    hist = [BehaviorEmbedding(ag.constant(v), 10.0), BehaviorEmbedding(ag.constant(v), 20.0)]
    o = mem.read_once(1, p, ag.constant(rng.normal(size=(1, 3))), 30.0, mem.write_memory(hist, 2),
                      gate_override=1.0)
    np.testing.assert_allclose(o.values, v, rtol=1e-15)


def test_read_is_composition_of_oracles(rng):
    p = _hops(rng, L=3)
    m = mem.write_memory(_history(rng, 3), 3)
    c = ag.constant(rng.normal(size=(1, 3)))
    got = mem.read_once(2, p, c, 2e4, m).values
    s = m.slots.values
    want = at.time_attention(p.gate, ag.constant(c.values @ p.W_Q[1].values), [2e4],
                             ag.constant(s @ p.W_K.values), m.times, ag.constant(s @ p.W_V.values), m.mask).values
    assert np.array_equal(got, want)


def test_read_fully_masked_memory(rng):
    p = _hops(rng)
    with pytest.raises(DegenerateRowError):
        mem.read_once(1, p, ag.constant(np.ones((1, 3))), 1.0, mem.write_memory([], 4, d=3))


def test_multi_hop_zero_is_identity(rng):
    p = _hops(rng)
    c = ag.constant(rng.normal(size=(1, 3)))
    assert mem.read_multi_hop(p, c, 1.0, mem.write_memory(_history(rng, 2), 4), 0) is c


def test_multi_hop_fold(rng):
    p = _hops(rng)
    m = mem.write_memory(_history(rng, 5), 4)
    c0 = ag.constant(rng.normal(size=(1, 3)))
    t = 5e4
    c = c0
    for k in (1, 2, 3):
        c = ag.add(c, mem.read_once(k, p, c, t, m))
    assert np.array_equal(mem.read_multi_hop(p, c0, t, m, 3).values, c.values)
    one = ag.add(c0, mem.read_once(1, p, c0, t, m))
    assert np.array_equal(mem.read_multi_hop(p, c0, t, m, 1).values, one.values)


def test_residual_property(rng):
    p = _hops(rng)
    m = mem.write_memory(_history(rng, 5), 4)
    c0 = ag.constant(rng.normal(size=(1, 3)))
    for k in (1, 2, 3):
        trace = []
        hi = mem.read_multi_hop(p, c0, 6e4, m, k, trace=trace).values
        lo = mem.read_multi_hop(p, c0, 6e4, m, k - 1).values
        assert np.array_equal(hi, lo + trace[-1].values)


def test_hop_count_errors(rng):
    p = _hops(rng, hops=2)
    m = mem.write_memory(_history(rng, 2), 4)
    c = ag.constant(np.ones((1, 3)))
    with pytest.raises(ContractError):
        mem.read_multi_hop(p, c, 1e4, m, -1)
    with pytest.raises(ContractError):
        mem.read_multi_hop(p, c, 1e4, m, 3)


def test_masked_slot_perturbation_changes_nothing(rng):
    p = _hops(rng, L=5)
    m = mem.write_memory(_history(rng, 3), 5)
    c = ag.constant(rng.normal(size=(1, 3)))
    base = mem.read_multi_hop(p, c, 1e5, m, 3).values
    slots = m.slots.values.copy()
    times = m.times.copy()
    slots[3:] = rng.normal(scale=100.0, size=(2, 3))
    times[3:] = [1.0, 7e4]
    perturbed = mem.MemoryState(ag.constant(slots), times, m.mask)
    assert np.array_equal(mem.read_multi_hop(p, c, 1e5, perturbed, 3).values, base)


@pytest.mark.parametrize("hops", [1, 2, 3])
def test_key_value_projections_receive_one_push_per_hop(rng, hops):
    p = _hops(rng)
    m = mem.write_memory(_history(rng, 3), 4)
    with ag.Tape() as tape:
        loss = ag.sum_all(mem.read_multi_hop(p, ag.constant(rng.normal(size=(1, 3))), 1e4, m, hops))
    ag.backward(tape, loss)
    assert tape.contributions[id(p.W_K)] == hops
    assert tape.contributions[id(p.W_V)] == hops
    for k in range(hops):
        assert tape.contributions[id(p.W_Q[k])] == 1


def test_reader_gradients(rng):
    p = _hops(rng, hops=2)
    src = ag.parameter(rng.normal(size=(1, 3, 3)))
    times = np.array([[100.0, 900.0, 4000.0]])
    c = ag.parameter(rng.normal(size=(1, 1, 3)))
    w = ag.constant(rng.normal(size=(1, 1, 3)))

    def f(_):
        m = mem.write_memory_batch(src, times, np.array([3]), 4)
        # gaps in hours keep the interval gate away from saturation, where
        # tiny gradients make the relative error round-off dominated
        return ag.sum_all(ag.mul(mem.read_multi_hop(p, c, np.array([5000.0]), m, 2, time_divisor=3600.0), w))

    for t in [src, c] + list(p.parameters().values()):
        assert ag.grad_check(f, t, eps=1e-4) < 1e-5, t.name
