import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from workmem import tensor as T
from workmem.attention import (AttentionController, AttentionTrace, HeadBank, TransitionNet,
                               WorkingMemoryBuffer, dump_trace, load_trace, run_hops,
                               scaled_dot_attention)
from workmem.encoder import MemoryBank
from workmem.tensor import ContractError, Tensor


def bank_of(mem, u, mask=None):
    mem = np.asarray(mem, dtype=np.float64)
    if mask is None:
        mask = np.ones(mem.shape[:2], dtype=bool)
    return MemoryBank(Tensor(mem), mask, Tensor(np.asarray(u, dtype=np.float64)))


# ---------------------------------------------------------- single head

def test_single_memory_gets_all_weight():
    rng = np.random.default_rng(0)
    m = rng.normal(size=(1, 5))
    h, a = scaled_dot_attention(Tensor(rng.normal(size=5)), Tensor(m), Tensor(rng.normal(size=(5, 5))))
    assert a.data.tolist() == [1.0]
    np.testing.assert_array_equal(h.data, m[0])


def test_equal_projections_give_uniform_mean():
    rng = np.random.default_rng(1)
    W = np.zeros((4, 4))
    W[0, 0] = 1.0
    m = rng.normal(size=(3, 4))
    m[:, 0] = 0.7  # identical projections
    h, a = scaled_dot_attention(Tensor(rng.normal(size=4)), Tensor(m), Tensor(W))
    np.testing.assert_allclose(a.data, [1 / 3] * 3, rtol=1e-12)
    np.testing.assert_allclose(h.data, m.mean(axis=0), rtol=1e-12)


def test_scalar_loop_oracle():
    rng = np.random.default_rng(2)
    d, L = 4, 2
    u = rng.normal(scale=0.3, size=d)
    m = rng.normal(scale=0.3, size=(L, d))
    W = rng.normal(scale=0.3, size=(d, d))
    logits = []
    for i in range(L):
        proj = [sum(W[e, k] * m[i, k] for k in range(d)) for e in range(d)]
        logits.append(sum(u[e] * proj[e] for e in range(d)) / math.sqrt(d))
    top = max(logits)
    ex = [math.exp(x - top) for x in logits]
    alpha = [x / sum(ex) for x in ex]
    h = [sum(alpha[i] * m[i, k] for i in range(L)) for k in range(d)]
    got_h, got_a = scaled_dot_attention(Tensor(u), Tensor(m), Tensor(W))
    np.testing.assert_allclose(got_a.data, alpha, rtol=0, atol=1e-10)
    np.testing.assert_allclose(got_h.data, h, rtol=0, atol=1e-10)


def test_empty_bank_rejected():
    with pytest.raises(ContractError):
        scaled_dot_attention(Tensor(np.zeros(3)), Tensor(np.zeros((0, 3))), Tensor(np.eye(3)))
    heads = HeadBank(3, 2, np.random.default_rng(0), np.float64)
    with pytest.raises(ContractError):
        heads.read(Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 2, 3))), np.zeros((1, 2), dtype=bool))


# ----------------------------------------------------------- multi head

def test_one_head_identity_output():
    rng = np.random.default_rng(3)
    heads = HeadBank(5, 1, rng, np.float64)
    heads.W_o.data = np.eye(5)
    u, m = rng.normal(size=5), rng.normal(size=(4, 5))
    o, _ = heads.read(Tensor(u[None]), Tensor(m[None]), np.ones((1, 4), dtype=bool))
    h, _ = scaled_dot_attention(Tensor(u), Tensor(m), Tensor(heads.W_m.data[0]))
    np.testing.assert_allclose(o.data[0], h.data, atol=1e-12)


def test_identical_heads_with_block_averaging():
    rng = np.random.default_rng(4)
    d, S = 3, 4
    heads = HeadBank(d, S, rng, np.float64)
    heads.W_m.data[:] = heads.W_m.data[0]
    heads.W_o.data = np.vstack([np.eye(d) / S] * S)
    u, m = rng.normal(size=d), rng.normal(size=(5, d))
    o, alpha = heads.read(Tensor(u[None]), Tensor(m[None]), np.ones((1, 5), dtype=bool))
    h, a = scaled_dot_attention(Tensor(u), Tensor(m), Tensor(heads.W_m.data[0]))
    np.testing.assert_allclose(o.data[0], h.data, atol=1e-12)
    for s in range(S):
        np.testing.assert_allclose(alpha[0, s], a.data, atol=1e-12)


def test_batched_masked_read_matches_per_story():
    rng = np.random.default_rng(5)
    d, S = 4, 3
    heads = HeadBank(d, S, rng, np.float64)
    lengths = [2, 5, 1]
    mem = np.zeros((3, 5, d))
    mask = np.zeros((3, 5), dtype=bool)
    for b, n in enumerate(lengths):
        mem[b, :n] = rng.normal(size=(n, d))
        mask[b, :n] = True
    u = rng.normal(size=(3, d))
    o, alpha = heads.read(Tensor(u), Tensor(mem), mask)
    for b, n in enumerate(lengths):
        hs = [scaled_dot_attention(Tensor(u[b]), Tensor(mem[b, :n]), Tensor(heads.W_m.data[s]))[0].data
              for s in range(S)]
        np.testing.assert_allclose(o.data[b], np.concatenate(hs) @ heads.W_o.data, atol=1e-12)
        assert (alpha[b, :, n:] == 0).all()


# -------------------------------------------------------------------- hops

def test_one_hop_never_uses_transition():
    rng = np.random.default_rng(6)
    heads, trans = HeadBank(4, 2, rng, np.float64), TransitionNet(4, 3, rng, np.float64)
    bank = bank_of(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4)))
    buf, _ = run_hops(bank, heads, trans, 1)
    for p in trans.parameters():
        p.data[:] = rng.normal(size=p.shape)
    buf2, _ = run_hops(bank, heads, trans, 1)
    direct, _ = heads.read(bank.question, bank.memories, bank.mask)
    assert len(buf) == 1
    np.testing.assert_array_equal(buf.slots[0].data, direct.data)
    np.testing.assert_array_equal(buf2.slots[0].data, direct.data)


def test_two_hops_manual_composition():
    rng = np.random.default_rng(7)
    heads, trans = HeadBank(4, 2, rng, np.float64), TransitionNet(4, 3, rng, np.float64)
    bank = bank_of(rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4)))
    buf, trace = run_hops(bank, heads, trans, 2)
    o1, _ = heads.read(bank.question, bank.memories, bank.mask)
    W1, b1, W2, b2 = (p.data for p in trans.parameters())
    cond = np.tanh(o1.data @ W1 + b1) @ W2 + b2
    o2, a2 = heads.read(Tensor(cond), bank.memories, bank.mask)
    np.testing.assert_allclose(buf.slots[1].data, o2.data, atol=1e-12)
    np.testing.assert_allclose(trace.weights[:, 1], a2, atol=1e-12)


@pytest.mark.parametrize("L", [1, 3, 30])
@pytest.mark.parametrize("H", [1, 4])
def test_buffer_size_independent_of_story_length(L, H):
    rng = np.random.default_rng(L)
    ctl = AttentionController(6, 2, H, rng, np.float64)
    buf, trace = ctl(bank_of(rng.normal(size=(2, L, 6)), rng.normal(size=(2, 6))))
    assert len(buf) == H
    assert buf.stacked().shape == (2, H, 6)
    assert trace.weights.shape == (2, H, 2, L)


def test_buffer_is_bounded():
    buf = WorkingMemoryBuffer(capacity=1)
    buf.append(Tensor(np.zeros((1, 2))))
    with pytest.raises(ContractError):
        buf.append(Tensor(np.zeros((1, 2))))


def test_zero_hops_rejected():
    with pytest.raises(ContractError):
        AttentionController(4, 2, 0, np.random.default_rng(0))


# -------------------------------------------------------------- properties

@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 8), st.integers(1, 4), st.integers(1, 4))
def test_weights_normalized_and_nonnegative(seed, L, S, H):
    rng = np.random.default_rng(seed)
    ctl = AttentionController(5, S, H, rng, np.float64)
    mask = np.ones((2, L), dtype=bool)
    mask[1, rng.integers(1, L + 1):] = False
    _, trace = ctl(bank_of(rng.normal(scale=3, size=(2, L, 5)), rng.normal(scale=3, size=(2, 5)), mask))
    assert (trace.weights >= 0).all()
    np.testing.assert_allclose(trace.weights.sum(axis=-1), 1.0, atol=1e-6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(2, 7))
def test_memory_permutation_equivariance(seed, L):
    rng = np.random.default_rng(seed)
    d = 4
    W, u, m = rng.normal(size=(d, d)), rng.normal(size=d), rng.normal(size=(L, d))
    perm = rng.permutation(L)
    h, a = scaled_dot_attention(Tensor(u), Tensor(m), Tensor(W))
    hp, ap = scaled_dot_attention(Tensor(u), Tensor(m[perm]), Tensor(W))
    np.testing.assert_allclose(ap.data, a.data[perm], atol=1e-12)
    np.testing.assert_allclose(hp.data, h.data, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 100_000), st.integers(1, 7), st.floats(-1e3, 1e3))
def test_output_is_convex_combination(seed, L, c):
    rng = np.random.default_rng(seed)
    d = 4
    W, u, m = rng.normal(size=(d, d)), rng.normal(size=d), rng.normal(size=(L, d))
    h, _ = scaled_dot_attention(Tensor(u * c), Tensor(m), Tensor(W))
    tol = 1e-12
    assert (h.data >= m.min(axis=0) - tol).all() and (h.data <= m.max(axis=0) + tol).all()


# ------------------------------------------------------------------- trace

def test_trace_records_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    ctl = AttentionController(4, 3, 2, rng, np.float64)
    _, trace = ctl(bank_of(rng.normal(size=(1, 5, 4)), rng.normal(size=(1, 4))))
    text = [f"sentence {i}" for i in range(5)]
    dump_trace(trace.records(text), tmp_path / "t.json")
    back, back_text = load_trace(tmp_path / "t.json")
    assert back_text == text
    np.testing.assert_array_equal(back.weights, trace.weights)
    np.testing.assert_allclose(back.head_sums.sum(axis=-1), 3.0, atol=1e-6)


def test_trace_sample_drops_padding():
    w = np.random.default_rng(0).random((2, 1, 1, 4))
    mask = np.array([[True, True, False, False], [True] * 4])
    t = AttentionTrace(w, mask).sample(0)
    assert t.weights.shape == (1, 1, 1, 2)
