import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check_all
from lcn import numkit as nk
from lcn.embeddings import EmbeddingTable, SequenceBatch
from lcn.lap import (LapConfig, LapParams, consistency_overlap, csa, fsa, lap_forward, msa,
                     overlap_fraction, score_concentration, top_k)


def _setup(n_items=40, emb=8, ctx_sizes=(5, 4), config=None, seed=0):
    g = nk.Graph()
    items = EmbeddingTable(g, "item", n_items, emb, seed)
    ctx = [EmbeddingTable(g, f"ctx{j}", s, emb, seed + j + 1) for j, s in enumerate(ctx_sizes)]
    config = config or LapConfig(k1=6, k2=3, heads=2, inner_dim=8, ffn_hidden=8, ffn_out=8)
    params = LapParams(g, emb, emb * len(ctx), config, seed + 9)
    return g, items, ctx, params, config


def _random_seq(rng, batch, length, n_items, ctx_sizes=(5, 4), min_len=1):
    ids = np.zeros((batch, length), dtype=np.int64)
    ctx = np.zeros((batch, length, len(ctx_sizes)), dtype=np.int64)
    for i in range(batch):
        n = int(rng.integers(min_len, length + 1))
        ids[i, length - n:] = rng.integers(1, n_items, size=n)
        for j, s in enumerate(ctx_sizes):
            ctx[i, length - n:, j] = rng.integers(1, s, size=n)
    return SequenceBatch(ids, ctx)


# ---------------------------------------------------------------- hand values

def test_csa_hand_example():
    out = csa(nk.constant([[[1.0, 2.0]]]), np.array([[True]]), nk.constant([[3.0, 4.0]]), k=1)
    assert out.scores[0, 0] == 11.0
    np.testing.assert_array_equal(out.ir.data, [[11.0, 22.0]])


def test_msa_scalar_example():
    g = nk.Graph()
    cfg = LapConfig(k1=1, k2=1, heads=1, inner_dim=4)
    p = LapParams(g, 1, 0, cfg)
    p.msa_wq.data[:] = [[2.0], [0], [0], [0]]
    p.msa_wk.data[:] = [[3.0], [0], [0], [0]]
    out = msa(nk.constant([[[1.0]]]), np.array([[True]]), nk.constant([[1.0]]), p, k=1)
    assert out.scores[0, 0] == pytest.approx(3.0, abs=1e-15)


def _fsa_by_hand(x, v, wq, wk, wv, w1, b1, w2, b2):
    """Single head, explicit loops."""
    q = wq @ v
    keys = [wk @ xk for xk in x]
    vals = [wv @ xk for xk in x]
    d = len(q)
    logits = [sum(q[i] * k[i] for i in range(d)) / np.sqrt(d) for k in keys]
    mx = max(logits)
    ex = [np.exp(s - mx) for s in logits]
    a = [e / sum(ex) for e in ex]
    outs = []
    for ak, vk in zip(a, vals):
        h = np.maximum(0.0, (ak * vk) @ w1 + b1)
        outs.append(h @ w2 + b2)
    return sum(outs) / len(outs), a


def test_fsa_hand_fixture_single_head_two_items():
    g = nk.Graph()
    cfg = LapConfig(k1=2, k2=2, heads=1, inner_dim=2, ffn_hidden=3, ffn_out=2)
    p = LapParams(g, 2, 0, cfg)
    p.fsa_wq.data[:] = [[1.0, 0.5], [-0.3, 2.0]]
    p.fsa_wk.data[:] = [[0.7, -1.0], [0.2, 0.4]]
    p.fsa_wv.data[:] = [[1.5, 0.0], [-0.5, 1.0]]
    p.w1.data[:] = [[1.0, -2.0, 0.5], [0.3, 0.8, -1.0]]
    p.b1.data[:] = [0.1, 0.2, -0.1]
    p.w2.data[:] = [[1.0, 0.0], [0.5, -1.0], [2.0, 1.0]]
    p.b2.data[:] = [0.05, -0.05]
    x = np.array([[0.4, -1.2], [2.0, 0.3]])
    v = np.array([1.0, -0.5])
    out = fsa(nk.constant(x[None]), np.array([[True, True]]), nk.constant(v[None]), p, cfg)
    expected, weights = _fsa_by_hand(x, v, p.fsa_wq.data, p.fsa_wk.data, p.fsa_wv.data,
                                     p.w1.data, p.b1.data, p.w2.data, p.b2.data)
    np.testing.assert_allclose(out.ir.data[0], expected, rtol=0, atol=1e-9)
    np.testing.assert_allclose(out.scores[0, 0], weights, rtol=0, atol=1e-12)


def test_fsa_single_item_identity_ffn_returns_value():
    g = nk.Graph()
    cfg = LapConfig(k1=1, k2=1, heads=1, inner_dim=3, ffn_hidden=3, ffn_out=3)
    p = LapParams(g, 3, 0, cfg)
    p.fsa_wv.data[:] = np.eye(3)
    p.w1.data[:] = np.eye(3)
    p.w2.data[:] = np.eye(3)
    x = np.array([[[0.5, 2.0, 1.0]]])
    out = fsa(nk.constant(x), np.array([[True]]), nk.constant([[1.0, -1.0, 0.3]]), p, cfg)
    assert out.scores[0, 0, 0] == 1.0
    np.testing.assert_allclose(out.ir.data[0], x[0, 0], atol=1e-15)


@pytest.mark.parametrize("use_msa,use_fsa", [(True, True), (True, False), (False, True), (False, False)])
def test_output_dim(use_msa, use_fsa):
    cfg = LapConfig(k1=6, k2=3, heads=2, inner_dim=5, ffn_hidden=8, ffn_out=7,
                    use_msa=use_msa, use_fsa=use_fsa)
    g, items, ctx, params, cfg = _setup(config=cfg)
    seq = _random_seq(np.random.default_rng(0), 3, 12, 40)
    res = lap_forward(items, ctx, seq, items.lookup(np.array([1, 2, 3])), params, cfg)
    assert res.output.shape == (3, cfg.output_dim(8))
    assert cfg.output_dim(8) == 8 + 5 * use_msa + 7 * use_fsa


def test_zero_candidate_falls_back_to_recency():
    seq = nk.constant(np.random.default_rng(0).normal(size=(1, 6, 4)))
    out = csa(seq, np.ones((1, 6), dtype=bool), nk.constant(np.zeros((1, 4))), k=3)
    assert np.all(out.scores == 0) and np.all(out.ir.data == 0)
    assert out.selected[0].tolist() == [5, 4, 3]


def test_identical_items_keep_most_recent():
    v = np.array([0.3, -0.2, 0.9])
    seq = nk.constant(np.tile(v, (1, 10, 1)))
    out = csa(seq, np.ones((1, 10), dtype=bool), nk.constant(v[None]), k=4)
    assert np.all(out.scores == v @ v)
    assert sorted(out.selected[0].tolist()) == [6, 7, 8, 9]


def test_validate_length():
    with pytest.raises(ValueError):
        LapConfig(k1=10, k2=20)
    with pytest.raises(ValueError):
        LapConfig(k1=100, k2=10).validate_length(50)


# ---------------------------------------------------------------- selection oracle

def _oracle_top(scores, mask, k):
    cands = [(-s, -j, j) for j, (s, m) in enumerate(zip(scores, mask)) if m]
    return [j for _, _, j in sorted(cands)[:k]]


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 1000), st.integers(1, 300), st.integers(0, 2**31 - 1), st.booleans())
def test_top_k_matches_full_sort_oracle(length, k, seed, ties):
    rng = np.random.default_rng(seed)
    scores = rng.integers(0, 5, size=length).astype(float) if ties else rng.normal(size=length)
    mask = rng.random(length) < 0.8
    idx, valid = top_k(scores[None], mask[None], np.arange(length)[None], k)
    got = idx[0][valid[0]].tolist()
    assert got == _oracle_top(scores, mask, k)


# ---------------------------------------------------------------- gradients

@pytest.mark.parametrize("flags", [
    {},
    {"normalize_pool_scores": True},
    {"fsa_pooled_heads": True},
    {"use_msa": False},
])
def test_lap_forward_gradients(flags):
    cfg = LapConfig(k1=6, k2=3, heads=2, inner_dim=8, ffn_hidden=8, ffn_out=8, **flags)
    g, items, ctx, params, cfg = _setup(config=cfg, seed=3)
    rng = np.random.default_rng(1)
    seq = _random_seq(rng, 2, 12, 40, min_len=4)
    cand_ids = np.array([5, 17])
    proj = rng.normal(size=cfg.output_dim(8))

    def loss():
        res = lap_forward(items, ctx, seq, items.lookup(cand_ids), params, cfg)
        return nk.sum(nk.mul(nk.relu(res.output) + res.output, proj))

    used = sorted(set(seq.ids[seq.mask].tolist()) | set(cand_ids.tolist()))
    rows = {"item": used}
    for j, t in enumerate(ctx):
        rows[t.name] = sorted(set(seq.ctx[..., j][seq.mask].tolist()))
    errors = check_all(g, loss, rows=rows)
    assert max(errors.values()) < 1e-4, errors


def test_item_dropped_by_msa_still_gets_gradient():
    cfg = LapConfig(k1=2, k2=1, heads=1, inner_dim=4, ffn_hidden=4, ffn_out=4)
    g, items, ctx, params, cfg = _setup(n_items=5, emb=4, ctx_sizes=(), config=cfg, seed=2)
    seq = SequenceBatch(np.array([[1, 2, 3]]))
    cand = np.array([4])
    res = lap_forward(items, ctx, seq, items.lookup(cand), params, cfg)
    msa_pool = set(seq.ids[0, res.msa_positions[0]].tolist())
    fsa_pool = set(seq.ids[0, res.fsa_positions[0]].tolist())
    dropped = sorted(msa_pool - fsa_pool)
    assert len(dropped) == 1
    grads = nk.backward(g, nk.sum(res.output))
    assert np.any(grads["item"][dropped[0]] != 0)


def test_cascade_is_monotone():
    g, items, ctx, params, cfg = _setup()
    seq = _random_seq(np.random.default_rng(5), 8, 12, 40)
    res = lap_forward(items, ctx, seq, items.lookup(np.arange(1, 9)), params, cfg)
    for i in range(8):
        assert set(res.fsa_positions[i].tolist()) <= set(res.msa_positions[i].tolist())
    w = res.fsa.scores
    valid = np.take_along_axis(seq.mask, res.fsa_positions, axis=1)
    np.testing.assert_allclose(w.sum(-1)[valid.any(1)], 1.0, atol=1e-12)
    assert np.all(np.isfinite(res.output.data))


# ---------------------------------------------------------------- padding metamorphic

@pytest.mark.parametrize("flags", [{}, {"normalize_pool_scores": True, "fsa_pooled_heads": True}])
@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), extra=st.integers(1, 30))
def test_padding_changes_nothing(flags, seed, extra):
    cfg = LapConfig(k1=6, k2=3, heads=2, inner_dim=8, ffn_hidden=8, ffn_out=8, **flags)
    g, items, ctx, params, cfg = _setup(config=cfg, seed=seed % 7)
    rng = np.random.default_rng(seed)
    seq = _random_seq(rng, 4, 12, 40)
    cand = items.lookup(rng.integers(1, 40, size=4))
    a = lap_forward(items, ctx, seq, cand, params, cfg)
    b = lap_forward(items, ctx, seq.pad_to(12 + extra), cand, params, cfg)
    assert np.array_equal(a.output.data, b.output.data)
    assert np.array_equal(a.csa.scores, b.csa.scores[:, extra:])
    assert np.all(np.isneginf(b.csa.scores[:, :extra]))
    padded = seq.pad_to(12 + extra).ids
    for pa, pb in ((a.msa_positions, b.msa_positions), (a.fsa_positions, b.fsa_positions)):
        assert np.array_equal(np.take_along_axis(seq.ids, pa, 1), np.take_along_axis(padded, pb, 1))
    assert np.array_equal(a.msa.scores, b.msa.scores)
    assert np.array_equal(a.fsa.scores, b.fsa.scores)


# ---------------------------------------------------------------- consistency

def _identical_rankers(length, k1, top=50, seed=0, min_len=1):
    g = nk.Graph()
    cfg = LapConfig(k1=k1, k2=min(k1, top), heads=1, inner_dim=6, ffn_hidden=4, ffn_out=4)
    items = EmbeddingTable(g, "item", 300, 6, seed)
    ctx = [EmbeddingTable(g, "ctx", 5, 6, seed + 1)]
    params = LapParams(g, 6, 6, cfg, seed + 2)
    params.fsa_wq.data[:] = params.msa_wq.data
    params.fsa_wk.data[:] = params.msa_wk.data
    rng = np.random.default_rng(seed)
    seq = _random_seq(rng, 6, length, 300, ctx_sizes=(5,), min_len=min_len)
    cand = items.lookup(rng.integers(1, 300, size=6))
    return consistency_overlap(items, ctx, seq, cand, params, cfg, top=top)


def test_identical_rankers_full_pool_overlap_is_one():
    out = _identical_rankers(length=120, k1=120, min_len=60)
    np.testing.assert_array_equal(out, 1.0)


def test_short_sequences_use_their_length():
    out = _identical_rankers(length=30, k1=30, min_len=5)
    np.testing.assert_array_equal(out, 1.0)


def test_overlap_in_unit_interval():
    g, items, ctx, params, cfg = _setup()
    seq = _random_seq(np.random.default_rng(2), 10, 12, 40)
    out = consistency_overlap(items, ctx, seq, items.lookup(np.arange(1, 11)), params, cfg, top=5)
    assert np.all((out >= 0) & (out <= 1))


def test_overlap_fraction_examples():
    assert overlap_fraction(set(range(50)), set(range(50, 100)), 50) == 0.0
    assert overlap_fraction(set(range(50)), set(range(25, 75)), 50) == 0.5
    assert overlap_fraction(set(range(50)), set(range(50)), 50) == 1.0


def test_score_concentration():
    scores = np.array([[100.0] + [0.001] * 9, [1.0] * 10])
    out = score_concentration(scores, np.ones_like(scores, dtype=bool))
    assert out[0] == pytest.approx(1.0, abs=1e-3)
    assert out[1] == pytest.approx(0.2)
