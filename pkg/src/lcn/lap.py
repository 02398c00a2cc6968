"""Three cascading attention levels over the lifelong source-domain sequence.

CSA scores every item by a plain inner product with the candidate and keeps
the top ``k1``; MSA re-scores those with context-aware projections and keeps
the top ``k2``; FSA runs multi-head attention plus a feed-forward layer over
the survivors. The three interest vectors are concatenated.

Top-k selection is a constant during differentiation. Items dropped by a
level still get gradient through that level's own pooled vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numkit as nk
from .embeddings import PAD, EmbeddingTable, SequenceBatch


@dataclass
class LapConfig:
    k1: int = 200
    k2: int = 50
    heads: int = 4
    inner_dim: int = 64
    ffn_hidden: int = 128
    ffn_out: int = 64
    use_msa: bool = True
    use_fsa: bool = True
    normalize_pool_scores: bool = False
    fsa_pooled_heads: bool = False

    def __post_init__(self):
        if self.heads < 1 or self.inner_dim < 1 or self.ffn_hidden < 1 or self.ffn_out < 1:
            raise ValueError("heads, inner_dim, ffn_hidden and ffn_out must be positive")
        if self.k1 < 1 or self.k2 < 1:
            raise ValueError(f"k1 and k2 must be positive, got {self.k1}, {self.k2}")
        if self.use_msa and self.use_fsa and self.k2 > self.k1:
            raise ValueError(f"k2 ({self.k2}) must not exceed k1 ({self.k1})")

    def validate_length(self, max_len: int) -> None:
        if self.use_msa and self.k1 > max_len:
            raise ValueError(f"k1 ({self.k1}) exceeds the lifelong sequence length {max_len}")
        if self.use_fsa and self.k2 > max_len:
            raise ValueError(f"k2 ({self.k2}) exceeds the lifelong sequence length {max_len}")

    def output_dim(self, emb_dim: int) -> int:
        return emb_dim + (self.inner_dim if self.use_msa else 0) + (self.ffn_out if self.use_fsa else 0)


class LapParams:
    """Attention and feed-forward weights, registered under ``prefix`` in the graph.

    Projections follow the ``W x`` convention: ``msa_wq`` is (inner_dim, emb_dim),
    ``msa_wk``/``msa_wv`` are (inner_dim, emb_dim + ctx_dim); the FSA projections
    stack the heads row-wise. The FFN uses row vectors: ``h = relu(x w1 + b1) w2 + b2``.
    """

    def __init__(self, graph: nk.Graph, emb_dim: int, ctx_dim: int, config: LapConfig,
                 seed=0, prefix: str = "lap"):
        rng = np.random.default_rng(seed)
        d, l = config.inner_dim, config.heads
        key_dim = emb_dim + ctx_dim
        self.emb_dim, self.ctx_dim = emb_dim, ctx_dim
        self.msa_wq = graph.add(f"{prefix}.msa_wq", nk.xavier_init((d, emb_dim), rng))
        self.msa_wk = graph.add(f"{prefix}.msa_wk", nk.xavier_init((d, key_dim), rng))
        self.msa_wv = graph.add(f"{prefix}.msa_wv", nk.xavier_init((d, key_dim), rng))
        self.fsa_wq = graph.add(f"{prefix}.fsa_wq", nk.xavier_init((l * d, emb_dim), rng))
        self.fsa_wk = graph.add(f"{prefix}.fsa_wk", nk.xavier_init((l * d, key_dim), rng))
        self.fsa_wv = graph.add(f"{prefix}.fsa_wv", nk.xavier_init((l * d, key_dim), rng))
        self.w1 = graph.add(f"{prefix}.ffn_w1", nk.xavier_init((l * d, config.ffn_hidden), rng))
        self.b1 = graph.add(f"{prefix}.ffn_b1", np.zeros(config.ffn_hidden))
        self.w2 = graph.add(f"{prefix}.ffn_w2", nk.xavier_init((config.ffn_hidden, config.ffn_out), rng))
        self.b2 = graph.add(f"{prefix}.ffn_b2", np.zeros(config.ffn_out))


@dataclass
class LevelOutput:
    """``scores`` are raw per-position scores (-inf where masked); for FSA they are the
    per-head softmax weights, shape (batch, heads, len). ``selected`` indexes this
    level's input and is ordered best-first; ``selected_mask`` marks real items."""

    scores: np.ndarray
    ir: nk.Tensor
    selected: np.ndarray | None = None
    selected_mask: np.ndarray | None = None


def top_k(scores: np.ndarray, mask: np.ndarray, recency: np.ndarray, k: int):
    """Indices of the ``k`` best valid entries per row, ties going to the higher ``recency``.

    Returns ``(index, valid)``, both (batch, min(k, len)); rows with fewer than
    ``k`` valid entries are filled with masked positions flagged invalid.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    k = min(int(k), scores.shape[-1])
    key = np.where(mask, -scores, np.inf)
    order = np.lexsort((-np.asarray(recency), key), axis=-1)[..., :k]
    valid = np.take_along_axis(mask, order, axis=-1)
    return order, valid


def _masked_pool(weights: nk.Tensor, values: nk.Tensor, mask: np.ndarray,
                 normalize: bool) -> nk.Tensor:
    """sum_k w_k v_k over valid positions; with ``normalize`` the weights are softmaxed first."""
    if normalize:
        w = nk.softmax(weights, mask)
    else:
        w = nk.mul(weights, mask.astype(np.float64))
    return nk.sum(nk.mul(nk.expand_dims(w, -1), values), axis=-2)


def csa(seq_emb: nk.Tensor, mask: np.ndarray, cand: nk.Tensor, k: int,
        recency: np.ndarray | None = None, normalize: bool = False) -> LevelOutput:
    """Inner-product scores against the candidate, raw-score pooling, top-k selection."""
    if seq_emb.shape[-1] != cand.shape[-1]:
        raise nk.ShapeError(f"csa: sequence dim {seq_emb.shape} vs candidate {cand.shape}")
    mask = np.asarray(mask, dtype=bool)
    if recency is None:
        recency = np.broadcast_to(np.arange(mask.shape[1]), mask.shape)
    r = nk.inner(seq_emb, nk.expand_dims(cand, 1))
    ir = _masked_pool(r, seq_emb, mask, normalize)
    scores = np.where(mask, r.data, -np.inf)
    sel, valid = top_k(r.data, mask, recency, k)
    return LevelOutput(scores=scores, ir=ir, selected=sel, selected_mask=valid)


def _project(x: nk.Tensor, w: nk.Tensor) -> nk.Tensor:
    return nk.matmul(x, nk.transpose(w))


def msa(keys_in: nk.Tensor, mask: np.ndarray, cand: nk.Tensor, params: LapParams, k: int,
        recency: np.ndarray | None = None, normalize: bool = False) -> LevelOutput:
    """Projected scores ``<Wq e_v, Wk x_k> / sqrt(d)``, raw-score pooling of ``Wv x_k``."""
    mask = np.asarray(mask, dtype=bool)
    if recency is None:
        recency = np.broadcast_to(np.arange(mask.shape[1]), mask.shape)
    d = params.msa_wq.shape[0]
    q = _project(cand, params.msa_wq)
    keys = _project(keys_in, params.msa_wk)
    values = _project(keys_in, params.msa_wv)
    r = nk.scale(nk.inner(keys, nk.expand_dims(q, 1)), 1.0 / np.sqrt(d))
    ir = _masked_pool(r, values, mask, normalize)
    scores = np.where(mask, r.data, -np.inf)
    sel, valid = top_k(r.data, mask, recency, k)
    return LevelOutput(scores=scores, ir=ir, selected=sel, selected_mask=valid)


def fsa_logits(keys_in: nk.Tensor, cand: nk.Tensor, params: LapParams, heads: int) -> tuple:
    """Per-head attention logits (batch, heads, len) and values (batch, heads, len, d)."""
    b, n = keys_in.shape[0], keys_in.shape[1]
    d = params.fsa_wq.shape[0] // heads
    q = nk.reshape(_project(cand, params.fsa_wq), (b, heads, 1, d))
    keys = nk.swapaxes(nk.reshape(_project(keys_in, params.fsa_wk), (b, n, heads, d)), 1, 2)
    values = nk.swapaxes(nk.reshape(_project(keys_in, params.fsa_wv), (b, n, heads, d)), 1, 2)
    logits = nk.scale(nk.inner(keys, q), 1.0 / np.sqrt(d))
    return logits, values


def _ffn(x: nk.Tensor, params: LapParams) -> nk.Tensor:
    hidden = nk.relu(nk.add(nk.matmul(x, params.w1), params.b1))
    return nk.add(nk.matmul(hidden, params.w2), params.b2)


def fsa(keys_in: nk.Tensor, mask: np.ndarray, cand: nk.Tensor, params: LapParams,
        config: LapConfig) -> LevelOutput:
    """Multi-head attention and FFN over the surviving items, mean over valid positions.

    By default each position keeps its weighted value ``a_hk * V_hk``; heads are
    concatenated per position, passed through the FFN, then averaged. With
    ``fsa_pooled_heads`` each head is summed over positions first and the FFN runs once.
    """
    mask = np.asarray(mask, dtype=bool)
    b, n = keys_in.shape[0], keys_in.shape[1]
    heads = config.heads
    d = params.fsa_wq.shape[0] // heads
    logits, values = fsa_logits(keys_in, cand, params, heads)
    attn = nk.softmax(logits, mask[:, None, :])
    weighted = nk.mul(nk.expand_dims(attn, -1), values)
    if config.fsa_pooled_heads:
        per_head = nk.sum(weighted, axis=2)
        ir = _ffn(nk.reshape(per_head, (b, heads * d)), params)
        return LevelOutput(scores=attn.data, ir=ir)
    per_pos = nk.reshape(nk.swapaxes(weighted, 1, 2), (b, n, heads * d))
    h = _ffn(per_pos, params)
    count = np.maximum(mask.sum(1), 1).astype(np.float64)
    weights = mask / count[:, None]
    ir = nk.sum(nk.mul(h, weights[..., None]), axis=1)
    return LevelOutput(scores=attn.data, ir=ir)


def embed_with_context(item_table: EmbeddingTable, ctx_tables: list, ids: np.ndarray,
                       ctx: np.ndarray | None) -> tuple:
    """Item embeddings and ``item || context`` key inputs for the given id matrix."""
    items = item_table.lookup(ids)
    if not ctx_tables:
        return items, items
    parts = [items] + [t.lookup(ctx[..., j]) for j, t in enumerate(ctx_tables)]
    return items, nk.concat(parts, axis=-1)


@dataclass
class LapResult:
    output: nk.Tensor
    csa: LevelOutput
    msa: LevelOutput | None
    fsa: LevelOutput | None
    msa_positions: np.ndarray | None
    fsa_positions: np.ndarray | None


def _take(a: np.ndarray, idx: np.ndarray) -> np.ndarray:
    idx = idx.reshape(idx.shape + (1,) * (a.ndim - idx.ndim))
    return np.take_along_axis(a, idx, axis=1)


def lap_forward(item_table: EmbeddingTable, ctx_tables: list, seq: SequenceBatch,
                cand: nk.Tensor, params: LapParams, config: LapConfig) -> LapResult:
    """Run CSA -> MSA -> FSA and concatenate ``IR_CSA || IR_MSA || IR_FSA``.

    ``msa_positions``/``fsa_positions`` hold the original sequence columns fed to
    each level (padding-flagged entries have id 0).
    """
    mask = seq.mask
    recency = seq.positions
    emb = item_table.lookup(seq.ids)
    first_k = config.k1 if config.use_msa else config.k2
    lvl1 = csa(emb, mask, cand, first_k, recency, config.normalize_pool_scores)
    parts = [lvl1.ir]
    lvl2 = lvl3 = None
    pos2 = pos3 = None
    pool = lvl1.selected
    if config.use_msa:
        pos2 = lvl1.selected
        ids2 = _take(seq.ids, pos2)
        ctx2 = None if seq.ctx is None else _take(seq.ctx, pos2)
        _, keys2 = embed_with_context(item_table, ctx_tables, ids2, ctx2)
        lvl2 = msa(keys2, ids2 != PAD, cand, params, config.k2, _take(recency, pos2),
                   config.normalize_pool_scores)
        parts.append(lvl2.ir)
        pool = _take(pos2, lvl2.selected)
    if config.use_fsa:
        pos3 = pool
        ids3 = _take(seq.ids, pos3)
        ctx3 = None if seq.ctx is None else _take(seq.ctx, pos3)
        _, keys3 = embed_with_context(item_table, ctx_tables, ids3, ctx3)
        lvl3 = fsa(keys3, ids3 != PAD, cand, params, config)
        parts.append(lvl3.ir)
    out = nk.concat(parts, axis=-1) if len(parts) > 1 else parts[0]
    return LapResult(out, lvl1, lvl2, lvl3, pos2, pos3)


# ---------------------------------------------------------------- analysis

def consistency_overlap(item_table: EmbeddingTable, ctx_tables: list, seq: SequenceBatch,
                        cand: nk.Tensor, params: LapParams, config: LapConfig,
                        top: int = 50) -> np.ndarray:
    """Per-row fraction of the final level's top items that the cascade also finds.

    The reference set ranks the whole sequence with FSA logits (mean softmax weight
    over heads). The cascade set is the top ``n`` by MSA score inside the CSA top-``k1``
    pool, ``n = min(top, valid length)``; with MSA disabled it is CSA's own top ``n``.
    """
    mask = seq.mask
    recency = seq.positions
    lengths = mask.sum(1)
    emb, keys = embed_with_context(item_table, ctx_tables, seq.ids, seq.ctx)
    logits, _ = fsa_logits(keys, cand, params, config.heads)
    weights = nk.softmax(logits, mask[:, None, :]).data.mean(axis=1)
    n_top = np.minimum(top, lengths)
    real, _ = top_k(weights, mask, recency, top)

    r = (emb.data * cand.data[:, None, :]).sum(-1)
    if config.use_msa:
        pool, _ = top_k(r, mask, recency, config.k1)
        q = cand.data @ params.msa_wq.data.T
        pool_keys = _take(keys.data, pool) @ params.msa_wk.data.T
        msa_scores = (pool_keys * q[:, None, :]).sum(-1) / np.sqrt(params.msa_wq.shape[0])
        pool_mask = _take(mask, pool)
        inner_idx, _ = top_k(msa_scores, pool_mask, _take(recency, pool), top)
        test = _take(pool, inner_idx)
    else:
        test, _ = top_k(r, mask, recency, top)

    out = np.zeros(len(lengths))
    for i, n in enumerate(n_top):
        if n == 0:
            out[i] = np.nan
            continue
        real_set = set(real[i, :n].tolist())
        test_set = set(test[i, :n].tolist()) & set(np.flatnonzero(mask[i]).tolist())
        out[i] = len(real_set & test_set) / n
    return out


def overlap_fraction(real: set, test: set, n: int) -> float:
    return len(set(real) & set(test)) / n


def score_concentration(scores: np.ndarray, mask: np.ndarray, top_frac: float = 0.2) -> np.ndarray:
    """Share of positive score mass held by the top ``top_frac`` of valid items, per row."""
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    out = np.full(scores.shape[0], np.nan)
    for i in range(scores.shape[0]):
        s = np.clip(scores[i][mask[i]], 0.0, None)
        if s.size == 0 or s.sum() <= 0:
            continue
        n = max(1, int(np.ceil(top_frac * s.size)))
        out[i] = np.sort(s)[::-1][:n].sum() / s.sum()
    return out
