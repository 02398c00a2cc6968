"""Contrastive pair sampling over short-term sequences and the three pair losses.

Positive pairs come from one user's own short-term sequences; negative pairs
join items of two different users in the batch. Each loss term is

    -mean_i log( exp(s(pos_i) / tau) / sum_j exp(s(neg_j) / tau) )

with ``s`` the cosine similarity and the ``M_neg`` negatives shared by every
positive of the same type.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numkit as nk
from .embeddings import PAD, EmbeddingTable

PAIR_TYPES = ("target", "source", "cross")
LOSS_NAMES = {"target": "l_pt", "source": "l_ps", "cross": "l_pc"}


@dataclass
class CrpConfig:
    temperature: float = 0.1
    n_negatives: int = 32
    weight_target: float = 1.0
    weight_source: float = 1.0
    weight_cross: float = 1.0
    use_cross: bool = True
    infonce_denominator: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError(f"temperature must be > 0, got {self.temperature}")
        if self.n_negatives < 1:
            raise ValueError(f"n_negatives must be >= 1, got {self.n_negatives}")
        for name in ("weight_target", "weight_source", "weight_cross"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def weight(self, kind: str) -> float:
        return getattr(self, f"weight_{kind}")

    def active_types(self) -> tuple:
        return PAIR_TYPES if self.use_cross else PAIR_TYPES[:2]


@dataclass
class PairSet:
    """Item-id pairs per type: ``positives[t]`` is (n_t, 2), ``negatives[t]`` is (M_neg, 2).

    For the cross type column 0 holds the target-domain item and column 1 the source item.
    ``pos_users``/``neg_users`` record which batch rows each member came from.
    """

    positives: dict = field(default_factory=dict)
    negatives: dict = field(default_factory=dict)
    pos_users: dict = field(default_factory=dict)
    neg_users: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)

    def counts(self) -> dict:
        out = {}
        for t in PAIR_TYPES:
            out[f"n_pos_{t}"] = int(len(self.positives.get(t, ())))
            out[f"n_neg_{t}"] = int(len(self.negatives.get(t, ())))
        return out


def _pick(rng: np.random.Generator, seq_row: np.ndarray, n: int) -> np.ndarray:
    """Uniformly pick ``n`` distinct valid (non-padding) entries from a right-aligned row."""
    valid = seq_row[seq_row != PAD]
    pos = rng.choice(len(valid), size=n, replace=False)
    return valid[pos]


def sample_pairs(ht: np.ndarray, hs: np.ndarray, config: CrpConfig, seed=None,
                 users: np.ndarray | None = None) -> PairSet:
    """Draw positive and negative pairs from a batch of short-term sequences.

    ``ht``/``hs`` are (batch, len) right-aligned id matrices. Rows belonging to
    the same ``users`` entry are treated as one user (first row kept).
    """
    ht = np.asarray(ht, dtype=np.int64)
    hs = np.asarray(hs, dtype=np.int64)
    if ht.shape[0] != hs.shape[0]:
        raise ValueError(f"HT batch {ht.shape[0]} != HS batch {hs.shape[0]}")
    if users is not None:
        _, first = np.unique(np.asarray(users), return_index=True)
        rows = np.sort(first)
    else:
        rows = np.arange(ht.shape[0])
    ht, hs = ht[rows], hs[rows]
    rng = np.random.default_rng(config.seed if seed is None else seed)
    out = PairSet()
    if len(rows) < 2:
        for t in config.active_types():
            out.skipped[t] = "batch has fewer than 2 users"
        return out

    n_ht = (ht != PAD).sum(1)
    n_hs = (hs != PAD).sum(1)
    seqs = {"target": (ht, ht), "source": (hs, hs), "cross": (ht, hs)}
    pos_ok = {"target": n_ht >= 2, "source": n_hs >= 2, "cross": (n_ht >= 1) & (n_hs >= 1)}
    neg_ok = {"target": (n_ht >= 1, n_ht >= 1), "source": (n_hs >= 1, n_hs >= 1),
              "cross": (n_ht >= 1, n_hs >= 1)}

    for t in config.active_types():
        a_seq, b_seq = seqs[t]
        pos, who = [], []
        for u in np.flatnonzero(pos_ok[t]):
            if t == "cross":
                pos.append((_pick(rng, a_seq[u], 1)[0], _pick(rng, b_seq[u], 1)[0]))
            else:
                pos.append(tuple(_pick(rng, a_seq[u], 2)))
            who.append(rows[u])
        ok1, ok2 = (np.flatnonzero(m) for m in neg_ok[t])
        if len(ok1) == 0 or len(ok2) == 0 or len(np.union1d(ok1, ok2)) < 2 or (
            len(ok1) == 1 and len(ok2) == 1 and ok1[0] == ok2[0]
        ):
            out.skipped[t] = "fewer than 2 distinct users available for negatives"
            continue
        if not pos:
            out.skipped[t] = "no user has enough valid items for a positive pair"
            continue
        neg, neg_who = [], []
        for _ in range(config.n_negatives):
            u1 = ok1[rng.integers(len(ok1))]
            u2 = ok2[rng.integers(len(ok2))]
            while u2 == u1:
                if len(ok2) == 1:
                    u1 = ok1[rng.integers(len(ok1))]
                else:
                    u2 = ok2[rng.integers(len(ok2))]
            neg.append((_pick(rng, a_seq[u1], 1)[0], _pick(rng, b_seq[u2], 1)[0]))
            neg_who.append((rows[u1], rows[u2]))
        out.positives[t] = np.array(pos, dtype=np.int64)
        out.pos_users[t] = np.array(who, dtype=np.int64)
        out.negatives[t] = np.array(neg, dtype=np.int64)
        out.neg_users[t] = np.array(neg_who, dtype=np.int64)
    return out


def _logsumexp(x: nk.Tensor) -> nk.Tensor:
    m = float(x.data.max())
    return nk.add(nk.log(nk.sum(nk.exp(nk.sub(x, m)))), m)


def pair_term(pos_sim: nk.Tensor, neg_sim: nk.Tensor, temperature: float,
              infonce_denominator: bool = False) -> nk.Tensor:
    """One contrastive term from positive and negative cosine similarities."""
    pos = nk.scale(pos_sim, 1.0 / temperature)
    neg = nk.scale(neg_sim, 1.0 / temperature)
    if not infonce_denominator:
        return nk.sub(_logsumexp(neg), nk.mean(pos))
    # per-positive denominator exp(pos_i) + sum_j exp(neg_j)
    lse_neg = _logsumexp(neg)
    m = np.maximum(pos.data, lse_neg.data)
    stacked = nk.add(nk.exp(nk.sub(pos, m)), nk.exp(nk.sub(lse_neg, m)))
    denom = nk.add(nk.log(stacked), m)
    return nk.mean(nk.sub(denom, pos))


def crp_loss(pairs: PairSet, table: EmbeddingTable, config: CrpConfig):
    """Weighted sum of the per-type terms.

    Returns ``(loss, breakdown)`` where ``breakdown`` maps ``l_pt``/``l_ps``/``l_pc``
    to floats and ``skipped`` to the types that contributed nothing.
    """
    total = None
    breakdown = {name: 0.0 for name in LOSS_NAMES.values()}
    skipped = dict(pairs.skipped)
    for t in config.active_types():
        if t not in pairs.positives or len(pairs.positives[t]) == 0:
            skipped.setdefault(t, "empty population")
            continue
        p, n = pairs.positives[t], pairs.negatives[t]
        pos_sim = nk.cosine_similarity(table.lookup(p[:, 0]), table.lookup(p[:, 1]))
        neg_sim = nk.cosine_similarity(table.lookup(n[:, 0]), table.lookup(n[:, 1]))
        term = pair_term(pos_sim, neg_sim, config.temperature, config.infonce_denominator)
        breakdown[LOSS_NAMES[t]] = term.item()
        weighted = nk.scale(term, config.weight(t))
        total = weighted if total is None else nk.add(total, weighted)
    if total is None:
        total = nk.constant(0.0)
    breakdown["skipped"] = sorted(skipped)
    return total, breakdown
