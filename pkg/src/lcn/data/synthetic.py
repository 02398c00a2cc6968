"""Planted-cluster synthetic data with known ground truth.

Items of both domains belong to ``n_clusters`` latent clusters. Each user
holds a sparse interest mixture over clusters and one "focus" interest:

* short-term sequences (both domains) mostly follow the focus interest,
* the lifelong source sequence follows the whole mixture, diluted by noise
  events from random clusters that come with short dwell times,
* a candidate from cluster ``c`` is clicked with probability
  ``sigmoid(base_logit + affinity_scale * k * w_u[c] + noise)``.

So the lifelong sequence carries interest signal absent from the short-term
ones, and the dwell context separates real interests from noise.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .dataset import Dataset, Split, Vocab

DAY = 86_400
N_DWELL_BUCKETS = 8


def dwell_bucket(dwell) -> np.ndarray:
    """Map dwell seconds to buckets 1..8 on a log2 grid (0 is padding)."""
    d = np.maximum(np.asarray(dwell, dtype=np.float64), 0.0)
    return 1 + np.clip(np.floor(np.log2(1.0 + d)), 0, N_DWELL_BUCKETS - 1).astype(np.int64)


@dataclass
class SyntheticConfig:
    n_users: int = 2000
    n_items: int = 1000
    n_clusters: int = 20
    interests_per_user: int = 3
    mixture_alpha: float = 1.0
    focus_share: float = 0.8
    lifelong_noise_share: float = 0.4
    short_len: int = 50
    short_events: int = 20
    lifelong_len: int = 500
    lifelong_min: int = 100
    samples_per_user: int = 25
    candidate_interest_share: float = 0.5
    affinity_scale: float = 2.0
    base_logit: float = -2.0
    noise: float = 0.5
    test_fraction: float = 0.2
    n_actions: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        if self.n_clusters > self.n_items:
            raise ValueError(f"n_clusters ({self.n_clusters}) exceeds n_items ({self.n_items})")
        for name in ("n_users", "n_items", "short_len", "lifelong_len", "samples_per_user"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 1 <= self.interests_per_user <= self.n_clusters:
            raise ValueError("interests_per_user must lie in [1, n_clusters]")
        if not 0 <= self.lifelong_min <= self.lifelong_len:
            raise ValueError("lifelong_min must lie in [0, lifelong_len]")
        if not 0 <= self.short_events <= self.short_len:
            raise ValueError("short_events must lie in [0, short_len]")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


def _cluster_members(cluster_of: np.ndarray, ids: np.ndarray, n_clusters: int) -> list:
    return [ids[cluster_of[ids] == c] for c in range(n_clusters)]


def generate_synthetic(config: SyntheticConfig) -> Dataset:
    """Build train/test splits. ``cluster_of`` and per-sample ``true_logit`` are kept as ground truth."""
    cfg = config
    rng = np.random.default_rng(cfg.seed)
    n, c = cfg.n_items, cfg.n_clusters
    target_ids = np.arange(1, n + 1)
    source_ids = np.arange(n + 1, 2 * n + 1)
    cluster_of = np.zeros(2 * n + 1, dtype=np.int64)
    # every cluster gets at least one item per domain
    for ids in (target_ids, source_ids):
        labels = np.concatenate([np.arange(c), rng.integers(0, c, size=n - c)])
        cluster_of[ids] = rng.permutation(labels)
    t_members = _cluster_members(cluster_of, target_ids, c)
    s_members = _cluster_members(cluster_of, source_ids, c)
    category = np.where(np.arange(2 * n + 1) > 0, cluster_of + 1, 0)
    # source categories live in their own block, mirroring a category-based domain split
    category[source_ids] += c

    vocab = Vocab(
        n_items=2 * n + 1,
        target_range=(1, n + 1),
        source_range=(n + 1, 2 * n + 1),
        item_category=category,
        ctx_sizes=(N_DWELL_BUCKETS + 1, cfg.n_actions + 1),
    )

    k = cfg.interests_per_user
    interests = np.stack([rng.choice(c, size=k, replace=False) for _ in range(cfg.n_users)])
    weights = rng.dirichlet(np.full(k, cfg.mixture_alpha), size=cfg.n_users) if k > 1 else np.ones((cfg.n_users, 1))
    mixture = np.zeros((cfg.n_users, c))
    np.put_along_axis(mixture, interests, weights, axis=1)
    focus = np.array([rng.choice(interests[u], p=weights[u]) for u in range(cfg.n_users)])
    profile = np.stack([rng.integers(1, s, size=cfg.n_users) for s in vocab.profile_sizes], axis=1)

    def draw_items(members, clusters):
        return np.array([members[cl][rng.integers(len(members[cl]))] for cl in clusters], dtype=np.int64)

    def short_clusters(u, size):
        from_focus = rng.random(size) < cfg.focus_share
        mix = rng.choice(c, size=size, p=mixture[u])
        return np.where(from_focus, focus[u], mix)

    hist_end = 6 * DAY
    ht = np.zeros((cfg.n_users, cfg.short_len), dtype=np.int64)
    hs = np.zeros((cfg.n_users, cfg.short_len), dtype=np.int64)
    lhs = np.zeros((cfg.n_users, cfg.lifelong_len), dtype=np.int64)
    lhs_ctx = np.zeros((cfg.n_users, cfg.lifelong_len, 2), dtype=np.int64)
    hist_last_ts = np.zeros(cfg.n_users, dtype=np.int64)
    for u in range(cfg.n_users):
        m = cfg.short_events
        if m:
            ht[u, -m:] = draw_items(t_members, short_clusters(u, m))
            hs[u, -m:] = draw_items(s_members, short_clusters(u, m))
        length = int(rng.integers(cfg.lifelong_min, cfg.lifelong_len + 1))
        if length:
            noisy = rng.random(length) < cfg.lifelong_noise_share
            clusters = np.where(noisy, rng.integers(0, c, size=length),
                                rng.choice(c, size=length, p=mixture[u]))
            lhs[u, -length:] = draw_items(s_members, clusters)
            strength = np.where(noisy, 0.0, mixture[u, clusters])
            dwell = rng.lognormal(mean=np.log(2.0) + 4.0 * strength, sigma=0.5)
            lhs_ctx[u, -length:, 0] = dwell_bucket(dwell)
            lhs_ctx[u, -length:, 1] = rng.integers(1, cfg.n_actions + 1, size=length)
        hist_last_ts[u] = hist_end - 1 - int(rng.integers(0, 3600))

    n_samples = cfg.n_users * cfg.samples_per_user
    user = np.repeat(np.arange(cfg.n_users), cfg.samples_per_user)
    from_interest = rng.random(n_samples) < cfg.candidate_interest_share
    cand_cluster = np.where(
        from_interest,
        np.array([rng.choice(c, p=mixture[u]) for u in user]),
        rng.integers(0, c, size=n_samples),
    )
    cand = draw_items(t_members, cand_cluster)
    true_logit = cfg.base_logit + cfg.affinity_scale * k * mixture[user, cand_cluster]
    noisy_logit = true_logit + cfg.noise * rng.standard_normal(n_samples)
    label = (rng.random(n_samples) < 1.0 / (1.0 + np.exp(-noisy_logit))).astype(np.int64)
    ts = hist_end + rng.integers(0, DAY, size=n_samples)

    order = np.lexsort((ts, user))
    cut = hist_end + int(round((1 - cfg.test_fraction) * DAY))
    arrays = dict(user=user, profile=profile[user], cand=cand, label=label, ts=ts, hist=user)
    extra = dict(true_logit=true_logit, cand_cluster=cand_cluster)

    def make(mask):
        idx = order[mask[order]]
        return Split(**{k_: v[idx] for k_, v in arrays.items()}, ht=ht, hs=hs, lhs=lhs, lhs_ctx=lhs_ctx,
                     hist_last_ts=hist_last_ts, extra={k_: v[idx] for k_, v in extra.items()})

    train, test = make(ts < cut), make(ts >= cut)
    manifest = {
        "source": "synthetic",
        "generator": asdict(cfg),
        "rules": {"test_split": "impressions at or after the test cut-off timestamp", "cut_ts": cut},
    }
    return Dataset(vocab, train, test, manifest, cluster_of)


def bayes_scores(split: Split) -> np.ndarray:
    """The generator's own noise-free click logit; its AUC is the Bayes-optimal ranking quality."""
    return split.extra["true_logit"]
