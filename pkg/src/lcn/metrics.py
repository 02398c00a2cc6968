"""Ranking and calibration metrics plus embedding-quality measurements."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


def auc(scores, labels) -> float | None:
    """Rank-sum AUC with ties counted as one half; ``None`` if a class is missing.

    Ranks are doubled so the Mann-Whitney count is accumulated in integers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    twice_ranks = (2 * rankdata(scores, method="average")).astype(np.int64)
    twice_u = int(twice_ranks[labels].sum()) - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


def gauc(scores, labels, users) -> float | None:
    """Per-user AUC weighted by the user's impression count; single-class users are dropped."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    users = np.asarray(users)
    if users.size == 0:
        return None
    order = np.argsort(users, kind="stable")
    u_sorted = users[order]
    starts = np.flatnonzero(np.r_[True, u_sorted[1:] != u_sorted[:-1]])
    bounds = np.r_[starts, len(users)]
    per_user = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        idx = order[a:b]
        value = auc(scores[idx], labels[idx])
        if value is not None:
            per_user.append((value, b - a))
    den = sum(n for _, n in per_user)
    if not den:
        return None
    # normalise weights first so a single user gets weight exactly 1.0
    return float(sum(value * (n / den) for value, n in per_user))


def logloss(probs, labels) -> float:
    p = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    if p.size == 0:
        raise ValueError("logloss of an empty batch")
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


@dataclass
class MetricReport:
    auc: float | None
    gauc: float | None
    logloss: float
    n_samples: int
    n_users_scored: int
    per_user: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        d = asdict(self)
        if not d["per_user"]:
            d.pop("per_user")
        return d


def evaluate(probs, labels, users, per_user: bool = False) -> MetricReport:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    users = np.asarray(users)
    detail = {}
    scored = 0
    for u in np.unique(users):
        m = users == u
        value = auc(probs[m], labels[m])
        if value is not None:
            scored += 1
            if per_user:
                detail[str(int(u))] = value
    return MetricReport(
        auc=auc(probs, labels),
        gauc=gauc(probs, labels, users),
        logloss=logloss(probs, labels),
        n_samples=int(probs.size),
        n_users_scored=scored,
        per_user=detail,
    )


# ---------------------------------------------------------------- embeddings

@dataclass
class Separation:
    intra: float
    inter: float
    gap: float
    n_intra_pairs: int
    n_inter_pairs: int


def cluster_separation(vectors, clusters) -> Separation:
    """Mean cosine over all same-cluster pairs and over all cross-cluster pairs.

    Uses per-cluster sums of unit vectors, so every pair is counted exactly
    without enumerating pairs.
    """
    x = np.asarray(vectors, dtype=np.float64)
    clusters = np.asarray(clusters)
    labels, counts = np.unique(clusters, return_counts=True)
    if len(labels) < 2 or np.count_nonzero(counts >= 2) < 2:
        raise ValueError("cluster_separation needs at least 2 clusters with at least 2 items each")
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    unit = np.divide(x, norms, out=np.zeros_like(x), where=norms > 0)
    self_dot = (unit * unit).sum(1)
    total = unit.sum(0)
    all_pairs_sum = (total @ total - self_dot.sum()) / 2
    intra_sum = 0.0
    n_intra = 0
    for lab, cnt in zip(labels, counts):
        s = unit[clusters == lab].sum(0)
        intra_sum += (s @ s - self_dot[clusters == lab].sum()) / 2
        n_intra += cnt * (cnt - 1) // 2
    n = len(x)
    n_inter = n * (n - 1) // 2 - n_intra
    intra = intra_sum / n_intra
    inter = (all_pairs_sum - intra_sum) / n_inter
    return Separation(float(intra), float(inter), float(intra - inter), int(n_intra), int(n_inter))


def project_2d(vectors) -> np.ndarray:
    """Coordinates on the top-2 principal components of the centred data.

    Each component's sign makes its largest-magnitude loading positive. A
    second component with no variance is returned as zeros.
    """
    x = np.asarray(vectors, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"project_2d needs at least 2 row vectors, got shape {x.shape}")
    centred = x - x.mean(0)
    cov = centred.T @ centred / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    comps = np.zeros((x.shape[1], 2))
    top = evals[0] if evals.size else 0.0
    tol = max(top, 1.0) * 1e-12 * x.shape[1]
    for j in range(min(2, x.shape[1])):
        if evals[j] <= tol:
            if j == 1 and top > tol:
                log.warning("embedding matrix has rank < 2; second component set to zero")
            continue
        v = evecs[:, j]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        comps[:, j] = v
    return centred @ comps


def write_projection(path, ids, domains, categories, coords) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "domain", "category", "x", "y"])
        for row in zip(ids, domains, categories, coords[:, 0], coords[:, 1]):
            w.writerow([int(row[0]), row[1], int(row[2]), repr(float(row[3])), repr(float(row[4]))])
