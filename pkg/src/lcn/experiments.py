"""Experiment runners shared by the CLI and scripts/: ablation grids, level
consistency sweeps and embedding-geometry reports."""
from __future__ import annotations

import csv
import dataclasses
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .crp import CrpConfig
from .data.dataset import Dataset, Split
from .lap import LapConfig, consistency_overlap
from .metrics import cluster_separation, project_2d
from .model import LCN, ModelConfig, train

log = logging.getLogger(__name__)

ABLATION_COLUMNS = ["variant", "k1", "k2", "seed", "auc", "gauc", "logloss",
                    "source_gap", "target_gap", "final_l_ctr"]
CONSISTENCY_COLUMNS = ["K1", "K2", "overlap_mean", "overlap_std", "n_users"]


@dataclass(frozen=True)
class Cell:
    variant: str
    k1: int
    k2: int
    seed: int


def variant_configs(variant: str, model: ModelConfig, lap: LapConfig, crp: CrpConfig,
                    k1: int, k2: int, seed: int) -> tuple:
    model = dataclasses.replace(model, seed=seed)
    crp = dataclasses.replace(crp, seed=seed)
    lap = dataclasses.replace(lap, k1=k1, k2=k2)
    if variant == "no_cross":
        crp = dataclasses.replace(crp, use_cross=False)
    elif variant == "no_crp":
        model = dataclasses.replace(model, use_crp=False, crp_weight=0.0)
    elif variant == "no_lifelong":
        model = dataclasses.replace(model, use_lifelong=False)
    elif variant == "csa_only":
        lap = dataclasses.replace(lap, use_msa=False, use_fsa=False)
    elif variant != "full":
        raise ValueError(f"unknown variant {variant!r}")
    return model, lap, crp


def domain_gaps(model: LCN) -> dict:
    """Same-category minus cross-category cosine, separately for each domain's item embeddings."""
    vocab = model.vocab
    vectors = model.items.vectors()
    ids = np.arange(1, vocab.n_items)
    out = {}
    for name, sel in (("target", vocab.is_target(ids)), ("source", vocab.is_source(ids))):
        try:
            out[name] = cluster_separation(vectors[ids[sel]], vocab.item_category[ids[sel]]).gap
        except ValueError:
            out[name] = float("nan")
    return out


def run_cell(dataset: Dataset, model: ModelConfig, lap: LapConfig, crp: CrpConfig, cell: Cell) -> dict:
    m, l, c = variant_configs(cell.variant, model, lap, crp, cell.k1, cell.k2, cell.seed)
    res = train(dataset, m, l, c)
    last = res.epoch_log[-1] if res.epoch_log else {}
    gaps = domain_gaps(res.model)
    return {"variant": cell.variant, "k1": cell.k1, "k2": cell.k2, "seed": cell.seed,
            "auc": last.get("auc"), "gauc": last.get("gauc"), "logloss": last.get("logloss"),
            "source_gap": gaps["source"], "target_gap": gaps["target"],
            "final_l_ctr": last.get("l_ctr")}


_WORKER_DATA = {}


def _init_worker(dataset):
    _WORKER_DATA["ds"] = dataset


def _worker(args):
    return run_cell(_WORKER_DATA["ds"], *args)


def run_ablation(dataset: Dataset, model: ModelConfig, lap: LapConfig, crp: CrpConfig,
                 grid, variants, seeds, workers: int = 1) -> list:
    """One row per (seed, variant, grid cell). Every variant sees the same seeds."""
    cells = [Cell(v, int(k1), int(k2), int(s)) for s in seeds for v in variants for k1, k2 in grid]
    jobs = [(model, lap, crp, cell) for cell in cells]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(dataset,)) as pool:
            return list(pool.map(_worker, jobs))
    rows = []
    for job in jobs:
        rows.append(run_cell(dataset, *job))
        log.info("ablation %s", rows[-1])
    return rows


def summarize(rows: list) -> list:
    """Mean and std of each metric per (variant, k1, k2), in first-seen order."""
    groups = {}
    for r in rows:
        groups.setdefault((r["variant"], r["k1"], r["k2"]), []).append(r)
    out = []
    for (variant, k1, k2), rs in groups.items():
        row = {"variant": variant, "k1": k1, "k2": k2, "n_seeds": len(rs)}
        for key in ("auc", "gauc", "logloss", "source_gap", "target_gap"):
            vals = np.array([r[key] for r in rs if r[key] is not None], dtype=np.float64)
            row[f"{key}_mean"] = float(vals.mean()) if vals.size else None
            row[f"{key}_std"] = float(vals.std()) if vals.size else None
        out.append(row)
    return out


def write_csv(path, rows: list, columns=None) -> None:
    columns = columns or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k)) for k in columns})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


# ---------------------------------------------------------------- consistency

def last_sample_per_user(split: Split, max_users: int | None = None) -> np.ndarray:
    """Index of each user's latest sample (ties: the later row), users in ascending id order."""
    order = np.lexsort((np.arange(len(split)), split.ts, split.user))
    users = split.user[order]
    last = order[np.r_[users[1:] != users[:-1], True]]
    return last[:max_users] if max_users else last


def consistency_sweep(model: LCN, split: Split, k1_grid, top: int = 50,
                      max_users: int | None = 500, batch_size: int = 256) -> list:
    """Cascade-vs-final-level overlap for each K1 at the model's own K2."""
    if model.lap is None:
        raise ValueError("consistency analysis needs a model with the lifelong branch")
    rows_idx = last_sample_per_user(split, max_users)
    max_len = split.lhs.shape[1]
    values = {k1: [] for k1 in k1_grid}
    for start in range(0, len(rows_idx), batch_size):
        batch = split.batch(rows_idx[start:start + batch_size])
        cand = model.items.lookup(batch.cand)
        for k1 in k1_grid:
            cfg = dataclasses.replace(model.lap_config, k1=min(int(k1), max_len))
            values[k1].append(consistency_overlap(model.items, model.ctx_tables, batch.lhs, cand,
                                                  model.lap, cfg, top=top))
    out = []
    for k1 in k1_grid:
        v = np.concatenate(values[k1]) if values[k1] else np.array([])
        v = v[~np.isnan(v)]
        out.append({"K1": int(k1), "K2": model.lap_config.k2,
                    "overlap_mean": float(v.mean()) if v.size else float("nan"),
                    "overlap_std": float(v.std()) if v.size else float("nan"),
                    "n_users": int(v.size)})
    return out


# ---------------------------------------------------------------- embeddings

def embedding_projection(model: LCN) -> dict:
    """2-D PCA coordinates of every non-padding item, tagged with domain and category."""
    vocab = model.vocab
    ids = np.arange(1, vocab.n_items)
    coords = project_2d(model.items.vectors()[ids])
    domains = np.where(vocab.is_target(ids), "target", "source")
    return {"ids": ids, "domains": domains, "categories": vocab.item_category[ids], "coords": coords}


def separation_report(model: LCN) -> dict:
    vocab = model.vocab
    vectors = model.items.vectors()
    ids = np.arange(1, vocab.n_items)
    report = {}
    for name, sel in (("target", vocab.is_target(ids)), ("source", vocab.is_source(ids)),
                      ("all", np.ones(ids.size, dtype=bool))):
        try:
            s = cluster_separation(vectors[ids[sel]], vocab.item_category[ids[sel]])
            report[name] = dataclasses.asdict(s)
        except ValueError as exc:
            report[name] = {"error": str(exc)}
    return report
