"""Build train/test splits from delimited interaction logs.

Column order (no header unless ``has_header``)::

    user_id, item_id, category_id, action_type, timestamp, dwell

``action_type`` is one of ``impression`` (shown, not clicked), ``click`` (alias
``pv``), ``cart``, ``fav``, ``buy``. Every non-impression event is a behaviour
that can enter sequences. Target-domain clicks are positive samples and
target-domain impressions negative ones; if the log has no impressions at all,
negatives are drawn from unclicked target items.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from ..embeddings import PAD, right_align
from .dataset import Dataset, Split, Vocab
from .synthetic import DAY, N_DWELL_BUCKETS, dwell_bucket

log = logging.getLogger(__name__)

ACTIONS = {"click": 1, "pv": 1, "cart": 2, "fav": 3, "buy": 4}
IMPRESSION = "impression"
COLUMNS = ("user_id", "item_id", "category_id", "action_type", "timestamp", "dwell")


@dataclass(frozen=True)
class LogRecord:
    user_id: int
    item_id: int
    category_id: int
    action_type: str
    timestamp: int
    dwell: float = 0.0


@dataclass
class IngestConfig:
    delimiter: str = ","
    has_header: bool = False
    target_category_below: int = 2000
    short_events: int = 24
    short_len: int = 50
    lifelong_len: int = 500
    train_days: int = 6
    negatives_per_positive: int = 4
    profile_path: str = ""
    seed: int = 0

    def __post_init__(self):
        if self.short_events > self.short_len:
            raise ValueError("short_events must not exceed short_len")
        if self.train_days < 1 or self.lifelong_len < 1:
            raise ValueError("train_days and lifelong_len must be positive")


def write_logs(records, path, delimiter: str = ",", header: bool = False) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        if header:
            w.writerow(COLUMNS)
        for r in records:
            w.writerow([r.user_id, r.item_id, r.category_id, r.action_type, r.timestamp, repr(float(r.dwell))])


def read_logs(path, config: IngestConfig | None = None) -> tuple:
    """Parse a log file. Returns ``(records, n_malformed)``; bad rows are skipped."""
    config = config or IngestConfig()
    records, bad = [], 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=config.delimiter)
        if config.has_header:
            next(reader, None)
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            try:
                if len(row) not in (5, 6):
                    raise ValueError(row)
                action = row[3].strip().lower()
                if action != IMPRESSION and action not in ACTIONS:
                    raise ValueError(action)
                dwell = float(row[5]) if len(row) == 6 and row[5].strip() else 0.0
                rec = LogRecord(int(row[0]), int(row[1]), int(row[2]), action, int(row[4]), dwell)
                if not np.isfinite(rec.dwell):
                    raise ValueError(row)
            except ValueError:
                bad += 1
                continue
            records.append(rec)
    if bad:
        log.warning("skipped %d malformed rows in %s", bad, path)
    return records, bad


def _read_profiles(path, delimiter) -> dict:
    out = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh, delimiter=delimiter):
            try:
                out[int(row[0])] = tuple(int(x) for x in row[1:4])
            except (ValueError, IndexError):
                continue
    return out


def ingest_records(records, config: IngestConfig | None = None, n_malformed: int = 0) -> Dataset:
    cfg = config or IngestConfig()
    if not records:
        raise ValueError("no usable log records")
    records = sorted(records, key=lambda r: (r.user_id, r.timestamp))
    t_min = min(r.timestamp for r in records)
    day0 = t_min - t_min % DAY
    boundary = day0 + cfg.train_days * DAY

    def is_target(rec):
        return rec.category_id < cfg.target_category_below

    train_items = {"target": {}, "source": {}}
    for r in records:
        if r.timestamp < boundary:
            train_items["target" if is_target(r) else "source"].setdefault(r.item_id, r.category_id)
    t_raw = sorted(train_items["target"])
    s_raw = sorted(train_items["source"])
    item_index = {raw: i + 1 for i, raw in enumerate(t_raw)}
    item_index.update({raw: len(t_raw) + i + 1 for i, raw in enumerate(s_raw)})
    n_items = len(t_raw) + len(s_raw) + 1
    category = np.zeros(n_items, dtype=np.int64)
    for raw, cat in train_items["target"].items():
        category[item_index[raw]] = cat
    for raw, cat in train_items["source"].items():
        category[item_index[raw]] = cat

    profiles = _read_profiles(cfg.profile_path, cfg.delimiter) if cfg.profile_path else {}
    profile_sizes = (9, 3, 6)
    counters = Counter()
    has_impressions = any(r.action_type == IMPRESSION for r in records)
    rng = np.random.default_rng(cfg.seed)
    target_pool = np.arange(1, len(t_raw) + 1)

    by_user = defaultdict(list)
    for r in records:
        by_user[r.user_id].append(r)

    rows = defaultdict(list)
    for uid in sorted(by_user):
        events = by_user[uid]
        raw_prof = profiles.get(uid)
        prof = (0, 0, 0) if raw_prof is None else tuple(
            min(max(v + 1, 1), size - 1) for v, size in zip(raw_prof, profile_sizes))
        touched = {item_index[e.item_id] for e in events if e.item_id in item_index and is_target(e)}
        ht, hs, lhs, lctx = [], [], [], []
        last_ts = None
        i = 0
        while i < len(events):
            # events sharing a timestamp never see each other
            j = i
            while j < len(events) and events[j].timestamp == events[i].timestamp:
                j += 1
            group = events[i:j]
            hist = None
            for e in group:
                if not is_target(e) or e.action_type not in ("click", "pv", IMPRESSION):
                    continue
                if hist is None:
                    hist = (right_align([ht], cfg.short_len)[0], right_align([hs], cfg.short_len)[0],
                            right_align([lhs], cfg.lifelong_len)[0],
                            np.array(lctx, dtype=np.int64).reshape(-1, 2))
                cand = item_index.get(e.item_id, PAD)
                if cand == PAD:
                    counters["oov_candidates"] += 1
                label = 0 if e.action_type == IMPRESSION else 1
                split = "train" if e.timestamp < boundary else "test"
                rows[split].append((uid, prof, cand, label, e.timestamp, hist, last_ts))
                if label == 1 and not has_impressions and cfg.negatives_per_positive:
                    pool = np.setdiff1d(target_pool, list(touched), assume_unique=True)
                    if len(pool):
                        take = min(cfg.negatives_per_positive, len(pool))
                        for neg in rng.choice(pool, size=take, replace=False):
                            rows[split].append((uid, prof, int(neg), 0, e.timestamp, hist, last_ts))
                            counters["sampled_negatives"] += 1
            for e in group:
                if e.action_type == IMPRESSION:
                    continue
                idx = item_index.get(e.item_id)
                if idx is None:
                    counters["oov_sequence_events"] += 1
                    continue
                if is_target(e):
                    ht.append(idx)
                    ht[:] = ht[-cfg.short_events:]
                else:
                    hs.append(idx)
                    hs[:] = hs[-cfg.short_events:]
                    lhs.append(idx)
                    lctx.append((int(dwell_bucket(e.dwell)), ACTIONS[e.action_type]))
                    del lhs[:-cfg.lifelong_len]
                    del lctx[:-cfg.lifelong_len]
                last_ts = e.timestamp
            i = j

    for split in ("train", "test"):
        if not rows[split]:
            raise ValueError(f"ingestion produced an empty {split} split")

    def build(entries):
        n = len(entries)
        lhs_ctx = np.zeros((n, cfg.lifelong_len, 2), dtype=np.int64)
        for k, e in enumerate(entries):
            ctx = e[5][3]
            if len(ctx):
                lhs_ctx[k, cfg.lifelong_len - len(ctx):] = ctx
        return Split(
            user=np.array([e[0] for e in entries], dtype=np.int64),
            profile=np.array([e[1] for e in entries], dtype=np.int64).reshape(n, 3),
            cand=np.array([e[2] for e in entries], dtype=np.int64),
            label=np.array([e[3] for e in entries], dtype=np.int64),
            ts=np.array([e[4] for e in entries], dtype=np.int64),
            hist=np.arange(n, dtype=np.int64),
            ht=np.stack([e[5][0] for e in entries]),
            hs=np.stack([e[5][1] for e in entries]),
            lhs=np.stack([e[5][2] for e in entries]),
            lhs_ctx=lhs_ctx,
            hist_last_ts=np.array([e[6] if e[6] is not None else e[4] - 1 for e in entries], dtype=np.int64),
        )

    vocab = Vocab(
        n_items=n_items,
        target_range=(1, len(t_raw) + 1),
        source_range=(len(t_raw) + 1, n_items),
        item_category=category,
        ctx_sizes=(N_DWELL_BUCKETS + 1, max(ACTIONS.values()) + 1),
        profile_sizes=profile_sizes,
    )
    manifest = {
        "source": "logs",
        "ingest": asdict(cfg),
        "rules": {
            "target_domain": f"category_id < {cfg.target_category_below}",
            "short_term": f"latest {cfg.short_events} behaviours per domain before the sample",
            "lifelong": f"latest {cfg.lifelong_len} source-domain behaviours before the sample",
            "split": f"day index < {cfg.train_days} from UTC midnight of the first event -> train, else test",
            "day0": int(day0),
            "boundary_ts": int(boundary),
            "negatives": "impressions" if has_impressions
            else f"sampled unclicked target items, {cfg.negatives_per_positive}:1",
        },
        "counters": {"malformed_rows": n_malformed, **{k: int(v) for k, v in counters.items()}},
        "raw_item_ids": {"target": t_raw, "source": s_raw},
    }
    return Dataset(vocab, build(rows["train"]), build(rows["test"]), manifest)


def ingest_logs(path, config: IngestConfig | None = None) -> Dataset:
    config = config or IngestConfig()
    if not Path(path).exists():
        raise FileNotFoundError(f"log file not found: {path}")
    records, bad = read_logs(path, config)
    return ingest_records(records, config, bad)
