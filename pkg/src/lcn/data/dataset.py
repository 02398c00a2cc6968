"""Columnar train/test splits and the on-disk dataset directory.

Samples of one user usually share their behaviour history, so a split keeps
sequences in ``history`` rows and each sample points at one with ``hist``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..embeddings import PAD, SequenceBatch

FORMAT_VERSION = 1


@dataclass
class Vocab:
    """Id layout. Item ids are ``1..n_items-1``: target ids first, then source ids."""

    n_items: int
    target_range: tuple
    source_range: tuple
    item_category: np.ndarray
    ctx_names: tuple = ("dwell_bucket", "action_type")
    ctx_sizes: tuple = (9, 5)
    profile_names: tuple = ("age", "gender", "income")
    profile_sizes: tuple = (9, 3, 6)

    def domain_of(self, ids) -> np.ndarray:
        ids = np.asarray(ids)
        out = np.full(ids.shape, "pad", dtype=object)
        lo, hi = self.target_range
        out[(ids >= lo) & (ids < hi)] = "target"
        lo, hi = self.source_range
        out[(ids >= lo) & (ids < hi)] = "source"
        return out

    def is_target(self, ids) -> np.ndarray:
        lo, hi = self.target_range
        ids = np.asarray(ids)
        return (ids >= lo) & (ids < hi)

    def is_source(self, ids) -> np.ndarray:
        lo, hi = self.source_range
        ids = np.asarray(ids)
        return (ids >= lo) & (ids < hi)

    def to_json(self) -> dict:
        return {
            "n_items": self.n_items,
            "target_range": list(self.target_range),
            "source_range": list(self.source_range),
            "ctx_names": list(self.ctx_names),
            "ctx_sizes": list(self.ctx_sizes),
            "profile_names": list(self.profile_names),
            "profile_sizes": list(self.profile_sizes),
        }

    @classmethod
    def from_json(cls, d: dict, item_category: np.ndarray) -> "Vocab":
        return cls(
            n_items=int(d["n_items"]),
            target_range=tuple(d["target_range"]),
            source_range=tuple(d["source_range"]),
            item_category=np.asarray(item_category, dtype=np.int64),
            ctx_names=tuple(d["ctx_names"]),
            ctx_sizes=tuple(d["ctx_sizes"]),
            profile_names=tuple(d["profile_names"]),
            profile_sizes=tuple(d["profile_sizes"]),
        )


@dataclass(frozen=True)
class Sample:
    user: int
    profile: tuple
    ht: tuple
    hs: tuple
    lhs: tuple
    lhs_ctx: tuple
    cand: int
    label: int
    ts: int


@dataclass
class Batch:
    user: np.ndarray
    profile: np.ndarray
    cand: np.ndarray
    label: np.ndarray
    ht: np.ndarray
    hs: np.ndarray
    lhs: SequenceBatch

    def __len__(self):
        return len(self.label)


SAMPLE_FIELDS = ("user", "profile", "cand", "label", "ts", "hist")
HISTORY_FIELDS = ("ht", "hs", "lhs", "lhs_ctx", "hist_last_ts")


@dataclass
class Split:
    user: np.ndarray
    profile: np.ndarray
    cand: np.ndarray
    label: np.ndarray
    ts: np.ndarray
    hist: np.ndarray
    ht: np.ndarray
    hs: np.ndarray
    lhs: np.ndarray
    lhs_ctx: np.ndarray
    hist_last_ts: np.ndarray
    extra: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.label)

    def batch(self, idx) -> Batch:
        idx = np.asarray(idx, dtype=np.int64)
        h = self.hist[idx]
        return Batch(
            user=self.user[idx],
            profile=self.profile[idx],
            cand=self.cand[idx],
            label=self.label[idx].astype(np.float64),
            ht=self.ht[h],
            hs=self.hs[h],
            lhs=SequenceBatch(self.lhs[h], self.lhs_ctx[h]),
        )

    def sample(self, i: int) -> Sample:
        h = int(self.hist[i])

        def valid(row):
            return tuple(int(x) for x in row[row != PAD])

        keep = self.lhs[h] != PAD
        return Sample(
            user=int(self.user[i]),
            profile=tuple(int(x) for x in self.profile[i]),
            ht=valid(self.ht[h]),
            hs=valid(self.hs[h]),
            lhs=valid(self.lhs[h]),
            lhs_ctx=tuple(tuple(int(c) for c in row) for row in self.lhs_ctx[h][keep]),
            cand=int(self.cand[i]),
            label=int(self.label[i]),
            ts=int(self.ts[i]),
        )

    def samples(self) -> list:
        return [self.sample(i) for i in range(len(self))]

    def subset(self, idx) -> "Split":
        idx = np.asarray(idx, dtype=np.int64)
        return Split(
            **{f: getattr(self, f)[idx] for f in SAMPLE_FIELDS},
            **{f: getattr(self, f) for f in HISTORY_FIELDS},
            extra={k: v[idx] for k, v in self.extra.items()},
        )

    def with_padding(self, extra_cols: int) -> "Split":
        """Copy with ``extra_cols`` padding columns prepended to every sequence."""
        pad2 = ((0, 0), (extra_cols, 0))
        return Split(
            **{f: getattr(self, f) for f in SAMPLE_FIELDS},
            ht=np.pad(self.ht, pad2), hs=np.pad(self.hs, pad2), lhs=np.pad(self.lhs, pad2),
            lhs_ctx=np.pad(self.lhs_ctx, pad2 + ((0, 0),)), hist_last_ts=self.hist_last_ts,
            extra=dict(self.extra),
        )

    def arrays(self) -> dict:
        out = {f: getattr(self, f) for f in SAMPLE_FIELDS + HISTORY_FIELDS}
        out.update({f"extra__{k}": v for k, v in self.extra.items()})
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "Split":
        base = {f: np.asarray(arrays[f]) for f in SAMPLE_FIELDS + HISTORY_FIELDS}
        extra = {k[len("extra__"):]: np.asarray(arrays[k]) for k in arrays if k.startswith("extra__")}
        return cls(**base, extra=extra)


@dataclass
class Dataset:
    vocab: Vocab
    train: Split
    test: Split
    manifest: dict = field(default_factory=dict)
    cluster_of: np.ndarray | None = None

    @property
    def max_lifelong_len(self) -> int:
        return int(self.train.lhs.shape[1])


def check_no_leakage(split: Split) -> bool:
    """Every sample's history ends no later than the sample's own timestamp."""
    return bool(np.all(split.hist_last_ts[split.hist] <= split.ts))


def save_dataset(ds: Dataset, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.savez(path / "train.npz", **ds.train.arrays())
    np.savez(path / "test.npz", **ds.test.arrays())
    items = {"item_category": ds.vocab.item_category}
    if ds.cluster_of is not None:
        items["cluster_of"] = ds.cluster_of
    np.savez(path / "items.npz", **items)
    manifest = dict(ds.manifest)
    manifest.update({
        "format_version": FORMAT_VERSION,
        "vocab": ds.vocab.to_json(),
        "splits": {"train": len(ds.train), "test": len(ds.test)},
        "max_lifelong_len": ds.max_lifelong_len,
        "short_len": int(ds.train.ht.shape[1]),
    })
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_jsonable))
    return path


def _jsonable(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"cannot serialize {type(x)}")


def load_dataset(path) -> Dataset:
    path = Path(path)
    manifest_file = path / "manifest.json"
    if not manifest_file.exists():
        raise FileNotFoundError(f"no dataset manifest at {manifest_file}")
    manifest = json.loads(manifest_file.read_text())
    if manifest.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported dataset format {manifest.get('format_version')}")
    with np.load(path / "items.npz") as z:
        item_category = z["item_category"]
        cluster_of = z["cluster_of"] if "cluster_of" in z.files else None
    with np.load(path / "train.npz") as z:
        train = Split.from_arrays({k: z[k] for k in z.files})
    with np.load(path / "test.npz") as z:
        test = Split.from_arrays({k: z[k] for k in z.files})
    vocab = Vocab.from_json(manifest["vocab"], item_category)
    return Dataset(vocab, train, test, manifest, cluster_of)
