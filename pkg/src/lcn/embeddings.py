"""Id-indexed embedding tables with a reserved all-zero padding row."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import numkit as nk

PAD = 0


class UnknownIdError(KeyError):
    pass


class EmbeddingTable:
    """Rows ``1..size-1`` are trainable vectors; row 0 is padding and stays zero.

    The weight is registered in ``graph`` under ``name`` so the optimizer sees it.
    Gradients arriving at row 0 are discarded by :meth:`lookup`. Rows are
    Xavier-initialised as independent ``dim``-vectors (bound ``sqrt(3 / dim)``),
    so they start near unit norm whatever the vocabulary size.
    """

    def __init__(self, graph: nk.Graph, name: str, size: int, dim: int = 64, seed=0):
        if size < 1 or dim < 1:
            raise ValueError(f"table {name}: size and dim must be positive, got {size}, {dim}")
        self.name = name
        self.size = int(size)
        self.dim = int(dim)
        values = np.zeros((self.size, self.dim))
        if self.size > 1:
            rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
            bound = np.sqrt(6.0 / (2 * self.dim))
            values[1:] = rng.uniform(-bound, bound, size=(self.size - 1, self.dim))
        self.weight = graph.add(name, values)

    def check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.size):
            bad = ids[(ids < 0) | (ids >= self.size)]
            raise UnknownIdError(f"table {self.name}: unknown ids {np.unique(bad)[:10].tolist()}")
        return ids

    def lookup(self, ids) -> nk.Tensor:
        ids = self.check_ids(ids)
        out = self.weight.data[ids]
        keep = (ids != PAD)[..., None]
        out = out * keep
        w = self.weight

        def vjp(g):
            grad = nk.scatter_rows(ids, g, w.shape[0])
            grad[PAD] = 0.0
            return (grad,)

        return nk.record(out, f"lookup[{self.name}]", (w,), vjp)

    def vectors(self) -> np.ndarray:
        return self.weight.data


@dataclass
class SequenceBatch:
    """Right-aligned id sequences: the most recent event sits in the last column.

    ``ids`` is (batch, max_len); ``ctx`` is (batch, max_len, n_context_features).
    """

    ids: np.ndarray
    ctx: np.ndarray | None = None

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 2:
            raise ValueError(f"sequence ids must be 2-D, got shape {self.ids.shape}")
        if self.ctx is not None:
            self.ctx = np.asarray(self.ctx, dtype=np.int64)
            if self.ctx.shape[:2] != self.ids.shape:
                raise ValueError(f"context shape {self.ctx.shape} does not match ids {self.ids.shape}")

    @property
    def mask(self) -> np.ndarray:
        return self.ids != PAD

    @property
    def lengths(self) -> np.ndarray:
        return self.mask.sum(axis=1)

    @property
    def positions(self) -> np.ndarray:
        """Recency index per column (higher = more recent), broadcast to the batch."""
        return np.broadcast_to(np.arange(self.ids.shape[1]), self.ids.shape)

    def is_right_aligned(self) -> bool:
        m = self.mask
        n = m.shape[1]
        expected = np.arange(n)[None, :] >= (n - m.sum(1))[:, None]
        return bool(np.array_equal(m, expected))

    def pad_to(self, max_len: int) -> "SequenceBatch":
        """Left-pad with padding columns (keeps right alignment)."""
        extra = max_len - self.ids.shape[1]
        if extra < 0:
            raise ValueError(f"cannot shrink sequences of length {self.ids.shape[1]} to {max_len}")
        ids = np.pad(self.ids, ((0, 0), (extra, 0)))
        ctx = None if self.ctx is None else np.pad(self.ctx, ((0, 0), (extra, 0), (0, 0)))
        return SequenceBatch(ids, ctx)


def right_align(seqs: list, max_len: int) -> np.ndarray:
    """Pack variable-length id lists into a (n, max_len) matrix keeping the latest ``max_len``."""
    out = np.zeros((len(seqs), max_len), dtype=np.int64)
    for i, s in enumerate(seqs):
        s = list(s)[-max_len:] if max_len else []
        if s:
            out[i, max_len - len(s):] = s
    return out


def export_embeddings(path, table: EmbeddingTable, domains, categories, ids=None, delimiter="\t") -> int:
    """Write ``id, domain, category, v_1..v_dim`` rows. Returns the row count."""
    ids = np.arange(1, table.size) if ids is None else np.asarray(ids)
    vecs = table.vectors()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(["id", "domain", "category"] + [f"v{j}" for j in range(table.dim)])
        for i in ids:
            w.writerow([int(i), domains[i], int(categories[i])] + [repr(float(x)) for x in vecs[i]])
    return len(ids)


@dataclass
class EmbeddingExport:
    ids: np.ndarray
    domains: np.ndarray
    categories: np.ndarray
    vectors: np.ndarray

    def subset(self, keep: np.ndarray) -> "EmbeddingExport":
        return EmbeddingExport(self.ids[keep], self.domains[keep], self.categories[keep], self.vectors[keep])


def read_embeddings(path, delimiter="\t") -> EmbeddingExport:
    rows = list(csv.reader(Path(path).read_text().splitlines(), delimiter=delimiter))
    body = rows[1:]
    return EmbeddingExport(
        ids=np.array([int(r[0]) for r in body], dtype=np.int64),
        domains=np.array([r[1] for r in body]),
        categories=np.array([int(r[2]) for r in body], dtype=np.int64),
        vectors=np.array([[float(x) for x in r[3:]] for r in body]).reshape(len(body), -1),
    )
