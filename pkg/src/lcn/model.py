"""Full network: feature assembly, MLP head, CTR + contrastive objective, training loop."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import numkit as nk
from .crp import CrpConfig, crp_loss, sample_pairs
from .data.dataset import Batch, Dataset, Split, Vocab
from .embeddings import EmbeddingTable
from .lap import LapConfig, LapParams, lap_forward
from .metrics import PROB_CLAMP, evaluate

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class ModelConfig:
    emb_dim: int = 64
    hidden: tuple = (256, 128)
    crp_weight: float = 0.1
    use_crp: bool = True
    use_lifelong: bool = True
    batch_size: int = 256
    lr: float = 1e-3
    epochs: int = 1
    eval_batch_size: int = 1024
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.emb_dim < 1 or any(h < 1 for h in self.hidden) or self.batch_size < 1:
            raise ValueError("emb_dim, hidden sizes and batch_size must be positive")
        if self.crp_weight < 0:
            raise ValueError(f"crp_weight must be >= 0, got {self.crp_weight}")
        if self.epochs < 0 or self.lr <= 0:
            raise ValueError("epochs must be >= 0 and lr > 0")


class LCN:
    """Parameters and forward pass. All trainable tensors live in ``self.graph``."""

    def __init__(self, vocab: Vocab, config: ModelConfig, lap_config: LapConfig,
                 crp_config: CrpConfig | None = None):
        self.vocab = vocab
        self.config = config
        self.lap_config = lap_config
        self.crp_config = crp_config or CrpConfig()
        self.graph = nk.Graph()
        rng = np.random.default_rng(config.seed)
        seeds = iter(rng.integers(0, 2**31, size=64))
        d = config.emb_dim
        self.items = EmbeddingTable(self.graph, "emb.item", vocab.n_items, d, next(seeds))
        self.ctx_tables = [EmbeddingTable(self.graph, f"emb.ctx.{name}", size, d, next(seeds))
                           for name, size in zip(vocab.ctx_names, vocab.ctx_sizes)]
        self.profile_tables = [EmbeddingTable(self.graph, f"emb.profile.{name}", size, d, next(seeds))
                               for name, size in zip(vocab.profile_names, vocab.profile_sizes)]
        self.lap = None
        if config.use_lifelong:
            self.lap = LapParams(self.graph, d, d * len(self.ctx_tables), lap_config, next(seeds))
        widths = [self.input_dim, *config.hidden, 1]
        self.mlp = []
        for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
            w = self.graph.add(f"mlp.w{i}", nk.xavier_init((a, b), next(seeds)))
            bias = self.graph.add(f"mlp.b{i}", np.zeros(b))
            self.mlp.append((w, bias))

    @property
    def component_widths(self) -> dict:
        d = self.config.emb_dim
        out = {"profile": d * len(self.profile_tables), "candidate": d, "short_target": d, "short_source": d}
        if self.config.use_lifelong:
            out["lifelong"] = self.lap_config.output_dim(d)
        return out

    @property
    def input_dim(self) -> int:
        return int(sum(self.component_widths.values()))

    def features(self, batch: Batch):
        """Concatenated MLP input and the LAP result (``None`` without lifelong input)."""
        cand = self.items.lookup(batch.cand)
        parts = [self.profile_tables[j].lookup(batch.profile[:, j]) for j in range(len(self.profile_tables))]
        parts.append(cand)
        for seq in (batch.ht, batch.hs):
            emb = self.items.lookup(seq)
            score = nk.inner(emb, nk.expand_dims(cand, 1))
            weights = nk.mul(score, (seq != 0).astype(np.float64))
            parts.append(nk.sum(nk.mul(nk.expand_dims(weights, -1), emb), axis=1))
        lap_out = None
        if self.config.use_lifelong:
            lap_out = lap_forward(self.items, self.ctx_tables, batch.lhs, cand, self.lap, self.lap_config)
            parts.append(lap_out.output)
        return nk.concat(parts, axis=-1), lap_out

    def logits(self, batch: Batch) -> nk.Tensor:
        x, _ = self.features(batch)
        for i, (w, b) in enumerate(self.mlp):
            x = nk.add(nk.matmul(x, w), b)
            if i < len(self.mlp) - 1:
                x = nk.relu(x)
        return nk.reshape(x, (x.shape[0],))

    def forward(self, batch: Batch) -> nk.Tensor:
        return nk.sigmoid(self.logits(batch))

    def predict(self, split: Split, batch_size: int | None = None) -> np.ndarray:
        bs = batch_size or self.config.eval_batch_size
        out = np.empty(len(split))
        for start in range(0, len(split), bs):
            idx = np.arange(start, min(start + bs, len(split)))
            out[idx] = self.forward(split.batch(idx)).data
        return out

    # ------------------------------------------------------------ persistence

    def save(self, path) -> Path:
        path = Path(path)
        path.mkdir(parents=True, exist_ok=True)
        np.savez(path / "params.npz", __version__=np.array(CHECKPOINT_VERSION), **self.graph.state())
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "model": asdict(self.config),
            "lap": asdict(self.lap_config),
            "crp": asdict(self.crp_config),
            "vocab": self.vocab.to_json(),
        }
        (path / "config.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
        np.save(path / "item_category.npy", self.vocab.item_category)
        return path

    @classmethod
    def load(cls, path) -> "LCN":
        path = Path(path)
        meta = json.loads((path / "config.json").read_text())
        if meta.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('format_version')}")
        vocab = Vocab.from_json(meta["vocab"], np.load(path / "item_category.npy"))
        model = cls(vocab, ModelConfig(**meta["model"]), LapConfig(**meta["lap"]), CrpConfig(**meta["crp"]))
        with np.load(path / "params.npz") as z:
            state = {k: z[k] for k in z.files if k != "__version__"}
        model.graph.load_state(state)
        return model


def ctr_loss(probs: nk.Tensor, labels) -> nk.Tensor:
    """Mean binary cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7]."""
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise ValueError("ctr_loss of an empty batch")
    if probs.shape != y.shape:
        raise nk.ShapeError(f"predictions {probs.shape} vs labels {y.shape}")
    p = nk.clip(probs, PROB_CLAMP, 1 - PROB_CLAMP)
    ll = nk.add(nk.mul(nk.log(p), y), nk.mul(nk.log(nk.sub(1.0, p)), 1.0 - y))
    return nk.scale(nk.mean(ll), -1.0)


def total_loss(ctr, crp, crp_weight: float) -> nk.Tensor:
    return nk.add(ctr, nk.scale(nk.as_tensor(crp), crp_weight))


@dataclass
class StepResult:
    loss: float
    l_ctr: float
    crp: dict = field(default_factory=dict)
    counts: dict = field(default_factory=dict)


def train_step(model: LCN, batch: Batch, opt: nk.AdamState, seed: int) -> StepResult:
    probs = model.forward(batch)
    l_ctr = ctr_loss(probs, batch.label)
    loss = l_ctr
    crp_info, counts = {}, {}
    cfg = model.config
    if cfg.use_crp and cfg.crp_weight > 0:
        pairs = sample_pairs(batch.ht, batch.hs, model.crp_config, seed=seed, users=batch.user)
        l_crp, crp_info = crp_loss(pairs, model.items, model.crp_config)
        counts = pairs.counts()
        loss = total_loss(l_ctr, l_crp, cfg.crp_weight)
    grads = nk.backward(model.graph, loss)
    nk.adam_step(opt, model.graph.params, grads)
    return StepResult(loss.item(), l_ctr.item(), crp_info, counts)


@dataclass
class TrainResult:
    model: LCN
    epoch_log: list
    step_log: list


def train(dataset: Dataset, model_config: ModelConfig, lap_config: LapConfig,
          crp_config: CrpConfig | None = None, eval_train: bool = False,
          on_step: Callable | None = None, model: LCN | None = None) -> TrainResult:
    """Seeded mini-batch Adam over ``dataset.train``; test metrics after every epoch.

    Each epoch record has ``epoch, step, l_ctr, l_pt, l_ps, l_pc, auc, gauc, logloss``
    (epoch means for the losses, test-split metrics). With ``eval_train`` the final
    record also carries ``train_logloss``.
    """
    if len(dataset.train) == 0:
        raise ValueError("empty training split")
    if model_config.use_lifelong:
        lap_config.validate_length(dataset.max_lifelong_len)
    model = model or LCN(dataset.vocab, model_config, lap_config, crp_config)
    opt = nk.AdamState(lr=model_config.lr)
    rng = np.random.default_rng(model_config.seed)
    epoch_log, step_log = [], []
    step = 0
    n = len(dataset.train)
    bs = model_config.batch_size
    for epoch in range(model_config.epochs):
        order = rng.permutation(n)
        sums = {"l_ctr": 0.0, "l_pt": 0.0, "l_ps": 0.0, "l_pc": 0.0}
        n_batches = 0
        for start in range(0, n, bs):
            batch = dataset.train.batch(order[start:start + bs])
            try:
                res = train_step(model, batch, opt, seed=int(rng.integers(2**31)))
            except nk.NonFiniteError as exc:
                raise TrainingDiverged(f"non-finite value at epoch {epoch}, step {step}: {exc}") from exc
            if not np.isfinite(res.loss):
                raise TrainingDiverged(f"loss became {res.loss} at epoch {epoch}, step {step}")
            step += 1
            n_batches += 1
            record = {"step": step, "epoch": epoch, "loss": res.loss, "l_ctr": res.l_ctr}
            for key in ("l_pt", "l_ps", "l_pc"):
                record[key] = float(res.crp.get(key, 0.0))
            record.update(res.counts)
            if res.crp.get("skipped"):
                record["crp_skipped"] = res.crp["skipped"]
            step_log.append(record)
            for key in sums:
                sums[key] += record[key]
            if on_step is not None:
                on_step(record)
        entry = {"epoch": epoch, "step": step, **{k: v / max(n_batches, 1) for k, v in sums.items()}}
        if len(dataset.test):
            rep = evaluate(model.predict(dataset.test), dataset.test.label, dataset.test.user)
            entry.update(auc=rep.auc, gauc=rep.gauc, logloss=rep.logloss)
        epoch_log.append(entry)
        log.info("epoch %d: %s", epoch, entry)
    if eval_train and epoch_log:
        rep = evaluate(model.predict(dataset.train), dataset.train.label, dataset.train.user)
        epoch_log[-1]["train_logloss"] = rep.logloss
        epoch_log[-1]["train_auc"] = rep.auc
    return TrainResult(model, epoch_log, step_log)
