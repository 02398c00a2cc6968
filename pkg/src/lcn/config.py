"""Run configuration: a YAML file of sections plus ``key=value`` overrides.

Every section maps onto a dataclass. Unknown sections or keys raise
``ConfigError``. The single top-level ``seed`` feeds every seeded component.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .crp import CrpConfig
from .data.ingest import IngestConfig
from .data.synthetic import SyntheticConfig
from .lap import LapConfig
from .model import ModelConfig

ABLATION_VARIANTS = ("full", "no_cross", "no_crp", "no_lifelong", "csa_only")


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 256
    lr: float = 1e-3
    epochs: int = 1
    eval_batch_size: int = 1024
    eval_train: bool = True


@dataclass
class AblateConfig:
    grid: list = field(default_factory=lambda: [[200, 50]])
    variants: list = field(default_factory=lambda: ["full"])
    n_seeds: int = 1
    workers: int = 1

    def __post_init__(self):
        cells = []
        for cell in self.grid:
            if len(cell) != 2:
                raise ValueError(f"grid cells are [k1, k2] pairs, got {cell!r}")
            cells.append([int(cell[0]), int(cell[1])])
        self.grid = cells
        bad = [v for v in self.variants if v not in ABLATION_VARIANTS]
        if bad:
            raise ValueError(f"unknown ablation variants {bad}; choose from {ABLATION_VARIANTS}")
        if self.n_seeds < 1 or self.workers < 1:
            raise ValueError("n_seeds and workers must be >= 1")


@dataclass
class AnalyzeConfig:
    k1_grid: list = field(default_factory=lambda: [50, 125, 250, 500])
    top: int = 50
    max_users: int = 500
    split: str = "test"

    def __post_init__(self):
        self.k1_grid = [int(k) for k in self.k1_grid]
        if self.split not in ("train", "test"):
            raise ValueError(f"split must be 'train' or 'test', got {self.split!r}")


SECTIONS = {
    "data": SyntheticConfig,
    "ingest": IngestConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "lap": LapConfig,
    "crp": CrpConfig,
    "ablate": AblateConfig,
    "analyze": AnalyzeConfig,
}
# owned by the train section or by the top-level seed
HIDDEN_KEYS = {"seed", "batch_size", "lr", "epochs", "eval_batch_size"}


def section_keys(name: str) -> list:
    hidden = HIDDEN_KEYS if name != "train" else {"seed"}
    return [f.name for f in fields(SECTIONS[name]) if f.name not in hidden]


def all_keys() -> list:
    """Every dotted key a config file may set, ``seed`` included."""
    return ["seed"] + [f"{s}.{k}" for s in SECTIONS for k in section_keys(s)]


@dataclass
class RunConfig:
    seed: int = 0
    data: SyntheticConfig = field(default_factory=SyntheticConfig)
    ingest: IngestConfig = field(default_factory=IngestConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    lap: LapConfig = field(default_factory=LapConfig)
    crp: CrpConfig = field(default_factory=CrpConfig)
    ablate: AblateConfig = field(default_factory=AblateConfig)
    analyze: AnalyzeConfig = field(default_factory=AnalyzeConfig)

    def to_dict(self) -> dict:
        out = {"seed": self.seed}
        for name in SECTIONS:
            obj = getattr(self, name)
            out[name] = {k: _plain(getattr(obj, k)) for k in section_keys(name)}
        return out

    def dump(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.to_dict(), sort_keys=False))
        return path

    # seeded views used by the commands
    def synthetic_config(self) -> SyntheticConfig:
        return dataclasses.replace(self.data, seed=self.seed)

    def ingest_config(self) -> IngestConfig:
        return dataclasses.replace(self.ingest, seed=self.seed)

    def model_config(self, seed: int | None = None) -> ModelConfig:
        t = self.train
        return dataclasses.replace(self.model, seed=self.seed if seed is None else seed,
                                   batch_size=t.batch_size, lr=t.lr, epochs=t.epochs,
                                   eval_batch_size=t.eval_batch_size)

    def crp_config(self, seed: int | None = None) -> CrpConfig:
        return dataclasses.replace(self.crp, seed=self.seed if seed is None else seed)


def _plain(v):
    if isinstance(v, tuple):
        return [_plain(x) for x in v]
    if isinstance(v, list):
        return [_plain(x) for x in v]
    return v


def parse_override(text: str) -> tuple:
    if "=" not in text:
        raise ConfigError(f"override must look like key=value, got {text!r}")
    key, raw = text.split("=", 1)
    key = key.strip()
    try:
        value = yaml.safe_load(raw) if raw.strip() else ""
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key}: {exc}") from None
    return key, value


def _set(tree: dict, key: str, value) -> None:
    parts = key.split(".")
    if parts == ["seed"]:
        tree["seed"] = value
        return
    if len(parts) != 2:
        raise ConfigError(f"unknown config key {key!r}")
    sec, name = parts
    if sec not in SECTIONS:
        raise ConfigError(f"unknown config section {sec!r} in {key!r}")
    tree.setdefault(sec, {})[name] = value


def build(tree: dict | None = None, overrides=(), seed: int | None = None) -> RunConfig:
    """Validate ``tree`` (parsed YAML) plus overrides into a RunConfig."""
    tree = {k: (dict(v) if isinstance(v, dict) else v) for k, v in (tree or {}).items()}
    for text in overrides:
        _set(tree, *parse_override(text))
    if seed is not None:
        tree["seed"] = seed
    unknown = set(tree) - set(SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
    kwargs = {}
    for name, cls in SECTIONS.items():
        values = tree.get(name) or {}
        if not isinstance(values, dict):
            raise ConfigError(f"section {name!r} must be a mapping")
        allowed = set(section_keys(name))
        bad = sorted(set(values) - allowed)
        if bad:
            raise ConfigError(f"unknown key(s) in section {name!r}: {bad}")
        try:
            kwargs[name] = cls(**_coerce(cls, values))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid {name} config: {exc}") from None
    s = tree.get("seed", 0)
    if isinstance(s, bool) or not isinstance(s, int):
        raise ConfigError(f"seed must be an integer, got {s!r}")
    cfg = RunConfig(seed=s, **kwargs)
    try:
        cfg.model_config()
        cfg.crp_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def _coerce(cls, values: dict) -> dict:
    """Type-check scalars against the dataclass defaults; ints may stand in for floats."""
    defaults = {f.name: (f.default if f.default is not dataclasses.MISSING else f.default_factory())
                for f in fields(cls)}
    out = {}
    for k, v in values.items():
        d = defaults[k]
        if isinstance(d, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{cls.__name__}.{k} expects true/false, got {v!r}")
        elif isinstance(d, int):
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{cls.__name__}.{k} expects an integer, got {v!r}")
        elif isinstance(d, float):
            if isinstance(v, bool) or not isinstance(v, (int, float)):
                raise ConfigError(f"{cls.__name__}.{k} expects a number, got {v!r}")
            v = float(v)
        elif isinstance(d, str):
            if not isinstance(v, str):
                raise ConfigError(f"{cls.__name__}.{k} expects a string, got {v!r}")
        elif isinstance(d, (tuple, list)):
            if not isinstance(v, list):
                raise ConfigError(f"{cls.__name__}.{k} expects a list, got {v!r}")
        out[k] = v
    return out


def load(path=None, overrides=(), seed: int | None = None) -> RunConfig:
    tree = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        try:
            tree = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from None
        if not isinstance(tree, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    return build(tree, overrides, seed)
