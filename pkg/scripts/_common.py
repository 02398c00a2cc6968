import argparse
from pathlib import Path

from lcn import config as cfgmod

HERE = Path(__file__).resolve().parent


def parser(description: str, default_config: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--config", type=Path, default=HERE / "configs" / default_config)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, required=True)
    return p


def load(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config, args.overrides, args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    cfg.dump(args.out / "config.yaml")
    return cfg
