"""``lcn`` command line: data generation/ingestion, training, evaluation, ablations, analysis.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import experiments as ex
from .data import generate_synthetic, ingest_logs, load_dataset, save_dataset
from .embeddings import export_embeddings
from .lap import score_concentration
from .metrics import evaluate, write_projection
from .model import LCN, train

log = logging.getLogger("lcn")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--config", type=Path, help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config key, e.g. --set lap.k1=100 (repeatable)")
    p.add_argument("--seed", type=int, help="seed for every random component (overrides config)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="generate a planted-cluster synthetic dataset")
    _common(p)

    p = sub.add_parser("ingest", help="turn delimited interaction logs into a dataset")
    p.add_argument("logs", type=Path, help="log file: user,item,category,action,timestamp[,dwell]")
    _common(p)

    p = sub.add_parser("train", help="train a model; writes checkpoint and metric logs")
    p.add_argument("--data", type=Path, required=True, help="dataset directory")
    _common(p)

    p = sub.add_parser("eval", help="score a checkpoint on one dataset split")
    p.add_argument("--checkpoint", type=Path, required=True, help="run directory or its checkpoint/")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--per-user", action="store_true", help="include per-user AUC")
    _common(p)

    p = sub.add_parser("ablate", help="train every (variant, K1, K2, seed) cell and tabulate")
    p.add_argument("--data", type=Path, required=True)
    _common(p)

    p = sub.add_parser("analyze", help="consistency sweep, embedding projection, cluster separation")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    _common(p)
    return parser


def _checkpoint_dir(path: Path) -> Path:
    if (path / "checkpoint" / "config.json").exists():
        return path / "checkpoint"
    if (path / "config.json").exists():
        return path
    raise FileNotFoundError(f"no checkpoint found at {path}")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def cmd_gen_data(args, cfg: cfgmod.RunConfig) -> dict:
    ds = generate_synthetic(cfg.synthetic_config())
    save_dataset(ds, args.out)
    return {"train": len(ds.train), "test": len(ds.test), "out": str(args.out)}


def cmd_ingest(args, cfg: cfgmod.RunConfig) -> dict:
    if not args.logs.exists():
        raise FileNotFoundError(f"log file not found: {args.logs}")
    ds = ingest_logs(args.logs, cfg.ingest_config())
    save_dataset(ds, args.out)
    return {"train": len(ds.train), "test": len(ds.test), "counters": ds.manifest.get("counters", {})}


def cmd_train(args, cfg: cfgmod.RunConfig) -> dict:
    ds = load_dataset(args.data)
    res = train(ds, cfg.model_config(), cfg.lap, cfg.crp_config(), eval_train=cfg.train.eval_train)
    res.model.save(args.out / "checkpoint")
    _write_jsonl(args.out / "metrics.jsonl", res.epoch_log)
    _write_jsonl(args.out / "steps.jsonl", res.step_log)
    final = res.epoch_log[-1] if res.epoch_log else {}
    _write_json(args.out / "final.json", final)
    return final


def cmd_eval(args, cfg: cfgmod.RunConfig) -> dict:
    model = LCN.load(_checkpoint_dir(args.checkpoint))
    ds = load_dataset(args.data)
    split = getattr(ds, args.split)
    if len(split) == 0:
        raise ValueError(f"{args.split} split is empty")
    probs = model.predict(split)
    report = evaluate(probs, split.label, split.user, per_user=args.per_user).to_json()
    report["split"] = args.split
    _write_json(args.out / "report.json", report)
    return report


def cmd_ablate(args, cfg: cfgmod.RunConfig) -> dict:
    ds = load_dataset(args.data)
    a = cfg.ablate
    seeds = [cfg.seed + i for i in range(a.n_seeds)]
    rows = ex.run_ablation(ds, cfg.model_config(), cfg.lap, cfg.crp_config(), a.grid, a.variants,
                           seeds, workers=a.workers)
    ex.write_csv(args.out / "ablation.csv", rows, ex.ABLATION_COLUMNS)
    summary = ex.summarize(rows)
    ex.write_csv(args.out / "summary.csv", summary)
    return {"rows": len(rows), "summary": summary}


def cmd_analyze(args, cfg: cfgmod.RunConfig) -> dict:
    model = LCN.load(_checkpoint_dir(args.checkpoint))
    ds = load_dataset(args.data)
    split = getattr(ds, cfg.analyze.split)
    out = {}
    if model.lap is not None:
        rows = ex.consistency_sweep(model, split, cfg.analyze.k1_grid, cfg.analyze.top,
                                    cfg.analyze.max_users or None)
        ex.write_csv(args.out / "consistency.csv", rows, ex.CONSISTENCY_COLUMNS)
        out["consistency"] = rows
        idx = ex.last_sample_per_user(split, cfg.analyze.max_users or None)
        batch = split.batch(idx)
        emb = model.items.vectors()[batch.lhs.ids]
        scores = (emb * model.items.vectors()[batch.cand][:, None, :]).sum(-1)
        conc = score_concentration(scores, batch.lhs.mask)
        out["csa_score_concentration_top20"] = float(np.nanmean(conc)) if np.any(~np.isnan(conc)) else None
    else:
        log.warning("checkpoint has no lifelong branch; skipping consistency analysis")
    proj = ex.embedding_projection(model)
    write_projection(args.out / "projection.csv", proj["ids"], proj["domains"], proj["categories"],
                     proj["coords"])
    vocab = model.vocab
    all_ids = np.arange(vocab.n_items)
    domains = np.where(vocab.is_target(all_ids), "target", "source")
    export_embeddings(args.out / "embeddings.tsv", model.items, domains, vocab.item_category)
    out["separation"] = ex.separation_report(model)
    _write_json(args.out / "analysis.json", out)
    return out


COMMANDS = {
    "gen-data": cmd_gen_data,
    "ingest": cmd_ingest,
    "train": cmd_train,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config, args.overrides, args.seed)
    except cfgmod.ConfigError as exc:
        print(f"lcn: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"lcn: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        cfg.dump(args.out / "config.yaml")
        result = COMMANDS[args.command](args, cfg)
    except Exception as exc:  # noqa: BLE001 - every runtime failure maps to exit code 2
        log.debug("command failed", exc_info=True)
        print(f"lcn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
