"""Train one model per seed and sweep the cascade overlap over K1 at the model's K2.

Writes consistency.csv with one row per (seed, K1) and prints the seed-mean curve.
"""
import dataclasses

import numpy as np

from _common import load, parser
from lcn import experiments as ex
from lcn.data import generate_synthetic
from lcn.model import train


def main():
    args = parser(__doc__.splitlines()[0], "pyramid.yaml").parse_args()
    cfg = load(args)
    rows = []
    for i in range(cfg.ablate.n_seeds):
        seed = cfg.seed + i
        ds = generate_synthetic(dataclasses.replace(cfg.synthetic_config(), seed=seed))
        res = train(ds, cfg.model_config(seed), cfg.lap, cfg.crp_config(seed))
        split = getattr(ds, cfg.analyze.split)
        for r in ex.consistency_sweep(res.model, split, cfg.analyze.k1_grid, cfg.analyze.top,
                                      cfg.analyze.max_users or None):
            rows.append({"seed": seed, **r})
        print(f"seed {seed}: " + ", ".join(f"{r['K1']}:{r['overlap_mean']:.4f}" for r in rows[-len(cfg.analyze.k1_grid):]))
    ex.write_csv(args.out / "consistency.csv", rows, ["seed"] + ex.CONSISTENCY_COLUMNS)
    for k1 in cfg.analyze.k1_grid:
        print(f"K1={k1:>4}  mean overlap {np.mean([r['overlap_mean'] for r in rows if r['K1'] == k1]):.4f}")


if __name__ == "__main__":
    main()
