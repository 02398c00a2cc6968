"""AUC over pyramid sizes (K1, K2) plus the CSA-only baseline, paired seeds."""
import dataclasses
import logging

from _common import load, parser
from lcn import experiments as ex
from lcn.data import generate_synthetic


def main():
    args = parser(__doc__.splitlines()[0], "pyramid.yaml").parse_args()
    cfg = load(args)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    rows = []
    for i in range(cfg.ablate.n_seeds):
        seed = cfg.seed + i
        ds = generate_synthetic(dataclasses.replace(cfg.synthetic_config(), seed=seed))
        for variant in cfg.ablate.variants:
            # the baseline does not depend on the pyramid size; train it once
            grid = cfg.ablate.grid[:1] if variant == "csa_only" else cfg.ablate.grid
            rows += ex.run_ablation(ds, cfg.model_config(), cfg.lap, cfg.crp_config(), grid, [variant], [seed])
    ex.write_csv(args.out / "ablation.csv", rows, ex.ABLATION_COLUMNS)
    summary = ex.summarize(rows)
    ex.write_csv(args.out / "summary.csv", summary)
    for r in summary:
        print(f"{r['variant']:>10} ({r['k1']},{r['k2']})  auc {r['auc_mean']:.4f} +- {r['auc_std']:.4f}")


if __name__ == "__main__":
    main()
