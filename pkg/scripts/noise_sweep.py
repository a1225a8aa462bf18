"""Gaussian label-noise sweep: worst-case test RMSE of DRFA and DRFLM per noise level."""
import argparse
from pathlib import Path

from drflm.harness import ExperimentConfig, run_noise_sweep, summarize_rows

HERE = Path(__file__).resolve().parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "configs" / "noise_regression.json"))
    ap.add_argument("--levels", type=float, nargs="+", default=[0.0, 1.0, 2.0, 4.0])
    ap.add_argument("--algos", nargs="+", default=["fedavg", "drfa", "drflm"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/noise_sweep")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config).replace(seed=args.seed)
    rows = run_noise_sweep(cfg, args.levels, args.algos, args.out)
    table = summarize_rows(rows)
    print(f"{'sigma':>5} {'algo':>7} {'worst RMSE':>11} {'std':>7}")
    for (lv, algo), s in sorted(table.items()):
        print(f"{lv:>5g} {algo:>7} {s['mean_worst']:>11.4f} {s['std_worst']:>7.4f}")
    print(f"rows written to {Path(args.out) / 'sweep.csv'}")


if __name__ == "__main__":
    main()
