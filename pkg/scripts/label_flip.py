"""Label-flip experiment: worst-case test accuracy of each algorithm on the flipped logistic task."""
import argparse
from pathlib import Path

from drflm.harness import ExperimentConfig, run_experiment

HERE = Path(__file__).resolve().parent


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(HERE / "configs" / "label_flip.json"))
    ap.add_argument("--algos", nargs="+", default=["fedavg", "drfa", "drflm"])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--reps", type=int, default=None)
    ap.add_argument("--out", default="results/label_flip")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config).replace(seed=args.seed)
    if args.reps:
        cfg = cfg.replace(repetitions=args.reps)
    for algo in args.algos:
        s = run_experiment(cfg.replace(algo=algo), Path(args.out) / algo)
        per = ", ".join(f"{r['worst_metric']:.3f}" for r in s.per_repetition)
        print(f"{algo:>7}: worst accuracy {s.mean_worst_metric:.4f} +- {s.std_worst_metric:.4f} "
              f"(per seed {per}), average {s.mean_avg_metric:.4f}")


if __name__ == "__main__":
    main()
