"""Convergence check: running mean of the Moreau-gradient proxy and training loss per stage."""
import argparse

import numpy as np

from drflm.data import gen_regression_clients
from drflm.federation import FedConfig, run_training, running_mean


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--algo", default="drflm", choices=["fedavg", "drfa", "drflm"])
    ap.add_argument("--rounds", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=10, help="print every k-th stage")
    args = ap.parse_args()
    clients = gen_regression_clients(3, 200, 3, np.random.default_rng(args.seed), mean_offset=0.0,
                                     feature_scale=2.0, coef_radius=0.05, shared_coef=0.9)
    _, log = run_training(clients, FedConfig(3, total_rounds=args.rounds, seed=args.seed), args.algo)
    proxy = running_mean([r.moreau_grad for r in log])
    print(f"{'stage':>5} {'proxy run-mean':>15} {'mean train loss':>16} {'lambda':>24}")
    for k, r in enumerate(log):
        if k == 4 or (k + 1) % args.every == 0:
            lam = " ".join(f"{v:.3f}" for v in r.lam)
            print(f"{r.stage:>5} {proxy[k]:>15.5f} {np.mean(r.train_losses):>16.5f} {lam:>24}")
    print(f"final/stage-5 proxy ratio {proxy[-1] / proxy[4]:.3f}; "
          f"loss ratio {np.mean(log[-1].train_losses) / np.mean(log[0].train_losses):.4f}")


if __name__ == "__main__":
    main()
