"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, InvalidInputError, NumericalError
from .federation import ALGORITHMS

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _u64(s: str) -> int:
    v = int(s)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must fit in a u64, got {s}")
    return v


def _positive(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s}")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drflm", description="Federated FedAvg / DRFA / DRFLM simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment JSON file")
        sp.add_argument("--seed", type=_u64, help="override the base seed")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--reps", type=_positive, help="override the number of repetitions")

    run = sub.add_parser("run", help="run one experiment")
    common(run)
    run.add_argument("--algo", choices=ALGORITHMS, help="override the algorithm")

    sweep = sub.add_parser("sweep-noise", help="Gaussian label-noise sweep over levels and algorithms")
    common(sweep)
    sweep.add_argument("--algo", choices=ALGORITHMS, action="append",
                       help="restrict to this algorithm (repeatable; default all)")
    sweep.add_argument("--levels", type=float, nargs="+", default=[0.0, 1.0, 2.0, 4.0])

    ce = sub.add_parser("counterexample", help="exact threshold ERM on the two-client construction")
    ce.add_argument("--p1", type=float, default=0.8)
    ce.add_argument("--p2", type=float, default=0.5)
    ce.add_argument("--n", type=_positive, default=5000, help="samples per client")
    ce.add_argument("--reps", type=_positive, default=5, help="number of seeds")
    ce.add_argument("--seed", type=_u64, default=0)
    ce.add_argument("--out", help="write report.json here")

    rep = sub.add_parser("report", help="print the summary of a finished run or sweep")
    rep.add_argument("--out", required=True, help="directory written by run or sweep-noise")
    return p


def _load(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.reps is not None:
        changes["repetitions"] = args.reps
    if getattr(args, "algo", None) and isinstance(args.algo, str):
        changes["algo"] = args.algo
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def _print_sweep(rows) -> None:
    table = harness.summarize_rows(rows)
    print(f"{'level':>6} {'algo':>7} {'n':>3} {'worst mean':>11} {'worst std':>10} {'avg mean':>9}")
    for (lv, algo), s in sorted(table.items()):
        print(f"{lv:>6g} {algo:>7} {s['n']:>3} {s['mean_worst']:>11.4f} {s['std_worst']:>10.4f} {s['mean_avg']:>9.4f}")


def cmd_run(args) -> int:
    s = harness.run_experiment(_load(args))
    print(json.dumps({k: v for k, v in s.to_dict().items() if k != "per_repetition"}, indent=2))
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    algos = args.algo or list(ALGORITHMS)
    rows = harness.run_noise_sweep(cfg, args.levels, algos)
    _print_sweep(rows)
    return EXIT_OK


def cmd_counterexample(args) -> int:
    seeds = [harness.derive_seed(args.seed, k) for k in range(args.reps)]
    try:
        rep = harness.run_counterexample(args.p1, args.p2, args.n, seeds)
    except InvalidInputError as e:
        raise ConfigError("counterexample", str(e)) from None
    for row in rep["per_seed"]:
        print("seed {seed}: fedavg {fedavg_risk:.4f}  drfa {drfa_risk:.4f}  drflm {drflm_risk:.4f}".format(**row))
    print("mean:   fedavg {fedavg_risk:.4f}  drfa {drfa_risk:.4f}  drflm {drflm_risk:.4f}".format(**rep["mean"]))
    if args.out:
        harness.atomic_write(Path(args.out) / "report.json", json.dumps(rep, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def cmd_report(args) -> int:
    out = Path(args.out)
    if (out / "sweep.csv").exists():
        with (out / "sweep.csv").open(newline="", encoding="utf-8") as fh:
            _print_sweep(list(csv.DictReader(fh)))
        return EXIT_OK
    if (out / "summary.json").exists():
        s = json.loads((out / "summary.json").read_text(encoding="utf-8"))
        print(f"{s['algo']} ({s['task']}), {len(s['seeds'])} repetition(s), config {s['fingerprint'][:12]}")
        print(f"  worst metric {s['mean_worst_metric']:.4f} +- {s['std_worst_metric']:.4f}")
        print(f"  avg metric   {s['mean_avg_metric']:.4f} +- {s['std_avg_metric']:.4f}")
        return EXIT_OK
    if (out / "report.json").exists():
        print((out / "report.json").read_text(encoding="utf-8"), end="")
        return EXIT_OK
    raise ConfigError("--out", f"{out} holds no summary.json, sweep.csv or report.json")


COMMANDS = {"run": cmd_run, "sweep-noise": cmd_sweep, "counterexample": cmd_counterexample,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidInputError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
