"""Experiment orchestration: configs, seeded repetitions, artifacts on disk, sweeps.

An experiment is a single JSON document.  Its canonical form (sorted keys, the
output directory excluded) is hashed into a fingerprint that every artifact
embeds, so a directory written under one config is never silently reused by
another.
"""
from __future__ import annotations

import copy
import csv
import dataclasses
import hashlib
import io
import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import analysis
from .data import (ClientDataset, NoiseSpec, choose_affected_clients, clean_threshold_risk,
                   gen_classification_clients, gen_two_client_threshold, gen_regression_clients, inject_noise,
                   load_csv_dataset, partition_by_label, partition_with_ratios, split_clients)
from .errors import ConfigError, InvalidInputError
from .federation import ALGORITHMS, FedConfig, MixupMode, run_training
from .model import Link, to_01, to_pm1

TASKS = ("regression", "classification")
GENERATORS = {"regression": gen_regression_clients, "classification": gen_classification_clients}

# FedConfig fields a config file may set; n_clients comes from the dataset and
# seed from the repetition
_FED_FIELDS = {f.name for f in dataclasses.fields(FedConfig)} - {"n_clients", "seed", "mixup"}
_NOISE_FIELDS = {"kind", "level", "apply_probability", "affected_clients", "affected_fraction", "region"}
_THEORY_FIELDS = {"enabled", "L", "delta", "grid_resolution"}
_TOP_FIELDS = {"algo", "fed", "mixup", "dataset", "noise", "task", "repetitions", "seed", "out", "theory"}


# ---------------------------------------------------------------------------
# config

def _require(cond: bool, name: str, message: str) -> None:
    if not cond:
        raise ConfigError(name, message)


def _unknown(d: dict, allowed: set, where: str) -> None:
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}{extra[0]}", "unknown field")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything that determines an experiment's outputs."""

    dataset: dict
    algo: str = "drflm"
    task: str = "regression"
    fed: dict = field(default_factory=dict)
    mixup: dict = field(default_factory=lambda: {"kind": "beta", "alpha": 2.0, "beta": 2.0})
    noise: list = field(default_factory=list)
    repetitions: int = 1
    seed: int = 0
    theory: dict = field(default_factory=dict)
    out: str | None = None

    def __post_init__(self):
        self.validate()

    # -- validation ---------------------------------------------------------
    def validate(self) -> None:
        _require(self.algo in ALGORITHMS, "algo", f"expected one of {ALGORITHMS}, got {self.algo!r}")
        _require(self.task in TASKS, "task", f"expected one of {TASKS}, got {self.task!r}")
        _require(isinstance(self.repetitions, int) and self.repetitions >= 1,
                 "repetitions", "must be an integer >= 1")
        _require(isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64, "seed", "must be a u64")
        _require(isinstance(self.fed, dict), "fed", "must be an object")
        _unknown(self.fed, _FED_FIELDS, "fed.")
        _require(isinstance(self.theory, dict), "theory", "must be an object")
        _unknown(self.theory, _THEORY_FIELDS, "theory.")
        self._check_dataset()
        _require(isinstance(self.noise, list), "noise", "must be a list")
        for i, spec in enumerate(self.noise):
            _require(isinstance(spec, dict), f"noise[{i}]", "must be an object")
            _unknown(spec, _NOISE_FIELDS, f"noise[{i}].")
            if "affected_clients" in spec and "affected_fraction" in spec:
                raise ConfigError(f"noise[{i}]", "give affected_clients or affected_fraction, not both")
            try:
                self._noise_spec(spec, frozenset())
            except InvalidInputError as e:
                raise ConfigError(f"noise[{i}]", str(e)) from None
        try:
            self.mixup_mode()
        except (InvalidInputError, TypeError) as e:
            raise ConfigError("mixup", str(e)) from None
        try:
            self.fed_config(n_clients=self.n_clients, seed=0)
        except (InvalidInputError, TypeError, ValueError) as e:
            raise ConfigError("fed", str(e)) from None

    def _check_dataset(self) -> None:
        ds = self.dataset
        _require(isinstance(ds, dict), "dataset", "must be an object")
        has_gen, has_csv = "generator" in ds, "csv" in ds
        _require(has_gen != has_csv, "dataset", "needs exactly one of 'generator' or 'csv'")
        if has_gen:
            _unknown(ds, {"generator", "n_clients", "n_per_client", "d", "params"}, "dataset.")
            _require(ds["generator"] in GENERATORS, "dataset.generator",
                     f"expected one of {sorted(GENERATORS)}, got {ds['generator']!r}")
            for k in ("n_clients", "n_per_client", "d"):
                _require(isinstance(ds.get(k), int) and ds[k] >= 1, f"dataset.{k}", "must be a positive integer")
        else:
            _unknown(ds, {"csv", "label_column", "partition", "split"}, "dataset.")
            _require(isinstance(ds.get("label_column"), str), "dataset.label_column", "required string")
            part = ds.get("partition")
            _require(isinstance(part, dict) and part.get("kind") in ("ratios", "labels"),
                     "dataset.partition", "must be {'kind': 'ratios'|'labels', ...}")
            key = "ratios" if part["kind"] == "ratios" else "groups"
            _require(isinstance(part.get(key), list) and len(part[key]) >= 1,
                     f"dataset.partition.{key}", "must be a non-empty list")

    # -- derived objects ----------------------------------------------------
    @property
    def n_clients(self) -> int:
        ds = self.dataset
        if "generator" in ds:
            return ds["n_clients"]
        part = ds["partition"]
        return len(part["ratios"] if part["kind"] == "ratios" else part["groups"])

    def mixup_mode(self) -> MixupMode:
        return MixupMode(**self.mixup)

    def fed_config(self, n_clients: int, seed: int) -> FedConfig:
        kw = dict(self.fed)
        if "link" not in kw:
            kw["link"] = Link.LOGISTIC if self.task == "classification" else Link.SQUARED
        return FedConfig(n_clients=n_clients, seed=seed, mixup=self.mixup_mode(), **kw)

    @staticmethod
    def _noise_spec(spec: dict, affected: frozenset) -> NoiseSpec:
        region = spec.get("region")
        return NoiseSpec(kind=spec.get("kind", ""), level=float(spec.get("level", 0.0)),
                         apply_probability=float(spec.get("apply_probability", 1.0)),
                         affected_clients=affected,
                         region=tuple(region) if region is not None else None)

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")
        _unknown(d, _TOP_FIELDS, "")
        if "dataset" not in d:
            raise ConfigError("dataset", "required")
        return cls(**copy.deepcopy(d))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError("--config", f"cannot read {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError("--config", f"{path} is not valid JSON: {e}") from None
        return cls.from_dict(raw)

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def canonical(self) -> str:
        d = self.to_dict()
        d.pop("out")
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()


def config_diff(a: ExperimentConfig, b: ExperimentConfig) -> dict:
    """Top-level and nested keys whose values differ, as ``{dotted.key: (a, b)}``."""
    out: dict = {}

    def walk(x, y, prefix):
        if isinstance(x, dict) and isinstance(y, dict):
            for k in sorted(set(x) | set(y)):
                walk(x.get(k), y.get(k), f"{prefix}{k}.")
        elif x != y:
            out[prefix.rstrip(".")] = (x, y)

    da, db = a.to_dict(), b.to_dict()
    da.pop("out")
    db.pop("out")
    walk(da, db, "")
    return out


def derive_seed(base: int, counter: int) -> int:
    """Counter-mode seed: the first 63 bits of sha256(base:counter)."""
    h = hashlib.sha256(f"{int(base)}:{int(counter)}".encode()).digest()
    return int.from_bytes(h[:8], "big") >> 1


# ---------------------------------------------------------------------------
# artifacts

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except FileNotFoundError:
            pass
        raise


class FingerprintMismatch(ConfigError):
    def __init__(self, path: Path, found: str, expected: str):
        super().__init__("out", f"{path} holds results for config {found[:12]}, not {expected[:12]}; "
                                "refusing to overwrite")


def _stored_fingerprint(out: Path) -> str | None:
    f = out / "config.json"
    if not f.exists():
        return None
    try:
        return json.loads(f.read_text(encoding="utf-8")).get("fingerprint")
    except (OSError, json.JSONDecodeError):
        return None


def _claim_dir(out: Path, fp: str) -> None:
    found = _stored_fingerprint(out)
    if found is not None and found != fp:
        raise FingerprintMismatch(out, found, fp)
    if found is None and out.exists() and any(out.iterdir()):
        raise FingerprintMismatch(out, "<unknown>", fp)


# ---------------------------------------------------------------------------
# datasets

def build_clients(config: ExperimentConfig, seed: int) -> tuple[list[ClientDataset], list[list[int]]]:
    """Datasets for one repetition, noise applied; also the affected clients per noise spec."""
    ds = config.dataset
    if "generator" in ds:
        gen = GENERATORS[ds["generator"]]
        try:
            clients = gen(ds["n_clients"], ds["n_per_client"], ds["d"], np.random.default_rng([seed, 1]),
                          **ds.get("params", {}))
        except TypeError as e:
            raise ConfigError("dataset.params", str(e)) from None
        clients = [dataclasses.replace(c, provenance={**c.provenance, "seed": seed}) for c in clients]
    else:
        data = load_csv_dataset(ds["csv"], ds["label_column"])
        part = ds["partition"]
        if part["kind"] == "ratios":
            clients = partition_with_ratios(data, part["ratios"], np.random.default_rng([seed, 1]))
        else:
            clients = partition_by_label(data, part["groups"])
        clients = split_clients(clients, np.random.default_rng([seed, 4]), ds.get("split", (8, 1, 1)))
        clients = [dataclasses.replace(c, provenance={**c.provenance, "csv": str(ds["csv"]), "seed": seed})
                   for c in clients]
    affected_log = []
    for k, spec in enumerate(config.noise):
        if "affected_clients" in spec:
            affected = frozenset(int(i) for i in spec["affected_clients"])
        else:
            affected = choose_affected_clients(len(clients), float(spec.get("affected_fraction", 0.5)),
                                               np.random.default_rng([seed, 2, k]))
        affected_log.append(sorted(affected))
        ns = ExperimentConfig._noise_spec(spec, affected)
        rng = np.random.default_rng([seed, 3, k])
        clients = [_noisy(c, ns, rng) for c in clients]
    return clients, affected_log


def _noisy(client: ClientDataset, spec: NoiseSpec, rng: np.random.Generator) -> ClientDataset:
    # flips act on +-1 codes; {0,1} class labels round-trip through them
    y = client.train.y
    if spec.kind == "label_flip" and len(y) and np.all(np.isin(y, (0.0, 1.0))):
        pm = dataclasses.replace(client, train=client.train.with_labels(to_pm1(y)))
        out = inject_noise(pm, spec, rng)
        return dataclasses.replace(out, train=out.train.with_labels(to_01(out.train.y)))
    return inject_noise(client, spec, rng)


# ---------------------------------------------------------------------------
# single experiment

@dataclass
class RunSummary:
    fingerprint: str
    algo: str
    task: str
    base_seed: int
    seed_derivation: str
    seeds: list
    per_repetition: list
    mean_avg_metric: float
    std_avg_metric: float
    mean_worst_metric: float
    std_worst_metric: float

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def run_repetition(config: ExperimentConfig, seed: int, rep: int, fp: str, out: Path | None):
    clients, affected = build_clients(config, seed)
    fc = config.fed_config(len(clients), seed)
    state, log = run_training(clients, fc, config.algo, config.task)
    met = analysis.eval_metrics(state.w_bar, clients, fc.link, config.task)
    result = {"rep": rep, "seed": seed, "avg_metric": met.average, "worst_metric": met.worst,
              "per_client": met.per_client, "affected_clients": affected,
              "final_lambda": state.lam.tolist(), "stages": len(log)}
    if out is not None:
        lines = []
        for r in log:
            d = r.to_dict()
            d["fingerprint"] = fp
            d["rep"] = rep
            lines.append(_dumps(d))
        rep_dir = out / f"rep_{rep:03d}"
        atomic_write(rep_dir / "rounds.jsonl", "".join(line + "\n" for line in lines))
        if config.theory.get("enabled", True):
            moreau = next((r.moreau_grad for r in reversed(log) if r.moreau_grad is not None), None)
            gamma_diss = max((r.dissimilarity for r in log if r.dissimilarity is not None), default=None)
            rep_ = analysis.theory_report(
                state.w_bar, clients, fc.link, fc.mixup, L=float(config.theory.get("L", 1.0)),
                delta=float(config.theory.get("delta", 0.05)),
                grid_resolution=float(config.theory.get("grid_resolution", 0.05)),
                moreau_gradient=moreau, gradient_dissimilarity=gamma_diss,
                rng=np.random.default_rng([seed, 5]))
            atomic_write(rep_dir / "theory.json", _dumps({"fingerprint": fp, **rep_.to_dict()}) + "\n")
        atomic_write(rep_dir / "provenance.json",
                     _dumps({"fingerprint": fp, "clients": [c.provenance for c in clients]}) + "\n")
    return result


def run_experiment(config: ExperimentConfig, out=None) -> RunSummary:
    """Run every repetition; write artifacts under ``out`` (or ``config.out``) when given."""
    out = out if out is not None else config.out
    out = Path(out) if out is not None else None
    fp = config.fingerprint()
    if out is not None:
        _claim_dir(out, fp)
        atomic_write(out / "config.json", _dumps({"fingerprint": fp, "config": json.loads(config.canonical())}) + "\n")
    seeds = [derive_seed(config.seed, k) for k in range(config.repetitions)]
    reps = [run_repetition(config, s, k, fp, out) for k, s in enumerate(seeds)]
    avg = [r["avg_metric"] for r in reps]
    worst = [r["worst_metric"] for r in reps]
    summary = RunSummary(
        fingerprint=fp, algo=config.algo, task=config.task, base_seed=config.seed,
        seed_derivation="sha256(base:counter)[:8] >> 1", seeds=seeds, per_repetition=reps,
        mean_avg_metric=float(np.mean(avg)), std_avg_metric=_std(avg),
        mean_worst_metric=float(np.mean(worst)), std_worst_metric=_std(worst))
    if out is not None:
        atomic_write(out / "summary.json", _dumps(summary.to_dict()) + "\n")
    return summary


# ---------------------------------------------------------------------------
# sweeps

SWEEP_HEADER = ("level", "algo", "seed", "avg_metric", "worst_metric")
DEFAULT_NOISE = {"kind": "gaussian_label", "apply_probability": 0.3, "affected_fraction": 0.5}


def noise_cell_config(config: ExperimentConfig, level: float, algo: str) -> ExperimentConfig:
    """``config`` with ``algo`` and the Gaussian label-noise level set to ``level``."""
    noise = [dict(n) for n in config.noise]
    idx = [i for i, n in enumerate(noise) if n.get("kind") == "gaussian_label"]
    if idx:
        noise[idx[0]]["level"] = float(level)
    else:
        noise.append({**DEFAULT_NOISE, "level": float(level)})
    return config.replace(algo=algo, noise=noise, out=None)


def _cell_done(cell: Path, fp: str) -> dict | None:
    f = cell / "summary.json"
    if _stored_fingerprint(cell) != fp or not f.exists():
        return None
    try:
        d = json.loads(f.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return None
    return d if d.get("fingerprint") == fp else None


def run_noise_sweep(config: ExperimentConfig, levels: Sequence[float],
                    algos: Sequence[str] = ALGORITHMS, out=None) -> list[dict]:
    """One experiment per (level, algo); rows of the sweep table, one per repetition.

    With an output directory, finished cells whose stored fingerprint matches
    are read back instead of recomputed, ``sweep.csv`` is rewritten, and
    ``sweep.json`` records every cell's fingerprint and its config diff
    against the first cell.
    """
    if config.task != "regression":
        raise ConfigError("task", "noise sweeps need a regression task")
    for lv in levels:
        if not (isinstance(lv, (int, float)) and math.isfinite(lv) and lv >= 0):
            raise ConfigError("levels", f"noise levels must be finite and >= 0, got {lv}")
    for a in algos:
        if a not in ALGORITHMS:
            raise ConfigError("algo", f"expected one of {ALGORITHMS}, got {a!r}")
    out = out if out is not None else config.out
    out = Path(out) if out is not None else None
    rows = []
    cells = {}
    first = None
    for lv in levels:
        for algo in algos:
            cell_cfg = noise_cell_config(config, lv, algo)
            first = first or cell_cfg
            key = f"level={float(lv):g}/{algo}"
            diff = {k: list(v) for k, v in config_diff(first, cell_cfg).items()}
            cells[key] = {"fingerprint": cell_cfg.fingerprint(), "diff_vs_first": diff}
            summary = None
            cell = None
            if out is not None:
                cell = out / "cells" / f"level={float(lv):g}" / algo
                summary = _cell_done(cell, cell_cfg.fingerprint())
            if summary is None:
                summary = run_experiment(cell_cfg, cell).to_dict()
            for r in summary["per_repetition"]:
                rows.append({"level": float(lv), "algo": algo, "seed": r["seed"],
                             "avg_metric": r["avg_metric"], "worst_metric": r["worst_metric"]})
    if out is not None:
        meta = {"fingerprint": config.fingerprint(), "levels": [float(v) for v in levels],
                "algos": list(algos), "first_cell": next(iter(cells), None), "cells": cells}
        atomic_write(out / "sweep.json", _dumps(meta) + "\n")
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=SWEEP_HEADER, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
        atomic_write(out / "sweep.csv", buf.getvalue())
    return rows


def summarize_rows(rows: Sequence[dict]) -> dict:
    """Mean and sample std of the worst/avg metric per (level, algo)."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((float(r["level"]), r["algo"]), []).append(r)
    out = {}
    for key, rs in groups.items():
        worst = [float(r["worst_metric"]) for r in rs]
        avg = [float(r["avg_metric"]) for r in rs]
        out[key] = {"n": len(rs), "mean_worst": float(np.mean(worst)), "std_worst": _std(worst),
                    "mean_avg": float(np.mean(avg)), "std_avg": _std(avg)}
    return out


# ---------------------------------------------------------------------------
# counter-example

OBJECTIVES = {"fedavg": ("average", "off"), "drfa": ("worst_case", "off"),
              "drflm": ("worst_case", "all_pairs")}


def run_counterexample(p1: float, p2: float, n: int, seeds: Sequence[int], d: int = 1) -> dict:
    """Exact threshold ERM on the two-client construction under the three objectives.

    Risks are clean population 0-1 risks of the fitted boundary.
    """
    per_seed = []
    for s in seeds:
        c1, c2 = gen_two_client_threshold(n, p1, p2, d, np.random.default_rng([int(s), 7]))
        row = {"seed": int(s)}
        for name, (objective, mixup) in OBJECTIVES.items():
            b = analysis.threshold_erm([c1.train, c2.train], objective, mixup).b
            row[f"{name}_boundary"] = float(b)
            row[f"{name}_risk"] = clean_threshold_risk(b)
        per_seed.append(row)
    mean = {f"{k}_risk": float(np.mean([r[f"{k}_risk"] for r in per_seed])) for k in OBJECTIVES}
    return {"p1": p1, "p2": p2, "n": n, "d": d, "seeds": [int(s) for s in seeds],
            "per_seed": per_seed, "mean": mean,
            "analytic_boundary_risk": clean_threshold_risk(-1.0 - p2)}
