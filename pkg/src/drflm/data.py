"""Datasets, synthetic generators, CSV ingestion, partitioning and label noise."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from .errors import InvalidInputError


class Sample(NamedTuple):
    x: np.ndarray
    y: float


@dataclass(frozen=True)
class Dataset:
    """Row-aligned features ``X`` (n, d) and labels ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.ndim != 2:
            X = X.reshape(len(y), -1)
        if X.shape[0] != y.shape[0]:
            raise InvalidInputError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise InvalidInputError("dataset contains non-finite entries")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d: int) -> "Dataset":
        return cls(np.zeros((0, d)), np.zeros(0))

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Dataset":
        if not samples:
            raise InvalidInputError("no samples")
        X = np.vstack([np.asarray(s.x, dtype=float) for s in samples])
        return cls(X, np.array([float(s.y) for s in samples]))

    def __len__(self) -> int:
        return self.y.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for x, y in zip(self.X, self.y):
            yield Sample(x, float(y))

    def __getitem__(self, i) -> Sample:
        return Sample(self.X[i], float(self.y[i]))

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx])

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]))

    def with_labels(self, y) -> "Dataset":
        return Dataset(self.X, y)


@dataclass(frozen=True)
class ClientDataset:
    client_id: int
    train: Dataset
    validation: Dataset
    test: Dataset
    provenance: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.train.dim

    def all(self) -> Dataset:
        return self.train.concat(self.validation).concat(self.test)


NOISE_KINDS = ("gaussian_label", "label_flip", "region_flip")


@dataclass(frozen=True)
class NoiseSpec:
    kind: str
    level: float
    apply_probability: float = 1.0
    affected_clients: frozenset = frozenset()
    region: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise InvalidInputError(f"unknown noise kind {self.kind!r}; expected one of {NOISE_KINDS}")
        if not self.level >= 0:
            raise InvalidInputError(f"noise level must be nonnegative, got {self.level}")
        if not 0.0 <= self.apply_probability <= 1.0:
            raise InvalidInputError(f"apply_probability must lie in [0, 1], got {self.apply_probability}")
        if self.kind == "region_flip":
            if self.region is None:
                raise InvalidInputError("region_flip needs a region on the first coordinate")
            if not self.level <= 1.0:
                raise InvalidInputError(f"flip probability must lie in [0, 1], got {self.level}")
        object.__setattr__(self, "affected_clients", frozenset(int(c) for c in self.affected_clients))


# ---------------------------------------------------------------------------
# splitting helpers

def largest_remainder(total: int, ratios: Sequence[float]) -> list[int]:
    """Integer sizes proportional to ``ratios`` summing to ``total``.

    Leftover units go to the largest fractional parts; ties favour earlier entries.
    """
    ratios = np.asarray(ratios, dtype=float)
    if ratios.size == 0 or np.any(ratios < 0) or ratios.sum() <= 0:
        raise InvalidInputError(f"invalid ratios {ratios.tolist()}")
    exact = total * ratios / ratios.sum()
    sizes = np.floor(exact).astype(int)
    leftover = total - int(sizes.sum())
    order = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes.tolist()


def _chunks(perm: np.ndarray, sizes: Sequence[int]) -> list[np.ndarray]:
    bounds = np.cumsum([0, *sizes])
    return [np.sort(perm[bounds[i]:bounds[i + 1]]) for i in range(len(sizes))]


def split_train_val_test(samples: Dataset, rng: np.random.Generator,
                         ratio: Sequence[float] = (8, 1, 1)) -> tuple[Dataset, Dataset, Dataset]:
    if len(samples) < 10:
        raise InvalidInputError(f"need at least 10 samples to split, got {len(samples)}")
    sizes = largest_remainder(len(samples), ratio)
    parts = _chunks(rng.permutation(len(samples)), sizes)
    return tuple(samples.subset(p) for p in parts)


def split_clients(clients: Sequence[ClientDataset], rng: np.random.Generator,
                  ratio: Sequence[float] = (8, 1, 1)) -> list[ClientDataset]:
    """Re-split each client's pooled data into train/validation/test."""
    out = []
    for c in clients:
        tr, va, te = split_train_val_test(c.all(), rng, ratio)
        out.append(replace(c, train=tr, validation=va, test=te,
                           provenance={**c.provenance, "split_ratio": list(ratio)}))
    return out


def _client(cid: int, data: Dataset, provenance: dict) -> ClientDataset:
    return ClientDataset(cid, data, Dataset.empty(data.dim), Dataset.empty(data.dim), provenance)


# ---------------------------------------------------------------------------
# generators

def _check_flip_prob(p1: float) -> None:
    # p1 == 0 is the explicit noiseless override
    if not (p1 == 0.0 or 0.5 < p1 < 1.0):
        raise InvalidInputError(f"flip probability must satisfy 1/2 < p1 < 1 (or 0), got {p1}")


def _slab_features(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    X = rng.uniform(-2.0, -1.0, size=(n, d))
    right = rng.random(n) < 0.5
    X[right, 0] = rng.uniform(1.0, 2.0, size=int(right.sum()))
    return X


def gen_two_client_threshold(n_per_client: int, p1: float, p2: float, d: int,
                 rng: np.random.Generator) -> tuple[ClientDataset, ClientDataset]:
    """Two clients drawing x uniformly from [-2,-1]^d and [1,2]x[-2,-1]^(d-1), y = sgn(x_1).

    Client 1 is clean.  Client 2 flips labels with probability ``p1`` when
    ``x_1`` lies in ``[-1 - p2, -1]``.
    """
    _check_flip_prob(p1)
    if not 0.0 < p2 < 1.0:
        raise InvalidInputError(f"p2 must lie in (0, 1), got {p2}")
    if d < 1 or n_per_client < 1:
        raise InvalidInputError("need d >= 1 and n_per_client >= 1")
    params = {"generator": "two_client_threshold", "n_per_client": n_per_client, "p1": p1, "p2": p2, "d": d}
    clients = []
    for cid in (0, 1):
        X = _slab_features(n_per_client, d, rng)
        y = np.where(X[:, 0] > 0, 1.0, -1.0)
        clients.append(_client(cid, Dataset(X, y), dict(params)))
    flip = NoiseSpec("region_flip", level=p1, affected_clients={1}, region=(-1.0 - p2, -1.0))
    return clients[0], inject_noise(clients[1], flip, rng)


def gen_1d_example(n: int, p1: float, rng: np.random.Generator) -> ClientDataset:
    """x uniform on [-2,-1] U [1,2], y = 1 - 2*1{x <= 0}, flips on [-2,-1] with probability p1."""
    _check_flip_prob(p1)
    if n < 1:
        raise InvalidInputError("n must be positive")
    X = _slab_features(n, 1, rng)
    y = np.where(X[:, 0] > 0, 1.0, -1.0)
    client = _client(0, Dataset(X, y), {"generator": "threshold_1d", "n": n, "p1": p1})
    flip = NoiseSpec("region_flip", level=p1, affected_clients={0}, region=(-2.0, -1.0))
    return inject_noise(client, flip, rng)


def clean_threshold_risk(b: float) -> float:
    """Clean 0-1 risk of the threshold ``x_1 > b`` on the two-slab feature law."""
    left = min(max(-1.0 - b, 0.0), 1.0)
    right = min(max(b - 1.0, 0.0), 1.0)
    return 0.5 * (left + right)


def _fan(i: int, n_clients: int, d: int) -> np.ndarray:
    angle = 2.0 * math.pi * i / n_clients
    u = np.zeros(d)
    u[0], u[1] = math.cos(angle), math.sin(angle)
    return u


def gen_regression_clients(n_clients: int, n_per_client: int, d: int, rng: np.random.Generator,
                           mean_offset: float = 3.0, coef_radius: float = 0.5,
                           feature_scale: float = 0.3, label_noise: float = 0.1,
                           shared_coef: float = 0.0,
                           split: Sequence[float] = (8, 1, 1)) -> list[ClientDataset]:
    """Linear regression clients whose optima conflict along their feature means.

    Client ``i`` has unit direction ``u_i`` fanned evenly in the first two
    coordinates, features ``x ~ N(mean_offset * u_i, feature_scale^2 I)`` and
    labels ``y = coef_radius * u_i . x + N(0, label_noise^2)``.  Every client
    wants ``w . mean = coef_radius * mean_offset``, which no single ``w`` can
    satisfy once the means sum to zero.  ``shared_coef`` adds a coefficient on
    the last coordinate common to every client (needs ``d >= 3``).
    """
    if n_clients < 1 or n_per_client < 10 or d < 2:
        raise InvalidInputError("need n_clients >= 1, n_per_client >= 10, d >= 2")
    if shared_coef and d < 3:
        raise InvalidInputError("shared_coef needs d >= 3")
    clients = []
    for i in range(n_clients):
        u = _fan(i, n_clients, d)
        w_star = coef_radius * u
        if shared_coef:
            w_star[-1] = shared_coef
        X = mean_offset * u + feature_scale * rng.standard_normal((n_per_client, d))
        y = X @ w_star + label_noise * rng.standard_normal(n_per_client)
        tr, va, te = split_train_val_test(Dataset(X, y), rng, split)
        clients.append(ClientDataset(i, tr, va, te, {
            "generator": "regression", "n_per_client": n_per_client, "d": d,
            "mean_offset": mean_offset, "coef_radius": coef_radius,
            "feature_scale": feature_scale, "label_noise": label_noise,
            "shared_coef": shared_coef, "w_star": w_star.tolist(),
        }))
    return clients


def gen_classification_clients(n_clients: int, n_per_client: int, d: int, rng: np.random.Generator,
                               shift: float = 0.3, scale: float = 4.0, mean_offset: float = 0.0,
                               split: Sequence[float] = (8, 1, 1)) -> list[ClientDataset]:
    """Tabular binary task with {0,1} labels drawn from a per-client logistic model.

    Client ``i`` labels with ``sigmoid(scale * w_i . (x - m_i))``, where ``w_i`` is a
    shared random unit direction tilted by ``shift`` toward a client-specific
    orthogonal direction.  Features are ``m_i + N(0, I)`` with ``m_i`` of norm
    ``mean_offset`` orthogonal to ``w_i``, so a model without an intercept cannot
    match every client's boundary at once when ``mean_offset > 0``.
    """
    if n_clients < 1 or n_per_client < 10 or d < 2:
        raise InvalidInputError("need n_clients >= 1, n_per_client >= 10, d >= 2")
    if not 0.0 <= shift <= 1.0:
        raise InvalidInputError(f"shift must lie in [0, 1], got {shift}")
    if mean_offset < 0:
        raise InvalidInputError(f"mean_offset must be >= 0, got {mean_offset}")
    base = rng.standard_normal(d)
    base /= np.linalg.norm(base)
    clients = []
    for i in range(n_clients):
        p = rng.standard_normal(d)
        p -= (p @ base) * base
        p /= np.linalg.norm(p)
        w_star = math.sqrt(1.0 - shift * shift) * base + shift * p
        q = rng.standard_normal(d)
        q -= (q @ w_star) * w_star
        m = mean_offset * q / np.linalg.norm(q)
        Z = rng.standard_normal((n_per_client, d))
        prob = 0.5 * (1.0 + np.tanh(0.5 * scale * (Z @ w_star)))
        y = (rng.random(n_per_client) < prob).astype(float)
        tr, va, te = split_train_val_test(Dataset(Z + m, y), rng, split)
        clients.append(ClientDataset(i, tr, va, te, {
            "generator": "classification", "n_per_client": n_per_client, "d": d,
            "shift": shift, "scale": scale, "mean_offset": mean_offset,
        }))
    return clients


# ---------------------------------------------------------------------------
# CSV

def load_csv_dataset(path, label_column: str) -> Dataset:
    """Read a header-first numeric CSV; every column except ``label_column`` is a feature.

    Row numbers in error messages count data rows from 1 (the header is row 0).
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise InvalidInputError(f"{path}: empty file")
        header = [h.strip() for h in header]
        if label_column not in header:
            raise InvalidInputError(f"{path}: label column {label_column!r} not in header {header}")
        label_idx = header.index(label_column)
        feature_idx = [i for i in range(len(header)) if i != label_idx]
        rows_x, rows_y = [], []
        for rownum, row in enumerate(reader, start=1):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(header):
                raise InvalidInputError(
                    f"{path}: row {rownum} has {len(row)} cells, header has {len(header)}")
            values = []
            for i, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise InvalidInputError(
                        f"{path}: row {rownum} column {header[i]}: non-numeric value {cell!r}") from None
                if not math.isfinite(v):
                    raise InvalidInputError(f"{path}: row {rownum} column {header[i]}: non-finite value")
                values.append(v)
            rows_x.append([values[i] for i in feature_idx])
            rows_y.append(values[label_idx])
    if not rows_y:
        raise InvalidInputError(f"{path}: no data rows")
    return Dataset(np.array(rows_x, dtype=float), np.array(rows_y, dtype=float))


def write_csv_dataset(path, data: Dataset, label_column: str = "label",
                      feature_names: Sequence[str] | None = None) -> None:
    names = list(feature_names) if feature_names else [f"x{i}" for i in range(data.dim)]
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*names, label_column])
        for x, y in zip(data.X, data.y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(y))])


# ---------------------------------------------------------------------------
# partitions

def partition_by_label(data: Dataset, label_groups: Sequence[Sequence[float]]) -> list[ClientDataset]:
    """Client ``i`` receives every sample whose label is in ``label_groups[i]``."""
    groups = [set(float(v) for v in g) for g in label_groups]
    if not groups:
        raise InvalidInputError("no label groups given")
    seen: set[float] = set()
    for g in groups:
        if g & seen:
            raise InvalidInputError(f"label groups overlap on {sorted(g & seen)}")
        seen |= g
    clients = []
    for cid, g in enumerate(groups):
        idx = np.nonzero(np.isin(data.y, list(g)))[0]
        if idx.size == 0:
            raise InvalidInputError(f"label group {sorted(g)} matches no samples")
        clients.append(_client(cid, data.subset(idx), {"partition": "by_label", "labels": sorted(g)}))
    return clients


def partition_with_ratios(data: Dataset, ratios: Sequence[float],
                          rng: np.random.Generator) -> list[ClientDataset]:
    ratios = list(ratios)
    if not ratios or any(not r > 0 for r in ratios):
        raise InvalidInputError(f"ratios must be positive, got {ratios}")
    if len(data) < len(ratios):
        raise InvalidInputError(f"{len(data)} samples cannot fill {len(ratios)} clients")
    sizes = largest_remainder(len(data), ratios)
    parts = _chunks(rng.permutation(len(data)), sizes)
    return [_client(cid, data.subset(p), {"partition": "ratios", "ratios": ratios})
            for cid, p in enumerate(parts)]


# ---------------------------------------------------------------------------
# noise

def choose_affected_clients(n_clients: int, fraction: float, rng: np.random.Generator) -> frozenset:
    """Seeded choice of ``round-half-up(fraction * n_clients)`` clients (at least one when fraction > 0)."""
    if not 0.0 <= fraction <= 1.0:
        raise InvalidInputError(f"client fraction must lie in [0, 1], got {fraction}")
    k = int(math.floor(fraction * n_clients + 0.5))
    if fraction > 0:
        k = max(k, 1)
    return frozenset(int(c) for c in rng.choice(n_clients, size=k, replace=False))


def inject_noise(dataset: ClientDataset, spec: NoiseSpec, rng: np.random.Generator) -> ClientDataset:
    """Perturb the training labels of ``dataset`` if it is one of ``spec.affected_clients``.

    Draws are made for every training sample regardless of outcome so the
    stream consumption does not depend on the labels.
    """
    if dataset.client_id not in spec.affected_clients:
        return dataset
    train = dataset.train
    y = train.y.copy()
    n = len(y)
    hit = rng.random(n) < spec.apply_probability
    if spec.kind == "gaussian_label":
        y = y + np.where(hit, spec.level * rng.standard_normal(n), 0.0)
    elif spec.kind == "label_flip":
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidInputError("label_flip noise needs labels in {-1, +1}")
        y = np.where(hit, -y, y)
    else:
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise InvalidInputError("region_flip noise needs labels in {-1, +1}")
        lo, hi = spec.region
        inside = (train.X[:, 0] >= lo) & (train.X[:, 0] <= hi)
        flip = inside & (rng.random(n) < spec.level)
        y = np.where(hit & flip, -y, y)
    record = {"kind": spec.kind, "level": spec.level, "apply_probability": spec.apply_probability,
              "n_perturbed": int(np.sum(y != train.y))}
    prov = dict(dataset.provenance)
    prov["noise"] = [*prov.get("noise", []), record]
    return replace(dataset, train=train.with_labels(y), provenance=prov)
