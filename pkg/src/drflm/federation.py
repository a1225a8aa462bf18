"""Federated training: FedAvg, DRFA and DRFLM (DRFA with local mixup).

One *stage* is a communication round: sampled clients run ``sync_gap``
projected SGD steps from the global model, the server averages their final
weights, and (for the robust variants) a second client sample scores the
averaged intermediate model so the client weights ``lambda`` can take a
projected ascent step.

Randomness comes from per-stage substreams keyed by ``(seed, stage, role,
slot)``, so any stage can run its client updates in any order (or in
parallel) and still reproduce the sequential result.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import analysis
from .data import ClientDataset
from .errors import InvalidInputError, NumericalError
from .model import GlmModel, Link, batch_glm_losses, batch_nll_losses, glm_gradient, mixup_sample
from .numerics import project_onto_ball, project_onto_simplex

ALGORITHMS = ("fedavg", "drfa", "drflm")

# substream roles
_SERVER, _CLIENT, _EVAL = 0, 1, 2


@dataclass(frozen=True)
class MixupMode:
    """How the mixup ratio is chosen: ``off``, ``fixed`` (gamma) or ``beta`` (alpha, beta)."""

    kind: str = "beta"
    gamma: float = 1.0
    alpha: float = 2.0
    beta: float = 2.0

    def __post_init__(self):
        if self.kind not in ("off", "fixed", "beta"):
            raise InvalidInputError(f"unknown mixup mode {self.kind!r}")
        if self.kind == "fixed" and not 0.0 < self.gamma <= 1.0:
            raise InvalidInputError(f"fixed mixup ratio must lie in (0, 1], got {self.gamma}")
        if self.kind == "beta" and not (self.alpha > 0 and self.beta > 0):
            raise InvalidInputError("Beta mixup parameters must be positive")

    @classmethod
    def off(cls) -> "MixupMode":
        return cls("off")

    @classmethod
    def fixed(cls, gamma: float) -> "MixupMode":
        return cls("fixed", gamma=gamma)

    @classmethod
    def beta_resampled(cls, alpha: float, beta: float) -> "MixupMode":
        return cls("beta", alpha=alpha, beta=beta)

    @property
    def enabled(self) -> bool:
        return self.kind != "off"

    def draw(self, rng: np.random.Generator, size: int | None = None):
        if self.kind == "fixed":
            return self.gamma if size is None else np.full(size, self.gamma)
        return rng.beta(self.alpha, self.beta, size=size)


@dataclass(frozen=True)
class FedConfig:
    n_clients: int
    # clients sampled per stage; None means min(n_clients, 3)
    sample_size: int | None = None
    sync_gap: int = 5
    total_rounds: int = 100
    eta_w: float = 0.01
    eta_lambda: float = 0.1
    mixup: MixupMode = field(default_factory=MixupMode)
    lambda_eval_batch: int = 8
    ball_radius: float = 1.0
    seed: int = 0
    link: Link = Link.SQUARED
    # "nll" adds the base-measure term to the loss the server ascends on
    objective: str = "nll"
    track_moreau: bool = True
    moreau_inner_steps: int = 200
    moreau_l: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "link", Link(self.link))
        if self.n_clients < 1:
            raise InvalidInputError("n_clients must be positive")
        if self.sample_size is None:
            object.__setattr__(self, "sample_size", min(self.n_clients, 3))
        if not 1 <= self.sample_size <= self.n_clients:
            raise InvalidInputError(f"sample_size must lie in [1, {self.n_clients}], got {self.sample_size}")
        if self.sync_gap < 1:
            raise InvalidInputError("sync_gap must be at least 1")
        if self.total_rounds < 0 or self.total_rounds % self.sync_gap:
            raise InvalidInputError(
                f"total_rounds ({self.total_rounds}) must be a nonnegative multiple of sync_gap ({self.sync_gap})")
        if self.eta_w < 0 or self.eta_lambda < 0:
            raise InvalidInputError("learning rates must be nonnegative")
        if self.lambda_eval_batch < 1:
            raise InvalidInputError("lambda_eval_batch must be at least 1")
        if not self.ball_radius > 0:
            raise InvalidInputError("ball_radius must be positive")
        if self.objective not in ("nll", "glm"):
            raise InvalidInputError(f"unknown objective {self.objective!r}")
        if self.seed < 0:
            raise InvalidInputError("seed must be nonnegative")

    @property
    def n_stages(self) -> int:
        return self.total_rounds // self.sync_gap


@dataclass(frozen=True)
class FederationState:
    w_bar: np.ndarray
    lam: np.ndarray
    stage: int = 0


@dataclass(frozen=True)
class ClientResult:
    w_tau: np.ndarray
    w_tprime: np.ndarray
    loss_at_tprime: float
    steps: int


@dataclass
class RoundRecord:
    stage: int
    lam: list
    selected: list
    evaluated: list
    t_prime: int | None
    grad_steps: int
    contacts: int
    train_losses: list = field(default_factory=list)
    test_metrics: list = field(default_factory=list)
    avg_metric: float | None = None
    worst_metric: float | None = None
    grad_norm: float | None = None
    moreau_grad: float | None = None
    dissimilarity: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def stream(seed: int, stage: int, role: int, slot: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, stage, role, slot])


def initial_state(clients: Sequence[ClientDataset], config: FedConfig, algo: str = "drflm") -> FederationState:
    d = clients[0].dim
    if algo == "fedavg":
        lam = _size_weights(clients)
    else:
        lam = np.full(len(clients), 1.0 / len(clients))
    return FederationState(np.zeros(d), lam, 0)


def _size_weights(clients) -> np.ndarray:
    sizes = np.array([len(c.train) for c in clients], dtype=float)
    return sizes / sizes.sum()


def _local_sample(client: ClientDataset, mixup: MixupMode, rng: np.random.Generator):
    n = len(client.train)
    if not mixup.enabled:
        j = int(rng.integers(n))
        return client.train.X[j], float(client.train.y[j])
    j, k = (int(v) for v in rng.integers(n, size=2))
    gamma = float(mixup.draw(rng))
    m = mixup_sample(client.train[j], client.train[k], gamma, (j, k))
    return m.x, m.y


def local_loss(client: ClientDataset, w: np.ndarray, config: FedConfig, mixup: MixupMode,
               rng: np.random.Generator) -> float:
    """Mean loss over ``lambda_eval_batch`` fresh (mixup or raw) draws."""
    tr = client.train
    n = len(tr)
    B = config.lambda_eval_batch
    if mixup.enabled:
        j = rng.integers(n, size=B)
        k = rng.integers(n, size=B)
        g = np.asarray(mixup.draw(rng, size=B), dtype=float)
        X = g[:, None] * tr.X[j] + (1.0 - g)[:, None] * tr.X[k]
        y = g * tr.y[j] + (1.0 - g) * tr.y[k]
    else:
        j = rng.integers(n, size=B)
        X, y = tr.X[j], tr.y[j]
    fn = batch_nll_losses if config.objective == "nll" else batch_glm_losses
    return float(np.mean(fn(w, X, y, config.link)))


def client_update(client: ClientDataset, w_start, t_prime: int, config: FedConfig,
                  rng: np.random.Generator, mixup: MixupMode | None = None) -> ClientResult:
    """``sync_gap`` projected SGD steps on (mixup) samples of the client's training set."""
    mixup = config.mixup if mixup is None else mixup
    if len(client.train) == 0:
        raise InvalidInputError(f"client {client.client_id} has no training samples")
    if not 1 <= t_prime <= config.sync_gap:
        raise InvalidInputError(f"t_prime must lie in [1, {config.sync_gap}], got {t_prime}")
    w = np.asarray(w_start, dtype=float).copy()
    w_tprime = w
    for t in range(1, config.sync_gap + 1):
        x, y = _local_sample(client, mixup, rng)
        grad = glm_gradient(GlmModel(w, config.link), x, y)
        w = project_onto_ball(w - config.eta_w * grad, config.ball_radius)
        if t == t_prime:
            w_tprime = w
    loss = local_loss(client, w_tprime, config, mixup, rng)
    return ClientResult(w_tau=w, w_tprime=w_tprime, loss_at_tprime=loss, steps=config.sync_gap)


def _robust_stage(state: FederationState, clients: Sequence[ClientDataset], config: FedConfig,
                  mixup: MixupMode) -> tuple[FederationState, RoundRecord]:
    N, m, tau = len(clients), config.sample_size, config.sync_gap
    s = state.stage
    server = stream(config.seed, s, _SERVER)
    selected = server.choice(N, size=m, replace=True, p=state.lam)
    t_prime = int(server.integers(1, tau + 1))
    evaluated = server.integers(N, size=m)

    results = [client_update(clients[int(i)], state.w_bar, t_prime, config,
                             stream(config.seed, s, _CLIENT, slot), mixup)
               for slot, i in enumerate(selected)]
    w_bar = np.mean([r.w_tau for r in results], axis=0)
    w_tilde = np.mean([r.w_tprime for r in results], axis=0)

    v = np.zeros(N)
    for slot, i in enumerate(evaluated):
        loss = local_loss(clients[int(i)], w_tilde, config, mixup, stream(config.seed, s, _EVAL, slot))
        v[int(i)] += (N / m) * loss
    lam = project_onto_simplex(state.lam + config.eta_lambda * tau * v)

    record = RoundRecord(stage=s + 1, lam=lam.tolist(), selected=selected.tolist(),
                         evaluated=evaluated.tolist(), t_prime=t_prime,
                         grad_steps=sum(r.steps for r in results), contacts=2 * m)
    return FederationState(w_bar, lam, s + 1), record


def drflm_stage(state, clients, config: FedConfig):
    return _robust_stage(state, clients, config, config.mixup)


def drfa_stage(state, clients, config: FedConfig):
    return _robust_stage(state, clients, config, MixupMode.off())


def fedavg_stage(state, clients, config: FedConfig):
    """Size-weighted client sampling, raw-sample local SGD, plain averaging."""
    s = state.stage
    p = _size_weights(clients)
    server = stream(config.seed, s, _SERVER)
    selected = server.choice(len(clients), size=config.sample_size, replace=True, p=p)
    results = [client_update(clients[int(i)], state.w_bar, config.sync_gap, config,
                             stream(config.seed, s, _CLIENT, slot), MixupMode.off())
               for slot, i in enumerate(selected)]
    w_bar = np.mean([r.w_tau for r in results], axis=0)
    record = RoundRecord(stage=s + 1, lam=p.tolist(), selected=selected.tolist(), evaluated=[],
                         t_prime=None, grad_steps=sum(r.steps for r in results),
                         contacts=config.sample_size)
    return FederationState(w_bar, p, s + 1), record


STAGES = {"fedavg": fedavg_stage, "drfa": drfa_stage, "drflm": drflm_stage}


def _annotate(record: RoundRecord, state: FederationState, clients, config: FedConfig,
              task: str, L_smooth: float | None) -> RoundRecord:
    w = state.w_bar
    loss_kind = config.objective
    record.train_losses = analysis.client_losses(w, clients, config.link, loss_kind).tolist()
    if all(len(c.test) for c in clients):
        met = analysis.eval_metrics(w, clients, config.link, task)
        record.test_metrics, record.avg_metric, record.worst_metric = met.per_client, met.average, met.worst
    grads = [analysis.batch_gradient(w, c.train.X, c.train.y, config.link) for c in clients]
    record.grad_norm = float(np.linalg.norm(np.tensordot(state.lam, np.stack(grads), axes=1)))
    record.dissimilarity = analysis.gradient_dissimilarity(w, clients, state.lam, config.link)
    if config.track_moreau and L_smooth is not None:
        phi = analysis.worst_case_objective(clients, config.link, loss_kind)
        record.moreau_grad = analysis.moreau_gradient_estimate(w, phi, L_smooth, config.moreau_inner_steps)
    return record


def run_training(clients: Sequence[ClientDataset], config: FedConfig, algo: str = "drflm",
                 task: str = "regression") -> tuple[FederationState, list[RoundRecord]]:
    """Run ``total_rounds / sync_gap`` stages of ``algo``; one record per stage."""
    if algo not in STAGES:
        raise InvalidInputError(f"unknown algorithm {algo!r}; expected one of {ALGORITHMS}")
    if len(clients) != config.n_clients:
        raise InvalidInputError(f"config expects {config.n_clients} clients, got {len(clients)}")
    for c in clients:
        if len(c.train) == 0:
            raise InvalidInputError(f"client {c.client_id} has no training samples")
    step = STAGES[algo]
    L_smooth = None
    if config.track_moreau:
        L_smooth = config.moreau_l or analysis.smoothness_constant(clients, config.link)
    state = initial_state(clients, config, algo)
    log: list[RoundRecord] = []
    for _ in range(config.n_stages):
        state, record = step(state, clients, config)
        if not (np.all(np.isfinite(state.w_bar)) and np.all(np.isfinite(state.lam))):
            raise NumericalError(f"non-finite weights after stage {state.stage}")
        log.append(_annotate(record, state, clients, config, task, L_smooth))
    return state, log


def running_mean(values) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    return np.cumsum(values) / np.arange(1, values.size + 1)
