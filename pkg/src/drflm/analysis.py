"""Metrics and theory diagnostics.

Covers the worst-case empirical loss, the mixup curvature penalty and its
constant, the heterogeneity term and hypothesis radius behind the
generalization bound, a Moreau-envelope gradient proxy, and the exact
one-dimensional threshold ERM used for the two-client counter-example.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numba
import numpy as np

from .data import ClientDataset, Dataset
from .errors import DivergenceError, InvalidInputError, UnsupportedSizeError
from .model import Link, ThresholdClassifier, batch_glm_losses, batch_gradient, batch_nll_losses
from .numerics import (as_vector, empirical_covariance, matrix_rank_psd, pseudo_inverse,
                       simplex_grid)


def _train(client) -> Dataset:
    if isinstance(client, ClientDataset):
        return client.train
    if isinstance(client, Dataset):
        return client
    raise InvalidInputError(f"expected a ClientDataset or Dataset, got {type(client).__name__}")


def _check_dim(w: np.ndarray, data: Dataset) -> None:
    if data.dim != w.size:
        raise InvalidInputError(f"feature dimension {data.dim} does not match weights {w.size}")


def client_losses(w, clients, link: Link, loss: str = "glm") -> np.ndarray:
    """Mean training loss of every client; ``loss`` is ``"glm"`` or ``"nll"``."""
    w = as_vector(w, "w")
    fn = batch_glm_losses if loss == "glm" else batch_nll_losses
    out = []
    for c in clients:
        d = _train(c)
        _check_dim(w, d)
        if len(d) == 0:
            raise InvalidInputError("client has no training samples")
        out.append(float(np.mean(fn(w, d.X, d.y, link))))
    return np.array(out)


def worst_case_empirical_loss(w, clients, link: Link = Link.SQUARED,
                              loss: str = "glm") -> tuple[float, int]:
    """max over the simplex of sum_i lambda_i f_i(w); attained at a vertex (smallest index on ties)."""
    if len(clients) == 0:
        raise InvalidInputError("no clients")
    losses = client_losses(w, clients, link, loss)
    i = int(np.argmax(losses))
    return float(losses[i]), i


def curvature_weight(w, client, link: Link) -> float:
    d = _train(client)
    return float(np.mean(link.d2mu(d.X @ w)))


def mixup_penalty(w, client, link: Link, c: float) -> float:
    """(c/2) * mean(mu''(w.x)) * w^T Sigma w with the uncentered client covariance."""
    if c < 0:
        raise InvalidInputError(f"mixup constant must be nonnegative, got {c}")
    w = as_vector(w, "w")
    d = _train(client)
    _check_dim(w, d)
    if len(d) == 0:
        raise InvalidInputError("client has no training samples")
    quad = float(w @ empirical_covariance(d.X) @ w)
    return 0.5 * c * curvature_weight(w, d, link) * max(quad, 0.0)


@dataclass(frozen=True)
class MixupConstant:
    value: float
    truncated: bool
    truncation: float | None = None


def gamma_mixture_components(alpha: float, beta: float):
    """Component weights and Beta parameters of the reweighted gamma law.

    The two printed weights are both alpha/(alpha+beta); they are renormalised
    so the mixture is a probability law (identical when alpha == beta).
    """
    w = np.array([alpha / (alpha + beta), alpha / (alpha + beta)])
    return w / w.sum(), [(alpha + 1.0, beta), (beta + 1.0, alpha)]


def mixup_constant_c(mode, truncation: float = 0.05, n_draws: int = 1_000_000,
                     rng: np.random.Generator | None = None) -> MixupConstant:
    """E[(1 - g)^2 / g^2] for the mixup ratio law.

    Fixed ratio: exact.  Beta-resampled: Monte Carlo over the reweighted
    mixture, conditioned on ``g >= truncation`` since the untruncated
    expectation can diverge.
    """
    kind = mode.kind
    if kind == "fixed":
        g = float(mode.gamma)
        if g == 0.0:
            raise InvalidInputError("fixed mixup ratio 0 makes the constant infinite")
        return MixupConstant((1.0 - g) ** 2 / g ** 2, truncated=False)
    if kind == "off":
        return MixupConstant(0.0, truncated=False)
    if not 0.0 < truncation < 0.5:
        raise InvalidInputError(f"truncation must lie in (0, 1/2), got {truncation}")
    rng = rng if rng is not None else np.random.default_rng(0)
    weights, comps = gamma_mixture_components(mode.alpha, mode.beta)
    which = rng.choice(len(comps), size=n_draws, p=weights)
    g = np.empty(n_draws)
    for i, (a, b) in enumerate(comps):
        sel = which == i
        g[sel] = rng.beta(a, b, size=int(sel.sum()))
    g = g[g >= truncation]
    return MixupConstant(float(np.mean((1.0 - g) ** 2 / g ** 2)), truncated=True, truncation=truncation)


def all_pairs_mixup_loss(w, client, link: Link, gamma: float) -> float:
    """Exact mean GLM loss over all N^2 ordered mixup pairs at a fixed ratio."""
    d = _train(client)
    Xm = gamma * d.X[:, None, :] + (1.0 - gamma) * d.X[None, :, :]
    ym = gamma * d.y[:, None] + (1.0 - gamma) * d.y[None, :]
    z = Xm @ w
    return float(np.mean(link.mu(z) - ym * z))


def second_order_gap(w, client, link: Link, gamma: float) -> float:
    """|exact all-pairs mixup loss - (f_i + R_i)| with c = (1 - gamma)^2 / gamma^2.

    Requires centered features.
    """
    if not 0.0 < gamma <= 1.0:
        raise InvalidInputError(f"gamma must lie in (0, 1], got {gamma}")
    w = as_vector(w, "w")
    d = _train(client)
    _check_dim(w, d)
    mean_norm = float(np.linalg.norm(d.X.mean(axis=0)))
    if mean_norm > 1e-8:
        raise InvalidInputError(f"features must be centered (mean norm {mean_norm:.3g})")
    c = (1.0 - gamma) ** 2 / gamma ** 2
    exact = all_pairs_mixup_loss(w, d, link, gamma)
    base = float(np.mean(batch_glm_losses(w, d.X, d.y, link)))
    return abs(exact - (base + mixup_penalty(w, d, link, c)))


def _trace_pinv_product(sigma_lam: np.ndarray, sigma_j: np.ndarray) -> float:
    return float(np.trace(pseudo_inverse(sigma_lam) @ sigma_j))


def heterogeneity_term(j: int, covariances: Sequence[np.ndarray],
                       grid_resolution: float = 0.01) -> float:
    """Plug-in max over a simplex grid of tr((sum_i lambda_i Sigma_i)^+ Sigma_j)."""
    n = len(covariances)
    if n == 0:
        raise InvalidInputError("no covariances")
    if n > 4:
        raise UnsupportedSizeError(
            f"grid search over the {n}-client simplex is too large; "
            "use heterogeneity_vertex_bound for a lower bound")
    covs = np.stack([np.asarray(c, dtype=float) for c in covariances])
    best = -np.inf
    for lam in simplex_grid(n, grid_resolution):
        best = max(best, _trace_pinv_product(np.tensordot(lam, covs, axes=1), covs[j]))
    return float(best)


def heterogeneity_vertex_bound(j: int, covariances: Sequence[np.ndarray]) -> float:
    """Lower bound on the heterogeneity term using simplex vertices only."""
    return max(_trace_pinv_product(np.asarray(c, dtype=float), np.asarray(covariances[j], dtype=float))
               for c in covariances)


def hypothesis_radius(w, clients) -> float:
    """min over the simplex of w^T Sigma_lambda w, i.e. the smallest client quadratic form."""
    if len(clients) == 0:
        raise InvalidInputError("no clients")
    w = as_vector(w, "w")
    return float(min(w @ empirical_covariance(_train(c).X) @ w for c in clients))


def generalization_slack(sizes: Sequence[int], H: Sequence[float], r: float, L: float,
                   delta: float, n_clients: int | None = None) -> float:
    sizes = np.asarray(sizes, dtype=float)
    H = np.asarray(H, dtype=float)
    n = len(sizes) if n_clients is None else n_clients
    inner = math.sqrt(math.log(n / delta)) + float(np.sum(r * L * np.sqrt(H / sizes)))
    # linear in lambda, so the max sits at a vertex
    return float(np.max(inner / np.sqrt(sizes)))


def generalization_bound(w, clients, link: Link, r: float, L: float, delta: float,
                   grid_resolution: float = 0.05) -> float:
    """Worst-case empirical loss plus the generalization slack, without the unknown constant."""
    if not 0.0 < delta < 1.0:
        raise InvalidInputError(f"delta must lie in (0, 1), got {delta}")
    if not (r > 0 and L > 0):
        raise InvalidInputError("r and L must be positive")
    covs = [empirical_covariance(_train(c).X) for c in clients]
    H = [heterogeneity_term(j, covs, grid_resolution) for j in range(len(clients))]
    sizes = [len(_train(c)) for c in clients]
    worst, _ = worst_case_empirical_loss(w, clients, link)
    return worst + generalization_slack(sizes, H, r, L, delta)


def moreau_gradient_estimate(w, objective: Callable[[np.ndarray], tuple[float, np.ndarray]],
                             L_smooth: float, inner_steps: int = 500) -> float:
    """Norm of the gradient of the 1/(2L) Moreau envelope at ``w``.

    The prox point is approximated by gradient descent (step 1/(4L)) on
    ``phi(u) + L * ||u - w||^2`` started at ``w``; the returned value is
    ``2L * ||w - prox||``.  For a max-type ``phi`` the iterates bounce across
    the kink, so the prox estimate is the mean of the second half of the
    iterates, which equals the last iterate whenever descent has converged.
    """
    if inner_steps < 1:
        raise InvalidInputError("inner_steps must be at least 1")
    if not L_smooth > 0:
        raise InvalidInputError(f"smoothness constant must be positive, got {L_smooth}")
    x = as_vector(w, "w")
    u = x.copy()
    step = 1.0 / (4.0 * L_smooth)
    burn = inner_steps // 2
    tail = np.zeros_like(x)
    prev = math.inf
    rises = 0
    for k in range(inner_steps):
        val, grad = objective(u)
        h = val + L_smooth * float(np.sum((u - x) ** 2))
        if not math.isfinite(h):
            raise DivergenceError("Moreau inner objective became non-finite")
        # rises below float resolution are rounding, not divergence
        rises = rises + 1 if h > prev + 1e-12 * max(1.0, abs(prev)) else 0
        if rises >= 5:
            raise DivergenceError("Moreau inner descent increased for 5 consecutive steps")
        prev = h
        u = u - step * (grad + 2.0 * L_smooth * (u - x))
        if k >= burn:
            tail += u
    prox = tail / (inner_steps - burn)
    return float(2.0 * L_smooth * np.linalg.norm(x - prox))


def worst_case_objective(clients, link: Link, loss: str = "nll"):
    """``phi(w) = max_i f_i(w)`` with the gradient of the active client."""
    data = [_train(c) for c in clients]
    fn = batch_glm_losses if loss == "glm" else batch_nll_losses

    def phi(w):
        vals = [float(np.mean(fn(w, d.X, d.y, link))) for d in data]
        i = int(np.argmax(vals))
        return vals[i], batch_gradient(w, data[i].X, data[i].y, link)

    return phi


def smoothness_constant(clients, link: Link) -> float:
    """Largest eigenvalue of any client covariance times the link's curvature cap."""
    top = max(float(np.linalg.eigvalsh(empirical_covariance(_train(c).X))[-1]) for c in clients)
    return max(top * link.curvature_max, 1e-12)


def gradient_dissimilarity(w, clients, lam, link: Link) -> float:
    """max_i sum_j lambda_j ||grad f_i - grad f_j||^2 at ``w``."""
    grads = np.stack([batch_gradient(w, _train(c).X, _train(c).y, link) for c in clients])
    diff = ((grads[:, None, :] - grads[None, :, :]) ** 2).sum(axis=2)
    return float(np.max(diff @ np.asarray(lam, dtype=float)))


# ---------------------------------------------------------------------------
# threshold ERM on the first coordinate

@numba.njit(cache=True)
def _pair_label_mass(x, ycum, t):
    # out[c] = sum over ordered pairs (j, k) with (x_j + x_k) / 2 <= t[c] of y_j
    # x and t ascending, ycum[i] = sum(y[:i]); the mixed point is formed exactly
    # as the midpoint candidates are, so ties resolve to the negative class
    n = x.size
    out = np.zeros(t.size)
    for k in range(n):
        p = 0
        xk = x[k]
        for c in range(t.size):
            while p < n and 0.5 * (x[p] + xk) <= t[c]:
                p += 1
            out[c] += ycum[p]
    return out


def threshold_candidates(datasets: Sequence[Dataset]) -> np.ndarray:
    xs = np.unique(np.concatenate([_train(d).X[:, 0] for d in datasets]))
    if xs.size == 0:
        raise InvalidInputError("threshold ERM on empty data")
    mids = 0.5 * (xs[:-1] + xs[1:])
    return np.concatenate([[xs[0] - 1.0], mids, [xs[-1] + 1.0]])


def zero_one_curve(data: Dataset, candidates: np.ndarray) -> np.ndarray:
    """Empirical 0-1 risk of ``x_1 > b`` for every candidate ``b``."""
    order = np.argsort(data.X[:, 0], kind="stable")
    x = data.X[order, 0]
    y = data.y[order]
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise InvalidInputError("threshold ERM expects labels in {-1, +1}")
    pos_cum = np.concatenate([[0], np.cumsum(y > 0)])
    neg_total = int(np.sum(y < 0))
    neg_cum = np.concatenate([[0], np.cumsum(y < 0)])
    at_or_below = np.searchsorted(x, candidates, side="right")
    errors = pos_cum[at_or_below] + (neg_total - neg_cum[at_or_below])
    return errors / len(y)


def mixup_squared_curve(data: Dataset, candidates: np.ndarray) -> np.ndarray:
    """Mean squared error of ``x_1 > b`` over all ordered pairs mixed at ratio 1/2.

    Mixed labels live in {-1, 0, 1}; predictions in {-1, +1}.
    """
    order = np.argsort(data.X[:, 0], kind="stable")
    x = np.ascontiguousarray(data.X[order, 0])
    y = data.y[order]
    n = len(y)
    # sum over pairs of (y_mix - 1)^2, expanded
    base = 0.25 * (2 * n * np.sum(y * y) + 2 * np.sum(y) ** 2) - 2 * n * np.sum(y) + n * n
    ycum = np.concatenate([[0.0], np.cumsum(y)])
    mass = _pair_label_mass(x, ycum, np.ascontiguousarray(candidates, dtype=float))
    return (base + 4.0 * mass) / (n * n)


def erm_objective_curves(datasets, candidates, mixup: str = "off") -> np.ndarray:
    if mixup not in ("off", "all_pairs"):
        raise InvalidInputError(f"unknown mixup mode {mixup!r}")
    curve = zero_one_curve if mixup == "off" else mixup_squared_curve
    return np.stack([curve(_train(d), candidates) for d in datasets])


def threshold_erm(datasets, objective: str = "average", mixup: str = "off") -> ThresholdClassifier:
    """Exact ERM over thresholds on the first coordinate (leftmost minimizer)."""
    datasets = list(datasets)
    if not datasets or any(len(_train(d)) == 0 for d in datasets):
        raise InvalidInputError("threshold ERM on empty data")
    cand = threshold_candidates(datasets)
    curves = erm_objective_curves(datasets, cand, mixup)
    if objective == "average":
        sizes = np.array([len(_train(d)) for d in datasets], dtype=float)
        obj = (sizes / sizes.sum()) @ curves
    elif objective == "worst_case":
        obj = curves.max(axis=0)
    else:
        raise InvalidInputError(f"unknown objective {objective!r}")
    return ThresholdClassifier(float(cand[int(np.argmin(obj))]))


def _triangular_cdf(b: float, lo: float, hi: float) -> float:
    """CDF of the mean of two independent U[lo, hi] variables."""
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    if b <= lo:
        return 0.0
    if b >= hi:
        return 1.0
    if b <= mid:
        return 0.5 * ((b - lo) / half) ** 2
    return 1.0 - 0.5 * ((hi - b) / half) ** 2


def asymptotic_mixup_error(b: float, p: float) -> float:
    """Population squared error of ``predict 1 iff x > b`` on the ratio-1/2 mixed 1-D law.

    The underlying law is x uniform on [-2,-1] U [1,2], label 1 for x > 0 and
    0 otherwise, with labels on [-2,-1] flipped to 1 with probability ``p``.
    Mixed labels take values in {0, 1/2, 1}.
    """
    components = [
        # weight, support, {label: prob}
        (0.25, (1.0, 2.0), {1.0: 1.0}),
        (0.50, (-0.5, 0.5), {1.0: p, 0.5: 1.0 - p}),
        (0.25, (-2.0, -1.0), {1.0: p * p, 0.5: 2.0 * p * (1.0 - p), 0.0: (1.0 - p) ** 2}),
    ]
    total = 0.0
    for weight, (lo, hi), labels in components:
        below = _triangular_cdf(b, lo, hi)
        err0 = sum(q * lab ** 2 for lab, q in labels.items())
        err1 = sum(q * (1.0 - lab) ** 2 for lab, q in labels.items())
        total += weight * (below * err0 + (1.0 - below) * err1)
    return total


# ---------------------------------------------------------------------------
# evaluation

@dataclass(frozen=True)
class EvalMetrics:
    task: str
    per_client: list
    average: float
    worst: float


def eval_metrics(w, clients, link: Link, task: str = "regression", split: str = "test") -> EvalMetrics:
    """Per-client RMSE (regression) or accuracy (classification) plus mean and worst."""
    w = as_vector(w, "w")
    vals = []
    for c in clients:
        d = getattr(c, split) if isinstance(c, ClientDataset) else c
        if len(d) == 0:
            raise InvalidInputError(f"client has an empty {split} split")
        z = d.X @ w
        if task == "regression":
            vals.append(float(np.sqrt(np.mean((link.dmu(z) - d.y) ** 2))))
        elif task == "classification":
            if np.all(np.isin(d.y, (0.0, 1.0))):
                pred = (z > 0).astype(float)
            else:
                pred = np.where(z > 0, 1.0, -1.0)
            vals.append(float(np.mean(pred == d.y)))
        else:
            raise InvalidInputError(f"unknown task {task!r}")
    worst = max(vals) if task == "regression" else min(vals)
    return EvalMetrics(task, vals, float(np.mean(vals)), float(worst))


@dataclass
class TheoryReport:
    client_losses: list
    worst_case_loss: float
    worst_client: int
    hypothesis_radius: float
    heterogeneity: list
    heterogeneity_method: str
    penalties: list
    mixup_constant: float
    mixup_constant_truncated: bool
    bound_up_to_constant: float
    bound_r: float
    bound_L: float
    bound_delta: float
    moreau_gradient: float | None = None
    gradient_dissimilarity: float | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


def theory_report(w, clients, link: Link, mixup_mode, L: float = 1.0, delta: float = 0.05,
                  grid_resolution: float = 0.05, moreau_gradient: float | None = None,
                  gradient_dissimilarity: float | None = None,
                  rng: np.random.Generator | None = None) -> TheoryReport:
    w = as_vector(w, "w")
    losses = client_losses(w, clients, link)
    worst_i = int(np.argmax(losses))
    covs = [empirical_covariance(_train(c).X) for c in clients]
    notes = ["bound omits the unspecified multiplicative constant"]
    if len(clients) <= 4:
        H = [heterogeneity_term(j, covs, grid_resolution) for j in range(len(clients))]
        method = f"simplex grid, resolution {grid_resolution}"
    else:
        H = [heterogeneity_vertex_bound(j, covs) for j in range(len(clients))]
        method = "vertex lower bound"
    c = mixup_constant_c(mixup_mode, rng=rng if rng is not None else np.random.default_rng(0),
                         n_draws=200_000)
    if c.truncated:
        notes.append(f"mixup constant truncated at gamma >= {c.truncation}")
    r = max(hypothesis_radius(w, clients), 1e-12)
    sizes = [len(_train(cl)) for cl in clients]
    bound = float(losses[worst_i]) + generalization_slack(sizes, H, r, L, delta)
    return TheoryReport(
        client_losses=losses.tolist(),
        worst_case_loss=float(losses[worst_i]),
        worst_client=worst_i,
        hypothesis_radius=hypothesis_radius(w, clients),
        heterogeneity=[float(h) for h in H],
        heterogeneity_method=method,
        penalties=[mixup_penalty(w, cl, link, c.value) for cl in clients],
        mixup_constant=c.value,
        mixup_constant_truncated=c.truncated,
        bound_up_to_constant=bound,
        bound_r=r, bound_L=L, bound_delta=delta,
        moreau_gradient=moreau_gradient,
        gradient_dissimilarity=gradient_dissimilarity,
        notes=notes,
    )


def rank_of(M) -> int:
    return matrix_rank_psd(np.asarray(M, dtype=float))
