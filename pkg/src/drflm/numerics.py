"""Small numerical kernels: projections, Beta draws, covariance, pseudo-inverse."""
from __future__ import annotations

import numpy as np

from .errors import InvalidInputError


def as_vector(v, name: str = "vector") -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    if arr.ndim != 1:
        raise InvalidInputError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=float)
    if arr.ndim != 2:
        raise InvalidInputError(f"{name} must be two-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def project_onto_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex.

    Sort-based thresholding: find the largest ``rho`` with
    ``u[rho] > (sum(u[:rho+1]) - 1) / (rho + 1)`` for ``u`` sorted descending,
    then shift and clip.
    """
    v = as_vector(v, "v")
    if v.size == 0:
        raise InvalidInputError("cannot project an empty vector onto the simplex")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1)
    out = np.maximum(v - theta, 0.0)
    # clip + float error can leave the sum a few ulps off
    return out / out.sum()


def project_onto_ball(w, radius: float = 1.0) -> np.ndarray:
    if not radius > 0:
        raise InvalidInputError(f"ball radius must be positive, got {radius}")
    w = as_vector(w, "w")
    norm = np.linalg.norm(w)
    if norm <= radius:
        return w.copy()
    return w * (radius / norm)


def sample_beta(alpha: float, beta: float, rng: np.random.Generator) -> float:
    if not (alpha > 0 and beta > 0):
        raise InvalidInputError(f"Beta parameters must be positive, got ({alpha}, {beta})")
    return float(rng.beta(alpha, beta))


def empirical_covariance(X) -> np.ndarray:
    """Uncentered second moment ``(1/n) sum x x^T``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :] if X.size else X.reshape(0, 0)
    if X.shape[0] == 0:
        raise InvalidInputError("empirical covariance of an empty sample")
    X = as_matrix(X, "X")
    cov = X.T @ X / X.shape[0]
    return 0.5 * (cov + cov.T)


def pseudo_inverse(M, rel_cutoff: float = 1e-10) -> np.ndarray:
    """Moore-Penrose inverse of a symmetric PSD matrix via eigendecomposition.

    Eigenvalues below ``rel_cutoff * max_eigenvalue`` are treated as zero.
    """
    M = as_matrix(M, "M")
    if M.shape[0] != M.shape[1]:
        raise InvalidInputError(f"pseudo_inverse expects a square matrix, got {M.shape}")
    vals, vecs = np.linalg.eigh(0.5 * (M + M.T))
    top = np.max(np.abs(vals)) if vals.size else 0.0
    if top == 0.0:
        return np.zeros_like(M)
    keep = np.abs(vals) > rel_cutoff * top
    inv = np.zeros_like(vals)
    inv[keep] = 1.0 / vals[keep]
    out = (vecs * inv) @ vecs.T
    return 0.5 * (out + out.T)


def matrix_rank_psd(M, rel_cutoff: float = 1e-10) -> int:
    vals = np.linalg.eigvalsh(0.5 * (M + M.T))
    top = np.max(np.abs(vals)) if vals.size else 0.0
    if top == 0.0:
        return 0
    return int(np.sum(np.abs(vals) > rel_cutoff * top))


def simplex_grid(n: int, resolution: float) -> np.ndarray:
    """All simplex points whose coordinates are multiples of ``resolution``, one per row."""
    if n < 1:
        raise InvalidInputError("simplex dimension must be at least 1")
    steps = int(round(1.0 / resolution))
    if steps < 1 or not np.isclose(steps * resolution, 1.0):
        raise InvalidInputError(f"grid resolution {resolution} does not divide 1")
    if n == 1:
        return np.ones((1, 1))
    head = np.indices((steps + 1,) * (n - 1)).reshape(n - 1, -1).T
    head = head[head.sum(axis=1) <= steps]
    last = steps - head.sum(axis=1, keepdims=True)
    return np.hstack([head, last]).astype(float) / steps
