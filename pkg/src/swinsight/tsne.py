"""Exact O(n^2) t-SNE.

High-dimensional affinities are Gaussian conditionals whose bandwidths are
found by bisection to hit a target perplexity, then symmetrised.  The
embedding uses a Student-t kernel and is optimised by gradient descent with
momentum, per-coordinate adaptive gains and early exaggeration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericError, ShapeError

logger = logging.getLogger(__name__)

MAX_POINTS = 5000
ENTROPY_TOL = 1e-7  # bits
MAX_BISECTION_STEPS = 200
MIN_GAIN = 0.01
EQUIDISTANT_RTOL = 1e-10


@dataclass
class AffinityMatrix:
    P: np.ndarray
    perplexity: float
    sigmas: np.ndarray  # inf marks rows whose neighbours are all equidistant
    conditional: np.ndarray
    entropies: np.ndarray  # bits, per row of the conditional matrix


@dataclass
class Embedding:
    Y: np.ndarray
    iterations: int = 0
    cost_trace: list[float] = field(default_factory=list)


def squared_distances(X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    sq = np.einsum("ij,ij->i", X, X)
    D = sq[:, None] + sq[None, :] - 2.0 * X @ X.T
    np.maximum(D, 0.0, out=D)
    np.fill_diagonal(D, 0.0)
    return D


def _row_distribution(d: np.ndarray, beta: float) -> tuple[np.ndarray, float]:
    """Gaussian conditional over one row of squared distances; entropy in bits."""
    shifted = d - d.min()
    w = np.exp(-beta * shifted)
    total = w.sum()
    p = w / total
    h_nats = np.log(total) + beta * np.dot(p, shifted)
    return p, h_nats / np.log(2.0)


def _calibrate_row(d: np.ndarray, target_bits: float) -> tuple[np.ndarray, float, float]:
    """Bisection on beta = 1 / (2 sigma^2); entropy falls as beta grows."""
    # equidistant neighbours (up to rounding): every beta gives the uniform row
    if np.ptp(d) <= EQUIDISTANT_RTOL * max(float(d.max()), 1e-300):
        return np.full(d.size, 1.0 / d.size), np.inf, np.log2(d.size)
    beta, lo, hi = 1.0 / max(np.median(d), 1e-300), 0.0, np.inf
    for _ in range(MAX_BISECTION_STEPS):
        p, h = _row_distribution(d, beta)
        err = h - target_bits
        if abs(err) < ENTROPY_TOL:
            return p, float(np.sqrt(1.0 / (2.0 * beta))), h
        if err > 0:
            lo = beta
            beta = beta * 2.0 if hi == np.inf else 0.5 * (lo + hi)
        else:
            hi = beta
            beta = 0.5 * (lo + hi)
    raise _BisectionFailure(abs(err))


class _BisectionFailure(Exception):
    def __init__(self, err):
        self.err = err


def pairwise_affinities(X, perplexity: float = 30.0) -> AffinityMatrix:
    """Symmetrised affinities ``p_ij = (p_{j|i} + p_{i|j}) / 2n``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ShapeError(f"expected (n, d) features, got {X.shape}")
    n = X.shape[0]
    if n < 3:
        raise ShapeError(f"need at least 3 points, got {n}")
    if n > MAX_POINTS:
        raise ShapeError(f"exact t-SNE is capped at {MAX_POINTS} points, got {n}")
    if not 1.0 <= perplexity < n:
        raise ValueError(f"perplexity must lie in [1, n={n}), got {perplexity}")
    if not np.isfinite(X).all():
        raise NumericError("features contain NaN or Inf")
    D = squared_distances(X)
    target = np.log2(perplexity)
    cond = np.zeros((n, n))
    sigmas = np.empty(n)
    entropies = np.empty(n)
    failures = []
    for i in range(n):
        d = np.delete(D[i], i)
        try:
            p, sigma, h = _calibrate_row(d, target)
        except _BisectionFailure as exc:
            failures.append((exc.err, i))
            continue
        cond[i, np.arange(n) != i] = p
        sigmas[i] = sigma
        entropies[i] = h
    if failures:
        err, worst = max(failures)
        raise NumericError(
            f"perplexity bisection failed for {len(failures)} point(s); worst is point {worst} "
            f"(entropy off by {err:.3g} bits)"
        )
    P = (cond + cond.T) / (2.0 * n)
    return AffinityMatrix(P, float(perplexity), sigmas, cond, entropies)


def low_dim_similarities(Y) -> np.ndarray:
    """Student-t similarities normalised over all ordered pairs k != l."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[0] < 2:
        raise ShapeError(f"need an (n >= 2, k) embedding, got {Y.shape}")
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum()


def kl_cost(P, Q) -> float:
    """sum_ij p_ij log(p_ij / q_ij); zero p_ij terms contribute nothing."""
    P = np.asarray(P, dtype=np.float64)
    Q = np.asarray(Q, dtype=np.float64)
    mask = P > 0
    if np.any(Q[mask] <= 0):
        raise NumericError("q_ij underflowed to zero where p_ij > 0")
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne_gradient(P, Y) -> np.ndarray:
    """dC/dy_i = 4 sum_j (p_ij - q_ij)(y_i - y_j)(1 + |y_i - y_j|^2)^-1."""
    P = np.asarray(P, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    num = 1.0 / (1.0 + squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    Q = num / num.sum()
    W = (P - Q) * num
    return 4.0 * (W.sum(axis=1)[:, None] * Y - W @ Y)


def default_perplexity(n: int, requested: float = 30.0) -> float:
    """Clamp the requested perplexity to (n - 1) / 3 for small inputs."""
    return float(min(requested, (n - 1) / 3.0))


def run_tsne(
    X,
    perplexity: float = 30.0,
    iterations: int = 1000,
    learning_rate: float = 200.0,
    seed: int = 0,
    early_exaggeration: float = 12.0,
    exaggeration_iters: int = 250,
    momentum: float = 0.5,
    final_momentum: float = 0.8,
    momentum_switch: int = 250,
    n_components: int = 2,
) -> Embedding:
    if iterations < 1 or learning_rate <= 0 or perplexity <= 0:
        raise ValueError("iterations, learning_rate and perplexity must be positive")
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise ShapeError(f"t-SNE needs at least 4 points, got {n}")
    perp = default_perplexity(n, perplexity)
    aff = pairwise_affinities(X, max(perp, 1.0))
    P = aff.P
    rng = np.random.default_rng(seed)
    Y = 1e-4 * rng.standard_normal((n, n_components))
    velocity = np.zeros_like(Y)
    gains = np.ones_like(Y)
    emb = Embedding(Y)
    for it in range(iterations):
        exaggerate = it < exaggeration_iters
        mom = momentum if it < momentum_switch else final_momentum
        grad = tsne_gradient(P * early_exaggeration if exaggerate else P, Y)
        # gains grow while the descent direction agrees with the running velocity
        flipped = np.sign(grad) != np.sign(velocity)
        gains = np.maximum(np.where(flipped, gains + 0.2, gains * 0.8), MIN_GAIN)
        velocity = mom * velocity - learning_rate * gains * grad
        Y = Y + velocity
        if not np.isfinite(Y).all():
            raise NumericError(f"embedding became non-finite at iteration {it + 1}")
        Y = Y - Y.mean(axis=0)
        emb.cost_trace.append(kl_cost(P, low_dim_similarities(Y)))
        emb.iterations = it + 1
    emb.Y = Y
    logger.info("t-SNE: %d points, perplexity %.2f, final KL %.4f", n, perp, emb.cost_trace[-1])
    return emb
