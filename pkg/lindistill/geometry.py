"""Angles, projections onto data spans and reverse-cdf estimation.

Vectors are one-dimensional :class:`numpy.ndarray` instances of length
``d``. Data matrices are two-dimensional arrays of shape ``(d, n)``,
one input per column.
"""

import dataclasses
import logging

import numpy as np
import scipy.linalg

import lindistill.error

logger = logging.getLogger(__name__)

#: Relative threshold on the diagonal of R below which a matrix is rank deficient.
RANK_TOLERANCE = 1e-12


def as_vector(value, name="vector"):
    """Coerce *value* into a finite, non-empty float vector."""
    vector = np.asarray(value, dtype=float)
    if vector.ndim != 1 or vector.size == 0:
        raise lindistill.error.UsageError(
            f"{name} must be a non-empty 1-d array, got shape {vector.shape}")
    if not np.all(np.isfinite(vector)):
        raise lindistill.error.DomainError(f"{name} has non-finite entries")
    return vector


def as_matrix(value, name="X"):
    """Coerce *value* into a finite ``(d, n)`` data matrix."""
    matrix = np.asarray(value, dtype=float)
    if matrix.ndim != 2 or 0 in matrix.shape:
        raise lindistill.error.UsageError(
            f"{name} must be a non-empty 2-d array, got shape {matrix.shape}")
    if not np.all(np.isfinite(matrix)):
        raise lindistill.error.DomainError(f"{name} has non-finite entries")
    return matrix


def _pair(u, v):
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    if u.shape != v.shape:
        raise lindistill.error.UsageError(
            f"dimension mismatch: {u.size} != {v.size}")
    norm_u = np.linalg.norm(u)
    norm_v = np.linalg.norm(v)
    if norm_u == 0 or norm_v == 0:
        raise lindistill.error.DomainError("angle with a zero vector")
    return np.dot(u, v) / (norm_u * norm_v)


def unsigned_angle(u, v):
    """Unsigned angle between two vectors, in ``[0, π/2]``.

    The sign of the inner product is discarded so antiparallel vectors
    are at angle zero.
    """
    cosine = _pair(u, v)
    return float(np.arccos(np.clip(abs(cosine), 0.0, 1.0)))


def signed_angle(u, v):
    """Angle between two vectors, in ``[0, π]``."""
    cosine = _pair(u, v)
    return float(np.arccos(np.clip(cosine, -1.0, 1.0)))


def unsigned_angles(w, X):
    """Unsigned angle between *w* and every column of *X*.

    Zero columns give ``nan``; callers that cannot accept them should
    reject such columns first.
    """
    w = as_vector(w, "w")
    X = np.asarray(X, dtype=float)
    if X.shape[0] != w.size:
        raise lindistill.error.UsageError(
            f"dimension mismatch: {X.shape[0]} != {w.size}")
    norm_w = np.linalg.norm(w)
    if norm_w == 0:
        raise lindistill.error.DomainError("angle with a zero vector")
    norms = np.linalg.norm(X, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        cosines = np.abs(w @ X) / (norm_w * norms)
    return np.arccos(np.clip(cosines, 0.0, 1.0))


def span_basis(X):
    """Orthonormal basis of the column span of *X*.

    Uses a column-pivoted thin QR factorisation. The matrix is accepted
    only if the smallest diagonal magnitude of R exceeds
    :data:`RANK_TOLERANCE` times the largest.

    :returns: Array ``Q`` of shape ``(d, min(d, n))``.
    :raises lindistill.error.SingularityError: If *X* is rank deficient.
    """
    X = as_matrix(X)
    d, n = X.shape
    Q, R, _ = scipy.linalg.qr(X, mode="economic", pivoting=True)
    diagonal = np.abs(np.diag(R))
    if not diagonal.min() > RANK_TOLERANCE * diagonal.max():
        rank = int(np.sum(diagonal > RANK_TOLERANCE * diagonal.max()))
        raise lindistill.error.SingularityError(
            f"data matrix with {n} columns in dimension {d} is rank "
            f"deficient (numerical rank {rank}, need {min(d, n)})")
    return Q


def project_onto_span(X, w):
    """Orthogonal projection of *w* onto the column span of *X*.

    When ``n >= d`` the projection is the identity and the rank of *X*
    is not checked.
    """
    X = as_matrix(X)
    w = as_vector(w, "w")
    d, n = X.shape
    if w.size != d:
        raise lindistill.error.UsageError(
            f"dimension mismatch: {w.size} != {d}")
    if n >= d:
        return w.copy()
    Q = span_basis(X)
    return Q @ (Q.T @ w)


def orthogonal_complement_sample(X, rng):
    """Gaussian random vector orthogonal to every column of *X*.

    A standard Gaussian vector has its projection onto the span of *X*
    removed. The removal is repeated once to push the residual inner
    products down to rounding level.

    :raises lindistill.error.DomainError: If ``n >= d``.
    """
    X = as_matrix(X)
    d, n = X.shape
    if n >= d:
        raise lindistill.error.DomainError(
            f"complement of the span of {n} columns in dimension {d} "
            f"is trivial")
    Q = span_basis(X)
    q = rng.standard_normal(d)
    for _ in range(2):
        q = q - Q @ (Q.T @ q)
    return q


@dataclasses.dataclass(frozen=True)
class PCurve:
    """Tabulated reverse cdf ``p(θ) = P[ᾱ(w*, x) ≥ θ]``.

    Evaluation interpolates linearly between grid points and holds the
    end values flat outside the grid.

    :param thetas: Ascending angles in ``[0, π/2]``.
    :param values: Probabilities, non-increasing along *thetas*.
    """

    thetas: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        thetas = np.asarray(self.thetas, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if thetas.ndim != 1 or thetas.shape != values.shape or not thetas.size:
            raise lindistill.error.UsageError(
                "thetas and values must be equal-length 1-d arrays")
        if np.any(np.diff(thetas) <= 0):
            raise lindistill.error.DomainError("thetas must be ascending")
        if thetas[0] < 0 or thetas[-1] > np.pi / 2:
            raise lindistill.error.DomainError("thetas must lie in [0, π/2]")
        if np.any(values < 0) or np.any(values > 1):
            raise lindistill.error.DomainError("values must lie in [0, 1]")
        if np.any(np.diff(values) > 0):
            raise lindistill.error.DomainError(
                "values must be non-increasing in theta")
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "values", values)

    def __call__(self, theta):
        return float(np.interp(theta, self.thetas, self.values))


def draw_nonzero(sampler, m, rng, *, max_retries=100):
    """Draw *m* inputs from *sampler*, redrawing any zero vectors.

    :raises lindistill.error.DomainError: If zero vectors persist after
        *max_retries* redraws.
    """
    X = np.array(sampler.sample(m, rng), dtype=float)
    for _ in range(max_retries):
        zero = ~np.any(X != 0, axis=0)
        if not zero.any():
            return X
        X[:, zero] = sampler.sample(int(zero.sum()), rng)
    if np.any(~np.any(X != 0, axis=0)):
        raise lindistill.error.DomainError(
            f"sampler kept yielding zero vectors after {max_retries} retries")
    return X


def reverse_cdf_estimate(sampler, w_star, theta_grid, m, rng, *,
                         chunk=10_000):
    """Monte Carlo estimate of the reverse cdf on *theta_grid*.

    One shared sample of *m* draws is scored against every grid point,
    so the estimate is non-increasing in θ by construction.

    :param sampler: Object with ``sample(n, rng) -> (d, n) array``.
    :param w_star: Teacher weight vector.
    :param theta_grid: Ascending angles in ``[0, π/2]``.
    :param m: Number of draws.
    """
    if m < 1:
        raise lindistill.error.DomainError("m must be at least 1")
    grid = np.asarray(theta_grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise lindistill.error.DomainError(
            "theta grid must be a non-empty 1-d array")
    if np.any(np.diff(grid) <= 0):
        raise lindistill.error.DomainError("theta grid must be ascending")
    if grid[0] < 0 or grid[-1] > np.pi / 2:
        raise lindistill.error.DomainError("theta grid must lie in [0, π/2]")
    counts = np.zeros(grid.size, dtype=np.int64)
    remaining = m
    while remaining:
        size = min(chunk, remaining)
        angles = unsigned_angles(w_star, draw_nonzero(sampler, size, rng))
        counts += np.sum(angles[None, :] >= grid[:, None], axis=1)
        remaining -= size
    values = counts / m
    # every angle is ≥ 0
    values[grid == 0] = 1.0
    return PCurve(thetas=grid, values=values)
