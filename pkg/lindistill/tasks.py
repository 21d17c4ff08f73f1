"""Transfer tasks: input distributions paired with a teacher.

A task knows how to draw inputs (``sample(n, rng)`` returning a
``(d, n)`` matrix) and carries the teacher weight vector ``w_star``.
Synthetic tasks also know their reverse cdf ``p(θ)`` analytically.
"""

import dataclasses
import logging
import pathlib

import numpy as np
import scipy.special

import lindistill.error
import lindistill.geometry
import lindistill.idx

logger = logging.getLogger(__name__)

MNIST_FILES = {
    "train-images": "train-images-idx3-ubyte",
    "train-labels": "train-labels-idx1-ubyte",
    "test-images": "t10k-images-idx3-ubyte",
    "test-labels": "t10k-labels-idx1-ubyte",
}

#: Share of the ordered 0/1 training images the teacher is fitted on.
TEACHER_SHARE = 0.8


def soft_label(w_star, x):
    """Teacher soft label ``σ(w*ᵀx)``."""
    w_star, x = _matching(w_star, x)
    return float(scipy.special.expit(np.dot(w_star, x)))


def soft_labels(w_star, X):
    """Soft labels for every column of *X*."""
    return scipy.special.expit(np.asarray(w_star, dtype=float) @ X)


def hard_label(w, x):
    """Prediction ``𝟙{wᵀx ≥ 0}``; the boundary is classified as 1."""
    w, x = _matching(w, x)
    return int(np.dot(w, x) >= 0)


def hard_labels(w, X):
    """Predictions for every column of *X* as an integer array."""
    return (np.asarray(w, dtype=float) @ X >= 0).astype(np.int64)


def _matching(u, v):
    u = lindistill.geometry.as_vector(u, "w")
    v = lindistill.geometry.as_vector(v, "x")
    if u.shape != v.shape:
        raise lindistill.error.UsageError(
            f"dimension mismatch: {u.size} != {v.size}")
    return u, v


def analytic_p(kappa, theta):
    """Reverse cdf of the κ-polynomial angle law, ``(1 − (2/π)θ)^κ``."""
    if kappa < 0:
        raise lindistill.error.DomainError(f"kappa must be >= 0, got {kappa}")
    if not 0 <= theta <= np.pi / 2:
        raise lindistill.error.DomainError(
            f"theta must lie in [0, π/2], got {theta}")
    return float((1 - (2 / np.pi) * theta) ** kappa)


def _teacher(w_star, d):
    w_star = lindistill.geometry.as_vector(w_star, "w_star")
    if w_star.size != d:
        raise lindistill.error.UsageError(
            f"teacher of dimension {w_star.size} for a task of dimension {d}")
    if not np.any(w_star):
        raise lindistill.error.DomainError("teacher weights are zero")
    return w_star


def _directions_at(w_star, angles, rng):
    """Unit vectors uniformly distributed at the given angles to *w_star*.

    ``z = cos(a)·ŵ* + sin(a)·s·u`` with ``u`` uniform on the unit
    sphere of the complement of ``w*`` and ``s`` a uniform random sign.
    """
    d = w_star.size
    unit = w_star / np.linalg.norm(w_star)
    G = rng.standard_normal((d, angles.size))
    G -= np.outer(unit, unit @ G)
    U = G / np.linalg.norm(G, axis=0)
    signs = rng.choice([-1.0, 1.0], size=angles.size)
    return np.outer(unit, np.cos(angles)) + U * (np.sin(angles) * signs)


@dataclasses.dataclass(frozen=True)
class PolyAngleTask:
    """Task whose input angles to the teacher follow the κ-polynomial law.

    ``P[ᾱ(w*, x) ≥ θ] = (1 − (2/π)θ)^κ``; larger κ concentrates inputs
    near the teacher direction and away from its decision boundary.
    """

    kappa: float
    d: int
    w_star: np.ndarray

    def __post_init__(self):
        if self.kappa < 0:
            raise lindistill.error.DomainError(
                f"kappa must be >= 0, got {self.kappa}")
        object.__setattr__(self, "w_star", _teacher(self.w_star, self.d))

    @classmethod
    def random(cls, kappa, d, rng):
        """Task with a uniformly random unit teacher."""
        w_star = rng.standard_normal(d)
        return cls(kappa=kappa, d=d, w_star=w_star / np.linalg.norm(w_star))

    def p(self, theta):
        return analytic_p(self.kappa, theta)

    def sample(self, n, rng):
        return sample_poly_angle(self, n, rng)


def sample_poly_angle(task, n, rng):
    """Draw *n* inputs from a :class:`PolyAngleTask`.

    The angle is drawn by inverting the reverse cdf,
    ``a = (π/2)(1 − U^{1/κ})``, the direction uniformly among unit
    vectors at angle ``a`` to the teacher, and the result is scaled by
    a standard Gaussian. κ = 0 puts every direction on the teacher.
    """
    if task.d < 2:
        raise lindistill.error.DomainError(
            f"dimension {task.d} has no directions at a fixed angle")
    if n < 1:
        raise lindistill.error.DomainError(f"n must be at least 1, got {n}")
    uniform = rng.random(n)
    if task.kappa == 0:
        angles = np.zeros(n)
    else:
        angles = (np.pi / 2) * (1 - uniform ** (1 / task.kappa))
    Z = _directions_at(task.w_star, angles, rng)
    return Z * rng.standard_normal(n)


@dataclasses.dataclass(frozen=True)
class MarginTask:
    """Task with an empty wedge of half-width ``beta0`` around the boundary.

    Angles follow the uniform (κ = 1) law conditioned on
    ``a ≤ π/2 − beta0`` so every input satisfies
    ``ᾱ(w*, x) ≤ π/2 − beta0``.
    """

    d: int
    w_star: np.ndarray
    beta0: float

    def __post_init__(self):
        if not 0 < self.beta0 < np.pi / 2:
            raise lindistill.error.DomainError(
                f"beta0 must lie in (0, π/2), got {self.beta0}")
        if self.d < 2:
            raise lindistill.error.DomainError(
                f"dimension {self.d} has no directions at a fixed angle")
        object.__setattr__(self, "w_star", _teacher(self.w_star, self.d))

    @property
    def max_angle(self):
        return np.pi / 2 - self.beta0

    @property
    def beta(self):
        """Smallest β with ``p(β) = 0``."""
        return self.max_angle

    @property
    def gamma(self):
        """``p(π/2 − β)`` at :attr:`beta`, below one for any margin."""
        return self.p(np.pi / 2 - self.beta)

    def p(self, theta):
        if not 0 <= theta <= np.pi / 2:
            raise lindistill.error.DomainError(
                f"theta must lie in [0, π/2], got {theta}")
        return float(max(0.0, 1 - theta / self.max_angle))

    def sample(self, n, rng):
        angles = np.empty(0)
        while angles.size < n:
            draws = (np.pi / 2) * rng.random(n)
            angles = np.concatenate([angles, draws[draws <= self.max_angle]])
        Z = _directions_at(self.w_star, angles[:n], rng)
        return Z * rng.standard_normal(n)


@dataclasses.dataclass(frozen=True)
class IsotropicTask:
    """Standard Gaussian inputs labelled by a linear teacher."""

    d: int
    w_star: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "w_star", _teacher(self.w_star, self.d))

    def sample(self, n, rng):
        return rng.standard_normal((self.d, n))


def conditioned_design(d, n, rng, *, low=1.0, high=3.0):
    """Random ``(d, n)`` data matrix with controlled singular values.

    The ``min(d, n)`` singular values are uniform in ``[low, high]``
    and the singular vectors are Haar distributed.
    """
    if not 0 < low <= high:
        raise lindistill.error.DomainError("need 0 < low <= high")
    k = min(d, n)
    U, _ = np.linalg.qr(rng.standard_normal((d, k)))
    V, _ = np.linalg.qr(rng.standard_normal((n, k)))
    return (U * rng.uniform(low, high, size=k)) @ V.T


@dataclasses.dataclass(frozen=True)
class TransferSet:
    """Inputs and the teacher's soft labels for them.

    :param X: Inputs as columns, shape ``(d, n)``.
    :param y: Soft labels, one per column.
    :param w_star: The generating teacher, kept for verification and
        closed-form comparisons only.
    """

    X: np.ndarray
    y: np.ndarray
    w_star: np.ndarray = None

    def __post_init__(self):
        X = lindistill.geometry.as_matrix(self.X)
        y = np.asarray(self.y, dtype=float)
        if y.shape != (X.shape[1],):
            raise lindistill.error.UsageError(
                f"{y.size} labels for {X.shape[1]} inputs")
        if np.any(y < 0) or np.any(y > 1):
            raise lindistill.error.DomainError("soft labels outside [0, 1]")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        if self.w_star is not None:
            object.__setattr__(
                self, "w_star", _teacher(self.w_star, X.shape[0]))

    @classmethod
    def label(cls, X, w_star):
        """Label the columns of *X* with the teacher *w_star*."""
        X = lindistill.geometry.as_matrix(X)
        return cls(X=X, y=soft_labels(w_star, X), w_star=w_star)

    @property
    def d(self):
        return self.X.shape[0]

    @property
    def n(self):
        return self.X.shape[1]

    def append(self, X_extra):
        """Transfer set with the columns of *X_extra* added at the end."""
        if self.w_star is None:
            raise lindistill.error.UsageError("appending needs the teacher")
        return TransferSet.label(np.hstack([self.X, X_extra]), self.w_star)


@dataclasses.dataclass(frozen=True)
class TeacherConfig:
    """Full-batch descent settings for the logistic teacher."""

    step: float = 0.5
    iterations: int = 5000

    def __post_init__(self):
        if not self.step > 0:
            raise lindistill.error.ContractError(
                "must be positive", field="teacher.step")
        if self.iterations < 0:
            raise lindistill.error.ContractError(
                "must be non-negative", field="teacher.iterations")


def train_logistic_teacher(pool, cfg=TeacherConfig()):
    """Fit an unregularised homogeneous logistic regression.

    Full-batch gradient descent from zero on the mean logistic loss of
    the pool's 0/1 labels, for a fixed number of iterations.

    :raises lindistill.error.DomainError: If the pool is empty or holds
        a single class.
    """
    X = pool.X
    labels = np.asarray(pool.labels, dtype=float)
    if len(pool) == 0:
        raise lindistill.error.DomainError("teacher pool is empty")
    if np.unique(labels).size < 2:
        raise lindistill.error.DomainError(
            "teacher pool holds a single class; the direction is undefined")
    n = X.shape[1]
    w = np.zeros(X.shape[0])
    for _ in range(cfg.iterations):
        w -= cfg.step * (X @ (scipy.special.expit(w @ X) - labels)) / n
    accuracy = np.mean(hard_labels(w, X) == labels)
    logger.info("logistic teacher: %d iterations, training accuracy %.4f",
                cfg.iterations, accuracy)
    return w


@dataclasses.dataclass(frozen=True)
class EmpiricalTask:
    """Finite pool standing in for the input distribution.

    Every column of the pool carries one split tag: ``"teacher"`` for
    inputs the teacher was fitted on, ``"transfer"`` for inputs
    transfer sets are drawn from and ``"eval"`` for held-out inputs
    the transfer risk is measured on.
    """

    pool: lindistill.idx.LabeledPool
    w_star: np.ndarray
    split: np.ndarray

    SPLITS = ("teacher", "transfer", "eval")

    def __post_init__(self):
        split = np.asarray(self.split)
        if split.shape != (len(self.pool),) or not np.all(
                np.isin(split, self.SPLITS)):
            raise lindistill.error.UsageError(
                "every pool column needs exactly one split tag")
        object.__setattr__(self, "split", split)
        object.__setattr__(
            self, "w_star", _teacher(self.w_star, self.pool.X.shape[0]))

    @property
    def d(self):
        return self.pool.X.shape[0]

    def indices(self, tag):
        return np.flatnonzero(self.split == tag)

    def inputs(self, tag):
        return self.pool.X[:, self.indices(tag)]

    def sample(self, n, rng):
        """Draw evaluation inputs uniformly with replacement."""
        index = self.indices("eval")
        return self.pool.X[:, rng.choice(index, size=n, replace=True)]

    @classmethod
    def from_pools(cls, train, test, teacher_cfg=TeacherConfig()):
        """Fit a teacher on the first share of *train* and tag the rest.

        The first :data:`TEACHER_SHARE` of the training pool, in file
        order, trains the teacher; the remainder becomes the transfer
        pool and *test* the evaluation split.
        """
        cut = int(TEACHER_SHARE * len(train))
        w_star = train_logistic_teacher(
            train.subset(np.arange(cut)), teacher_cfg)
        pool = lindistill.idx.LabeledPool(
            X=np.hstack([train.X, test.X]),
            labels=np.concatenate([train.labels, test.labels]),
        )
        split = np.array(
            ["teacher"] * cut
            + ["transfer"] * (len(train) - cut)
            + ["eval"] * len(test))
        return cls(pool=pool, w_star=w_star, split=split)

    @classmethod
    def from_mnist(cls, directory, teacher_cfg=TeacherConfig()):
        """Build the 0/1 MNIST task from IDX files in *directory*."""
        paths = mnist_paths(directory)
        train = lindistill.idx.load_mnist_idx(
            paths["train-images"], paths["train-labels"])
        test = lindistill.idx.load_mnist_idx(
            paths["test-images"], paths["test-labels"])
        return cls.from_pools(train, test, teacher_cfg)


def mnist_paths(directory):
    """Locate the four MNIST files, plain or gzipped, in *directory*.

    :raises lindistill.error.MissingDataError: Naming every expected
        path if any file is absent.
    """
    directory = pathlib.Path(directory)
    found = {}
    missing = []
    for key, name in MNIST_FILES.items():
        candidates = [directory / name, directory / f"{name}.gz"]
        existing = [path for path in candidates if path.is_file()]
        if existing:
            found[key] = existing[0]
        else:
            missing.append(candidates[0])
    if missing:
        raise lindistill.error.MissingDataError(missing)
    return found


def make_transfer_set(task, n, rng):
    """Draw a transfer set of size *n* from *task* and label it.

    Empirical tasks draw without replacement from their transfer pool;
    synthetic tasks draw fresh inputs.
    """
    if n < 1:
        raise lindistill.error.DomainError(f"n must be at least 1, got {n}")
    if isinstance(task, EmpiricalTask):
        index = task.indices("transfer")
        if index.size < n:
            raise lindistill.error.DomainError(
                f"transfer pool of {index.size} inputs cannot supply {n}")
        X = task.pool.X[:, rng.choice(index, size=n, replace=False)]
    else:
        X = task.sample(n, rng)
    return TransferSet.label(X, task.w_star)
