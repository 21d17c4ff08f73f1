"""Transfer risk, its bounds and the monotonicity index.

The transfer risk of a student ``w`` is the probability that it
disagrees with the teacher ``w*`` on a fresh input,
``P[𝟙{wᵀx ≥ 0} ≠ 𝟙{w*ᵀx ≥ 0}]``. The bounds here are evaluated from a
reverse cdf ``p(θ)``: any callable on ``[0, π/2]``, a
:class:`lindistill.geometry.PCurve`, or a task exposing ``p``.

Bound values are never clipped, so a vacuous bound (value ≥ 1) stays
visible in its report.
"""

import dataclasses
import logging
import math
import typing

import numpy as np
import scipy.stats

import lindistill.error
import lindistill.geometry
import lindistill.seeding
import lindistill.tasks

logger = logging.getLogger(__name__)

#: Two-sided 95% normal quantile.
Z95 = float(scipy.stats.norm.ppf(0.975))

#: Exceptions a learner may raise for a trial to be counted as failed.
LEARNER_FAILURES = (
    lindistill.error.DomainError,
    lindistill.error.StepSizeError,
    lindistill.error.NumericError,
)


@dataclasses.dataclass(frozen=True)
class RiskEstimate:
    """Binomial proportion with a normal-approximation 95% half-width."""

    estimate: float
    m: int
    half_width: float

    @classmethod
    def from_counts(cls, count, m):
        p = count / m
        return cls(estimate=float(p), m=int(m),
                   half_width=float(Z95 * math.sqrt(p * (1 - p) / m)))


@dataclasses.dataclass(frozen=True)
class IndexEstimate(RiskEstimate):
    """Monotonicity index over successful trials, with the failure count."""

    failures: int = 0


def _disagreements(W, w_star, X):
    teacher = w_star @ X >= 0
    return np.sum((W @ X >= 0) != teacher, axis=-1)


def _students(W, w_star, allow_zero):
    W = np.atleast_2d(np.asarray(W, dtype=float))
    w_star = lindistill.geometry.as_vector(w_star, "w_star")
    if W.shape[1] != w_star.size:
        raise lindistill.error.UsageError(
            f"students of dimension {W.shape[1]} for a teacher of "
            f"dimension {w_star.size}")
    if not np.any(w_star):
        raise lindistill.error.DomainError("teacher weights are zero")
    if not allow_zero and not np.all(np.any(W != 0, axis=1)):
        raise lindistill.error.DomainError(
            "zero student predicts 1 everywhere; pass allow_zero to score it")
    return W, w_star


def transfer_risk_on(w, w_star, X, *, allow_zero=False):
    """Disagreement rate between *w* and *w_star* on the columns of *X*."""
    W, w_star = _students(w, w_star, allow_zero)
    X = lindistill.geometry.as_matrix(X)
    return RiskEstimate.from_counts(int(_disagreements(W, w_star, X)[0]),
                                    X.shape[1])


def transfer_risk_many(W, w_star, sampler, m, rng, *, allow_zero=False,
                       chunk=5_000):
    """Monte Carlo transfer risk of several students on one shared sample.

    :param W: Students as rows, shape ``(k, d)``.
    :returns: One :class:`RiskEstimate` per student.
    """
    if m < 1:
        raise lindistill.error.DomainError("m must be at least 1")
    W, w_star = _students(W, w_star, allow_zero)
    counts = np.zeros(W.shape[0], dtype=np.int64)
    remaining = m
    while remaining:
        size = min(chunk, remaining)
        counts += _disagreements(W, w_star, sampler.sample(size, rng))
        remaining -= size
    return [RiskEstimate.from_counts(int(count), m) for count in counts]


def transfer_risk_mc(w, w_star, sampler, m, rng, *, allow_zero=False):
    """Monte Carlo transfer risk from *m* i.i.d. draws of *sampler*."""
    return transfer_risk_many(
        w, w_star, sampler, m, rng, allow_zero=allow_zero)[0]


@dataclasses.dataclass(frozen=True)
class BoundReport:
    """Evaluated risk bound.

    :param p_complement: ``p(π/2 − β)``, or ``p(π/2 − δ − β)`` for the
        approximate bound.
    :param delta: Angular slack of the approximate bound, else ``None``.
    :param exact: The ``n ≥ d`` regime, where the expected risk is zero.
    """

    beta: float
    p_beta: float
    p_complement: float
    n: int
    value: float
    delta: typing.Optional[float] = None
    exact: bool = False
    tight: bool = False

    @property
    def vacuous(self):
        return self.value >= 1

    def as_row(self):
        return dataclasses.asdict(self) | {"vacuous": self.vacuous}


def _curve(p):
    return p.p if hasattr(p, "p") else p


def _combine(p_beta, p_complement, n, tight):
    if tight:
        return p_beta + (1 - p_beta) * p_complement**n
    return p_beta + p_complement**n


def bound_thm3(p, beta, n, *, exact=False, tight=False):
    """Bound ``p(β) + p(π/2 − β)^n`` on the expected transfer risk.

    :param exact: Set when ``n ≥ d``; the value is then zero.
    :param tight: Use ``p(β) + (1 − p(β))·p(π/2 − β)^n`` instead.
    """
    if not 0 <= beta <= np.pi / 2:
        raise lindistill.error.DomainError(
            f"beta must lie in [0, π/2], got {beta}")
    if n < 1:
        raise lindistill.error.DomainError(f"n must be at least 1, got {n}")
    p = _curve(p)
    p_beta = float(p(beta))
    p_complement = float(p(np.pi / 2 - beta))
    value = 0.0 if exact else _combine(p_beta, p_complement, n, tight)
    return BoundReport(beta=float(beta), p_beta=p_beta,
                       p_complement=p_complement, n=int(n), value=float(value),
                       exact=exact, tight=tight)


def bound_optimize_beta(p, n, grid_size=1001, *, exact=False, tight=False,
                        epsilon=None, w_hat_norm=None):
    """Minimise the bound over a uniform β grid.

    With *epsilon* and *w_hat_norm* the approximate bound is minimised
    over ``[0, π/2 − δ]`` instead. Ties go to the smaller β.
    """
    if grid_size < 2:
        raise lindistill.error.DomainError("grid_size must be at least 2")
    if epsilon is None:
        reports = [bound_thm3(p, beta, n, exact=exact, tight=tight)
                   for beta in np.linspace(0, np.pi / 2, grid_size)]
    else:
        delta = small_angle_bound(epsilon, w_hat_norm)
        if delta > np.pi / 2:
            raise lindistill.error.DomainError(
                f"angular slack {delta:.4f} exceeds π/2; no β is admissible")
        reports = [
            bound_approx(p, beta, n, epsilon, w_hat_norm, tight=tight)
            for beta in np.linspace(0, np.pi / 2 - delta, grid_size)
        ]
        if exact:
            reports = [dataclasses.replace(r, value=0.0, exact=True)
                       for r in reports]
    best = int(np.argmin([report.value for report in reports]))
    return reports[best]


def bound_margin(gamma, n):
    """Large-margin bound ``γ^n``, for ``γ = p(π/2 − β)`` with ``p(β) = 0``."""
    if not 0 <= gamma < 1:
        raise lindistill.error.DomainError(
            f"gamma must lie in [0, 1), got {gamma}")
    if n < 1:
        raise lindistill.error.DomainError(f"n must be at least 1, got {n}")
    return float(gamma**n)


def bound_poly(c, kappa, n):
    """Polynomial-tail bound ``c·(1 + (log n)^κ) / n^κ``.

    :raises lindistill.error.DomainError: If ``c < 1``; since
        ``p(0) = 1`` no smaller constant can dominate p.
    """
    if c < 1:
        raise lindistill.error.DomainError(
            f"c must be at least 1 since p(0) = 1, got {c}")
    if kappa < 0 or n < 1:
        raise lindistill.error.DomainError("need kappa >= 0 and n >= 1")
    return float(c * (1 + math.log(n) ** kappa) / n**kappa)


def small_angle_bound(epsilon, w_norm):
    """Largest angle between *w* and any *v* with ``‖w − v‖ ≤ ε``.

    ``sqrt(2πε/‖w‖)``, valid for ``ε ≤ ½‖w‖``.
    """
    if epsilon < 0:
        raise lindistill.error.DomainError("epsilon must be non-negative")
    if not epsilon <= w_norm / 2:
        raise lindistill.error.DomainError(
            f"requires epsilon <= w_norm / 2, got epsilon={epsilon} and "
            f"w_norm={w_norm}")
    return float(math.sqrt(2 * math.pi * epsilon / w_norm))


def bound_approx(p, beta, n, epsilon, w_hat_norm, *, tight=False):
    """Bound for students within ε of ŵ: ``p(β) + p(π/2 − δ − β)^n``.

    ``δ = sqrt(2πε/‖ŵ‖)`` and β must lie in ``[0, π/2 − δ]``.
    """
    if not epsilon <= w_hat_norm / 2:
        raise lindistill.error.DomainError(
            f"requires epsilon <= w_hat_norm / 2, got epsilon={epsilon} and "
            f"w_hat_norm={w_hat_norm}")
    delta = small_angle_bound(epsilon, w_hat_norm)
    if not 0 <= beta <= np.pi / 2 - delta:
        raise lindistill.error.DomainError(
            f"requires 0 <= beta <= π/2 - delta = {np.pi / 2 - delta:.4f}, "
            f"got beta={beta}")
    if n < 1:
        raise lindistill.error.DomainError(f"n must be at least 1, got {n}")
    p = _curve(p)
    p_beta = float(p(beta))
    p_complement = float(p(max(0.0, np.pi / 2 - delta - beta)))
    return BoundReport(beta=float(beta), p_beta=p_beta,
                       p_complement=p_complement, n=int(n),
                       value=float(_combine(p_beta, p_complement, n, tight)),
                       delta=delta, tight=tight)


def perturbed_learner(w_hat, X, delta, rng):
    """Global minimiser ``ŵ + δ(‖ŵ‖/‖q‖)q`` pushed off the data span.

    ``q`` is a Gaussian vector orthogonal to the inputs, so the
    perturbed student matches every teacher logit and still minimises
    the distillation loss.
    """
    w_hat = lindistill.geometry.as_vector(w_hat, "w_hat")
    norm = np.linalg.norm(w_hat)
    if norm == 0:
        raise lindistill.error.DomainError("ŵ is zero")
    q = lindistill.geometry.orthogonal_complement_sample(X, rng)
    return w_hat + delta * (norm / np.linalg.norm(q)) * q


def append_pair(task, n, rng):
    """Transfer sets of *n* and ``n + 1`` inputs sharing the first *n*."""
    plus = lindistill.tasks.make_transfer_set(task, n + 1, rng)
    minus = lindistill.tasks.TransferSet.label(plus.X[:, :n], task.w_star)
    return minus, plus


def monotonicity_trial(learner, task, n, rng):
    """Train *learner* on ``n`` inputs and on the same plus one more.

    :param learner: Callable ``(transfer_set, rng) -> weights``.
    :returns: ``(transfer_set, w_minus, w_plus)``.
    """
    minus, plus = append_pair(task, n, rng)
    return minus, learner(minus, rng), learner(plus, rng)


def improves(w_star, w_minus, w_plus):
    """Whether the extra input strictly reduced the angle to the teacher."""
    return (lindistill.geometry.unsigned_angle(w_star, w_plus)
            < lindistill.geometry.unsigned_angle(w_star, w_minus))


def monotonicity_index_mc(learner, task, n, trials, rng):
    """Probability that one extra transfer input reduces the angle to w*.

    Each trial draws its own stream from a master seed taken from
    *rng*, so the result does not depend on trial order. Trials whose
    learner fails are excluded and counted.
    """
    if trials < 1 or n < 1:
        raise lindistill.error.DomainError("need trials >= 1 and n >= 1")
    master = lindistill.seeding.master_from(rng)
    improved = 0
    failures = 0
    for trial in range(trials):
        trial_rng = lindistill.seeding.derive(master, "monotonicity", trial)
        try:
            _, w_minus, w_plus = monotonicity_trial(learner, task, n, trial_rng)
            improved += improves(task.w_star, w_minus, w_plus)
        except LEARNER_FAILURES as error:
            logger.warning("trial %d failed: %s", trial, error)
            failures += 1
    completed = trials - failures
    if not completed:
        return IndexEstimate(estimate=float("nan"), m=0,
                             half_width=float("nan"), failures=failures)
    base = RiskEstimate.from_counts(improved, completed)
    return IndexEstimate(estimate=base.estimate, m=base.m,
                         half_width=base.half_width, failures=failures)
