"""Randomised property checks behind ``lindistill verify``.

Each ``check_*`` function draws its own random instances from *rng*,
tests one property on all of them and returns a :class:`Check`. Sizes
default to the full suite; tests pass smaller ones.
"""

import dataclasses
import logging
import time

import numpy as np

import lindistill.distill
import lindistill.error
import lindistill.geometry
import lindistill.risk
import lindistill.seeding
import lindistill.tasks
import lindistill.trainers

logger = logging.getLogger(__name__)

#: Descent settings for the recovery checks, tight enough that the
#: trained and the closed-form solution agree to many digits.
RECOVERY_TRAINER = lindistill.trainers.ShallowConfig(
    step="auto", max_iters=200_000, loss_tol=0.0, grad_tol=1e-13)


@dataclasses.dataclass(frozen=True)
class Check:
    """Outcome of one property check.

    :param cases: Random instances examined.
    :param violations: Instances on which the property failed.
    :param worst: Largest observed value of the checked quantity, in
        the units *detail* describes.
    """

    name: str
    passed: bool
    cases: int
    violations: int
    worst: float
    detail: str
    seconds: float = 0.0

    def as_row(self):
        return dataclasses.asdict(self)


def _unit(rng, d):
    w = rng.standard_normal(d)
    return w / np.linalg.norm(w)


def _timed(fn):
    def timed(*args, **kwargs):
        start = time.perf_counter()
        check = fn(*args, **kwargs)
        check = dataclasses.replace(
            check, seconds=time.perf_counter() - start)
        logger.info("%s: %s (%d/%d violations, %.1fs)", check.name,
                    "passed" if check.passed else "FAILED",
                    check.violations, check.cases, check.seconds)
        return check
    timed.__name__ = fn.__name__
    timed.__doc__ = fn.__doc__
    return timed


@_timed
def check_exact_recovery(rng, *, tasks=50, d_range=(2, 50), mc=100_000):
    """With ``n = d`` descent recovers the teacher and has zero risk."""
    worst = 0.0
    violations = 0
    for _ in range(tasks):
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        w_star = _unit(rng, d)
        ts = lindistill.tasks.TransferSet.label(
            lindistill.tasks.conditioned_design(d, d, rng), w_star)
        w, _ = lindistill.trainers.train_shallow(ts, RECOVERY_TRAINER)
        error = np.linalg.norm(w - w_star) / np.linalg.norm(w_star)
        risk = lindistill.risk.transfer_risk_mc(
            w, w_star, lindistill.tasks.IsotropicTask(d, w_star), mc, rng)
        worst = max(worst, error)
        violations += error > 1e-4 or risk.estimate != 0
    return Check("exact-recovery", violations == 0, tasks, violations, worst,
                 "relative distance to the teacher; risk must be 0")


@_timed
def check_projection_recovery(rng, *, tasks=50, d=50, n=10):
    """With ``n < d`` descent converges to the projection of the teacher."""
    worst = 0.0
    violations = 0
    for _ in range(tasks):
        w_star = _unit(rng, d)
        X = lindistill.tasks.conditioned_design(d, n, rng)
        ts = lindistill.tasks.TransferSet.label(X, w_star)
        target = lindistill.geometry.project_onto_span(X, w_star)
        w, _ = lindistill.trainers.train_shallow(ts, RECOVERY_TRAINER)
        error = np.linalg.norm(w - target) / np.linalg.norm(target)
        worst = max(worst, error)
        violations += error > 1e-4
    return Check("projection-recovery", violations == 0, tasks, violations,
                 worst, "relative distance to the projected teacher")


@_timed
def check_deep_convergence(rng, *, runs=40, depths=(2, 3), d=20,
                           ns=(5, 20), ratio=0.05, max_iters=200_000,
                           pass_share=0.95):
    """Deep descent from a conforming start ends within ε of ŵ."""
    cells = [(depth, n) for depth in depths for n in ns]
    worst = 0.0
    violations = 0
    for run in range(runs):
        depth, n = cells[run % len(cells)]
        ts = lindistill.tasks.TransferSet.label(
            lindistill.tasks.conditioned_design(d, n, rng), _unit(rng, d))
        w_hat = lindistill.distill.closed_form_solution(ts)
        norm = np.linalg.norm(w_hat)
        cfg = lindistill.trainers.DeepConfig(
            depth=depth, epsilon=ratio * norm, step=0.25,
            max_iters=max_iters, loss_tol=1e-12, grad_tol=1e-9)
        stack = lindistill.trainers.balanced_init(cfg, ts, rng, w_hat=w_hat)
        try:
            w, _, _ = lindistill.trainers.train_deep(
                stack, ts, cfg, reference=w_hat)
        except lindistill.risk.LEARNER_FAILURES as error:
            logger.warning("deep run %d failed: %s", run, error)
            violations += 1
            continue
        excess = (np.linalg.norm(w - w_hat) - cfg.epsilon) / norm
        worst = max(worst, excess)
        violations += excess > 1e-4
    passed = runs - violations >= pass_share * runs
    return Check("deep-convergence", passed, runs, violations, worst,
                 "distance beyond ε, relative to ‖ŵ‖")


@_timed
def check_strong_monotonicity(rng, *, pairs=1000, d=30, slack=1e-9):
    """Appending an input never increases the angle of ŵ to the teacher."""
    worst = -np.inf
    violations = 0
    for _ in range(pairs):
        w_star = _unit(rng, d)
        n = int(rng.integers(1, d))
        X = rng.standard_normal((d, n + 1))
        minus = lindistill.tasks.TransferSet.label(X[:, :n], w_star)
        plus = lindistill.tasks.TransferSet.label(X, w_star)
        before = lindistill.geometry.unsigned_angle(
            w_star, lindistill.distill.closed_form_solution(minus))
        after = lindistill.geometry.unsigned_angle(
            w_star, lindistill.distill.closed_form_solution(plus))
        worst = max(worst, after - before)
        violations += after > before + slack
    return Check("strong-monotonicity", violations == 0, pairs, violations,
                 float(worst), "largest angle increase in radians")


@_timed
def check_bound_dominance(rng, *, kappas=(1.0, 2.0), d=50, ns=(5, 10, 20),
                          sets=200, mc=20_000):
    """Mean risk of ŵ stays below the optimised bound on κ-tasks."""
    cells = 0
    violations = 0
    worst = -np.inf
    for kappa in kappas:
        for n in ns:
            task = lindistill.tasks.PolyAngleTask.random(kappa, d, rng)
            W = [lindistill.distill.closed_form_solution(
                     lindistill.tasks.make_transfer_set(task, n, rng))
                 for _ in range(sets)]
            risks = np.array([
                risk.estimate for risk in lindistill.risk.transfer_risk_many(
                    np.vstack(W), task.w_star, task, mc, rng)])
            error = np.sqrt(risks.var(ddof=1) / sets
                            + np.mean(risks * (1 - risks)) / mc)
            bound = lindistill.risk.bound_optimize_beta(task, n)
            margin = risks.mean() - (bound.value + 3 * error)
            logger.debug("κ=%g n=%d: mean risk %.4f, bound %.4f",
                         kappa, n, risks.mean(), bound.value)
            cells += 1
            worst = max(worst, margin)
            violations += margin > 0
    return Check("bound-dominance", violations == 0, cells, violations,
                 float(worst), "mean risk minus bound plus 3 standard errors")


@_timed
def check_poly_substitution(*, ns=range(2, 101)):
    """At ``β = (π/2)n^{−1/n}`` the κ = 1 bound sits below the polynomial rate."""
    def p(theta):
        return lindistill.tasks.analytic_p(1.0, theta)

    gaps = [
        lindistill.risk.bound_thm3(p, (np.pi / 2) * n ** (-1 / n), n).value
        - lindistill.risk.bound_poly(1.0, 1.0, n)
        for n in ns
    ]
    violations = int(np.sum(np.array(gaps) > 0))
    return Check("poly-substitution", violations == 0, len(gaps), violations,
                 float(max(gaps)), "bound minus polynomial rate")


@_timed
def check_small_angle(rng, *, cases=1000, slack=1e-9):
    """Vectors within ``ε ≤ ‖w‖/2`` of *w* lie within ``sqrt(2πε/‖w‖)``."""
    violations = 0
    worst = -np.inf
    for _ in range(cases):
        d = int(rng.integers(2, 21))
        w = rng.standard_normal(d) * rng.uniform(0.1, 10)
        norm = np.linalg.norm(w)
        epsilon = rng.uniform(1e-3, 1) * norm / 2
        v = w + rng.uniform(0, 1) * epsilon * _unit(rng, d)
        gap = (lindistill.geometry.signed_angle(w, v)
               - lindistill.risk.small_angle_bound(epsilon, norm))
        worst = max(worst, gap)
        violations += gap > slack
    return Check("small-angle", violations == 0, cases, violations,
                 float(worst), "angle minus bound in radians")


def _finite_gradient(w, ts, h):
    basis = np.eye(w.size)
    return np.array([
        (lindistill.distill.loss(w + h * e, ts)
         - lindistill.distill.loss(w - h * e, ts)) / (2 * h)
        for e in basis
    ])


def _finite_hessian(w, ts, h):
    basis = np.eye(w.size)
    return np.column_stack([
        (lindistill.distill.loss_gradient(w + h * e, ts)
         - lindistill.distill.loss_gradient(w - h * e, ts)) / (2 * h)
        for e in basis
    ])


@_timed
def check_oracles(rng, *, instances=100):
    """Gradient and Hessian against finite differences, and their structure.

    The gradient must lie in the span of the inputs and the Hessian
    must be positive semi-definite.
    """
    violations = 0
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(2, 21))
        n = int(rng.integers(1, 21))
        ts = lindistill.tasks.TransferSet.label(
            rng.standard_normal((d, n)), rng.standard_normal(d))
        w = rng.standard_normal(d)
        grad = lindistill.distill.loss_gradient(w, ts)
        hessian = lindistill.distill.loss_hessian(w, ts)
        grad_error = (np.linalg.norm(_finite_gradient(w, ts, 1e-6) - grad)
                      / (np.linalg.norm(grad) + 1e-8))
        hessian_error = (
            np.linalg.norm(_finite_hessian(w, ts, 1e-5) - hessian)
            / (np.linalg.norm(hessian) + 1e-8))
        if n < d:
            off_span = np.linalg.norm(
                grad - lindistill.geometry.project_onto_span(ts.X, grad))
        else:
            off_span = 0.0
        lowest = np.linalg.eigvalsh(hessian)[0]
        worst = max(worst, grad_error / 1e-5, hessian_error / 1e-4)
        violations += (grad_error > 1e-5 or hessian_error > 1e-4
                       or off_span > 1e-10
                       or lowest < -1e-12 * (1 + np.linalg.norm(hessian)))
    return Check("oracles", violations == 0, instances, violations, worst,
                 "largest relative finite-difference error over tolerance")


@_timed
def check_induced_flow(rng, *, instances=10, steps=(1e-3, 5e-4, 2.5e-4),
                       min_slope=1.8):
    """One factor-space step matches the induced flow to second order."""
    violations = 0
    slopes = []
    for _ in range(instances):
        d = int(rng.integers(3, 11))
        n = int(rng.integers(1, d))
        depth = int(rng.integers(2, 4))
        ts = lindistill.tasks.TransferSet.label(
            rng.standard_normal((d, n)), _unit(rng, d))
        cfg = lindistill.trainers.DeepConfig(
            depth=depth, epsilon=1.0, init_scale=1.0, force=True)
        stack = lindistill.trainers.balanced_init(cfg, ts, rng)
        _, slope = lindistill.trainers.induced_flow_check(stack, ts, steps)
        slopes.append(slope)
        violations += slope < min_slope
    return Check("induced-flow", violations == 0, instances, violations,
                 float(min(slopes)), "smallest log-log slope")


@_timed
def check_convexity(rng, *, cases=1000, slack=1e-9):
    """The loss is convex, and its tangent lines stay below it along the span."""
    violations = 0
    worst = -np.inf
    for _ in range(cases):
        d = int(rng.integers(2, 21))
        n = int(rng.integers(1, 21))
        ts = lindistill.tasks.TransferSet.label(
            rng.standard_normal((d, n)), rng.standard_normal(d))
        w, v = 2 * rng.standard_normal((2, d))
        t = rng.uniform()
        chord = (lindistill.distill.loss(t * w + (1 - t) * v, ts)
                 - t * lindistill.distill.loss(w, ts)
                 - (1 - t) * lindistill.distill.loss(v, ts))
        along = w + ts.X @ rng.standard_normal(n)
        value, grad = lindistill.distill.value_and_gradient(w, ts)
        tangent = value + grad @ (along - w) - lindistill.distill.loss(along, ts)
        gap = max(chord, tangent)
        worst = max(worst, gap)
        violations += gap > slack
    return Check("convexity", violations == 0, cases, violations,
                 float(worst), "largest chord or tangent excess")


@_timed
def check_objective_convergence(rng, *, instances=100, d_range=(2, 50),
                                pass_share=0.95):
    """Shallow descent at default settings drives the loss below its tolerance."""
    cfg = lindistill.trainers.ShallowConfig()
    violations = 0
    worst = 0.0
    for _ in range(instances):
        d = int(rng.integers(d_range[0], d_range[1] + 1))
        n = int(rng.integers(1, 2 * d + 1))
        ts = lindistill.tasks.TransferSet.label(
            lindistill.tasks.conditioned_design(d, n, rng), _unit(rng, d))
        try:
            _, trace = lindistill.trainers.train_shallow(ts, cfg)
        except lindistill.risk.LEARNER_FAILURES as error:
            logger.warning("convergence instance failed: %s", error)
            violations += 1
            continue
        worst = max(worst, trace.final.loss)
        violations += trace.final.loss > cfg.loss_tol
    passed = instances - violations >= pass_share * instances
    return Check("objective-convergence", passed, instances, violations,
                 float(worst), "largest final loss")


@_timed
def check_approx_bound(rng, *, kappa=1.0, d=20, n=8, sets=40, depth=2,
                       ratio=0.05, mc=20_000, max_iters=200_000):
    """Mean risk of deep students within ε of ŵ stays below the approximate bound.

    ε is ``ratio·‖ŵ‖`` on every transfer set, so all students share one
    angular slack and one bound.
    """
    task = lindistill.tasks.PolyAngleTask.random(kappa, d, rng)
    W = []
    failures = 0
    for _ in range(sets):
        ts = lindistill.tasks.make_transfer_set(task, n, rng)
        w_hat = lindistill.distill.closed_form_solution(ts)
        cfg = lindistill.trainers.DeepConfig(
            depth=depth, epsilon=ratio * np.linalg.norm(w_hat), step=0.25,
            max_iters=max_iters, loss_tol=1e-12, grad_tol=1e-9)
        try:
            stack = lindistill.trainers.balanced_init(
                cfg, ts, rng, w_hat=w_hat)
            w, _, _ = lindistill.trainers.train_deep(
                stack, ts, cfg, reference=w_hat)
        except lindistill.risk.LEARNER_FAILURES as error:
            logger.warning("deep student failed: %s", error)
            failures += 1
            continue
        W.append(w)
    if len(W) < 2:
        return Check("approx-bound", False, sets, sets, float("nan"),
                     "too few deep students trained")
    risks = np.array([
        risk.estimate for risk in lindistill.risk.transfer_risk_many(
            np.vstack(W), task.w_star, task, mc, rng)])
    error = np.sqrt(risks.var(ddof=1) / len(W)
                    + np.mean(risks * (1 - risks)) / mc)
    bound = lindistill.risk.bound_optimize_beta(
        task, n, epsilon=ratio, w_hat_norm=1.0)
    margin = risks.mean() - (bound.value + 3 * error)
    logger.debug("mean risk %.4f, approximate bound %.4f",
                 risks.mean(), bound.value)
    violations = int(margin > 0)
    return Check("approx-bound", violations == 0 and failures == 0, sets,
                 violations + failures, float(margin),
                 "mean risk minus bound plus 3 standard errors")


CHECKS = {
    "exact-recovery": check_exact_recovery,
    "projection-recovery": check_projection_recovery,
    "deep-convergence": check_deep_convergence,
    "strong-monotonicity": check_strong_monotonicity,
    "bound-dominance": check_bound_dominance,
    "poly-substitution": check_poly_substitution,
    "small-angle": check_small_angle,
    "oracles": check_oracles,
    "induced-flow": check_induced_flow,
    "convexity": check_convexity,
    "objective-convergence": check_objective_convergence,
    "approx-bound": check_approx_bound,
}

_DETERMINISTIC = {"poly-substitution"}


def run_checks(seed, names=None):
    """Run the named checks, all by default, each on its own stream."""
    names = list(CHECKS) if names is None else list(names)
    unknown = [name for name in names if name not in CHECKS]
    if unknown:
        raise lindistill.error.UsageError(
            f"unknown checks {unknown}; expected some of {list(CHECKS)}")
    checks = []
    for name in names:
        if name in _DETERMINISTIC:
            checks.append(CHECKS[name]())
        else:
            checks.append(CHECKS[name](
                lindistill.seeding.derive(seed, f"verify/{name}")))
    return checks
