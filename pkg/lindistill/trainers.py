"""Gradient-descent students.

Gradient flow on the distillation loss is approximated by full-batch
gradient descent with a small fixed step. The shallow student is a
single weight vector started at zero. The deep student is a stack of
factor matrices ``W_1 … W_N`` whose product ``W_N ⋯ W_1`` is the
end-to-end weight vector, started from a small balanced stack.

Both trainers watch for divergence: when the loss rises by more than
:data:`DIVERGENCE_SLACK` on :data:`DIVERGENCE_PATIENCE` consecutive
iterations the run restarts from its initial point with half the step,
up to ``max_halvings`` times.
"""

import dataclasses
import functools
import itertools
import logging
import time
import typing

import numpy as np
import pandas

import lindistill.distill
import lindistill.error
import lindistill.tasks

logger = logging.getLogger(__name__)

DIVERGENCE_SLACK = 1e-6
DIVERGENCE_PATIENCE = 10
#: Iteration cap of the hard-target learner; its weights grow without bound.
HARD_TARGET_MAX_ITERS = 10_000
#: Step of deep students configured with ``step="auto"``.
DEFAULT_DEEP_STEP = 0.05
#: Initial scale used when the initial-scale bound cannot be evaluated.
FALLBACK_INIT_SCALE = 1e-3


def _check_common(step, max_iters, loss_tol, grad_tol, stride, max_halvings):
    if step != "auto" and not (isinstance(step, (int, float)) and step > 0):
        raise lindistill.error.ContractError(
            f"must be positive or 'auto', got {step!r}", field="step")
    if max_iters < 0:
        raise lindistill.error.ContractError(
            "must be non-negative", field="max_iters")
    if loss_tol < 0 or grad_tol < 0:
        raise lindistill.error.ContractError(
            "tolerances must be non-negative", field="loss_tol")
    if stride < 1:
        raise lindistill.error.ContractError("must be at least 1", field="stride")
    if max_halvings < 0:
        raise lindistill.error.ContractError(
            "must be non-negative", field="max_halvings")


@dataclasses.dataclass(frozen=True)
class ShallowConfig:
    """Settings for :func:`train_shallow`.

    :param step: Step size, or ``"auto"`` for ``1/L`` where ``L`` is
        the smoothness constant of the loss on the transfer set.
    :param stride: Record every *stride*-th iteration in the trace.
    """

    step: typing.Union[float, str] = 0.1
    max_iters: int = 10**6
    loss_tol: float = 1e-10
    grad_tol: float = 1e-10
    stride: int = 100
    max_halvings: int = 20

    def __post_init__(self):
        _check_common(self.step, self.max_iters, self.loss_tol,
                      self.grad_tol, self.stride, self.max_halvings)


@dataclasses.dataclass(frozen=True)
class DeepConfig:
    """Settings for :func:`balanced_init` and :func:`train_deep`.

    :param depth: Number of factors, at least two.
    :param epsilon: Target distance ε between the trained and the
        closed-form solution, used to pick the initial scale.
    :param widths: Hidden widths ``h_1 … h_{N-1}``; all equal to the
        input dimension when omitted.
    :param init_scale: Norm of the initial end-to-end vector; half the
        largest conforming scale when omitted.
    :param init_direction: Unit vector, or seed for a random one.
    :param step: Step size; ``"auto"`` means :data:`DEFAULT_DEEP_STEP`.
    :param force: Train even if the initialisation conditions fail,
        recording a warning instead of raising.
    """

    depth: int
    epsilon: float
    widths: typing.Optional[typing.Tuple[int, ...]] = None
    init_scale: typing.Optional[float] = None
    init_direction: typing.Any = None
    step: typing.Union[float, str] = DEFAULT_DEEP_STEP
    max_iters: int = 10**6
    loss_tol: float = 1e-10
    grad_tol: float = 1e-10
    stride: int = 100
    max_halvings: int = 20
    force: bool = False

    def __post_init__(self):
        if self.depth < 2:
            raise lindistill.error.ContractError(
                "must be at least 2", field="depth")
        if not self.epsilon > 0:
            raise lindistill.error.ContractError(
                "must be positive", field="epsilon")
        if self.step == "auto":
            object.__setattr__(self, "step", DEFAULT_DEEP_STEP)
        if self.widths is not None:
            widths = tuple(int(h) for h in self.widths)
            if len(widths) != self.depth - 1 or min(widths) < 1:
                raise lindistill.error.ContractError(
                    f"need {self.depth - 1} widths of at least 1",
                    field="widths")
            object.__setattr__(self, "widths", widths)
        if self.init_scale is not None and self.init_scale < 0:
            raise lindistill.error.ContractError(
                "must be non-negative", field="init_scale")
        _check_common(self.step, self.max_iters, self.loss_tol,
                      self.grad_tol, self.stride, self.max_halvings)


class TraceRecord(typing.NamedTuple):
    iteration: int
    loss: float
    grad_norm: float
    distance: float
    wall_clock: float
    #: Balancedness residual of a deep student, ``nan`` for shallow ones.
    balancedness: float = float("nan")


@dataclasses.dataclass(frozen=True)
class TrainTrace:
    """Record of one training run.

    :param records: Every *stride*-th iteration plus the first and last.
    :param stop_reason: ``"loss_tol"``, ``"grad_tol"`` or ``"max_iters"``.
    :param step: Step size of the final, successful attempt.
    :param halvings: How often the step was halved on divergence.
    :param warnings: Conditions the run was allowed to proceed despite.
    """

    records: typing.Tuple[TraceRecord, ...]
    stride: int
    stop_reason: str
    step: float
    halvings: int = 0
    warnings: typing.Tuple[str, ...] = ()

    COLUMNS = TraceRecord._fields

    def __len__(self):
        return len(self.records)

    @property
    def losses(self):
        return np.array([record.loss for record in self.records])

    @property
    def grad_norms(self):
        return np.array([record.grad_norm for record in self.records])

    @property
    def balancedness(self):
        return np.array([record.balancedness for record in self.records])

    @property
    def final(self):
        return self.records[-1]

    def to_frame(self):
        return pandas.DataFrame(self.records, columns=list(self.COLUMNS))


class _Recorder:

    def __init__(self, stride, reference):
        self._stride = stride
        self._reference = reference
        self._start = time.perf_counter()
        self._records = []

    def record(self, iteration, value, grad_norm, w, *, final=False,
               balancedness=None):
        if iteration % self._stride and not final:
            return
        if iteration % self._stride == 0:
            logger.debug("iteration %d: loss %.3e", iteration, value)
        distance = (float(np.linalg.norm(w - self._reference))
                    if self._reference is not None else float("nan"))
        residual = balancedness() if balancedness else float("nan")
        self._records.append(TraceRecord(
            iteration, value, grad_norm, distance,
            time.perf_counter() - self._start, residual))

    def freeze(self, reason, step, halvings, warnings):
        return TrainTrace(
            records=tuple(self._records),
            stride=self._stride,
            stop_reason=reason,
            step=step,
            halvings=halvings,
            warnings=tuple(warnings),
        )


class _Diverged(Exception):
    pass


class _DivergenceMonitor:

    def __init__(self):
        self._previous = np.inf
        self._rising = 0

    def update(self, value):
        if not np.isfinite(value):
            raise _Diverged
        if value > self._previous + DIVERGENCE_SLACK:
            self._rising += 1
            if self._rising >= DIVERGENCE_PATIENCE:
                raise _Diverged
        else:
            self._rising = 0
        self._previous = value


def _stop_reason(iteration, value, grad_norm, cfg):
    if value <= cfg.loss_tol:
        return "loss_tol"
    if grad_norm <= cfg.grad_tol:
        return "grad_tol"
    if iteration >= cfg.max_iters:
        return "max_iters"
    return None


def _halving(run, step, cfg):
    for halvings in range(cfg.max_halvings + 1):
        try:
            return run(step, halvings)
        except _Diverged:
            logger.warning("descent diverged at step %.3e, halving", step)
            step /= 2
    raise lindistill.error.StepSizeError(
        f"descent still diverges after {cfg.max_halvings} halvings "
        f"(last step {step * 2:.3e}); configure a smaller step")


def _reference(ts):
    if ts.w_star is None:
        return None
    try:
        return lindistill.distill.closed_form_solution(ts)
    except lindistill.error.SingularityError:
        return None


def train_shallow(ts, cfg=ShallowConfig(), *, reference=None):
    """Train a single weight vector from zero by gradient descent.

    Runs ``w ← w − step·∇L(w)`` until the loss or the gradient norm
    falls below its tolerance or the iteration budget is spent. Every
    iterate stays in the span of the inputs.

    :param reference: Vector the trace measures distances to; the
        closed-form solution when omitted and computable.
    :returns: Final weights and the :class:`TrainTrace`.
    :raises lindistill.error.StepSizeError: If divergence persists.
    """
    if reference is None:
        reference = _reference(ts)
    step = cfg.step
    if step == "auto":
        step = 1 / lindistill.distill.smoothness(ts)

    def run(step, halvings):
        w = np.zeros(ts.d)
        recorder = _Recorder(cfg.stride, reference)
        monitor = _DivergenceMonitor()
        for iteration in itertools.count():
            if not np.all(np.isfinite(w)):
                raise _Diverged
            value, grad = lindistill.distill.value_and_gradient(w, ts)
            grad_norm = float(np.linalg.norm(grad))
            monitor.update(value)
            reason = _stop_reason(iteration, value, grad_norm, cfg)
            recorder.record(iteration, value, grad_norm, w,
                            final=reason is not None)
            if reason is not None:
                logger.info("shallow descent stopped on %s after %d "
                            "iterations, loss %.3e", reason, iteration, value)
                return w, recorder.freeze(reason, step, halvings, ())
            w = w - step * grad

    return _halving(run, step, cfg)


def train_hard_target(ts, cfg=ShallowConfig(step="auto")):
    """Hard-target learner: descent on cross-entropy against ``𝟙{y ≥ ½}``.

    The soft labels are thresholded to the teacher's predictions and
    the shallow trainer runs on those, with the iteration budget capped
    at :data:`HARD_TARGET_MAX_ITERS` since the weights of separable
    logistic descent grow without bound.
    """
    hard = lindistill.tasks.TransferSet(
        X=ts.X, y=(ts.y >= 0.5).astype(float))
    capped = dataclasses.replace(
        cfg, max_iters=min(cfg.max_iters, HARD_TARGET_MAX_ITERS))
    return train_shallow(hard, capped)


@dataclasses.dataclass(frozen=True)
class FactorStack:
    """Factors ``W_1 (h_1×d), …, W_N (1×h_{N-1})`` of a deep linear student."""

    matrices: typing.Tuple[np.ndarray, ...]

    def __post_init__(self):
        matrices = tuple(np.array(W, dtype=float) for W in self.matrices)
        if not matrices or any(W.ndim != 2 for W in matrices):
            raise lindistill.error.UsageError(
                "a stack needs at least one 2-d factor")
        for lower, upper in zip(matrices, matrices[1:]):
            if upper.shape[1] != lower.shape[0]:
                raise lindistill.error.UsageError(
                    f"factor of shape {upper.shape} cannot follow "
                    f"{lower.shape}")
        if matrices[-1].shape[0] != 1:
            raise lindistill.error.UsageError(
                f"last factor must have one row, got {matrices[-1].shape}")
        object.__setattr__(self, "matrices", matrices)

    @property
    def depth(self):
        return len(self.matrices)

    @property
    def d(self):
        return self.matrices[0].shape[1]

    @property
    def widths(self):
        return tuple(W.shape[0] for W in self.matrices[:-1])


def end_to_end(stack):
    """The vector ``(W_N ⋯ W_1)ᵀ``."""
    return functools.reduce(lambda left, W: left @ W,
                            reversed(stack.matrices[:-1]),
                            stack.matrices[-1])[0]


def balancedness_residual(stack):
    """``max_j ‖W_{j+1}ᵀW_{j+1} − W_jW_jᵀ‖`` (Frobenius), zero if balanced."""
    return _residual(stack.matrices)


def _residual(matrices):
    residuals = [
        np.linalg.norm(upper.T @ upper - lower @ lower.T)
        for lower, upper in zip(matrices, matrices[1:])
    ]
    return float(max(residuals, default=0.0))


def init_scale_bound(epsilon, w_hat_norm, N):
    """Largest initial end-to-end norm that keeps the trained student within ε of ŵ.

    ``min{‖ŵ‖, ε^N (ε²‖ŵ‖^{−2/N} + ‖ŵ‖^{2−2/N})^{−N/2}}``
    """
    r = w_hat_norm
    inner = epsilon**2 * r ** (-2 / N) + r ** (2 - 2 / N)
    return float(min(r, epsilon**N * inner ** (-N / 2)))


def resolve_init_scale(cfg, ts, *, w_hat=None):
    """Initial scale and, when computable, the initial-scale bound.

    :returns: ``(scale, bound)`` where *bound* is ``None`` if ŵ is not
        available.
    :raises lindistill.error.ContractError: If an explicit scale does
        not satisfy the bound and ``force`` is not set.
    """
    if w_hat is None:
        w_hat = _reference(ts)
    bound = None
    if w_hat is not None and np.any(w_hat):
        bound = init_scale_bound(cfg.epsilon, np.linalg.norm(w_hat), cfg.depth)
    if cfg.init_scale is not None:
        scale = cfg.init_scale
        if bound is not None and not scale < bound and not cfg.force:
            raise lindistill.error.ContractError(
                f"{scale:.3e} is not below the bound {bound:.3e}",
                field="init_scale")
    elif bound is not None:
        scale = bound / 2
    else:
        logger.warning("closed-form solution unavailable; initial scale "
                       "defaults to %.1e", FALLBACK_INIT_SCALE)
        scale = FALLBACK_INIT_SCALE
    return scale, bound


def _direction(cfg, d, rng):
    direction = cfg.init_direction
    if direction is None:
        direction = rng.standard_normal(d)
    elif np.isscalar(direction):
        direction = np.random.default_rng(int(direction)).standard_normal(d)
    direction = np.asarray(direction, dtype=float)
    if direction.shape != (d,) or not np.any(direction):
        raise lindistill.error.ContractError(
            f"need a non-zero vector of length {d}", field="init_direction")
    return direction / np.linalg.norm(direction)


def balanced_init(cfg, ts, rng, *, w_hat=None):
    """Rank-one balanced stack with end-to-end vector ``±s·u``.

    ``W_1 = s^{1/N} e₁uᵀ``, the middle factors ``s^{1/N} e₁e₁ᵀ`` and
    ``W_N = s^{1/N} e₁ᵀ``, so ``W_{j+1}ᵀW_{j+1} = W_jW_jᵀ`` exactly.
    ``W_N`` is negated if needed so that the initial loss is below the
    loss at zero.

    :raises lindistill.error.DomainError: If the scale is zero.
    """
    scale, _ = resolve_init_scale(cfg, ts, w_hat=w_hat)
    if scale == 0:
        raise lindistill.error.DomainError(
            "zero initial scale is a stationary point of deep descent")
    d = ts.d
    u = _direction(cfg, d, rng)
    widths = cfg.widths or (d,) * (cfg.depth - 1)
    a = scale ** (1 / cfg.depth)
    shapes = list(zip((*widths, 1), (d, *widths)))
    matrices = [np.zeros(shape) for shape in shapes]
    matrices[0][0] = a * u
    for W in matrices[1:]:
        W[0, 0] = a
    stack = FactorStack(tuple(matrices))
    at_zero = lindistill.distill.loss(np.zeros(d), ts)
    if not lindistill.distill.loss(end_to_end(stack), ts) < at_zero:
        matrices[-1] = -matrices[-1]
        stack = FactorStack(tuple(matrices))
    return stack


def _suffixes(matrices):
    """``after[j] = W_N ⋯ W_{j+2}`` as a row, so ``after[N-1] = [1]``."""
    after = [None] * len(matrices)
    after[-1] = np.ones(1)
    for j in range(len(matrices) - 2, -1, -1):
        after[j] = after[j + 1] @ matrices[j + 1]
    return after


def factor_gradients(stack, grad):
    """Gradient of the loss with respect to every factor.

    :param grad: Gradient of the loss at the end-to-end vector.
    :returns: List of arrays shaped like the factors.
    """
    return _factor_gradients(stack.matrices, _suffixes(stack.matrices), grad)


def _factor_gradients(matrices, after, grad):
    before = [grad]
    for W in matrices[:-1]:
        before.append(W @ before[-1])
    return [np.outer(a, b) for a, b in zip(after, before)]


def _initial_conditions(stack, ts, cfg, reference):
    """Failed initial conditions, and notes on those that went unchecked."""
    failures = []
    notes = []
    w0 = end_to_end(stack)
    if reference is None:
        notes.append("closed-form solution unavailable; "
                     "initial scale bound not checked")
    else:
        bound = init_scale_bound(
            cfg.epsilon, np.linalg.norm(reference), cfg.depth)
        if not np.linalg.norm(w0) < bound:
            failures.append(
                f"initial norm {np.linalg.norm(w0):.3e} is not below "
                f"the bound {bound:.3e}")
    if not (lindistill.distill.loss(w0, ts)
            < lindistill.distill.loss(np.zeros(ts.d), ts)):
        failures.append("initial loss is not below the loss at zero")
    scale = max(np.linalg.norm(W) ** 2 for W in stack.matrices)
    if balancedness_residual(stack) > 1e-12 * (1 + scale):
        failures.append(
            f"stack is not balanced (residual "
            f"{balancedness_residual(stack):.3e})")
    return failures, notes


def train_deep(stack, ts, cfg, *, reference=None):
    """Train a deep linear student by simultaneous descent on every factor.

    The initial stack must satisfy the initial-scale bound, the
    loss-below-zero condition and balancedness; failures raise unless
    ``cfg.force`` is set, in which case they are logged and recorded in
    the trace. The bound cannot be checked without a closed-form
    solution, which is recorded as a warning.

    :returns: End-to-end weights, final stack and the trace.
    :raises lindistill.error.NumericError: If a factor stops being finite.
    :raises lindistill.error.StepSizeError: If divergence persists.
    """
    if stack.d != ts.d or stack.depth != cfg.depth:
        raise lindistill.error.UsageError(
            f"stack of depth {stack.depth} on dimension {stack.d} does not "
            f"match depth {cfg.depth} on dimension {ts.d}")
    if reference is None:
        reference = _reference(ts)
    failures, notes = _initial_conditions(stack, ts, cfg, reference)
    if failures and not cfg.force:
        raise lindistill.error.ContractError(
            "; ".join(failures), field="init")
    warnings = failures + notes
    for warning in warnings:
        logger.warning("deep training: %s", warning)

    def run(step, halvings):
        matrices = [W.copy() for W in stack.matrices]
        recorder = _Recorder(cfg.stride, reference)
        monitor = _DivergenceMonitor()
        for iteration in itertools.count():
            after = _suffixes(matrices)
            w = after[0] @ matrices[0]
            if not (all(np.all(np.isfinite(W)) for W in matrices)
                    and np.all(np.isfinite(w))):
                raise lindistill.error.NumericError(
                    "factor became non-finite", iteration=iteration)
            value, grad = lindistill.distill.value_and_gradient(w, ts)
            grad_norm = float(np.linalg.norm(grad))
            monitor.update(value)
            reason = _stop_reason(iteration, value, grad_norm, cfg)
            recorder.record(
                iteration, value, grad_norm, w, final=reason is not None,
                balancedness=functools.partial(_residual, matrices))
            if reason is not None:
                logger.info("deep descent stopped on %s after %d "
                            "iterations, loss %.3e", reason, iteration, value)
                trace = recorder.freeze(reason, step, halvings, warnings)
                return w, FactorStack(tuple(matrices)), trace
            gradients = _factor_gradients(matrices, after, grad)
            matrices = [W - step * G for W, G in zip(matrices, gradients)]

    return _halving(run, cfg.step, cfg)


def induced_flow_rhs(w, grad, N):
    """End-to-end velocity of balanced deep gradient flow.

    ``−‖w‖^{2(N−1)/N} (∇ + (N−1)·P_w ∇)`` with ``P_w`` the projection
    onto the line through *w*.

    :raises lindistill.error.DomainError: If *w* is zero.
    """
    w = np.asarray(w, dtype=float)
    grad = np.asarray(grad, dtype=float)
    norm = np.linalg.norm(w)
    if norm == 0:
        raise lindistill.error.DomainError("induced flow is undefined at zero")
    unit = w / norm
    along = (N - 1) * (unit @ grad) * unit
    return -norm ** (2 * (N - 1) / N) * (grad + along)


def induced_flow_check(stack, ts, steps=(1e-3, 5e-4, 2.5e-4)):
    """Compare one factor-space step with the induced end-to-end flow.

    For each step size η, one simultaneous descent step is taken on
    every factor and the resulting change of the end-to-end vector is
    compared with ``η·induced_flow_rhs``.

    :returns: ``(discrepancies, slope)``, the norms of the differences
        and the slope of their log-log fit against η (2 for a
        first-order match).
    """
    w0 = end_to_end(stack)
    grad = lindistill.distill.loss_gradient(w0, ts)
    rhs = induced_flow_rhs(w0, grad, stack.depth)
    gradients = factor_gradients(stack, grad)
    discrepancies = []
    for step in steps:
        moved = FactorStack(tuple(
            W - step * G for W, G in zip(stack.matrices, gradients)))
        delta = end_to_end(moved) - w0
        discrepancies.append(np.linalg.norm(delta - step * rhs))
    discrepancies = np.array(discrepancies)
    slope = np.polyfit(np.log(steps), np.log(discrepancies), 1)[0]
    return discrepancies, float(slope)
