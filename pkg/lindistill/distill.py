"""The distillation objective and its analytic structure.

The loss is the mean cross-entropy between student predictions and the
teacher's soft labels, shifted by the entropy of each soft label so its
minimum is zero::

    L(w) = (1/n) Σᵢ [softplus(wᵀxᵢ) − yᵢ·wᵀxᵢ − H(yᵢ)]

which equals ``−yᵢ log σ(wᵀxᵢ) − (1 − yᵢ) log(1 − σ(wᵀxᵢ)) − H(yᵢ)``
term by term but never evaluates ``log 0``. The ``1/n`` factor is part
of the loss, its gradient and its Hessian alike.
"""

import logging

import numpy as np
import scipy.special

import lindistill.error
import lindistill.geometry

logger = logging.getLogger(__name__)

#: Default tolerance on logits for :func:`is_global_minimizer`.
MINIMIZER_TOL = 1e-8
#: Default tolerance for treating a loss value as zero.
LOSS_TOL = 1e-12


def _logits(w, ts):
    w = np.asarray(w, dtype=float)
    if w.shape != (ts.d,):
        raise lindistill.error.UsageError(
            f"weights of shape {w.shape} for inputs of dimension {ts.d}")
    if not np.all(np.isfinite(w)):
        raise lindistill.error.DomainError("weights have non-finite entries")
    return w @ ts.X


def label_entropy(y):
    """Entropy in nats of Bernoulli(*y*), zero at ``y ∈ {0, 1}``."""
    return scipy.special.entr(y) + scipy.special.entr(1 - y)


def loss(w, ts):
    """Normalised cross-entropy distillation loss, in nats."""
    z = _logits(w, ts)
    terms = np.logaddexp(0, z) - ts.y * z - label_entropy(ts.y)
    return float(np.mean(terms))


def loss_gradient(w, ts):
    """Gradient ``(1/n) Σᵢ (σ(wᵀxᵢ) − yᵢ) xᵢ``, which lies in span(X)."""
    z = _logits(w, ts)
    return ts.X @ (scipy.special.expit(z) - ts.y) / ts.n


def loss_hessian(w, ts):
    """Hessian ``(1/n) X diag(σᵢ(1 − σᵢ)) Xᵀ``, exactly symmetric."""
    s = scipy.special.expit(_logits(w, ts))
    H = (ts.X * (s * (1 - s))) @ ts.X.T / ts.n
    return (H + H.T) / 2


def smoothness(ts):
    """Global Lipschitz constant of the gradient, ``‖X‖₂² / (4n)``."""
    return float(np.linalg.norm(ts.X, 2) ** 2 / (4 * ts.n))


def closed_form_solution(ts):
    """The distillation solution ŵ.

    ``w*`` itself when ``n ≥ d``, otherwise the projection of ``w*``
    onto the span of the inputs. Either way it is a global minimiser
    of :func:`loss`.

    :raises lindistill.error.SingularityError: If X has less than full rank.
    :raises lindistill.error.UsageError: If the transfer set carries no teacher.
    """
    if ts.w_star is None:
        raise lindistill.error.UsageError(
            "closed-form solution needs a teacher-tagged transfer set")
    # checks rank in both regimes
    lindistill.geometry.span_basis(ts.X)
    if ts.n >= ts.d:
        return ts.w_star.copy()
    return lindistill.geometry.project_onto_span(ts.X, ts.w_star)


def teacher_logits(ts):
    """Recover ``w*ᵀxᵢ`` from the soft labels.

    :raises lindistill.error.DomainError: If a soft label is exactly 0
        or 1, where the sigmoid cannot be inverted.
    """
    if np.any((ts.y == 0) | (ts.y == 1)):
        raise lindistill.error.DomainError(
            "soft labels of exactly 0 or 1 do not determine the teacher logits")
    return scipy.special.logit(ts.y)


def is_global_minimizer(w, ts, tol=MINIMIZER_TOL):
    """Whether *w* reproduces every teacher logit within *tol*.

    The global minimisers are exactly ``{w : Xᵀw = Xᵀw*}``.
    """
    residual = _logits(w, ts) - teacher_logits(ts)
    return bool(np.max(np.abs(residual)) <= tol)


def pl_ratio(losses, grad_norms, *, floor=LOSS_TOL):
    """Smallest ``½‖∇L‖² / L`` along a trajectory.

    Points whose loss is at or below *floor* are skipped since both
    terms are at rounding level there.

    :returns: The minimum ratio, or ``nan`` if no point qualifies.
    """
    losses = np.asarray(losses, dtype=float)
    grad_norms = np.asarray(grad_norms, dtype=float)
    keep = losses > floor
    if not keep.any():
        return float("nan")
    return float(np.min(0.5 * grad_norms[keep] ** 2 / losses[keep]))


def curvature_estimate(w, v, ts):
    """Empirical strong convexity constant between *w* and *v*.

    Returns ``(L(v) − L(w) − ∇L(w)ᵀ(v − w)) / (½‖v − w‖²)``. For
    ``v − w`` in span(X) inside a sublevel set this is bounded below by
    a positive constant.
    """
    step = np.asarray(v, dtype=float) - np.asarray(w, dtype=float)
    gap = loss(v, ts) - loss(w, ts) - loss_gradient(w, ts) @ step
    return float(gap / (0.5 * step @ step))


def value_and_gradient(w, ts):
    """:func:`loss` and :func:`loss_gradient` from one pass over the data."""
    z = _logits(w, ts)
    value = np.mean(np.logaddexp(0, z) - ts.y * z - label_entropy(ts.y))
    grad = ts.X @ (scipy.special.expit(z) - ts.y) / ts.n
    return float(value), grad
