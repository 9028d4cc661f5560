"""Likelihood layer for the additive discrete hazard model.

The augmented response is a sequence of Bernoulli trials whose success
probability is the hazard ``lambda = expit(eta)`` with ``eta`` the sum of
the term design matrices times their coefficients.  This module provides
the link, the log-likelihood and its score/curvature, the single-term
penalized backfitting update, and AIC with trace-based effective degrees
of freedom.

All solvers work on a symmetric positive-definite factorization of the
penalized normal matrix; a small ridge is added (and flagged) when a
degenerate batch makes the factorization fail.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.special import expit

__all__ = [
    "WorkingQuantities",
    "ModelState",
    "PredictorDesign",
    "inverse_link",
    "survival_curve",
    "loglik",
    "score_weights",
    "assemble_penalty",
    "penalized_solve",
    "backfit_update",
    "edf",
    "aic",
    "fit_backfitting",
]

WEIGHT_FLOOR = 1e-8
RIDGE = 1e-8


def inverse_link(eta):
    """Logit inverse link ``exp(eta) / (1 + exp(eta))``, overflow-safe."""
    return expit(np.asarray(eta, dtype=np.float64))


def survival_curve(hazard):
    """Survival probabilities ``S(t) = prod_{r<=t} (1 - hazard_r)``.

    ``hazard`` is the per-interval hazard sequence for ``t = 1..k``; the
    result is nonincreasing and stays in ``[0, 1]``.
    """
    lam = np.asarray(hazard, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 1):
        raise ValueError("hazard values must lie in [0, 1]")
    return np.cumprod(1.0 - lam, axis=-1)


def loglik(y, eta):
    """Bernoulli log-likelihood of binary ``y`` under predictor ``eta``.

    Evaluated as ``y * eta - log(1 + exp(eta))`` so saturated predictors
    do not overflow.
    """
    y = np.asarray(y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    if y.shape != eta.shape:
        raise ValueError(f"length mismatch: y {y.shape} vs eta {eta.shape}")
    return float(np.sum(y * eta - np.logaddexp(0.0, eta)))


@dataclass(frozen=True)
class WorkingQuantities:
    """Score ``u``, curvature weights ``w``, working response ``z``."""

    u: np.ndarray
    w: np.ndarray
    z: np.ndarray


def score_weights(y, eta, floor=WEIGHT_FLOOR):
    """First and (negated) second derivatives of the log-likelihood in eta.

    For the logit link ``u = y - expit(eta)`` and ``w = p (1 - p)``; the
    weights are floored at ``floor`` before forming ``z = eta + u / w`` so
    saturated fits cannot blow up the working response.
    """
    y = np.asarray(y, dtype=np.float64)
    eta = np.asarray(eta, dtype=np.float64)
    p = expit(eta)
    u = y - p
    w = np.maximum(p * (1.0 - p), floor)
    z = eta + u / w
    return WorkingQuantities(u=u, w=w, z=z)


@dataclass
class ModelState:
    """Coefficients, smoothing parameters, and the cached predictor.

    ``tau[j]`` has one entry per penalty component of term ``j`` (empty
    for unpenalized terms, two entries for tensor smooths).  ``eta`` is a
    full-data predictor cache; it is ``None`` whenever it may be stale.
    Single writer: concurrent readers must hold a snapshot (:meth:`copy`).
    """

    beta: list = field(default_factory=list)
    tau: list = field(default_factory=list)
    eta: np.ndarray | None = None

    def copy(self):
        return ModelState(
            beta=[b.copy() for b in self.beta],
            tau=[t.copy() for t in self.tau],
            eta=None if self.eta is None else self.eta.copy(),
        )


class PredictorDesign:
    """Bundles an augmented dataset with its term design blocks."""

    def __init__(self, dataset, blocks):
        self.dataset = dataset
        self.blocks = list(blocks)

    @property
    def n_terms(self):
        return len(self.blocks)

    @property
    def term_names(self):
        return [b.term.name for b in self.blocks]

    def term_matrix(self, j, rows=None):
        """Design rows of term ``j`` for the given augmented row indices."""
        return self.blocks[j].rows(self.dataset, rows)

    def response(self, rows=None):
        y = self.dataset.row_y
        return y if rows is None else y[rows]

    def eta(self, beta, rows=None):
        """Predictor ``sum_j X_j beta_j`` on all rows or a row subset.

        Computed as one matrix-vector product per unit (individual or
        time point) followed by a gather, so the cost is independent of
        how often a unit's rows are duplicated.
        """
        ds = self.dataset
        if rows is None:
            out = np.zeros(ds.n_rows)
            ind, tt = ds.row_individual, ds.row_t
        else:
            out = np.zeros(len(rows))
            ind, tt = ds.row_individual[rows], ds.row_t[rows]
        for block, b in zip(self.blocks, beta):
            unit_fit = block.values @ b
            out += unit_fit[tt - 1] if block.source == "time" else unit_fit[ind]
        return out

    def init_state(self, tau_init=1.0):
        """Zero-coefficient state with ``tau_init`` on every penalty."""
        beta = [np.zeros(b.ncoef) for b in self.blocks]
        tau = [np.full(len(b.penalties), float(tau_init)) for b in self.blocks]
        return ModelState(beta=beta, tau=tau, eta=np.zeros(self.dataset.n_rows))


def assemble_penalty(block, tau):
    """Penalty matrix ``sum_c tau_c K_c`` for one term (None if unpenalized)."""
    if not block.penalties:
        return None
    tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
    if tau.size != len(block.penalties):
        raise ValueError(
            f"term {block.term.name!r}: got {tau.size} smoothing parameters "
            f"for {len(block.penalties)} penalty components"
        )
    if np.any(tau < 0):
        raise ValueError("smoothing parameters must be nonnegative")
    out = tau[0] * block.penalties[0]
    for t, K in zip(tau[1:], block.penalties[1:]):
        out = out + t * K
    return out


def penalized_solve(XtWX, rhs, penalty=None):
    """Solve ``(XtWX + penalty) beta = rhs`` by Cholesky factorization.

    Falls back to adding a small ridge when the penalized normal matrix
    is numerically singular (e.g. a batch in which a covariate is
    constant); the fallback is reported through the second return value.
    """
    A = XtWX if penalty is None else XtWX + penalty
    try:
        return cho_solve(cho_factor(A, lower=True), rhs), False
    except np.linalg.LinAlgError:
        pass
    bump = RIDGE * max(1.0, float(np.trace(A)) / A.shape[0])
    A = A + bump * np.eye(A.shape[0])
    return cho_solve(cho_factor(A, lower=True), rhs), True


def _weighted_cross(X, w):
    return X.T @ (X * w[:, None])


def backfit_update(design, state, j, rows=None, working=None, tau=None):
    """Penalized weighted least-squares update of term ``j`` in place.

    Solves ``(X_j' W X_j + P_j(tau_j)) beta_j = X_j' W (z - eta_{-j})``
    with the working quantities evaluated at the current state (computed
    here unless supplied), then updates the coefficient vector and, for
    full-data updates, the cached predictor incrementally.  Returns the
    new ``beta_j`` and whether the ridge fallback was needed.
    """
    y = design.response(rows)
    X = design.term_matrix(j, rows)
    if rows is None and state.eta is not None:
        eta = state.eta
    else:
        eta = design.eta(state.beta, rows)
    if working is None:
        working = score_weights(y, eta)
    tau = state.tau[j] if tau is None else tau
    resid = working.z - (eta - X @ state.beta[j])
    penalty = assemble_penalty(design.blocks[j], tau)
    beta_new, used_ridge = penalized_solve(
        _weighted_cross(X, working.w), X.T @ (working.w * resid), penalty
    )
    if rows is None and state.eta is not None:
        state.eta = state.eta + X @ (beta_new - state.beta[j])
    else:
        state.eta = None
    state.beta[j] = beta_new
    return beta_new, used_ridge


def edf(XtWX, penalty=None):
    """Effective degrees of freedom ``trace((XtWX + P)^-1 XtWX)``."""
    A = XtWX if penalty is None else XtWX + penalty
    try:
        factor = cho_factor(A, lower=True)
    except np.linalg.LinAlgError:
        bump = RIDGE * max(1.0, float(np.trace(A)) / A.shape[0])
        factor = cho_factor(A + bump * np.eye(A.shape[0]), lower=True)
    return float(np.trace(cho_solve(factor, XtWX)))


def aic(loglik_value, total_edf):
    """Akaike information criterion ``-2 l + 2 edf``."""
    return -2.0 * loglik_value + 2.0 * total_edf


def fit_backfitting(design, state=None, max_iter=200, tol=1e-8):
    """Deterministic full-data backfitting to a fixed point.

    Sweeps all terms, refreshing the working quantities at the start of
    each sweep, until the maximum relative coefficient change falls below
    ``tol``.  Smoothing parameters stay fixed at their values in
    ``state``.  Returns ``(state, iterations, converged)``.
    """
    if state is None:
        state = design.init_state()
    if state.eta is None:
        state.eta = design.eta(state.beta)
    y = design.response()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        working = score_weights(y, state.eta)
        delta = 0.0
        for j in range(design.n_terms):
            old = state.beta[j]
            new, _ = backfit_update(design, state, j, working=working)
            scale = max(1.0, float(np.abs(new).max()))
            delta = max(delta, float(np.abs(new - old).max()) / scale)
        if delta < tol:
            converged = True
            break
    return state, it, converged
