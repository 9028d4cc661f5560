"""Batchwise backfitting: stochastic averaged updates on individual batches.

Two variants share the same per-term update.  The *boosting* variant
computes, in every iteration, a candidate step-length update for each
term from one random batch, scores every candidate by the change in mean
per-row log-likelihood on a second, independent batch, and applies only
the best candidate when it actually improves; terms that are never
applied are dropped.  The *refit* variant runs full backfitting sweeps
with step length 1 on a fresh batch per iteration and averages the
post-burn-in coefficient iterates.

Smoothing parameters are tuned by a coordinate-wise adaptive grid search
that minimizes an out-of-batch AIC (log-likelihood on the evaluation
batch, effective degrees of freedom from the fitting batch).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .basis import build_blocks
from .data import sample_batch
from .errors import ConfigError, EmptySelectionError, ValidationError
from .model import (
    PredictorDesign,
    aic,
    assemble_penalty,
    edf,
    loglik,
    penalized_solve,
    score_weights,
)

__all__ = [
    "EngineConfig",
    "FitReport",
    "stochastic_update",
    "tau_search",
    "boosting_iteration",
    "run_boosting",
    "run_refit",
    "fit",
]


@dataclass(frozen=True)
class EngineConfig:
    """Settings for one optimizer run.

    ``iterations`` is the per-stage iteration count ``L``; ``step`` is
    the step-length parameter used by the boosting stage (the refit stage
    always uses step length 1).  ``batch_rows`` is the target batch size
    ``M`` in augmented rows.  The ``tau_*`` fields parameterize the
    smoothing search: log10 grids of ``tau_grid_points`` points inside
    ``tau_bounds``, one coarse full-range pass followed by refinement
    passes centered on the incumbent (``tau_passes`` passes in total).
    """

    iterations: int = 200
    step: float = 0.1
    batch_rows: int = 20000
    burn_in: int = 100
    seed: int = 0
    select: bool = True
    tau_init: float = 100.0
    tau_bounds: tuple = (1e-4, 1e12)
    tau_grid_points: int = 7
    tau_passes: int = 2
    optimize_tau: bool = True
    early_stop_tol: float = 1e-4
    early_stop_patience: int = 20

    def validate(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not 0.0 < self.step <= 1.0:
            raise ConfigError(f"step length must be in (0, 1], got {self.step}")
        if self.burn_in < 0 or (self.iterations and self.burn_in >= self.iterations):
            raise ConfigError(
                f"burn_in ({self.burn_in}) must be < iterations ({self.iterations})"
            )
        if self.batch_rows < 1:
            raise ConfigError("batch_rows must be positive")
        lo, hi = self.tau_bounds
        if not (0 < lo <= hi):
            raise ConfigError(f"invalid tau bounds {self.tau_bounds}")
        if not lo <= self.tau_init <= hi:
            raise ConfigError("tau_init must lie within tau_bounds")
        if self.tau_grid_points < 1 or self.tau_passes < 1:
            raise ConfigError("tau grid needs >= 1 point and >= 1 pass")


@dataclass
class FitReport:
    """Selection outcomes and diagnostics of an optimizer run."""

    terms: list = field(default_factory=list)
    selected: dict = field(default_factory=dict)
    update_counts: dict = field(default_factory=dict)
    update_frequencies: dict = field(default_factory=dict)
    contributions: dict = field(default_factory=dict)
    boosting_trace: list = field(default_factory=list)
    refit_trace: list = field(default_factory=list)
    beta: dict = field(default_factory=dict)
    tau: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)
    ridge_fallbacks: int = 0
    early_stopped: int | None = None
    boosting_iterations: int = 0
    refit_iterations: int = 0
    trajectories: dict = field(default_factory=dict)

    def to_dict(self):
        """JSON-ready dictionary (trajectories excluded; see CSV export)."""
        return {
            "terms": list(self.terms),
            "selected": dict(self.selected),
            "update_counts": dict(self.update_counts),
            "update_frequencies": dict(self.update_frequencies),
            "contributions": dict(self.contributions),
            "boosting_trace": [float(v) for v in self.boosting_trace],
            "refit_trace": [float(v) for v in self.refit_trace],
            "beta": {k: [float(x) for x in v] for k, v in self.beta.items()},
            "tau": {k: [float(x) for x in v] for k, v in self.tau.items()},
            "seeds": dict(self.seeds),
            "timing": dict(self.timing),
            "ridge_fallbacks": self.ridge_fallbacks,
            "early_stopped": self.early_stopped,
            "boosting_iterations": self.boosting_iterations,
            "refit_iterations": self.refit_iterations,
        }

    def trajectories_to_csv(self, path):
        """Stream refit coefficient trajectories to a CSV file."""
        import csv

        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["iteration"]
            for name in self.trajectories:
                ncol = self.trajectories[name].shape[1]
                header += [f"{name}[{i}]" for i in range(ncol)]
            writer.writerow(header)
            n_iter = min(v.shape[0] for v in self.trajectories.values())
            for it in range(n_iter):
                row = [it]
                for name in self.trajectories:
                    row += [repr(float(v)) for v in self.trajectories[name][it]]
                writer.writerow(row)


def stochastic_update(beta_old, beta_batch, step):
    """Convex combination ``(1 - step) * beta_old + step * beta_batch``."""
    beta_old = np.asarray(beta_old, dtype=np.float64)
    beta_batch = np.asarray(beta_batch, dtype=np.float64)
    if beta_old.shape != beta_batch.shape:
        raise ValueError(
            f"shape mismatch: {beta_old.shape} vs {beta_batch.shape}"
        )
    return (1.0 - step) * beta_old + step * beta_batch


class _View:
    """One batch of augmented rows with lazily gathered term designs."""

    def __init__(self, design, rows):
        self.design = design
        self.rows = rows
        self.y = design.response(rows)
        self.m = rows.size
        self._X = {}

    def X(self, j):
        if j not in self._X:
            self._X[j] = self.design.term_matrix(j, self.rows)
        return self._X[j]

    def eta(self, beta):
        out = np.zeros(self.m)
        for j, b in enumerate(beta):
            out += self.X(j) @ b
        return out


def _draw_views(design, config, rng):
    ds = design.dataset
    fit_rows = sample_batch(ds, config.batch_rows, rng).row_indices
    eval_rows = sample_batch(ds, config.batch_rows, rng).row_indices
    return _View(design, fit_rows), _View(design, eval_rows)


def _pass_grid(center, span, bounds, points):
    lo, hi = np.log10(bounds[0]), np.log10(bounds[1])
    if points == 1:
        c = min(max(np.log10(center), lo), hi)
        return np.array([10.0 ** c])
    if span is None:  # coarse pass over the full admissible range
        return 10.0 ** np.linspace(lo, hi, points)
    c = min(max(np.log10(center), lo), hi)
    grid = np.linspace(max(lo, c - span), min(hi, c + span), points)
    return np.unique(10.0 ** grid)


def _tau_search_core(block, tau0, XtWX, rhs, X_eval, eta_eval_mj, y_eval, config):
    """Coordinate-wise adaptive grid search minimizing out-of-batch AIC.

    ``XtWX``/``rhs`` come from the fitting batch, the log-likelihood is
    evaluated on the independent evaluation batch, and the effective
    degrees of freedom enter from the fitting batch.  The first pass
    scans the full log-scale bounds so the search cannot get trapped near
    a stale value; later passes center on the incumbent and halve the
    interval (doubling it again when the optimum sits on an edge).  Ties
    are broken toward the larger (smoother) value.
    """
    tau = np.array(tau0, dtype=np.float64)
    if tau.size == 0:
        return tau

    def score(t):
        penalty = assemble_penalty(block, t)
        beta, _ = penalized_solve(XtWX, rhs, penalty)
        ll = loglik(y_eval, eta_eval_mj + X_eval @ beta)
        return aic(ll, edf(XtWX, penalty))

    full_decades = np.log10(config.tau_bounds[1]) - np.log10(config.tau_bounds[0])
    spacing = full_decades / max(config.tau_grid_points - 1, 1)
    spans = np.full(tau.size, np.inf)
    for pass_idx in range(config.tau_passes):
        for comp in range(tau.size):
            span = None if pass_idx == 0 else spans[comp]
            grid = _pass_grid(
                tau[comp], span, config.tau_bounds, config.tau_grid_points
            )
            best_val, best_tau = np.inf, tau[comp]
            trial = tau.copy()
            for t in grid:
                trial[comp] = t
                val = score(trial)
                if val <= best_val:
                    best_val, best_tau = val, t
            at_edge = grid.size > 1 and best_tau in (grid[0], grid[-1])
            if pass_idx == 0:
                spans[comp] = spacing
            else:
                spans[comp] = spans[comp] * 2.0 if at_edge else spans[comp] / 2.0
            tau[comp] = best_tau
    return tau


def tau_search(design, state, j, fit_rows, eval_rows, config):
    """Re-optimize term ``j``'s smoothing parameters on a pair of batches.

    Refits the term's coefficients on the fitting batch for every grid
    candidate and scores each by out-of-batch AIC; returns the winning
    smoothing-parameter vector (the state is not modified).
    """
    block = design.blocks[j]
    if not block.penalties:
        return state.tau[j].copy()
    fit_view = _View(design, np.asarray(fit_rows))
    eval_view = _View(design, np.asarray(eval_rows))
    eta_fit = fit_view.eta(state.beta)
    wq = score_weights(fit_view.y, eta_fit)
    X = fit_view.X(j)
    resid = wq.z - (eta_fit - X @ state.beta[j])
    XtWX = X.T @ (X * wq.w[:, None])
    rhs = X.T @ (wq.w * resid)
    X_eval = eval_view.X(j)
    eta_eval_mj = eval_view.eta(state.beta) - X_eval @ state.beta[j]
    return _tau_search_core(
        block, state.tau[j], XtWX, rhs, X_eval, eta_eval_mj, eval_view.y, config
    )


@dataclass(frozen=True)
class IterationRecord:
    """Outcome of one boosting iteration."""

    winner: int | None
    accepted: bool
    best_improvement: float
    eval_loglik: float
    ridge: bool


def boosting_iteration(design, state, config, rng):
    """One out-of-batch-selected update; returns ``(state, record)``.

    Candidate updates for every term are computed from one batch with the
    configured step length and the working quantities of the current
    state; the candidate with the largest gain in mean per-row
    log-likelihood on an independent batch is applied, and only when that
    gain is positive.  The winner's smoothing parameters are then
    re-tuned for subsequent iterations (losing terms keep theirs).
    """
    fit_view, eval_view = _draw_views(design, config, rng)
    eta_fit = fit_view.eta(state.beta)
    wq = score_weights(fit_view.y, eta_fit)
    eta_eval = eval_view.eta(state.beta)
    ll0 = loglik(eval_view.y, eta_eval)
    m = eval_view.m

    best_j, best_imp, best_cand = None, -np.inf, None
    best_parts, any_ridge = None, False
    for j in range(design.n_terms):
        X = fit_view.X(j)
        XtWX = X.T @ (X * wq.w[:, None])
        resid = wq.z - (eta_fit - X @ state.beta[j])
        rhs = X.T @ (wq.w * resid)
        penalty = assemble_penalty(design.blocks[j], state.tau[j])
        beta_batch, used_ridge = penalized_solve(XtWX, rhs, penalty)
        any_ridge = any_ridge or used_ridge
        cand = stochastic_update(state.beta[j], beta_batch, config.step)
        delta_eval = eval_view.X(j) @ (cand - state.beta[j])
        imp = (loglik(eval_view.y, eta_eval + delta_eval) - ll0) / m
        if imp > best_imp:
            best_j, best_imp, best_cand = j, imp, cand
            best_parts = (XtWX, rhs)

    accepted = best_imp > 0.0
    if accepted:
        old = state.beta[best_j]
        eta_eval = eta_eval + eval_view.X(best_j) @ (best_cand - old)
        state.beta[best_j] = best_cand
        state.eta = None
        block = design.blocks[best_j]
        if config.optimize_tau and block.penalties:
            XtWX, rhs = best_parts
            eta_eval_mj = eta_eval - eval_view.X(best_j) @ best_cand
            state.tau[best_j] = _tau_search_core(
                block,
                state.tau[best_j],
                XtWX,
                rhs,
                eval_view.X(best_j),
                eta_eval_mj,
                eval_view.y,
                config,
            )
    record = IterationRecord(
        winner=best_j if accepted else None,
        accepted=accepted,
        best_improvement=float(best_imp),
        eval_loglik=float(loglik(eval_view.y, eta_eval) / m),
        ridge=any_ridge,
    )
    return state, record


def _new_report(design, config, stage_seed):
    report = FitReport()
    report.terms = design.term_names
    report.seeds = {"engine_seed": config.seed, "stage_seed": list(stage_seed)}
    return report


def run_boosting(dataset, terms, config):
    """Selection stage: ``L`` boosting iterations over all candidate terms.

    A term counts as selected when it was the applied winner at least
    once.  Stops early when the best out-of-batch improvement stays below
    ``early_stop_tol`` for ``early_stop_patience`` consecutive
    iterations.
    """
    config.validate()
    if dataset.n_individuals < 2:
        raise ValidationError("boosting needs at least 2 individuals")
    design = PredictorDesign(dataset, build_blocks(terms, dataset))
    state = design.init_state(config.tau_init)
    rng = np.random.default_rng([1, config.seed])
    report = _new_report(design, config, (1, config.seed))

    start = time.perf_counter()
    counts = np.zeros(design.n_terms, dtype=np.int64)
    contributions = np.zeros(design.n_terms)
    stall = 0
    executed = 0
    for _ in range(config.iterations):
        state, rec = boosting_iteration(design, state, config, rng)
        executed += 1
        report.boosting_trace.append(rec.eval_loglik)
        report.ridge_fallbacks += int(rec.ridge)
        if rec.accepted:
            counts[rec.winner] += 1
            contributions[rec.winner] += rec.best_improvement
        stall = stall + 1 if rec.best_improvement < config.early_stop_tol else 0
        if stall >= config.early_stop_patience:
            report.early_stopped = executed
            break

    names = design.term_names
    report.boosting_iterations = executed
    report.update_counts = {n: int(c) for n, c in zip(names, counts)}
    denom = max(executed, 1)
    report.update_frequencies = {n: float(c / denom) for n, c in zip(names, counts)}
    report.contributions = {n: float(c) for n, c in zip(names, contributions)}
    report.selected = {n: bool(c > 0) for n, c in zip(names, counts)}
    report.beta = {n: state.beta[j].copy() for j, n in enumerate(names)}
    report.tau = {n: state.tau[j].copy() for j, n in enumerate(names)}
    report.timing["boosting_seconds"] = time.perf_counter() - start
    return state, report


def run_refit(dataset, terms, config, initial=None):
    """Resampling stage: step-length-1 sweeps with coefficient averaging.

    Each iteration draws a fresh batch pair, re-tunes every penalized
    term's smoothing parameters on them, and runs one full backfitting
    sweep on the fitting batch.  The final coefficients are per-entry
    means over the post-burn-in iterates; per-iteration trajectories are
    retained for dispersion summaries.
    """
    config.validate()
    terms = list(terms)
    if not terms:
        raise EmptySelectionError(
            "no terms to refit; widen tau_bounds or increase iterations"
        )
    design = PredictorDesign(dataset, build_blocks(terms, dataset))
    state = design.init_state(config.tau_init)
    if initial is not None:
        for j, name in enumerate(design.term_names):
            if name in initial.beta:
                state.beta[j] = np.asarray(initial.beta[name], dtype=np.float64).copy()
            if name in initial.tau and len(initial.tau[name]) == state.tau[j].size:
                state.tau[j] = np.asarray(initial.tau[name], dtype=np.float64).copy()
    rng = np.random.default_rng([2, config.seed])
    report = _new_report(design, config, (2, config.seed))

    start = time.perf_counter()
    kept = []
    for _ in range(config.iterations):
        fit_view, eval_view = _draw_views(design, config, rng)
        eta_fit = fit_view.eta(state.beta)
        wq = score_weights(fit_view.y, eta_fit)
        eta_eval = eval_view.eta(state.beta)
        for j in range(design.n_terms):
            block = design.blocks[j]
            X = fit_view.X(j)
            XtWX = X.T @ (X * wq.w[:, None])
            resid = wq.z - (eta_fit - X @ state.beta[j])
            rhs = X.T @ (wq.w * resid)
            if config.optimize_tau and block.penalties:
                X_eval = eval_view.X(j)
                eta_eval_mj = eta_eval - X_eval @ state.beta[j]
                state.tau[j] = _tau_search_core(
                    block, state.tau[j], XtWX, rhs,
                    X_eval, eta_eval_mj, eval_view.y, config,
                )
            penalty = assemble_penalty(block, state.tau[j])
            beta_new, used_ridge = penalized_solve(XtWX, rhs, penalty)
            report.ridge_fallbacks += int(used_ridge)
            beta_new = stochastic_update(state.beta[j], beta_new, 1.0)
            eta_fit = eta_fit + X @ (beta_new - state.beta[j])
            eta_eval = eta_eval + eval_view.X(j) @ (beta_new - state.beta[j])
            state.beta[j] = beta_new
        state.eta = None
        report.refit_trace.append(float(loglik(eval_view.y, eta_eval) / eval_view.m))
        kept.append([b.copy() for b in state.beta])

    names = design.term_names
    report.refit_iterations = len(kept)
    if kept:
        report.trajectories = {
            n: np.array([snap[j] for snap in kept]) for j, n in enumerate(names)
        }
        for j in range(design.n_terms):
            post = [snap[j] for snap in kept[config.burn_in:]]
            state.beta[j] = np.mean(post, axis=0)
        state.eta = None
    report.selected = {n: True for n in names}
    report.beta = {n: state.beta[j].copy() for j, n in enumerate(names)}
    report.tau = {n: state.tau[j].copy() for j, n in enumerate(names)}
    report.timing["refit_seconds"] = time.perf_counter() - start
    return state, report


def fit(dataset, terms, config):
    """Two-step procedure: boosting selection, then refit of the selection.

    The baseline term always enters the refit (it carries the model
    level); covariate terms enter only when the boosting stage accepted
    them at least once.  Raises :class:`EmptySelectionError` when no term
    was accepted at all.
    """
    terms = list(terms)
    start = time.perf_counter()
    _, boost_report = run_boosting(dataset, terms, config)
    if not any(boost_report.selected.values()):
        raise EmptySelectionError(
            "boosting accepted no term; widen tau_bounds, increase "
            "iterations, or lower tau_init"
        )
    refit_terms = [
        t
        for t in terms
        if t.kind == "baseline_smooth" or boost_report.selected[t.name]
    ]
    state, refit_report = run_refit(
        dataset, refit_terms, config, initial=boost_report
    )

    report = FitReport()
    report.terms = boost_report.terms
    report.selected = dict(boost_report.selected)
    report.update_counts = dict(boost_report.update_counts)
    report.update_frequencies = dict(boost_report.update_frequencies)
    report.contributions = dict(boost_report.contributions)
    report.boosting_trace = list(boost_report.boosting_trace)
    report.refit_trace = list(refit_report.refit_trace)
    report.beta = dict(refit_report.beta)
    report.tau = dict(refit_report.tau)
    report.seeds = {
        "engine_seed": config.seed,
        "boosting_stage": boost_report.seeds["stage_seed"],
        "refit_stage": refit_report.seeds["stage_seed"],
    }
    report.timing = {**boost_report.timing, **refit_report.timing}
    report.timing["total_seconds"] = time.perf_counter() - start
    report.ridge_fallbacks = (
        boost_report.ridge_fallbacks + refit_report.ridge_fallbacks
    )
    report.early_stopped = boost_report.early_stopped
    report.boosting_iterations = boost_report.boosting_iterations
    report.refit_iterations = refit_report.refit_iterations
    report.trajectories = refit_report.trajectories
    return state, report
