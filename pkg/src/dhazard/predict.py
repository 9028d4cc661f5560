"""Fitted-model artifact: serialization, hazard/survival prediction.

A fitted model is fully described by its term declarations (with knots,
identifiability transforms, and level sets), the final coefficients and
smoothing parameters, the horizon, and per-covariate summary statistics
from the person-level training data.  Everything round-trips through a
versioned JSON document, so predictions from a reloaded model match the
in-memory model exactly.
"""

from __future__ import annotations

import json

import numpy as np

from .basis import CenteringTransform, DesignBlock, TermSpec, build_blocks
from .errors import ValidationError
from .model import inverse_link

__all__ = ["FittedHazardModel", "model_from_fit", "save_model", "load_model"]

MODEL_VERSION = 1


class FittedHazardModel:
    """Prediction-ready bundle of design blocks and coefficients."""

    def __init__(self, horizon, blocks, beta, tau, selected, covariate_stats,
                 seeds=None, engine_config=None):
        self.horizon = int(horizon)
        self.blocks = list(blocks)
        self.beta = {k: np.asarray(v, dtype=np.float64) for k, v in beta.items()}
        self.tau = {k: np.asarray(v, dtype=np.float64) for k, v in tau.items()}
        self.selected = dict(selected)
        self.covariate_stats = covariate_stats
        self.seeds = dict(seeds or {})
        self.engine_config = dict(engine_config or {})

    @property
    def covariate_names(self):
        return list(self.covariate_stats["names"])

    def _default_row(self):
        """All covariates at their training mean (continuous) or mode."""
        stats = self.covariate_stats
        row = {}
        for name in stats["names"]:
            if name in stats["mode"]:
                row[name] = stats["mode"][name]
            else:
                row[name] = stats["mean"][name]
        return row

    def _check_inputs(self, inputs):
        for name in inputs:
            if name not in self.covariate_stats["names"]:
                raise ValidationError(f"unknown covariate {name!r}")

    def effect_surfaces(self, inputs, n_points):
        """Split the predictor into its time part and covariate part.

        Returns ``(time_effect(k,), covariate_effect(n_points,))`` so the
        full predictor grid is their outer sum.
        """
        t_grid = np.arange(1, self.horizon + 1, dtype=np.float64)
        time_part = np.zeros(self.horizon)
        cov_part = np.zeros(n_points)
        for block in self.blocks:
            name = block.term.name
            beta = self.beta[name]
            if block.term.kind == "baseline_smooth":
                time_part += block.effect(beta, {"__time__": t_grid})
            else:
                cols = {c: inputs[c] for c in block.term.columns}
                cov_part += block.effect(beta, cols)
        return time_part, cov_part

    def hazard_grid(self, inputs):
        """Hazard matrix ``(n_points, horizon)`` for covariate profiles.

        Covariates missing from ``inputs`` are fixed at their training
        mean (continuous) or mode (categorical); an empty ``inputs``
        yields the single all-default profile.
        """
        self._check_inputs(inputs)
        n_points = len(next(iter(inputs.values()))) if inputs else 1
        row = self._default_row()
        typed = {}
        for name in self.covariate_stats["names"]:
            vals = inputs[name] if name in inputs else [row[name]] * n_points
            if name in self.covariate_stats["mode"]:
                typed[name] = np.asarray([str(v) for v in vals], dtype=object)
            else:
                typed[name] = np.asarray(vals, dtype=np.float64)
        time_part, cov_part = self.effect_surfaces(typed, n_points)
        return inverse_link(cov_part[:, None] + time_part[None, :])

    def survival_grid(self, inputs):
        """Survival matrix ``(n_points, horizon)``: column ``t-1`` is S(t)."""
        lam = self.hazard_grid(inputs)
        return np.cumprod(1.0 - lam, axis=1)

    def marginal_survival(self, covariate, grid=None, times=None, grid_points=50):
        """Survival over one covariate with the others fixed at mean/mode.

        Returns ``(grid, times, S)`` where ``S[i, j]`` is the survival
        probability at ``times[j]`` for ``grid[i]``.  ``times`` may
        include 0, whose survival is 1 by convention.
        """
        stats = self.covariate_stats
        if covariate not in stats["names"]:
            raise ValidationError(f"unknown covariate {covariate!r}")
        if grid is None:
            if covariate in stats["mode"]:
                grid = np.asarray(stats["levels"][covariate], dtype=object)
            else:
                lo, hi = stats["range"][covariate]
                grid = np.linspace(lo, hi, grid_points)
        else:
            grid = np.asarray(grid)
        times = self._check_times(times, allow_zero=True)
        S = self.survival_grid({covariate: grid})
        out = np.empty((len(grid), len(times)))
        for j, t in enumerate(times):
            out[:, j] = 1.0 if t == 0 else S[:, t - 1]
        return grid, times, out

    def _check_times(self, times, allow_zero=False):
        if times is None:
            return list(range(1, self.horizon + 1))
        out = []
        lo = 0 if allow_zero else 1
        for t in times:
            t = int(t)
            if not lo <= t <= self.horizon:
                raise ValidationError(
                    f"time {t} outside {'0' if allow_zero else '1'}.."
                    f"{self.horizon}"
                )
            out.append(t)
        return out

    def to_dict(self):
        terms = []
        for block in self.blocks:
            spec = block.term
            transform = None
            if block.transform is not None:
                transform = {
                    "basis_map": None
                    if block.transform.basis_map is None
                    else block.transform.basis_map.tolist(),
                    "shift": None
                    if block.transform.shift is None
                    else np.asarray(block.transform.shift).tolist(),
                }
            terms.append(
                {
                    "name": spec.name,
                    "kind": spec.kind,
                    "columns": list(spec.columns),
                    "basis_dim": spec.basis_dim,
                    "degree": spec.degree,
                    "penalty_order": spec.penalty_order,
                    "knots": [k.tolist() for k in block.knots],
                    "levels": list(block.levels),
                    "has_intercept": block.has_intercept,
                    "transform": transform,
                    "beta": self.beta[spec.name].tolist(),
                    "tau": self.tau.get(spec.name, np.zeros(0)).tolist(),
                    "selected": bool(self.selected.get(spec.name, True)),
                }
            )
        return {
            "version": MODEL_VERSION,
            "horizon": self.horizon,
            "terms": terms,
            "covariates": self.covariate_stats,
            "seeds": self.seeds,
            "engine_config": self.engine_config,
        }


def model_from_fit(dataset, terms, report, engine_config=None):
    """Assemble a :class:`FittedHazardModel` from a fit on a dataset.

    Coefficients come from the report (terms the selection dropped get
    zero coefficients, so their effect is exactly flat); covariate means,
    modes, and ranges are computed on the person-level data, not on the
    augmented rows.
    """
    blocks = build_blocks(terms, dataset)
    beta, tau = {}, {}
    for block in blocks:
        name = block.term.name
        beta[name] = np.asarray(
            report.beta.get(name, np.zeros(block.ncoef)), dtype=np.float64
        )
        tau[name] = np.asarray(
            report.tau.get(name, np.zeros(len(block.penalties))), dtype=np.float64
        )
    stats = {
        "names": list(dataset.covariate_names),
        "mean": {},
        "mode": {},
        "levels": {},
        "range": {},
    }
    for name in dataset.covariate_names:
        values = dataset.covariates[name]
        if name in dataset.levels:
            counts = np.bincount(values, minlength=len(dataset.levels[name]))
            stats["mode"][name] = dataset.levels[name][int(np.argmax(counts))]
            stats["levels"][name] = list(dataset.levels[name])
        else:
            stats["mean"][name] = float(values.mean())
            stats["range"][name] = [float(values.min()), float(values.max())]
    cfg = {}
    if engine_config is not None:
        from dataclasses import asdict

        cfg = asdict(engine_config)
    return FittedHazardModel(
        horizon=dataset.horizon,
        blocks=blocks,
        beta=beta,
        tau=tau,
        selected=dict(report.selected),
        covariate_stats=stats,
        seeds=dict(report.seeds),
        engine_config=cfg,
    )


def save_model(path, model):
    """Write the versioned model artifact as JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    """Load a model artifact, checking the format version."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("version")
    if version != MODEL_VERSION:
        raise ValidationError(
            f"unsupported model version {version!r}; expected {MODEL_VERSION}"
        )
    blocks, beta, tau, selected = [], {}, {}, {}
    for td in doc["terms"]:
        spec = TermSpec(
            name=td["name"],
            kind=td["kind"],
            columns=tuple(td["columns"]),
            basis_dim=td["basis_dim"],
            degree=td["degree"],
            penalty_order=td["penalty_order"],
        )
        transform = None
        if td["transform"] is not None:
            bm = td["transform"]["basis_map"]
            sh = td["transform"]["shift"]
            transform = CenteringTransform(
                basis_map=None if bm is None else np.asarray(bm, dtype=np.float64),
                shift=None if sh is None else np.asarray(sh, dtype=np.float64),
            )
        blocks.append(
            DesignBlock(
                term=spec,
                values=None,
                source="time" if spec.kind == "baseline_smooth" else "individual",
                unit_counts=None,
                penalties=(),
                knots=tuple(np.asarray(k, dtype=np.float64) for k in td["knots"]),
                levels=tuple(td["levels"]),
                transform=transform,
                has_intercept=td["has_intercept"],
            )
        )
        beta[spec.name] = np.asarray(td["beta"], dtype=np.float64)
        tau[spec.name] = np.asarray(td["tau"], dtype=np.float64)
        selected[spec.name] = td["selected"]
    return FittedHazardModel(
        horizon=doc["horizon"],
        blocks=blocks,
        beta=beta,
        tau=tau,
        selected=selected,
        covariate_stats=doc["covariates"],
        seeds=doc.get("seeds", {}),
        engine_config=doc.get("engine_config", {}),
    )
