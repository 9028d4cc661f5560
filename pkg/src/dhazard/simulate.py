"""Simulation harness: data-generating process, metrics, and studies.

The generator draws individuals on equidistant design points, builds a
structured additive predictor from a logarithmically decaying baseline
plus four informative covariate effects (five noise covariates contribute
nothing, an optional bivariate spatial surface can be added), converts
the hazard into event indicators by uniform draws, applies uniform random
censoring on ``{1..k}``, and emits person-level records.

Studies run many replications with independently derived seeds, fit each
with the batchwise backfitting engine, and aggregate effect-recovery MSE
and term-selection frequencies.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import TermSpec, build_blocks
from .data import IndividualRecord, augment
from .engine import fit
from .errors import ConfigError
from .model import inverse_link

__all__ = [
    "SimConfig",
    "TrueModel",
    "gen_covariates",
    "true_effects",
    "gen_events",
    "mse_effect",
    "selection_frequency",
    "run_study",
    "StudyReport",
    "study_terms",
]

BASELINE_LEVELS = (-2.0, -3.0, -4.0)
_GEN_CHUNK = 100_000


@dataclass(frozen=True)
class SimConfig:
    """Study settings: scale, baseline level, effect scale, replications."""

    n: int = 5000
    k: int = 20
    baseline_level: float = -3.0
    effect_sd: float = 1.0
    spatial: bool = False
    seed: int = 0
    replications: int = 1

    def validate(self):
        if self.n < 10:
            raise ConfigError(f"n must be >= 10, got {self.n}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.effect_sd <= 0:
            raise ConfigError(f"effect_sd must be > 0, got {self.effect_sd}")
        if float(self.baseline_level) not in BASELINE_LEVELS:
            raise ConfigError(
                f"baseline_level must be one of {BASELINE_LEVELS}, "
                f"got {self.baseline_level}"
            )
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")


def _linear(x):
    return 0.5 * x


def _sine(x):
    return 1.5 * np.sin(x)


def _quadratic(x):
    return x ** 2 / 6.0 - 1.5


def _wiggly(x):
    return np.sin(2.0 * (4.0 * x - 2.0)) + 2.0 * np.exp(-(16.0 ** 2) * (x - 0.5) ** 2)


INFORMATIVE_SHAPES = {"x1": _linear, "x2": _sine, "x3": _quadratic, "x4": _wiggly}
NOISE_COLUMNS = ("x5", "x6", "x7", "x8", "x9")


def _spatial_surface(lon, lat):
    return 2.5 * np.sin(lon) * np.sin(0.5 * lat) - 0.3


@dataclass(frozen=True)
class TrueModel:
    """Scaled generating effects and their scaling constants.

    ``effects[name]`` maps a covariate value array to its predictor
    contribution; noise covariates map to zero.  The baseline and spatial
    surfaces are not rescaled.
    """

    baseline: object
    effects: dict
    scales: dict
    spatial: object = None

    def linear_predictor(self, covariates, t):
        """Predictor matrix for all individuals at intervals ``t``."""
        n = len(next(iter(covariates.values())))
        s = np.zeros(n)
        for name, f in self.effects.items():
            s += f(covariates[name])
        if self.spatial is not None:
            s += self.spatial(covariates["lon"], covariates["lat"])
        return self.baseline(np.asarray(t, dtype=np.float64))[None, :] + s[:, None]


def gen_covariates(n, rng, spatial=False):
    """Equidistant design points, independently permuted per covariate.

    ``x4`` covers ``[0, 1]``; every other covariate (and ``lon``/``lat``
    in the spatial setting) covers ``[-3, 3]``.  Independent permutations
    decouple the covariates while every column still hits its interval
    endpoints exactly.
    """
    if n < 2:
        raise ValueError("need n >= 2 design points")
    wide = np.linspace(-3.0, 3.0, n)
    out = {}
    for name in ("x1", "x2", "x3"):
        out[name] = rng.permutation(wide)
    out["x4"] = rng.permutation(np.linspace(0.0, 1.0, n))
    for name in NOISE_COLUMNS:
        out[name] = rng.permutation(wide)
    if spatial:
        out["lon"] = rng.permutation(wide)
        out["lat"] = rng.permutation(wide)
    return out


def true_effects(config):
    """Build the generating model with effects rescaled to ``effect_sd``.

    Only the four informative covariate effects are rescaled: each scale
    factor makes the population standard deviation of the effect over its
    covariate's unique design points equal to ``effect_sd``.  The
    baseline ``a - log(t)/2`` and the spatial surface are used as-is.
    """
    config.validate()
    a = float(config.baseline_level)
    scales = {}
    effects = {}
    for name, shape in INFORMATIVE_SHAPES.items():
        grid = np.linspace(0.0, 1.0, config.n) if name == "x4" else np.linspace(
            -3.0, 3.0, config.n
        )
        sd = float(np.std(shape(grid)))
        if sd == 0.0:
            raise ValueError(f"effect on {name} is constant; cannot rescale")
        scale = config.effect_sd / sd
        scales[name] = scale
        effects[name] = (lambda x, f=shape, c=scale: c * f(np.asarray(x, float)))
    for name in NOISE_COLUMNS:
        effects[name] = lambda x: np.zeros_like(np.asarray(x, dtype=np.float64))
        scales[name] = 0.0
    return TrueModel(
        baseline=lambda t: a - 0.5 * np.log(np.asarray(t, dtype=np.float64)),
        effects=effects,
        scales=scales,
        spatial=_spatial_surface if config.spatial else None,
    )


def gen_events(covariates, model, k, rng):
    """Draw event histories and return person-level records.

    For each individual and interval, an event occurs when a uniform draw
    falls below the hazard; the first event time, a uniform censoring
    time on ``{1..k}``, and the horizon are combined into the observed
    time and event indicator.
    """
    names = list(covariates)
    n = len(covariates[names[0]])
    t_grid = np.arange(1, k + 1)
    times = np.empty(n, dtype=np.int64)
    events = np.empty(n, dtype=np.int64)
    for lo in range(0, n, _GEN_CHUNK):
        hi = min(lo + _GEN_CHUNK, n)
        chunk = {name: covariates[name][lo:hi] for name in names}
        lam = inverse_link(model.linear_predictor(chunk, t_grid))
        u = rng.uniform(size=lam.shape)
        hit = u <= lam
        has_event = hit.any(axis=1)
        T = np.where(has_event, hit.argmax(axis=1) + 1, k + 1)
        C = rng.integers(1, k + 1, size=hi - lo)
        limit = np.minimum(C, k)
        events[lo:hi] = (T <= limit).astype(np.int64)
        times[lo:hi] = np.minimum(T, limit)
    return [
        IndividualRecord(
            id=i + 1,
            time=int(times[i]),
            event=int(events[i]),
            covariates={name: float(covariates[name][i]) for name in names},
        )
        for i in range(n)
    ]


def mse_effect(f_true, f_hat, grid=None):
    """Mean squared difference of two effects after centering both.

    ``f_true``/``f_hat`` may be callables (evaluated on ``grid``) or
    value arrays aligned with ``grid``.  Centering removes the additive
    level, which is not identifiable across terms.
    """
    true_vals = np.asarray(f_true(grid) if callable(f_true) else f_true, float)
    hat_vals = np.asarray(f_hat(grid) if callable(f_hat) else f_hat, float)
    if true_vals.shape != hat_vals.shape:
        raise ValueError("effect value shapes differ")
    true_vals = true_vals - true_vals.mean()
    hat_vals = hat_vals - hat_vals.mean()
    return float(np.mean((hat_vals - true_vals) ** 2))


def selection_frequency(reports):
    """Per-term selection frequency across a list of fit reports."""
    if not reports:
        raise ValueError("need at least one report")
    names = reports[0].terms
    freq = {}
    for name in names:
        freq[name] = sum(bool(r.selected.get(name, False)) for r in reports) / len(
            reports
        )
    return freq


def study_terms(spatial=False):
    """Model terms used by the simulation studies."""
    terms = [TermSpec("baseline", "baseline_smooth")]
    terms += [
        TermSpec(f"s(x{j})", "univariate_smooth", (f"x{j}",)) for j in range(1, 10)
    ]
    if spatial:
        terms.append(TermSpec("te(lon,lat)", "bivariate_smooth", ("lon", "lat")))
    return terms


def _effect_grids(sim_config, grid_points):
    grids = {"baseline": np.linspace(1.0, sim_config.k, grid_points)}
    for j in range(1, 10):
        lo, hi = (0.0, 1.0) if j == 4 else (-3.0, 3.0)
        grids[f"s(x{j})"] = np.linspace(lo, hi, grid_points)
    return grids


def _replication_seeds(master_seed, rep):
    """Independent child seeds for replication ``rep`` of a study."""
    child = np.random.SeedSequence(master_seed).spawn(rep + 1)[rep]
    data_seq, engine_seq = child.spawn(2)
    return data_seq, int(engine_seq.generate_state(1)[0])


def run_replication(rep, sim_config, engine_config, grid_points=200):
    """Generate, fit, and score one replication (self-contained by seed)."""
    from dataclasses import replace

    data_seq, engine_seed = _replication_seeds(sim_config.seed, rep)
    rng = np.random.default_rng(data_seq)
    model = true_effects(sim_config)
    covariates = gen_covariates(sim_config.n, rng, sim_config.spatial)
    records = gen_events(covariates, model, sim_config.k, rng)
    dataset = augment(records, sim_config.k)

    terms = study_terms(sim_config.spatial)
    engine_config = replace(engine_config, seed=engine_seed)
    t0 = time.perf_counter()
    _, report = fit(dataset, terms, engine_config)
    fit_seconds = time.perf_counter() - t0

    blocks = {
        b.term.name: b for b in build_blocks(terms, dataset)
    }
    grids = _effect_grids(sim_config, grid_points)
    curves = {}
    mses = {}

    def estimate(name, inputs):
        if name in report.beta:
            return blocks[name].effect(report.beta[name], inputs)
        return np.zeros(len(next(iter(inputs.values()))))

    tgrid = grids["baseline"]
    truth = model.baseline(tgrid)
    est = estimate("baseline", {"__time__": tgrid})
    curves["baseline"] = (tgrid, truth, est)
    mses["baseline"] = mse_effect(truth, est)
    for j in range(1, 10):
        name = f"s(x{j})"
        g = grids[name]
        truth = model.effects[f"x{j}"](g)
        est = estimate(name, {f"x{j}": g})
        curves[name] = (g, truth, est)
        mses[name] = mse_effect(truth, est)
    if sim_config.spatial:
        side = np.linspace(-3.0, 3.0, 20)
        lon, lat = [v.ravel() for v in np.meshgrid(side, side, indexing="ij")]
        truth = _spatial_surface(lon, lat)
        est = estimate("te(lon,lat)", {"lon": lon, "lat": lat})
        curves["te(lon,lat)"] = (np.column_stack([lon, lat]), truth, est)
        mses["te(lon,lat)"] = mse_effect(truth, est)

    return {
        "replication": rep,
        "data_seed": str(data_seq.spawn_key),
        "engine_seed": engine_seed,
        "event_rate": float(np.mean(dataset.events)),
        "augmented_rows": int(dataset.n_rows),
        "selected": dict(report.selected),
        "mse": mses,
        "curves": curves,
        "fit_seconds": fit_seconds,
        "early_stopped": report.early_stopped,
        "ridge_fallbacks": report.ridge_fallbacks,
        "report": report,
    }


@dataclass
class StudyReport:
    """Aggregated study results plus raw per-replication outcomes."""

    sim_config: SimConfig
    engine_config: object
    replications: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    selection: dict = field(default_factory=dict)
    mse_summary: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)

    def term_names(self):
        if self.replications:
            return list(self.replications[0]["mse"])
        return []

    def summary_dict(self):
        return {
            "version": 1,
            "sim_config": asdict(self.sim_config),
            "engine_config": asdict(self.engine_config),
            "n_replications": len(self.replications),
            "n_failures": len(self.failures),
            "failures": list(self.failures),
            "selection_frequency": self.selection,
            "mse_summary": self.mse_summary,
            "event_rate_mean": float(
                np.mean([r["event_rate"] for r in self.replications])
            )
            if self.replications
            else None,
            "timing": self.timing,
        }

    def write_artifacts(self, out_dir):
        """Write ``replications.csv``, ``study_summary.json``, ``effects_*.csv``.

        The CSV files contain no timestamps or timings, so re-running the
        same study with the same master seed reproduces them byte for
        byte.
        """
        import os

        os.makedirs(out_dir, exist_ok=True)
        terms = self.term_names()
        with open(
            os.path.join(out_dir, "replications.csv"), "w", newline="", encoding="utf-8"
        ) as fh:
            writer = csv.writer(fh)
            header = ["replication", "engine_seed", "event_rate", "augmented_rows"]
            header += [f"selected_{t}" for t in terms]
            header += [f"mse_{t}" for t in terms]
            writer.writerow(header)
            for rep in self.replications:
                row = [
                    rep["replication"],
                    rep["engine_seed"],
                    repr(rep["event_rate"]),
                    rep["augmented_rows"],
                ]
                row += [int(rep["selected"].get(t, False)) for t in terms]
                row += [repr(float(rep["mse"][t])) for t in terms]
                writer.writerow(row)

        with open(
            os.path.join(out_dir, "study_summary.json"), "w", encoding="utf-8"
        ) as fh:
            json.dump(self.summary_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

        for term in terms:
            safe = "".join(ch if ch.isalnum() else "_" for ch in term).strip("_")
            path = os.path.join(out_dir, f"effects_{safe}.csv")
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                bivariate = term.startswith("te(")
                if bivariate:
                    writer.writerow(["replication", "x1", "x2", "true", "estimate"])
                else:
                    writer.writerow(["replication", "x", "true", "estimate"])
                for rep in self.replications:
                    grid, truth, est = rep["curves"][term]
                    for i in range(len(truth)):
                        if bivariate:
                            writer.writerow(
                                [
                                    rep["replication"],
                                    repr(float(grid[i, 0])),
                                    repr(float(grid[i, 1])),
                                    repr(float(truth[i])),
                                    repr(float(est[i])),
                                ]
                            )
                        else:
                            writer.writerow(
                                [
                                    rep["replication"],
                                    repr(float(grid[i])),
                                    repr(float(truth[i])),
                                    repr(float(est[i])),
                                ]
                            )


def run_study(sim_config, engine_config, threads=1, grid_points=200, out_dir=None):
    """Run all replications of a study and aggregate the metrics.

    Replications own independent seeds derived from the master seed, so
    any one of them can be regenerated in isolation; with ``threads > 1``
    they run in parallel worker processes without changing the results.
    Per-replication failures are recorded and the study continues.
    """
    sim_config.validate()
    engine_config.validate()
    start = time.perf_counter()
    reps = list(range(sim_config.replications))
    results, failures = [], []

    if threads > 1 and len(reps) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = {
                r: pool.submit(run_replication, r, sim_config, engine_config, grid_points)
                for r in reps
            }
            for r in reps:
                try:
                    results.append(futures[r].result())
                except Exception as exc:  # noqa: BLE001 - study must continue
                    failures.append({"replication": r, "error": str(exc)})
    else:
        for r in reps:
            try:
                results.append(run_replication(r, sim_config, engine_config, grid_points))
            except Exception as exc:  # noqa: BLE001 - study must continue
                failures.append({"replication": r, "error": str(exc)})

    report = StudyReport(sim_config=sim_config, engine_config=engine_config)
    report.replications = sorted(results, key=lambda r: r["replication"])
    report.failures = failures
    if results:
        report.selection = selection_frequency([r["report"] for r in report.replications])
        quantiles = (0.05, 0.25, 0.5, 0.75, 0.95)
        for term in report.term_names():
            values = np.array([r["mse"][term] for r in report.replications])
            report.mse_summary[term] = {
                "mean": float(values.mean()),
                **{f"q{int(q * 100):02d}": float(np.quantile(values, q)) for q in quantiles},
            }
    report.timing = {
        "study_seconds": time.perf_counter() - start,
        "fit_seconds_median": float(
            np.median([r["fit_seconds"] for r in results])
        )
        if results
        else None,
    }
    if out_dir is not None:
        report.write_artifacts(out_dir)
    return report
