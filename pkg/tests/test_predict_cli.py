"""Model artifacts, prediction surfaces, and the command-line interface."""

import csv
import json

import numpy as np
import pytest

from dhazard import (
    EngineConfig,
    IndividualRecord,
    TermSpec,
    ValidationError,
    augment,
    fit,
    load_model,
    model_from_fit,
    save_model,
)
from dhazard.cli import main
from dhazard.engine import FitReport


def make_dataset(n=300, seed=0, categorical=False):
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n):
        x = float(rng.uniform(-2, 2))
        eta = -1.5 + 0.8 * x
        p = 1.0 / (1.0 + np.exp(-eta))
        t, event = 0, 0
        for s in range(1, 7):
            t = s
            if rng.uniform() <= p:
                event = 1
                break
        cov = {"x": x}
        if categorical:
            cov["g"] = ["north", "south", "south"][i % 3]
        records.append(IndividualRecord(i, t, event, cov))
    return augment(records, 6, categorical=("g",) if categorical else ())


def fitted_model(categorical=False, seed=1):
    ds = make_dataset(categorical=categorical)
    terms = [
        TermSpec("baseline", "baseline_smooth", basis_dim=6),
        TermSpec("s(x)", "univariate_smooth", ("x",), basis_dim=8),
    ]
    if categorical:
        terms.append(TermSpec("g", "categorical", ("g",)))
    config = EngineConfig(iterations=20, burn_in=5, batch_rows=10_000, seed=seed)
    _, report = fit(ds, terms, config)
    return ds, terms, report, model_from_fit(ds, terms, report, config)


class TestModelArtifact:
    def test_round_trip_predictions_exact(self, tmp_path):
        _, _, _, model = fitted_model(categorical=True)
        path = tmp_path / "model.json"
        save_model(path, model)
        back = load_model(path)
        grid = {"x": np.linspace(-2, 2, 31)}
        np.testing.assert_array_equal(
            model.hazard_grid(grid), back.hazard_grid(grid)
        )
        np.testing.assert_array_equal(
            model.survival_grid(grid), back.survival_grid(grid)
        )

    def test_version_checked(self, tmp_path):
        _, _, _, model = fitted_model()
        path = tmp_path / "model.json"
        doc = model.to_dict()
        doc["version"] = 99
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match="version"):
            load_model(path)

    def intercept_only_report(self, ds, terms, intercept):
        from dhazard.basis import build_blocks

        baseline = build_blocks(terms, ds)[0]
        report = FitReport()
        report.terms = [t.name for t in terms]
        report.selected = {t.name: t.kind == "baseline_smooth" for t in terms}
        report.beta = {
            "baseline": np.array([intercept] + [0.0] * (baseline.ncoef - 1))
        }
        report.tau = {"baseline": np.array([1.0])}
        return report

    def test_unselected_term_gives_flat_marginal_curve(self):
        ds = make_dataset()
        terms = [
            TermSpec("baseline", "baseline_smooth", basis_dim=6),
            TermSpec("s(x)", "univariate_smooth", ("x",), basis_dim=8),
        ]
        report = self.intercept_only_report(ds, terms, -1.0)
        model = model_from_fit(ds, terms, report)
        grid, times, S = model.marginal_survival("x", grid_points=7)
        for j in range(len(times)):
            np.testing.assert_allclose(S[:, j], S[0, j], atol=1e-12)

    def test_constant_hazard_survival(self):
        # all effects zero, intercept at logit(0.1): S(3) = 0.9^3
        ds = make_dataset()
        terms = [
            TermSpec("baseline", "baseline_smooth", basis_dim=6),
            TermSpec("s(x)", "univariate_smooth", ("x",), basis_dim=8),
        ]
        intercept = float(np.log(0.1 / 0.9))
        report = self.intercept_only_report(ds, terms, intercept)
        model = model_from_fit(ds, terms, report)
        grid, times, S = model.marginal_survival("x", times=[3], grid_points=9)
        np.testing.assert_allclose(S[:, 0], 0.729, atol=1e-12)

    def test_survival_at_zero_is_one(self):
        _, _, _, model = fitted_model()
        _, times, S = model.marginal_survival("x", times=[0, 1], grid_points=3)
        assert times[0] == 0
        np.testing.assert_array_equal(S[:, 0], 1.0)

    def test_unknown_covariate_rejected(self):
        _, _, _, model = fitted_model()
        with pytest.raises(ValidationError, match="unknown covariate"):
            model.marginal_survival("nope")

    def test_time_out_of_range_rejected(self):
        _, _, _, model = fitted_model()
        with pytest.raises(ValidationError, match="outside"):
            model.marginal_survival("x", times=[7])

    def test_survival_nonincreasing_in_t(self):
        _, _, _, model = fitted_model()
        S = model.survival_grid({"x": np.linspace(-2, 2, 11)})
        assert np.all(np.diff(S, axis=1) <= 1e-15)

    def test_modes_and_means_from_person_level_data(self):
        ds, _, _, model = fitted_model(categorical=True)
        stats = model.covariate_stats
        assert stats["mean"]["x"] == pytest.approx(float(ds.covariates["x"].mean()))
        assert stats["mode"]["g"] == "south"


def write_fit_config(tmp_path, data_path):
    cfg = tmp_path / "fit.yaml"
    cfg.write_text(
        f"""
data:
  id: id
  time: time
  event: event
  covariates: [x]
  horizon: 6
paths:
  input: {data_path}
  output: {tmp_path / "out"}
terms:
  - name: baseline
    kind: baseline_smooth
    basis_dim: 6
  - name: s(x)
    kind: univariate_smooth
    columns: [x]
    basis_dim: 8
engine:
  iterations: 15
  burn_in: 5
  batch_rows: 10000
  seed: 3
"""
    )
    return cfg


def write_data_csv(tmp_path, n=250, seed=4):
    rng = np.random.default_rng(seed)
    path = tmp_path / "data.csv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "time", "event", "x"])
        for i in range(n):
            x = rng.uniform(-2, 2)
            eta = -1.2 + 0.9 * x
            p = 1.0 / (1.0 + np.exp(-eta))
            t, event = 0, 0
            for s in range(1, 7):
                t = s
                if rng.uniform() <= p:
                    event = 1
                    break
            writer.writerow([i, t, event, repr(float(x))])
    return path


class TestCliFit:
    def test_fit_writes_artifacts(self, tmp_path, capsys):
        data = write_data_csv(tmp_path)
        cfg = write_fit_config(tmp_path, data)
        assert main(["fit", "--config", str(cfg)]) == 0
        out = tmp_path / "out"
        assert (out / "model.json").exists()
        report = json.loads((out / "fit_report.json").read_text())
        assert set(report["selected"]) == {"baseline", "s(x)"}
        assert all(isinstance(v, bool) for v in report["selected"].values())

    def test_fit_model_round_trips_through_predict(self, tmp_path):
        data = write_data_csv(tmp_path)
        cfg = write_fit_config(tmp_path, data)
        main(["fit", "--config", str(cfg)])
        model_path = tmp_path / "out" / "model.json"
        model = load_model(model_path)
        grid = {"x": np.linspace(-2, 2, 5)}
        expected = model.survival_grid(grid)
        again = load_model(model_path).survival_grid(grid)
        np.testing.assert_array_equal(expected, again)

    def test_missing_event_column_exit_2(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("id,time,x\n1,1,0.5\n")
        cfg = write_fit_config(tmp_path, path)
        assert main(["fit", "--config", str(cfg)]) == 2

    def test_bad_cell_exit_2(self, tmp_path):
        path = tmp_path / "data.csv"
        path.write_text("id,time,event,x\n1,1,0,NA\n")
        cfg = write_fit_config(tmp_path, path)
        assert main(["fit", "--config", str(cfg)]) == 2


class TestCliSimulate:
    def write_config(self, tmp_path, n=300, level=-3.0, reps=1):
        cfg = tmp_path / "sim.yaml"
        cfg.write_text(
            f"""
simulate:
  n: {n}
  baseline_level: {level}
  replications: {reps}
  seed: 11
engine:
  iterations: 12
  burn_in: 4
  batch_rows: 10000
"""
        )
        return cfg

    def test_artifacts_exist_and_parse(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out = tmp_path / "study"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 0
        summary = json.loads((out / "study_summary.json").read_text())
        assert summary["n_replications"] == 1
        with open(out / "replications.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert (out / "effects_s_x4.csv").exists()

    def test_invalid_baseline_level_exit_2(self, tmp_path, capsys):
        cfg = self.write_config(tmp_path, level=-2.7)
        out = tmp_path / "study"
        assert main(["simulate", "--config", str(cfg), "--out", str(out)]) == 2
        assert "baseline_level" in capsys.readouterr().err

    def test_byte_identical_rerun(self, tmp_path):
        cfg = self.write_config(tmp_path)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        main(["simulate", "--config", str(cfg), "--out", str(out1)])
        main(["simulate", "--config", str(cfg), "--out", str(out2)])
        for name in ("replications.csv", "effects_baseline.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


class TestCliPredict:
    @pytest.fixture()
    def model_path(self, tmp_path):
        data = write_data_csv(tmp_path)
        cfg = write_fit_config(tmp_path, data)
        main(["fit", "--config", str(cfg)])
        return tmp_path / "out" / "model.json"

    def test_marginal_survival_table(self, model_path, tmp_path):
        out = tmp_path / "curve.csv"
        code = main(
            [
                "predict",
                "--model",
                str(model_path),
                "--mode",
                "marginal_survival",
                "--covariate",
                "x",
                "--grid-points",
                "5",
                "--times",
                "1,3,6",
                "--out",
                str(out),
            ]
        )
        assert code == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 15
        assert set(rows[0]) == {"x", "t", "survival"}
        values = [float(r["survival"]) for r in rows]
        assert all(0.0 <= v <= 1.0 for v in values)
        # survival nonincreasing in t within one grid point
        for i in range(0, 15, 3):
            assert values[i] >= values[i + 1] >= values[i + 2]

    def test_hazard_default_profile(self, model_path, tmp_path):
        out = tmp_path / "hazard.csv"
        assert (
            main(
                ["predict", "--model", str(model_path), "--mode", "hazard",
                 "--out", str(out)]
            )
            == 0
        )
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 6  # one profile, horizon 6

    def test_unknown_covariate_exit_2(self, model_path, capsys):
        code = main(
            ["predict", "--model", str(model_path), "--mode", "marginal_survival",
             "--covariate", "zz"]
        )
        assert code == 2

    def test_time_out_of_range_exit_2(self, model_path):
        code = main(
            ["predict", "--model", str(model_path), "--mode", "survival",
             "--times", "9"]
        )
        assert code == 2


class TestCliReport:
    def test_fit_report_summary(self, tmp_path, capsys):
        data = write_data_csv(tmp_path)
        cfg = write_fit_config(tmp_path, data)
        main(["fit", "--config", str(cfg)])
        capsys.readouterr()
        code = main(["report", "--input", str(tmp_path / "out" / "fit_report.json")])
        assert code == 0
        out = capsys.readouterr().out
        assert "baseline" in out and "selected terms" in out
