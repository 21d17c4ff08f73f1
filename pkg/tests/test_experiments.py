"""Tests for the experiment pipelines and result tables."""

import dataclasses
import math

import numpy as np
import pandas
import pytest

import lindistill.distill
import lindistill.error
import lindistill.experiments
import lindistill.idx
import lindistill.risk
import lindistill.seeding
import lindistill.tasks
import lindistill.trainers


def _config(experiment, **kwargs):
    return lindistill.experiments.ExperimentConfig(
        experiment=experiment, **kwargs)


@pytest.fixture
def geometry():
    return _config("geometry", seed=3, kappas=(1.0, 4.0), d=20, n=5,
                   trials=3, mc_samples=2000)


@pytest.fixture
def no_mnist(monkeypatch):
    monkeypatch.delenv("LINDISTILL_MNIST_DIR", raising=False)


@pytest.fixture
def mnist_dir(tmp_path):
    rng = np.random.default_rng(2)
    files = lindistill.tasks.MNIST_FILES
    for count, images, labels in ((20, "train-images", "train-labels"),
                                  (5, "test-images", "test-labels")):
        digits = np.array([0, 1, 7] * count, dtype=np.uint8)
        pixels = rng.integers(0, 256, size=(digits.size, 3, 3),
                              dtype=np.uint8)
        lindistill.idx.write_mnist_idx(
            tmp_path / files[images], tmp_path / files[labels],
            pixels, digits)
    return tmp_path


def _reversed_trials(fn, trials, threads):
    results = {trial: fn(trial) for trial in reversed(range(trials))}
    return [results[trial] for trial in range(trials)]


class TestExperimentConfig:

    def test_defaults(self):
        cfg = _config("bias")
        assert (cfg.d, cfg.n, cfg.trials) == (784, 100, 50)
        assert cfg.deltas == tuple(float(delta) for delta in range(0, 100, 10))

    def test_monotonicity_defaults(self):
        cfg = _config("monotonicity")
        assert (cfg.d, cfg.n, cfg.trials) == (100, 5, 1000)
        assert cfg.deltas[0] == 1 / 16

    def test_unknown_experiment(self):
        with pytest.raises(lindistill.error.ContractError) as error:
            _config("ablation")
        assert error.value.field == "experiment"

    @pytest.mark.parametrize("field", ["d", "n", "trials", "mc_samples",
                                       "threads"])
    def test_positive(self, field):
        with pytest.raises(lindistill.error.ContractError) as error:
            _config("geometry", **{field: 0})
        assert error.value.field == field

    def test_unknown_learner(self):
        with pytest.raises(lindistill.error.ContractError, match="oracle"):
            _config("monotonicity", learners=("distillation", "oracle"))

    def test_negative_kappa(self):
        with pytest.raises(lindistill.error.ContractError):
            _config("geometry", kappas=(1.0, -2.0))


class TestResultTable:

    def _rows(self):
        return [
            {"kappa": 2.0, "trial": 0, "risk": 0.2, "half_width": 0.0,
             "train_loss": 0.0, "angle": 0.1},
            {"kappa": 1.0, "trial": 1, "risk": 0.3, "half_width": 0.0,
             "train_loss": 0.0, "angle": 0.1},
            {"kappa": 1.0, "trial": 0, "risk": 0.1, "half_width": 0.0,
             "train_loss": 0.0, "angle": 0.1},
        ]

    def test_sorted(self):
        table = lindistill.experiments.ResultTable.from_rows(
            "geometry", self._rows())
        assert list(table.frame["kappa"]) == [1.0, 1.0, 2.0]
        assert list(table.frame["trial"]) == [0, 1, 0]
        assert set(table.frame["experiment"]) == {"geometry"}

    def test_summary(self):
        summary = lindistill.experiments.ResultTable.from_rows(
            "geometry", self._rows()).summary()
        assert list(summary["kappa"]) == [1.0, 2.0]
        np.testing.assert_allclose(summary["mean_risk"], [0.2, 0.2])
        assert list(summary["count"]) == [2, 1]
        assert summary["half_width"].iloc[0] == pytest.approx(
            lindistill.risk.Z95 * 0.1)
        assert summary["half_width"].iloc[1] == 0

    def test_columns(self):
        frame = pandas.DataFrame({"kappa": [1.0], "risk": [0.1]})
        with pytest.raises(lindistill.error.FormatError, match="columns"):
            lindistill.experiments.ResultTable("geometry", frame)

    def test_risk_range(self):
        rows = self._rows()
        rows[0]["risk"] = 1.5
        with pytest.raises(lindistill.error.FormatError, match="risk"):
            lindistill.experiments.ResultTable.from_rows("geometry", rows)

    def test_unknown_experiment(self):
        with pytest.raises(lindistill.error.UsageError):
            lindistill.experiments.ResultTable("ablation", pandas.DataFrame())

    def test_empty_csv(self, tmp_path):
        path = tmp_path / "results.csv"
        path.write_text(
            ",".join(lindistill.experiments.SCHEMAS["geometry"].columns) + "\n")
        with pytest.raises(lindistill.error.FormatError):
            lindistill.experiments.ResultTable.from_csv(path)


class TestGeometry:

    def test_table(self, geometry):
        table = lindistill.experiments.run(geometry)
        assert len(table) == 6
        assert table.failures == {1.0: 0, 4.0: 0}
        assert table.frame["risk"].between(0, 1).all()
        assert (table.frame["train_loss"] < 1e-3).all()
        assert "spearman_kappa_risk" in table.metrics

    def test_deterministic(self, geometry, tmp_path):
        first = lindistill.experiments.run(geometry)
        second = lindistill.experiments.run(geometry)
        first.to_csv(tmp_path / "first.csv")
        second.to_csv(tmp_path / "second.csv")
        assert (tmp_path / "first.csv").read_bytes() \
            == (tmp_path / "second.csv").read_bytes()

    def test_threads(self, geometry):
        serial = lindistill.experiments.run(geometry)
        threaded = lindistill.experiments.run(
            dataclasses.replace(geometry, threads=2))
        pandas.testing.assert_frame_equal(serial.frame, threaded.frame)

    def test_seed_matters(self, geometry):
        other = dataclasses.replace(geometry, seed=4)
        assert not lindistill.experiments.run(geometry).frame.equals(
            lindistill.experiments.run(other).frame)

    def test_csv(self, geometry, tmp_path):
        table = lindistill.experiments.run(geometry)
        table.to_csv(tmp_path / "results.csv")
        loaded = lindistill.experiments.ResultTable.from_csv(
            tmp_path / "results.csv")
        assert loaded.experiment == "geometry"
        assert loaded.frame.equals(table.frame)

    def test_trial_order(self, geometry, monkeypatch):
        forward = lindistill.experiments.run(geometry)
        monkeypatch.setattr(
            lindistill.experiments, "_map_trials", _reversed_trials)
        backward = lindistill.experiments.run(geometry)
        pandas.testing.assert_frame_equal(forward.frame, backward.frame)

    def test_risk_decreases_with_kappa(self):
        table = lindistill.experiments.run(_config(
            "geometry", seed=1, kappas=(0.5, 1.0, 4.0), d=50, n=5,
            trials=10, mc_samples=20_000))
        summary = table.summary()
        risks = summary["mean_risk"].to_numpy()
        assert risks[0] > risks[1] > risks[2]
        low, high = summary.iloc[0], summary.iloc[-1]
        assert low["mean_risk"] - low["half_width"] \
            > high["mean_risk"] + high["half_width"]
        assert table.metrics["spearman_kappa_risk"] == pytest.approx(-1)


class TestBias:

    def test_missing_data(self, no_mnist):
        with pytest.raises(lindistill.error.MissingDataError):
            lindistill.experiments.run(_config("bias", n=5, trials=1))

    def test_missing_directory(self, no_mnist, tmp_path):
        with pytest.raises(lindistill.error.MissingDataError):
            lindistill.experiments.run(
                _config("bias", n=5, trials=1, mnist_dir=str(tmp_path)))

    def test_synthetic_fallback(self, no_mnist):
        table = lindistill.experiments.run(_config(
            "bias", d=30, n=5, trials=2, deltas=(0.0, 1.0, 10.0),
            mc_samples=2000, synthetic_fallback=True))
        assert len(table) == 6
        assert table.failures == {0.0: 0, 1.0: 0, 10.0: 0}
        assert (table.frame["train_loss"] <= 1e-10).all()
        assert "spearman_delta_risk" in table.metrics

    def test_mnist(self, no_mnist, mnist_dir):
        table = lindistill.experiments.run(_config(
            "bias", n=4, trials=2, deltas=(0.0, 1.0),
            mnist_dir=str(mnist_dir),
            teacher=lindistill.tasks.TeacherConfig(iterations=100)))
        assert len(table) == 4
        # ten test images of digits 0 and 1
        risks = table.frame["risk"].to_numpy()
        np.testing.assert_allclose(risks * 10, np.round(risks * 10))

    def test_zero_delta_is_distillation(self, no_mnist, mnist_dir):
        cfg = _config(
            "bias", n=4, trials=3, deltas=(0.0, 1.0),
            mnist_dir=str(mnist_dir),
            teacher=lindistill.tasks.TeacherConfig(iterations=100))
        table = lindistill.experiments.run(cfg)
        task = lindistill.experiments._bias_task(cfg)
        X_eval = task.inputs("eval")
        zero = table.frame[table.frame["delta"] == 0.0]
        assert len(zero) == 3
        for trial, risk in zip(zero["trial"], zero["risk"]):
            ts = lindistill.tasks.make_transfer_set(
                task, cfg.n, lindistill.seeding.derive(
                    cfg.seed, "bias/transfer", int(trial)))
            w, _ = lindistill.trainers.train_shallow(ts, cfg.trainer)
            assert lindistill.risk.transfer_risk_on(
                w, task.w_star, X_eval).estimate == risk

    def test_risk_grows_with_delta(self, no_mnist):
        table = lindistill.experiments.run(_config(
            "bias", seed=2, d=100, n=10, trials=10,
            deltas=(0.0, 2.0, 5.0, 12.0, 30.0), mc_samples=20_000,
            synthetic_fallback=True))
        assert table.metrics["spearman_delta_risk"] > 0.8


class TestMonotonicity:

    @pytest.fixture
    def cfg(self):
        return _config("monotonicity", seed=1, d=10, n=3, trials=4,
                       deltas=(0.5, 1.0), mc_samples=1000)

    def test_roster(self, cfg):
        slots = lindistill.experiments.roster(cfg)
        assert [(slot, name) for slot, name, _, _ in slots] == [
            (0, "distillation"), (1, "hard-target"),
            (2, "w_delta"), (3, "w_delta")]
        assert math.isnan(slots[0][2])
        assert [delta for _, _, delta, _ in slots[2:]] == [0.5, 1.0]

    def test_table(self, cfg):
        table = lindistill.experiments.run(cfg)
        assert len(table) + table.total_failures == 16
        summary = table.summary()
        assert len(summary) == 4
        assert summary["index"].between(0, 1).all()
        assert "pearson_index_risk" in table.metrics

    def test_learner_subset(self, cfg):
        table = lindistill.experiments.run(
            dataclasses.replace(cfg, learners=("w_delta",)))
        assert set(table.frame["learner"]) == {"w_delta"}
        assert set(table.frame["slot"]) == {0, 1}

    def test_csv(self, cfg, tmp_path):
        table = lindistill.experiments.run(cfg)
        table.to_csv(tmp_path / "results.csv")
        loaded = lindistill.experiments.ResultTable.from_csv(
            tmp_path / "results.csv")
        assert loaded.frame.equals(table.frame)

    def test_trial_order(self, cfg, monkeypatch):
        forward = lindistill.experiments.run(cfg)
        monkeypatch.setattr(
            lindistill.experiments, "_map_trials", _reversed_trials)
        backward = lindistill.experiments.run(cfg)
        pandas.testing.assert_frame_equal(forward.frame, backward.frame)

    def test_distillation_reaches_closed_form(self, cfg):
        ts = lindistill.tasks.TransferSet.label(
            np.array([[1.0, 0.0], [0.0, 0.01], [0.0, 0.0]]),
            np.ones(3) / np.sqrt(3))
        (_, name, _, learner), *_ = lindistill.experiments.roster(cfg)
        assert name == "distillation"
        w = learner(ts, np.random.default_rng(0))
        np.testing.assert_allclose(
            w, lindistill.distill.closed_form_solution(ts), atol=1e-3)

    def test_index_against_risk(self):
        table = lindistill.experiments.run(_config(
            "monotonicity", seed=4, d=20, n=3, trials=50,
            learners=("distillation", "w_delta"), mc_samples=5000))
        summary = table.summary()
        distillation = summary[summary["learner"] == "distillation"].iloc[0]
        assert distillation["index"] >= 0.98
        assert distillation["index"] == summary["index"].max()
        assert table.metrics["pearson_index_risk"] < -0.5


@pytest.mark.slow
class TestFullSize:

    def test_geometry_trend(self):
        summary = lindistill.experiments.run(_config("geometry")).summary()
        risks = summary["mean_risk"].to_numpy()
        # below 1/m the estimate cannot separate κ values
        for larger, smaller in zip(risks, risks[1:]):
            assert smaller < larger or smaller == larger == 0
        low, high = summary.iloc[0], summary.iloc[-1]
        assert low["mean_risk"] - low["half_width"] \
            > high["mean_risk"] + high["half_width"]

    def test_bias_trend(self, no_mnist):
        table = lindistill.experiments.run(
            _config("bias", trials=20, synthetic_fallback=True))
        assert table.metrics["spearman_delta_risk"] > 0.8

    def test_monotonicity_trend(self):
        table = lindistill.experiments.run(_config("monotonicity"))
        summary = table.summary()
        distillation = summary[summary["learner"] == "distillation"].iloc[0]
        assert distillation["index"] >= 0.99
        assert distillation["index"] == summary["index"].max()
        assert table.metrics["pearson_index_risk"] < -0.5
