"""Tests for the command line interface."""

import json
import textwrap

import pandas
import pytest

import lindistill.cli


@pytest.fixture(autouse=True)
def no_mnist(monkeypatch):
    monkeypatch.delenv("LINDISTILL_MNIST_DIR", raising=False)


@pytest.fixture
def config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(textwrap.dedent("""
        seed: 2
        n: 5
        task:
          d: 8
        trainer:
          max_iters: 20000
        risk:
          mc_samples: 2000
        bound:
          grid_size: 101
        experiment:
          kappas: [1, 4]
          d: 10
          n: 4
          trials: 2
          mc_samples: 1000
    """))
    return path


def _run(command, config, out, *extra):
    return lindistill.cli.main(
        [*command.split(), "--config", str(config), "--out", str(out), *extra])


def _manifest(out):
    return json.loads((out / "manifest.json").read_text())


class TestTrain:

    def test_shallow(self, config, tmp_path, capsys):
        out = tmp_path / "train"
        assert _run("train", config, out) == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "manifest.json", "trace.csv", "weights.csv"]
        assert len(pandas.read_csv(out / "weights.csv")) == 8
        manifest = _manifest(out)
        assert manifest["command"] == "train"
        assert manifest["seed"] == 2
        assert manifest["outputs"] == ["weights.csv", "trace.csv"]
        assert manifest["parameters"]["distance"] < 1e-2
        assert "stop" in capsys.readouterr().out

    def test_deterministic(self, config, tmp_path):
        for name in ("a", "b"):
            assert _run("train", config, tmp_path / name) == 0
        assert (tmp_path / "a" / "weights.csv").read_bytes() \
            == (tmp_path / "b" / "weights.csv").read_bytes()

    def test_seed_override(self, config, tmp_path):
        assert _run("train", config, tmp_path / "out", "--seed", "7") == 0
        assert _manifest(tmp_path / "out")["seed"] == 7

    def test_deep(self, tmp_path):
        path = tmp_path / "deep.yaml"
        path.write_text(textwrap.dedent("""
            n: 6
            task: {d: 6}
            trainer: {depth: 2, step: 0.25, max_iters: 5000}
        """))
        out = tmp_path / "deep"
        assert _run("train", path, out) == 0
        parameters = _manifest(out)["parameters"]
        assert parameters["init_scale"] < parameters["init_scale_bound"]

    def test_deep_default_step(self, tmp_path):
        path = tmp_path / "deep.yaml"
        path.write_text(textwrap.dedent("""
            n: 5
            task: {d: 20}
            trainer: {depth: 2, max_iters: 20000}
        """))
        out = tmp_path / "deep"
        assert _run("train", path, out) == 0
        assert _manifest(out)["parameters"]["trainer"]["step"] == 0.05


class TestClosedForm:

    def test_weights(self, config, tmp_path):
        out = tmp_path / "cf"
        assert _run("closed-form", config, out) == 0
        assert len(pandas.read_csv(out / "weights.csv")) == 8
        assert _manifest(out)["parameters"]["exact"] is False


class TestRisk:

    def test_closed_form(self, config, tmp_path):
        out = tmp_path / "risk"
        assert _run("risk", config, out) == 0
        frame = pandas.read_csv(out / "risk.csv")
        assert list(frame["student"]) == ["closed-form"]
        assert frame["m"].iloc[0] == 2000

    def test_stored_weights(self, config, tmp_path):
        assert _run("closed-form", config, tmp_path / "cf") == 0
        assert _run("risk", config, tmp_path / "reference") == 0
        weights = tmp_path / "cf" / "weights.csv"
        path = tmp_path / "stored.yaml"
        path.write_text(config.read_text().replace(
            "mc_samples: 2000", f"mc_samples: 2000\n  weights: '{weights}'", 1))
        assert _run("risk", path, tmp_path / "stored") == 0
        stored = pandas.read_csv(tmp_path / "stored" / "risk.csv")
        reference = pandas.read_csv(tmp_path / "reference" / "risk.csv")
        assert stored["student"].iloc[0] == str(weights)
        assert stored["estimate"].iloc[0] == reference["estimate"].iloc[0]


class TestBound:

    def test_rows(self, config, tmp_path, capsys):
        out = tmp_path / "bound"
        assert _run("bound", config, out) == 0
        frame = pandas.read_csv(out / "bound.csv")
        assert list(frame["point"]) == ["optimum", "lower", "upper"]
        assert frame["value"].iloc[0] <= frame["value"].iloc[1:].min()
        assert "bound" in capsys.readouterr().out

    def test_vacuous_warning(self, tmp_path):
        path = tmp_path / "bound.yaml"
        path.write_text("n: 1\ntask: {d: 50, kappa: 0.1}\n")
        out = tmp_path / "bound"
        assert _run("bound", path, out) == 0
        assert any("vacuous" in warning
                   for warning in _manifest(out)["warnings"])

    def test_epsilon_too_large(self, config, tmp_path):
        path = tmp_path / "bound.yaml"
        path.write_text("bound: {epsilon: 1.0, w_hat_norm: 1.0}\n")
        assert _run("bound", path, tmp_path / "out") == 2

    def test_invalid_curve(self, tmp_path):
        curve = tmp_path / "curve.csv"
        curve.write_text("theta,p\n0,0.5\n1,0.9\n")
        path = tmp_path / "bound.yaml"
        path.write_text(f"bound: {{curve: '{curve}'}}\n")
        assert _run("bound", path, tmp_path / "out") == 2

    def test_curve_file(self, tmp_path):
        curve = tmp_path / "curve.csv"
        curve.write_text("theta,p\n0,1\n1.5707963267948966,0\n")
        path = tmp_path / "bound.yaml"
        path.write_text(f"n: 10\nbound: {{curve: '{curve}'}}\n")
        out = tmp_path / "out"
        assert _run("bound", path, out) == 0
        assert _manifest(out)["parameters"]["value"] < 1


class TestExperiment:

    def test_geometry(self, config, tmp_path):
        out = tmp_path / "geometry"
        assert _run("experiment geometry", config, out, "--plot") == 0
        assert sorted(p.name for p in out.iterdir()) == [
            "manifest.json", "plot.svg", "results.csv", "summary.csv"]
        assert len(pandas.read_csv(out / "results.csv")) == 4
        assert len(pandas.read_csv(out / "summary.csv")) == 2
        manifest = _manifest(out)
        assert manifest["failures"] == {"1.0": 0, "4.0": 0}
        assert manifest["parameters"]["kappas"] == [1.0, 4.0]

    def test_bias_without_data(self, config, tmp_path):
        out = tmp_path / "bias"
        assert _run("experiment bias", config, out) == 1
        assert not (out / "manifest.json").exists()

    def test_unknown_experiment(self, config, tmp_path):
        with pytest.raises(SystemExit) as error:
            _run("experiment ablation", config, tmp_path / "out")
        assert error.value.code == 2


class TestVerify:

    def test_single_check(self, tmp_path):
        out = tmp_path / "verify"
        assert lindistill.cli.main(
            ["verify", "--check", "poly-substitution", "--out", str(out)]) == 0
        frame = pandas.read_csv(out / "verify.csv")
        assert list(frame["name"]) == ["poly-substitution"]
        assert _manifest(out)["parameters"]["failed"] == []


class TestErrors:

    def test_missing_config(self, tmp_path):
        out = tmp_path / "out"
        assert _run("train", tmp_path / "absent.yaml", out) == 2
        assert not out.exists()

    def test_invalid_config(self, tmp_path, capsys):
        path = tmp_path / "bad.yaml"
        path.write_text("n: 0\n")
        assert _run("train", path, tmp_path / "out") == 2
        assert "n:" in capsys.readouterr().err

    def test_mnist_task_without_data(self, tmp_path):
        path = tmp_path / "mnist.yaml"
        path.write_text("task: {kind: mnist}\n")
        assert _run("closed-form", path, tmp_path / "out") == 1
