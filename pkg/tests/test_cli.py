import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from conftest import make_raw
from fmselect import __version__
from fmselect.data_io import write_dataset_csv
from fmselect.exceptions import NumericError
from fmselect.main import cli

FAST_CONFIG = """\
ecm:
  max_iter: 40
tuning:
  lambda0_grid: [40.0, 10.0]
  nu0_grid: [10.0]
runtime:
  workers: 1
  log_to_file: false
"""


@pytest.fixture
def runner(monkeypatch):
    for name in ("FMSELECT_WORKERS", "FMSELECT_LOG_LEVEL", "FMSELECT_OUTPUT_DIR"):
        monkeypatch.delenv(name, raising=False)
    return CliRunner()


@pytest.fixture
def fast_config(tmp_path):
    path = tmp_path / "fast.yaml"
    path.write_text(FAST_CONFIG, encoding="utf-8")
    return str(path)


@pytest.fixture
def dataset_csv(tmp_path):
    return str(write_dataset_csv(make_raw(), tmp_path / "data.csv"))


def test_version(runner):
    result = runner.invoke(cli, ["--version"])
    assert result.exit_code == 0
    assert __version__ in result.output


def test_simulate_default_dataset(runner, tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        result = runner.invoke(cli, ["simulate", "--seed", "17", "-o", str(out)])
        assert result.exit_code == 0, result.output
    frame = pd.read_csv(first / "dataset.csv")
    assert len(frame) == 2500
    assert list(frame.columns[:4]) == ["cluster", "replicate", "s", "y"]
    assert (first / "dataset.csv").read_bytes() == (second / "dataset.csv").read_bytes()
    truth = json.loads((first / "ground_truth.json").read_text())
    assert truth["true_random_support"] == [0, 3]
    assert json.loads((first / "manifest.json").read_text())["command"] == "simulate"
    assert "SNR_B" in result.output


def test_simulate_scenario_b_columns(runner, tmp_path):
    result = runner.invoke(cli, ["simulate", "--scenario", "B", "--n", "3", "--J", "2", "-o", str(tmp_path)])
    assert result.exit_code == 0, result.output
    columns = list(pd.read_csv(tmp_path / "dataset.csv").columns)
    assert columns[4:] == [f"x{k}" for k in range(1, 12)] + [f"z{r}" for r in range(1, 9)]


def test_fit_on_null_dataset(runner, tmp_path):
    raw = make_raw()
    raw = raw.with_responses([np.zeros_like(y) for y in raw.responses])
    data = write_dataset_csv(raw, tmp_path / "null.csv")
    out = tmp_path / "fit"
    result = runner.invoke(cli, ["fit", "-d", str(data), "--fixed-dims", "4", "--random-dims", "4",
                                 "-o", str(out)])
    assert result.exit_code == 0, result.output
    payload = json.loads((out / "fit.json").read_text())
    assert payload["selected_fixed"] == [] and payload["selected_random"] == []
    assert payload["phi_hat"]["sigma2"] == pytest.approx(1.0 / (raw.total_observations + 3.0))
    curves = pd.read_csv(out / "beta_curves.csv")
    assert len(curves) == 101
    assert np.all(curves.drop(columns="s").to_numpy() == 0.0)


def test_fit_then_eval_curves(runner, tmp_path, dataset_csv, fast_config):
    out = tmp_path / "fit"
    result = runner.invoke(cli, ["fit", "-c", fast_config, "-d", dataset_csv, "--fixed-dims", "4",
                                 "--random-dims", "4", "--lambda0", "30", "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert json.loads((out / "fit.json").read_text())["prior"]["lambda0"] == 30.0

    curves_dir = tmp_path / "curves"
    result = runner.invoke(cli, ["eval-curves", str(out / "fit.json"), "--points", "11", "--random",
                                 "-d", dataset_csv, "-o", str(curves_dir)])
    assert result.exit_code == 0, result.output
    beta = pd.read_csv(curves_dir / "beta_curves.csv")
    assert list(beta.columns) == ["s", "beta_x1", "beta_x2"]
    assert len(beta) == 11
    assert len(pd.read_csv(curves_dir / "random_curves.csv")) == 4 * 2 * 11
    fitted = pd.read_csv(curves_dir / "fitted_means.csv")
    assert list(fitted.columns) == ["cluster", "replicate", "s", "y", "fitted"]
    assert len(fitted) == 4 * 3 * 8


def test_eval_curves_uses_stored_grid(runner, tmp_path, dataset_csv, fast_config):
    out = tmp_path / "fit"
    runner.invoke(cli, ["fit", "-c", fast_config, "-d", dataset_csv, "--fixed-dims", "4",
                        "--random-dims", "4", "-o", str(out)])
    result = runner.invoke(cli, ["eval-curves", str(out / "fit.json"), "-o", str(tmp_path / "c")])
    assert result.exit_code == 0, result.output
    stored = pd.read_csv(out / "beta_curves.csv")
    pd.testing.assert_frame_equal(pd.read_csv(tmp_path / "c" / "beta_curves.csv"), stored)


def test_eval_curves_rejects_data_without_random(runner, tmp_path, dataset_csv, fast_config):
    out = tmp_path / "fit"
    runner.invoke(cli, ["fit", "-c", fast_config, "-d", dataset_csv, "--fixed-dims", "4",
                        "--random-dims", "4", "-o", str(out)])
    curves_dir = tmp_path / "c"
    result = runner.invoke(cli, ["eval-curves", str(out / "fit.json"), "-d", dataset_csv,
                                 "-o", str(curves_dir)])
    assert result.exit_code == 2
    assert "--random" in result.output
    assert not (curves_dir / "beta_curves.csv").exists()


def test_tune_writes_bic_table(runner, tmp_path, dataset_csv, fast_config):
    out = tmp_path / "tune"
    result = runner.invoke(cli, ["tune", "-c", fast_config, "-d", dataset_csv, "--fixed-dims", "4",
                                 "--random-dims", "4", "--nu0-grid", "20,5", "-o", str(out)])
    assert result.exit_code == 0, result.output
    table = pd.read_csv(out / "bic_table.csv")
    assert len(table) == 4
    assert list(table["nu0"]) == [20.0, 20.0, 5.0, 5.0]
    best = json.loads((out / "best_fit.json").read_text())
    assert best["bic"] == pytest.approx(table["bic"].min())
    assert (out / "manifest.json").exists()


def test_benchmark_small_study(runner, tmp_path, fast_config):
    outputs = [tmp_path / "bench_a", tmp_path / "bench_b"]
    for out in outputs:
        result = runner.invoke(cli, ["benchmark", "-c", fast_config, "--n", "3", "-B", "1", "--seed", "4",
                                     "--fixed-dims", "4", "--random-dims", "4", "-o", str(out)])
        assert result.exit_code == 0, result.output
    out = outputs[0]
    selection = pd.read_csv(out / "selection_table.csv")
    assert list(selection["n"]) == [3]
    assert list(pd.read_csv(out / "mise_table.csv").columns)[1:5] == ["beta2", "beta3", "beta4", "beta5"]
    assert len(pd.read_csv(out / "replications.csv")) == 1
    assert (out / "mean_curves_n3.csv").exists()
    for name in ("selection_table.csv", "mise_table.csv", "replications.csv", "mean_curves_n3.csv"):
        assert (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()


def test_curve_at_left_endpoint_is_first_coefficient(runner, tmp_path, dataset_csv, fast_config):
    out = tmp_path / "fit"
    runner.invoke(cli, ["fit", "-c", fast_config, "-d", dataset_csv, "--fixed-dims", "4",
                        "--random-dims", "4", "-o", str(out)])
    payload = json.loads((out / "fit.json").read_text())
    gamma = payload["phi_hat"]["gamma"]
    curves = pd.read_csv(out / "beta_curves.csv")
    assert curves.loc[0, "s"] == 0.0
    assert curves.loc[0, "beta_x1"] == pytest.approx(gamma[0], abs=1e-12)
    assert curves.loc[0, "beta_x2"] == pytest.approx(gamma[4], abs=1e-12)


def test_missing_dataset_is_a_config_error(runner, tmp_path):
    result = runner.invoke(cli, ["fit", "-o", str(tmp_path)])
    assert result.exit_code == 2


def test_bad_config_exits_with_two(runner, tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("prior:\n  lambda0: -1\n", encoding="utf-8")
    result = runner.invoke(cli, ["simulate", "-c", str(path), "-o", str(tmp_path)])
    assert result.exit_code == 2
    assert f"{path}:2:" in result.output


def test_bad_dims_flag_exits_with_two(runner, tmp_path, dataset_csv):
    result = runner.invoke(cli, ["fit", "-d", dataset_csv, "--fixed-dims", "five", "-o", str(tmp_path)])
    assert result.exit_code == 2


def test_numeric_failure_exits_with_three(runner, tmp_path, dataset_csv, fast_config, mocker):
    mocker.patch("fmselect.main.run_ecm", side_effect=NumericError("log posterior became non-finite"))
    result = runner.invoke(cli, ["fit", "-c", fast_config, "-d", dataset_csv, "--fixed-dims", "4",
                                 "--random-dims", "4", "-o", str(tmp_path)])
    assert result.exit_code == 3
    assert "non-finite" in result.output


def test_basis_export(runner, tmp_path):
    path = tmp_path / "basis.csv"
    result = runner.invoke(cli, ["basis", "--num-basis", "4", "--points", "3", "-o", str(path)])
    assert result.exit_code == 0, result.output
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["s", "B1", "B2", "B3", "B4"]
    np.testing.assert_allclose(frame.iloc[1, 1:].to_numpy(), [0.125, 0.375, 0.375, 0.125])


def test_basis_rejects_too_few_functions(runner, tmp_path):
    result = runner.invoke(cli, ["basis", "--num-basis", "3", "-o", str(tmp_path / "b.csv")])
    assert result.exit_code == 1
