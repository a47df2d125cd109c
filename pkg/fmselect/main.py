"""
Command-line interface: dataset simulation, single fits, BIC tuning, Monte Carlo
benchmarks and curve/basis export.

Exit codes: 0 success, 2 configuration or usage error, 3 numeric, tuning or
generation failure, 1 any other fmselect error.
"""

import functools
import logging
import sys
import time
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import click
import numpy as np
import pandas as pd
from dotenv import load_dotenv

from fmselect import __version__
from fmselect.config import ConfigManager, RunConfig
from fmselect.data_io import (
    build_manifest,
    read_dataset_csv,
    read_json,
    write_dataset_csv,
    write_frame,
    write_json,
)
from fmselect.ecm import FitResult, run_ecm
from fmselect.exceptions import (
    ConfigError,
    FmselectError,
    GenerationError,
    NumericError,
    TuningError,
)
from fmselect.metrics import (
    mean_curves_frame,
    mise_table,
    monte_carlo_study,
    records_frame,
    selection_table,
)
from fmselect.model_core import RawDataset, build_model
from fmselect.simulation import generate
from fmselect.spline_basis import make_cubic_basis
from fmselect.tuning import bic, grid_search
from fmselect.utils.logger import LogType, RunLogger, setup_logging

logger = logging.getLogger("fmselect.main")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def exit_code_for(error: Exception) -> int:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, (NumericError, TuningError, GenerationError)):
        return EXIT_NUMERIC
    return EXIT_FAILURE


def handle_errors(command: str) -> Callable:
    """Run a subcommand with a RunLogger and map fmselect errors onto exit codes."""

    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            run_logger = RunLogger(command)
            started = time.perf_counter()
            try:
                func(*args, run_logger=run_logger, **kwargs)
            except FmselectError as error:
                run_logger.log_error(error, context=command)
                click.echo(f"Error: {error}", err=True)
                sys.exit(exit_code_for(error))
            run_logger.log_performance(f"{command}_seconds", time.perf_counter() - started)
        return wrapper

    return decorator


def parse_dims(text: Optional[str]):
    """``"5"`` -> 5, ``"7,5,5"`` -> [7, 5, 5]; ``None`` passes through."""
    if text is None:
        return None
    try:
        parts = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"basis dimensions must be integers, got {text!r}", source="command line") from exc
    if not parts:
        raise ConfigError("empty basis dimensions", source="command line")
    return parts[0] if len(parts) == 1 else parts


def parse_floats(text: Optional[str]):
    if text is None:
        return None
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}", source="command line") from exc


def load_config(config_path: Optional[str], overrides: Dict[str, Any]) -> RunConfig:
    cfg = ConfigManager(config_path, overrides).validate()
    output_dir = Path(cfg.output.directory)
    setup_logging(cfg.runtime.log_level, output_dir / "logs" if cfg.runtime.log_to_file else None)
    return cfg


def load_dataset(cfg: RunConfig) -> RawDataset:
    if not cfg.data.path:
        raise ConfigError("no dataset given; set data.path or pass --data", source="command line")
    raw = read_dataset_csv(cfg.data.path)
    if cfg.data.standardize:
        raw, scaling = raw.standardize(cfg.data.standardize)
        logger.info(f"Standardized columns: {scaling}")
    return raw


def curves_frame(fit: FitResult, grid: np.ndarray) -> pd.DataFrame:
    """``s`` plus one ``beta_<name>`` column per fixed covariate."""
    curves = fit.beta_curves(grid)
    frame = pd.DataFrame({"s": grid})
    for k, name in enumerate(fit.fixed_names):
        frame[f"beta_{name}"] = curves[k]
    return frame


def random_curves_frame(fit: FitResult, grid: np.ndarray) -> pd.DataFrame:
    """Long format: cluster, covariate, s, u."""
    curves = fit.random_curves(grid)
    n, q, _ = curves.shape
    return pd.DataFrame({
        "cluster": np.repeat(np.arange(1, n + 1), q * grid.size),
        "covariate": np.tile(np.repeat(fit.random_names, grid.size), n),
        "s": np.tile(grid, n * q),
        "u": curves.reshape(-1),
    })


def fitted_means_frame(fit: FitResult, raw: RawDataset) -> pd.DataFrame:
    data = build_model(raw, fit.fixed_basis_dims, fit.random_basis_dims, fit.domain)
    rows = []
    for i, means in enumerate(fit.predict_cluster_means(data)):
        for j, curve in enumerate(means):
            rows.append(pd.DataFrame({
                "cluster": raw.cluster_ids[i],
                "replicate": raw.replicate_ids[i][j],
                "s": raw.grid,
                "y": raw.responses[i][j],
                "fitted": curve,
            }))
    return pd.concat(rows, ignore_index=True)


def write_fit(fit: FitResult, cfg: RunConfig, out: Path, name: str) -> None:
    fit.curve_grid = np.linspace(fit.domain[0], fit.domain[1], cfg.output.curve_points)
    write_json(fit.to_dict(), out / f"{name}.json")
    write_frame(curves_frame(fit, fit.curve_grid), out / "beta_curves.csv")


def common_options(func):
    """Options shared by every subcommand."""
    options = [
        click.option("--config", "-c", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="YAML run configuration"),
        click.option("--output-dir", "-o", default=None, help="Directory for every output file"),
        click.option("--workers", type=int, default=None, help="Worker processes (0 = all cores)"),
        click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"],
                                                      case_sensitive=False), default=None),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def runtime_overrides(output_dir, workers, log_level) -> Dict[str, Any]:
    return {
        "output.directory": output_dir,
        "runtime.workers": workers,
        "runtime.log_level": None if log_level is None else log_level.upper(),
    }


def model_overrides(data, fixed_dims, random_dims, lambda0=None, nu0=None) -> Dict[str, Any]:
    return {
        "data.path": data,
        "basis.fixed_dims": parse_dims(fixed_dims),
        "basis.random_dims": parse_dims(random_dims),
        "prior.lambda0": lambda0,
        "prior.nu0": nu0,
    }


def model_options(func):
    options = [
        click.option("--data", "-d", type=click.Path(exists=True, dir_okay=False), default=None,
                     help="Long-format dataset CSV"),
        click.option("--fixed-dims", default=None, help="Fixed basis size, e.g. 5 or 7,5,5,..."),
        click.option("--random-dims", default=None, help="Random basis size, e.g. 5 or 5,5,..."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.version_option(version=__version__, message="%(version)s")
def cli():
    """Selection of fixed and random functional effects in multilevel functional mixed models."""
    load_dotenv()


@cli.command()
@common_options
@click.option("--scenario", type=click.Choice(["A", "B"]), default=None)
@click.option("--n", "n_clusters", type=int, default=None, help="Number of clusters")
@click.option("--J", "replicates", type=int, default=None, help="Replicates per cluster")
@click.option("--m", "grid_size", type=int, default=None, help="Grid points per curve")
@click.option("--snr-b", type=float, default=None)
@click.option("--snr-eps", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--replication", type=int, default=None, help="Monte Carlo substream index")
@handle_errors("simulate")
def simulate(config_path, output_dir, workers, log_level, scenario, n_clusters, replicates, grid_size,
             snr_b, snr_eps, seed, replication, run_logger: RunLogger):
    """Write a simulated dataset CSV and its ground-truth JSON."""
    overrides = runtime_overrides(output_dir, workers, log_level)
    overrides.update({
        "scenario.scenario": scenario, "scenario.n": n_clusters, "scenario.J": replicates,
        "scenario.m": grid_size, "scenario.snr_b": snr_b, "scenario.snr_eps": snr_eps,
        "scenario.seed": seed, "scenario.replication": replication,
    })
    cfg = load_config(config_path, overrides)
    raw, truth = generate(cfg.scenario)

    out = Path(cfg.output.directory)
    write_dataset_csv(raw, out / "dataset.csv")
    write_json(truth.to_dict(), out / "ground_truth.json")
    write_json(build_manifest("simulate", cfg.model_dump(mode="json")), out / "manifest.json")

    click.echo(f"sigma_B   = {truth.sigma_b:.6g}")
    click.echo(f"sigma_eps = {truth.sigma_eps:.6g}")
    click.echo(f"SNR_B     = {truth.snr_b_realized:.6g}")
    click.echo(f"SNR_eps   = {truth.snr_eps_realized:.6g}")
    click.echo(f"Wrote {raw.total_observations} rows to {out / 'dataset.csv'}")
    run_logger.log(LogType.DATA, "INFO", "Simulated dataset", {
        "scenario": cfg.scenario.scenario, "rows": raw.total_observations,
        "sigma_b": truth.sigma_b, "sigma_eps": truth.sigma_eps,
    })


@cli.command()
@common_options
@model_options
@click.option("--lambda0", type=float, default=None, help="Fixed-effect spike")
@click.option("--nu0", type=float, default=None, help="Random-effect spike")
@handle_errors("fit")
def fit(config_path, output_dir, workers, log_level, data, fixed_dims, random_dims, lambda0, nu0,
        run_logger: RunLogger):
    """Fit one (lambda0, nu0) setting and write the fit JSON and beta curves."""
    overrides = runtime_overrides(output_dir, workers, log_level)
    overrides.update(model_overrides(data, fixed_dims, random_dims, lambda0, nu0))
    cfg = load_config(config_path, overrides)
    raw = load_dataset(cfg)
    model = build_model(raw, cfg.basis.fixed_dims, cfg.basis.random_dims)

    run_logger.log_fit_event("started", {"lambda0": cfg.prior.lambda0, "nu0": cfg.prior.nu0})
    result = run_ecm(model, cfg.ecm_config())
    result.bic = bic(model, result)
    run_logger.log_fit_event("finished", result.summary())

    out = Path(cfg.output.directory)
    write_fit(result, cfg, out, "fit")
    click.echo(f"Selected fixed effects:  {[result.fixed_names[k] for k in result.selected_fixed]}")
    click.echo(f"Selected random effects: {[result.random_names[r] for r in result.selected_random]}")
    click.echo(f"Iterations: {result.iterations} (converged={result.converged}), BIC={result.bic:.6g}")


@cli.command()
@common_options
@model_options
@click.option("--lambda0-grid", default=None, help="Comma-separated lambda0 values, largest first")
@click.option("--nu0-grid", default=None, help="Comma-separated nu0 values, largest first")
@handle_errors("tune")
def tune(config_path, output_dir, workers, log_level, data, fixed_dims, random_dims, lambda0_grid, nu0_grid,
         run_logger: RunLogger):
    """BIC grid search; writes the BIC table and the best fit."""
    overrides = runtime_overrides(output_dir, workers, log_level)
    overrides.update(model_overrides(data, fixed_dims, random_dims))
    overrides.update({"tuning.lambda0_grid": parse_floats(lambda0_grid), "tuning.nu0_grid": parse_floats(nu0_grid)})
    cfg = load_config(config_path, overrides)
    raw = load_dataset(cfg)

    run_logger.log_tuning_event("started", {"grid_size": cfg.tuning.size})
    best, table = grid_search(raw, cfg.tuning, cfg.ecm_config(), cfg.basis.fixed_dims,
                              cfg.basis.random_dims, workers=cfg.runtime.workers)
    run_logger.log_tuning_event("finished", best.summary())

    out = Path(cfg.output.directory)
    write_frame(table.to_frame(), out / "bic_table.csv")
    write_fit(best, cfg, out, "best_fit")
    write_json(build_manifest("tune", cfg.model_dump(mode="json")), out / "manifest.json")
    click.echo(f"Best: lambda0={best.prior.lambda0}, nu0={best.prior.nu0}, BIC={best.bic:.6g}")
    click.echo(f"Selected fixed effects:  {[best.fixed_names[k] for k in best.selected_fixed]}")
    click.echo(f"Selected random effects: {[best.random_names[r] for r in best.selected_random]}")


@cli.command()
@common_options
@click.option("--scenario", type=click.Choice(["A", "B"]), default=None)
@click.option("--n", "sample_sizes", default=None, help="Cluster counts, e.g. 25 or 25,50,100")
@click.option("--replications", "-B", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--fixed-dims", default=None)
@click.option("--random-dims", default=None)
@handle_errors("benchmark")
def benchmark(config_path, output_dir, workers, log_level, scenario, sample_sizes, replications, seed,
              fixed_dims, random_dims, run_logger: RunLogger):
    """Monte Carlo study; writes selection and MISE tables plus a manifest."""
    sizes = parse_dims(sample_sizes)
    overrides = runtime_overrides(output_dir, workers, log_level)
    overrides.update({
        "scenario.scenario": scenario, "scenario.seed": seed,
        "benchmark.replications": replications,
        "benchmark.sample_sizes": None if sizes is None else ([sizes] if isinstance(sizes, int) else sizes),
        "basis.fixed_dims": parse_dims(fixed_dims), "basis.random_dims": parse_dims(random_dims),
    })
    cfg = load_config(config_path, overrides)
    sizes = cfg.benchmark.sample_sizes or [cfg.scenario.n]

    results = []
    for n in sizes:
        spec = cfg.scenario.model_copy(update={"n": n})
        run_logger.log_benchmark_event("started", {"n": n, "B": cfg.benchmark.replications})
        result = monte_carlo_study(spec, cfg.benchmark.replications, cfg.tuning, cfg.ecm_config(),
                                   cfg.basis.fixed_dims, cfg.basis.random_dims, workers=cfg.runtime.workers,
                                   quadrature_points=cfg.benchmark.quadrature_points)
        run_logger.log_benchmark_event("finished", {"n": n, **result.rates.to_dict()})
        results.append(result)

    out = Path(cfg.output.directory)
    selection = selection_table(results)
    write_frame(selection, out / "selection_table.csv")
    write_frame(mise_table(results), out / "mise_table.csv")
    write_frame(records_frame(results), out / "replications.csv")
    for result in results:
        write_frame(mean_curves_frame(result), out / f"mean_curves_n{result.spec.n}.csv")
    write_json(build_manifest("benchmark", cfg.model_dump(mode="json"), sample_sizes=sizes),
               out / "manifest.json")
    click.echo(selection.to_string(index=False))


@cli.command("eval-curves")
@click.argument("fit_json", type=click.Path(exists=True, dir_okay=False))
@click.option("--points", type=int, default=None, help="Equispaced evaluation points (default: stored grid)")
@click.option("--grid-file", type=click.Path(exists=True, dir_okay=False), default=None,
              help="CSV with an 's' column of evaluation points")
@click.option("--random", "with_random", is_flag=True, help="Also write cluster random curves")
@click.option("--data", "-d", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Dataset for fitted cluster curves (requires --random)")
@click.option("--output-dir", "-o", default=".", show_default=True)
@handle_errors("eval-curves")
def eval_curves(fit_json, points, grid_file, with_random, data, output_dir, run_logger: RunLogger):
    """Evaluate a stored fit's curves on a grid and write CSVs."""
    setup_logging()
    if data is not None and not with_random:
        raise ConfigError("--data only applies together with --random", source="command line")
    result = FitResult.from_dict(read_json(fit_json))
    if grid_file is not None:
        grid = pd.read_csv(grid_file)["s"].to_numpy(dtype=float)
    elif points is not None:
        grid = np.linspace(result.domain[0], result.domain[1], points)
    elif result.curve_grid is not None:
        grid = result.curve_grid
    else:
        raise ConfigError("no evaluation grid: pass --points or --grid-file", source="command line")

    out = Path(output_dir)
    write_frame(curves_frame(result, grid), out / "beta_curves.csv")
    if with_random:
        write_frame(random_curves_frame(result, grid), out / "random_curves.csv")
        if data is not None:
            write_frame(fitted_means_frame(result, read_dataset_csv(data)), out / "fitted_means.csv")
    run_logger.log(LogType.FIT, "INFO", "Curves evaluated", {"points": int(grid.size), "random": with_random})
    click.echo(f"Wrote curves on {grid.size} points to {out}")


@cli.command()
@click.option("--num-basis", type=int, required=True, help="Number of cubic B-spline functions")
@click.option("--points", type=int, default=101, show_default=True)
@click.option("--output", "-o", default="basis.csv", show_default=True)
@handle_errors("basis")
def basis(num_basis, points, output, run_logger: RunLogger):
    """Write a cubic B-spline basis evaluated on an equispaced grid."""
    setup_logging()
    spline = make_cubic_basis(num_basis)
    grid = np.linspace(spline.domain[0], spline.domain[1], points)
    values = spline.evaluate_matrix(grid)
    frame = pd.DataFrame({"s": grid})
    for u in range(spline.num_basis):
        frame[f"B{u + 1}"] = values[:, u]
    write_frame(frame, output)
    run_logger.log(LogType.SYSTEM, "INFO", "Basis exported", {"num_basis": num_basis, "points": points})
    click.echo(f"Wrote {spline!r} on {points} points to {output}")


if __name__ == "__main__":
    cli()
