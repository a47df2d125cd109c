"""
Metrics Module
Selection accuracy (TPF/FPF/TPR/FPR), mean integrated squared error of the
fixed-effect curves and the Monte Carlo study driver behind the benchmark tables.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import joblib
import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from fmselect.ecm import EcmConfig, FitResult
from fmselect.exceptions import FmselectError, ParameterError
from fmselect.simulation import GroundTruth, ScenarioSpec, generate
from fmselect.tuning import Dims, TuningGrid, format_dims, grid_search, resolve_workers

logger = logging.getLogger(__name__)

QUADRATURE_POINTS = 201
MIN_QUADRATURE_POINTS = 10
MISE_COEFFICIENTS = [1, 2, 3, 4]
RATE_NAMES = ("tpf", "fpf", "tpr", "fpr")


@dataclass
class SelectionRates:
    """Replication-averaged selection rates; ``None`` where a denominator is empty."""
    tpf: Optional[float]
    fpf: Optional[float]
    tpr: Optional[float]
    fpr: Optional[float]
    replications: int = 0
    failed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in RATE_NAMES + ("replications", "failed")}


@dataclass
class MiseReport:
    """``MISE_k`` per coefficient index, averaged over ``replications``."""
    mise: Dict[int, float]
    grid_size: int
    replications: int
    failed: int = 0


def _rate(selected: Sequence[int], qualifying: Sequence[int]) -> Optional[float]:
    qualifying = set(qualifying)
    if not qualifying:
        return None
    return len(set(selected) & qualifying) / len(qualifying)


def replication_rates(selected_fixed: Sequence[int], selected_random: Sequence[int],
                      truth: GroundTruth) -> Dict[str, Optional[float]]:
    """TPF, FPF, TPR and FPR of a single fit."""
    fixed_null = set(range(truth.p)) - set(truth.true_fixed_support)
    random_null = set(range(truth.q)) - set(truth.true_random_support)
    return {
        "tpf": _rate(selected_fixed, truth.true_fixed_support),
        "fpf": _rate(selected_fixed, fixed_null),
        "tpr": _rate(selected_random, truth.true_random_support),
        "fpr": _rate(selected_random, random_null),
    }


def _average_rates(per_replication: List[Dict[str, Optional[float]]], failed: int = 0) -> SelectionRates:
    averaged = {}
    for name in RATE_NAMES:
        values = [rates[name] for rates in per_replication if rates[name] is not None]
        averaged[name] = float(np.mean(values)) if values else None
    return SelectionRates(**averaged, replications=len(per_replication), failed=failed)


def selection_rates(fits: Sequence[FitResult], truth: GroundTruth) -> SelectionRates:
    """Average the per-replication selection rates over ``fits``.

    Args:
        fits: One fit per Monte Carlo replication
        truth: Ground truth carrying both supports

    Returns:
        SelectionRates: Means of the per-replication rates
    """
    if not fits:
        raise ParameterError("selection rates need at least one fit")
    return _average_rates([replication_rates(f.selected_fixed, f.selected_random, truth) for f in fits])


def mise(fit_curves: Sequence[np.ndarray], truth: GroundTruth, grid: np.ndarray,
         coefficients: Optional[Sequence[int]] = None) -> MiseReport:
    """Mean integrated squared error of fitted fixed-effect curves.

    Args:
        fit_curves: Per replication, an array (p, len(grid)) of fitted ``beta_k``
        truth: Ground truth providing the true curves
        grid: Quadrature grid on [0, 1]
        coefficients: 0-based indices to report; the nonzero slopes by default

    Returns:
        MiseReport: Trapezoid-rule MISE per coefficient
    """
    if not fit_curves:
        raise ParameterError("MISE needs at least one replication")
    grid = np.asarray(grid, dtype=float)
    if grid.size < MIN_QUADRATURE_POINTS:
        logger.warning(f"MISE quadrature grid has only {grid.size} points; integrals will be coarse")
    coefficients = list(MISE_COEFFICIENTS if coefficients is None else coefficients)
    true_curves = truth.beta_curves(grid)
    totals = {k: 0.0 for k in coefficients}
    for curves in fit_curves:
        curves = np.asarray(curves, dtype=float)
        for k in coefficients:
            totals[k] += float(trapezoid((curves[k] - true_curves[k]) ** 2, grid))
    return MiseReport(
        mise={k: total / len(fit_curves) for k, total in totals.items()},
        grid_size=grid.size,
        replications=len(fit_curves),
    )


@dataclass
class ReplicationRecord:
    """Outcome of one Monte Carlo replication."""
    replication: int
    n: int
    selected_fixed: List[int] = field(default_factory=list)
    selected_random: List[int] = field(default_factory=list)
    lambda0: Optional[float] = None
    nu0: Optional[float] = None
    d: str = ""
    d_prime: str = ""
    bic: Optional[float] = None
    converged: bool = False
    sigma_b: Optional[float] = None
    sigma_eps: Optional[float] = None
    rates: Dict[str, Optional[float]] = field(default_factory=dict)
    curves: Optional[np.ndarray] = None
    error: str = ""

    @property
    def failed(self) -> bool:
        return bool(self.error)


@dataclass
class MonteCarloResult:
    spec: ScenarioSpec
    rates: SelectionRates
    mise: Optional[MiseReport]
    records: List[ReplicationRecord]
    quadrature_grid: np.ndarray
    truth: Optional[GroundTruth] = None
    elapsed_seconds: float = 0.0

    @property
    def mean_curves(self) -> Optional[np.ndarray]:
        """Monte Carlo mean of the fitted ``beta_k`` on the quadrature grid."""
        curves = [r.curves for r in self.records if not r.failed]
        return np.mean(curves, axis=0) if curves else None


def _run_replication(spec: ScenarioSpec, tuning: TuningGrid, ecm_cfg: EcmConfig,
                     fixed_dims: Dims, random_dims: Dims, grid: np.ndarray):
    record = ReplicationRecord(replication=spec.replication, n=spec.n)
    try:
        raw, truth = generate(spec)
        record.sigma_b, record.sigma_eps = truth.sigma_b, truth.sigma_eps
        best, _ = grid_search(raw, tuning, ecm_cfg, fixed_dims, random_dims, workers=1)
    except FmselectError as exc:
        logger.warning(f"Replication {spec.replication} (n={spec.n}) failed: {exc}")
        record.error = f"{type(exc).__name__}: {exc}"
        return record, None

    record.selected_fixed = best.selected_fixed
    record.selected_random = best.selected_random
    record.lambda0, record.nu0 = best.prior.lambda0, best.prior.nu0
    record.d, record.d_prime = format_dims(best.fixed_basis_dims), format_dims(best.random_basis_dims)
    record.bic, record.converged = best.bic, best.converged
    record.rates = replication_rates(best.selected_fixed, best.selected_random, truth)
    record.curves = best.beta_curves(grid)
    return record, truth


def monte_carlo_study(spec: ScenarioSpec, B: int, tuning: TuningGrid, ecm_cfg: EcmConfig,
                      fixed_dims: Dims = 5, random_dims: Dims = 5, workers: Optional[int] = 1,
                      quadrature_points: int = QUADRATURE_POINTS) -> MonteCarloResult:
    """Generate, tune and score ``B`` replications of a scenario.

    Replication ``b`` uses substream ``b`` of ``spec.seed``. Replications run in a
    joblib worker pool; failed ones are counted and left out of the averages.

    Args:
        spec: Scenario settings; its ``replication`` field is overwritten
        B: Number of replications
        tuning: BIC grid used for every replication
        ecm_cfg: ECM settings
        fixed_dims: Fixed basis dimensions
        random_dims: Random basis dimensions
        workers: Pool size; ``None`` or ``0`` uses every core
        quadrature_points: Size of the MISE grid

    Returns:
        MonteCarloResult: Averaged rates, MISE and per-replication records
    """
    if B < 1:
        raise ParameterError(f"need at least one replication, got B={B}")
    started = time.perf_counter()
    grid = np.linspace(0.0, 1.0, quadrature_points)
    n_jobs = resolve_workers(workers, B)
    logger.info(f"Monte Carlo study: scenario {spec.scenario}, n={spec.n}, B={B}, workers={n_jobs}")
    outputs = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_run_replication)(spec.for_replication(b), tuning, ecm_cfg, fixed_dims, random_dims, grid)
        for b in range(B)
    )
    records = [record for record, _ in outputs]
    truths = [truth for _, truth in outputs if truth is not None]
    succeeded = [r for r in records if not r.failed]
    failed = len(records) - len(succeeded)

    if succeeded:
        rates = _average_rates([r.rates for r in succeeded], failed=failed)
        report = mise([r.curves for r in succeeded], truths[0], grid)
        report.failed = failed
    else:
        logger.error(f"Every replication failed for scenario {spec.scenario}, n={spec.n}")
        rates = SelectionRates(None, None, None, None, replications=0, failed=failed)
        report = None

    return MonteCarloResult(
        spec=spec,
        rates=rates,
        mise=report,
        records=records,
        quadrature_grid=grid,
        truth=truths[0] if truths else None,
        elapsed_seconds=time.perf_counter() - started,
    )


def selection_table(results: Sequence[MonteCarloResult]) -> pd.DataFrame:
    """One row per sample size: n, TPF, FPF, TPR, FPR, B and failures."""
    rows = []
    for result in results:
        row = {"n": result.spec.n}
        row.update({name.upper(): getattr(result.rates, name) for name in RATE_NAMES})
        row.update({"B": len(result.records), "failed": result.rates.failed})
        rows.append(row)
    return pd.DataFrame(rows, columns=["n", "TPF", "FPF", "TPR", "FPR", "B", "failed"])


def mise_table(results: Sequence[MonteCarloResult]) -> pd.DataFrame:
    """One row per sample size with a ``beta<k>`` column per reported slope (1-based)."""
    columns = ["n"] + [f"beta{k + 1}" for k in MISE_COEFFICIENTS] + ["B", "failed"]
    rows = []
    for result in results:
        row = {"n": result.spec.n, "B": len(result.records), "failed": result.rates.failed}
        if result.mise is not None:
            row.update({f"beta{k + 1}": value for k, value in result.mise.mise.items()})
        rows.append(row)
    return pd.DataFrame(rows, columns=columns)


def records_frame(results: Sequence[MonteCarloResult]) -> pd.DataFrame:
    """Per-replication selections, chosen tuning values and rates."""
    rows = []
    for result in results:
        for r in result.records:
            rows.append({
                "n": r.n,
                "replication": r.replication,
                "lambda0": r.lambda0,
                "nu0": r.nu0,
                "d": r.d,
                "d_prime": r.d_prime,
                "bic": r.bic,
                "converged": r.converged,
                "selected_fixed": ";".join(str(k + 1) for k in r.selected_fixed),
                "selected_random": ";".join(str(k + 1) for k in r.selected_random),
                **{name.upper(): r.rates.get(name) for name in RATE_NAMES},
                "sigma_b": r.sigma_b,
                "sigma_eps": r.sigma_eps,
                "error": r.error,
            })
    return pd.DataFrame(rows)


def mean_curves_frame(result: MonteCarloResult) -> pd.DataFrame:
    """True and Monte Carlo mean ``beta_k(s)`` on the quadrature grid."""
    frame = pd.DataFrame({"s": result.quadrature_grid})
    mean = result.mean_curves
    if result.truth is None or mean is None:
        return frame
    true_curves = result.truth.beta_curves(result.quadrature_grid)
    for k in range(result.truth.p):
        frame[f"beta{k + 1}_true"] = true_curves[k]
        frame[f"beta{k + 1}_mean"] = mean[k]
    return frame
