"""
Tuning Module
BIC grid search over the spike parameters (lambda0, nu0) and the basis
dimensions, with the marginal Gaussian log-likelihood of the fitted model.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import joblib
import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy import linalg

from fmselect.ecm import EcmConfig, FitResult, ParameterState, run_ecm
from fmselect.exceptions import FmselectError, NumericError, TuningError
from fmselect.model_core import ModelData, RawDataset, build_model, expand_L

logger = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
DEFAULT_LAMBDA0_GRID = [200.0, 170.0, 140.0, 110.0, 80.0, 50.0, 20.0, 10.0, 5.0]
DEFAULT_NU0_GRID = [50.0, 20.0, 10.0, 5.0, 2.0]

Dims = Union[int, List[int]]


class TuningGrid(BaseModel):
    """Spike values and basis dimensions searched by :func:`grid_search`.

    ``basis_dims`` holds ``(d, d')`` pairs; when omitted the dimensions passed to
    :func:`grid_search` are used unchanged.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda0_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_LAMBDA0_GRID), min_length=1)
    nu0_grid: List[float] = Field(default_factory=lambda: list(DEFAULT_NU0_GRID), min_length=1)
    basis_dims: Optional[List[Tuple[int, int]]] = None
    lambda1: float = Field(1.0, gt=0)
    nu1: float = Field(1.0, gt=0)

    @field_validator("lambda0_grid", "nu0_grid")
    @classmethod
    def _non_increasing(cls, values: List[float]) -> List[float]:
        if any(b > a for a, b in zip(values, values[1:])):
            raise ValueError("spike grids must be listed from largest to smallest")
        return values

    @field_validator("basis_dims")
    @classmethod
    def _cubic_dims(cls, values):
        if values is not None:
            if not values:
                raise ValueError("basis_dims must not be empty")
            if any(d < 4 or dp < 4 for d, dp in values):
                raise ValueError("cubic bases need at least 4 functions")
        return values

    @model_validator(mode="after")
    def _spikes_above_slabs(self):
        if min(self.lambda0_grid) <= self.lambda1:
            raise ValueError(f"every lambda0 must exceed lambda1={self.lambda1}")
        if min(self.nu0_grid) <= self.nu1:
            raise ValueError(f"every nu0 must exceed nu1={self.nu1}")
        return self

    @property
    def size(self) -> int:
        n_dims = 1 if self.basis_dims is None else len(self.basis_dims)
        return len(self.lambda0_grid) * len(self.nu0_grid) * n_dims


@dataclass
class BicRow:
    lambda0: float
    nu0: float
    d: str
    d_prime: str
    bic: float
    df: int
    selected_fixed_count: int
    selected_random_count: int
    converged: bool
    error: str = ""


@dataclass
class BicTable:
    """One row per grid point, in grid order."""
    rows: List[BicRow] = field(default_factory=list)

    COLUMNS = ["lambda0", "nu0", "d", "d_prime", "bic", "df",
               "selected_fixed_count", "selected_random_count", "converged", "error"]

    def __len__(self) -> int:
        return len(self.rows)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(row) for row in self.rows], columns=self.COLUMNS)


def format_dims(dims: Sequence[int]) -> str:
    """``"5"`` for uniform dimensions, ``"7;5;5"`` otherwise."""
    dims = [int(d) for d in dims]
    return str(dims[0]) if len(set(dims)) == 1 else ";".join(str(d) for d in dims)


def marginal_log_likelihood(data: ModelData, phi: ParameterState) -> float:
    """Gaussian log-likelihood of every ``Y_i`` with ``b`` integrated out.

    ``Sigma_i = Z_i L L^T Z_i^T + sigma2 I`` is never formed: the determinant
    lemma and the Woodbury identity reduce everything to the d'q-dimensional
    capacitance matrix ``I + L^T Z_i^T Z_i L / sigma2``.

    Args:
        data: Assembled model data
        phi: Fitted parameter state; ``b`` is unused

    Returns:
        float: Sum over clusters of ``log N(Y_i; X_i gamma, Sigma_i)``
    """
    sigma2 = phi.sigma2
    if not sigma2 > 0:
        raise NumericError(f"marginal likelihood needs sigma2 > 0, got {sigma2}")
    L = expand_L(phi.Ltilde, data.layout)
    identity = np.eye(data.n_random)
    total = 0.0
    for i, (Y_i, X_i, Z_i, ZtZ_i) in enumerate(zip(data.Y, data.X, data.Z, data.ZtZ)):
        resid = Y_i - X_i @ phi.gamma
        capacitance = identity + (L.T @ ZtZ_i @ L) / sigma2
        try:
            factor = linalg.cho_factor(capacitance, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericError(f"capacitance matrix of cluster {i} is not positive definite",
                               state={"cluster": i, "sigma2": sigma2}) from exc
        projected = L.T @ (Z_i.T @ resid)
        quad = (resid @ resid - projected @ linalg.cho_solve(factor, projected) / sigma2) / sigma2
        log_det = Y_i.size * np.log(sigma2) + 2.0 * np.sum(np.log(np.diag(factor[0])))
        total += -0.5 * (Y_i.size * LOG_2PI + log_det + quad)
    return float(total)


def degrees_of_freedom(fit: FitResult) -> int:
    """Number of nonzero entries of the MAP ``gamma`` and ``L~``."""
    return fit.degrees_of_freedom


def bic(data: ModelData, fit: FitResult) -> float:
    """``-2 loglik + log(N) df``."""
    return float(-2.0 * marginal_log_likelihood(data, fit.phi_hat) + np.log(data.N) * degrees_of_freedom(fit))


def resolve_workers(workers: Optional[int], n_tasks: int) -> int:
    """Worker count defaulting to the available cores, capped by the task count."""
    if workers is None or workers <= 0:
        workers = joblib.cpu_count()
    return max(1, min(int(workers), n_tasks))


def _run_chain(raw: RawDataset, fixed_dims: Dims, random_dims: Dims, nu0: float,
               lambda0_values: Sequence[float], ecm_cfg: EcmConfig) -> List[Tuple[Optional[FitResult], str]]:
    # one warm-started sweep along lambda0 for a fixed (nu0, dims)
    data = build_model(raw, fixed_dims, random_dims)
    results = []
    warm: Optional[ParameterState] = None
    for lambda0 in lambda0_values:
        cfg = ecm_cfg.with_spikes(lambda0, nu0)
        try:
            fit = run_ecm(data, cfg, init=warm)
            fit.bic = bic(data, fit)
        except FmselectError as exc:
            logger.warning(f"Fit failed at lambda0={lambda0}, nu0={nu0}: {exc}")
            results.append((None, f"{type(exc).__name__}: {exc}"))
            continue
        warm = fit.phi_hat
        results.append((fit, ""))
    return results


def _dims_key(dims) -> Tuple:
    return tuple(int(part) if isinstance(part, (int, np.integer)) else tuple(int(d) for d in part)
                 for part in dims)


def _selection_key(row: BicRow) -> Tuple:
    dims_size = sum(int(d) for d in row.d.split(";")) + sum(int(d) for d in row.d_prime.split(";"))
    return (row.bic, not row.converged, -row.lambda0, -row.nu0, dims_size)


def grid_search(raw: RawDataset, grid: TuningGrid, ecm_cfg: EcmConfig,
                fixed_dims: Dims = 5, random_dims: Dims = 5,
                workers: Optional[int] = 1) -> Tuple[FitResult, BicTable]:
    """Fit every grid point and keep the one with the smallest BIC.

    Each (basis dims, nu0) pair is an independent chain that sweeps lambda0 from
    largest to smallest, warm-starting every fit from the previous one. Chains run
    in a joblib worker pool and are merged back in grid order.

    Args:
        raw: Dataset to fit
        grid: Spike and basis-dimension grid
        ecm_cfg: ECM settings; its slab values are replaced by the grid's
        fixed_dims: Fixed basis dimensions when the grid has no ``basis_dims``
        random_dims: Random basis dimensions when the grid has no ``basis_dims``
        workers: Pool size; ``None`` or ``0`` uses every core

    Returns:
        Tuple of the best fit and the full BIC table
    """
    ecm_cfg = ecm_cfg.model_copy(update={
        "prior": ecm_cfg.prior.model_copy(update={"lambda1": grid.lambda1, "nu1": grid.nu1}),
    })
    dims_grid = [(fixed_dims, random_dims)] if grid.basis_dims is None else list(grid.basis_dims)
    lambda0_values = list(dict.fromkeys(grid.lambda0_grid))
    chains = list(dict.fromkeys((_dims_key(dims), nu0) for dims in dims_grid for nu0 in grid.nu0_grid))

    n_jobs = resolve_workers(workers, len(chains))
    logger.info(f"Grid search over {grid.size} points in {len(chains)} chains with {n_jobs} workers")
    outputs = joblib.Parallel(n_jobs=n_jobs)(
        joblib.delayed(_run_chain)(raw, dims[0], dims[1], nu0, lambda0_values, ecm_cfg)
        for dims, nu0 in chains
    )
    by_point: Dict[Tuple, Tuple[Optional[FitResult], str]] = {}
    for (dims, nu0), results in zip(chains, outputs):
        for lambda0, result in zip(lambda0_values, results):
            by_point[(dims, nu0, lambda0)] = result

    table = BicTable()
    fits: List[Optional[FitResult]] = []
    for dims in dims_grid:
        key_dims = _dims_key(dims)
        d_label, dp_label = (format_dims(np.atleast_1d(part)) for part in key_dims)
        for nu0 in grid.nu0_grid:
            for lambda0 in grid.lambda0_grid:
                fit, error = by_point[(key_dims, nu0, lambda0)]
                if fit is None:
                    row = BicRow(lambda0, nu0, d_label, dp_label, float("inf"), 0, 0, 0, False, error)
                else:
                    row = BicRow(
                        lambda0=lambda0, nu0=nu0, d=d_label, d_prime=dp_label,
                        bic=float(fit.bic), df=fit.degrees_of_freedom,
                        selected_fixed_count=len(fit.selected_fixed),
                        selected_random_count=len(fit.selected_random),
                        converged=fit.converged,
                    )
                table.rows.append(row)
                fits.append(fit)

    candidates = [(row, fit) for row, fit in zip(table.rows, fits) if fit is not None]
    if not candidates:
        diagnostics = [{"lambda0": r.lambda0, "nu0": r.nu0, "d": r.d, "d_prime": r.d_prime, "error": r.error}
                       for r in table.rows]
        raise TuningError(f"all {len(table)} grid fits failed", diagnostics=diagnostics)
    best_row, best = min(candidates, key=lambda item: _selection_key(item[0]))
    logger.info(
        f"Best grid point lambda0={best_row.lambda0}, nu0={best_row.nu0}, d={best_row.d}, "
        f"d'={best_row.d_prime}: BIC={best_row.bic:.4f}"
    )
    return best, table
