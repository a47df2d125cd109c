"""
Simulation Module
Seeded generators for the two benchmark scenarios: true coefficient functions,
cluster-level random functions and SNR-calibrated random-effect and noise scales.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.stats import norm

from fmselect.exceptions import DomainError, GenerationError
from fmselect.model_core import RawDataset

logger = logging.getLogger(__name__)

COVARIATE_SD = 2.0
NORMAL_MEAN = 0.6
NORMAL_SD = 0.15
SCENARIO_DIMS = {"A": (8, 8), "B": (11, 8)}
TRUE_FIXED_SUPPORT = [0, 1, 2, 3, 4]
TRUE_RANDOM_SUPPORT = [0, 3]

# sds of (c, d) for the random intercept and (c, d, e, f) for the fourth random slope,
# in units of sigma_B
INTERCEPT_SDS = np.array([3.0, 1.5])
SLOPE_SDS = np.array([1.5, 0.75, 0.5, 0.25])

# substream roles
ROLE_FIXED_COVARIATES = 0
ROLE_RANDOM_COVARIATES = 1
ROLE_RANDOM_EFFECTS = 2
ROLE_NOISE = 3


class ScenarioSpec(BaseModel):
    """Settings of one simulated dataset.

    Scenario A has p = q = 8 with ``Z = X``; scenario B has p = 11, q = 8 and
    random covariates drawn independently of the fixed ones.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    scenario: Literal["A", "B"] = "A"
    n: int = Field(25, ge=2)
    J: int = Field(10, ge=1)
    m: int = Field(10, ge=2)
    snr_b: float = Field(0.5, gt=0)
    snr_eps: float = Field(4.0, gt=0)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    replication: int = Field(0, ge=0)

    @property
    def p(self) -> int:
        return SCENARIO_DIMS[self.scenario][0]

    @property
    def q(self) -> int:
        return SCENARIO_DIMS[self.scenario][1]

    def for_replication(self, replication: int) -> "ScenarioSpec":
        return self.model_copy(update={"replication": int(replication)})


@dataclass
class GroundTruth:
    """Data-generating truth of a simulated dataset."""
    scenario: str
    p: int
    q: int
    sigma_b: float
    sigma_eps: float
    snr_b_realized: float
    snr_eps_realized: float
    random_coefficients: np.ndarray
    true_fixed_support: List[int] = field(default_factory=lambda: list(TRUE_FIXED_SUPPORT))
    true_random_support: List[int] = field(default_factory=lambda: list(TRUE_RANDOM_SUPPORT))

    def beta(self, k: int, s) -> np.ndarray:
        return true_beta(self.scenario, k, s)

    def beta_curves(self, grid: np.ndarray) -> np.ndarray:
        """Every true fixed-effect function on a grid, shape (p, len(grid))."""
        return np.vstack([true_beta(self.scenario, k, grid) for k in range(self.p)])

    def random_curves(self, grid: np.ndarray) -> np.ndarray:
        """Realized ``u_ir(s)``, shape (n, q, len(grid)); zero outside the true support."""
        grid = np.asarray(grid, dtype=float)
        curves = np.zeros((self.random_coefficients.shape[0], self.q, grid.size))
        intercept_basis, slope_basis = _random_effect_basis(grid)
        curves[:, 0, :] = self.random_coefficients[:, :2] @ intercept_basis
        curves[:, 3, :] = self.random_coefficients[:, 2:] @ slope_basis
        return curves

    def to_dict(self) -> Dict[str, Any]:
        return {
            "scenario": self.scenario,
            "p": self.p,
            "q": self.q,
            "sigma_b": float(self.sigma_b),
            "sigma_eps": float(self.sigma_eps),
            "snr_b_realized": float(self.snr_b_realized),
            "snr_eps_realized": float(self.snr_eps_realized),
            "true_fixed_support": list(self.true_fixed_support),
            "true_random_support": list(self.true_random_support),
            "random_coefficients": self.random_coefficients.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "GroundTruth":
        return cls(
            scenario=payload["scenario"],
            p=int(payload["p"]),
            q=int(payload["q"]),
            sigma_b=float(payload["sigma_b"]),
            sigma_eps=float(payload["sigma_eps"]),
            snr_b_realized=float(payload["snr_b_realized"]),
            snr_eps_realized=float(payload["snr_eps_realized"]),
            random_coefficients=np.asarray(payload["random_coefficients"], dtype=float),
            true_fixed_support=list(payload["true_fixed_support"]),
            true_random_support=list(payload["true_random_support"]),
        )


def true_beta(scenario: str, k: int, s):
    """True fixed-effect function ``beta_k`` at ``s`` (``k`` is 0-based, 0 = intercept).

    Args:
        scenario: ``"A"`` or ``"B"``
        k: Coefficient index below the scenario's p
        s: Point or array of points in [0, 1]

    Returns:
        Function value(s), same shape as ``s``
    """
    if scenario not in SCENARIO_DIMS:
        raise DomainError(f"unknown scenario '{scenario}'")
    p = SCENARIO_DIMS[scenario][0]
    if not 0 <= k < p:
        raise DomainError(f"coefficient index {k} outside 0..{p - 1} for scenario {scenario}")
    s = np.asarray(s, dtype=float)
    two_pi_s = 2.0 * np.pi * s
    if k == 0:
        return 8.0 * np.sin(two_pi_s)
    if k == 1:
        return 2.0 * norm.pdf(s, NORMAL_MEAN, NORMAL_SD)
    if k == 2:
        return 2.5 * norm.pdf(s, NORMAL_MEAN, NORMAL_SD)
    if k == 3:
        return 3.0 * np.cos(two_pi_s)
    if k == 4:
        return 5.0 * np.sin(two_pi_s) + 5.0 * np.cos(two_pi_s)
    return np.zeros_like(s)


def equispaced_grid(m: int) -> np.ndarray:
    """``s_t = (t - 1) / (m - 1)`` for ``t = 1..m``."""
    return np.arange(m, dtype=float) / (m - 1)


def _random_effect_basis(grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    two_pi_s, pi_s = 2.0 * np.pi * grid, np.pi * grid
    intercept = np.vstack([np.sin(two_pi_s), np.cos(two_pi_s)])
    slope = np.vstack([np.sin(two_pi_s), np.cos(two_pi_s), np.sin(pi_s), np.cos(pi_s)])
    return intercept, slope


def substream(seed: int, replication: int, cluster: int, replicate: int, role: int) -> np.random.Generator:
    """Philox generator keyed by (replication, cluster, replicate, role).

    Keys are independent of n and J, so a larger study reproduces every draw of a
    smaller one with the same seed.
    """
    sequence = np.random.SeedSequence(entropy=seed, spawn_key=(replication, cluster, replicate, role))
    return np.random.Generator(np.random.Philox(sequence))


def _draw_covariates(spec: ScenarioSpec, cluster: int, count: int, role: int) -> np.ndarray:
    block = np.empty((spec.J, count))
    block[:, 0] = 1.0
    for j in range(spec.J):
        rng = substream(spec.seed, spec.replication, cluster, j, role)
        block[j, 1:] = rng.normal(0.0, COVARIATE_SD, size=count - 1)
    return block


def generate(spec: ScenarioSpec) -> Tuple[RawDataset, GroundTruth]:
    """Simulate one dataset with SNR-calibrated random-effect and noise scales.

    Random coefficients are drawn at unit ``sigma_B``; ``sigma_B`` is then set so
    that sd(fixed part) / sd(random part) equals ``snr_b``, and ``sigma_eps`` so that
    sd(linear predictor) / sigma_eps equals ``snr_eps``. Standard deviations are
    population sds over every (cluster, replicate, grid point).

    Args:
        spec: Scenario settings

    Returns:
        Tuple of the dataset and its ground truth
    """
    grid = equispaced_grid(spec.m)
    p, q = spec.p, spec.q
    betas = np.vstack([true_beta(spec.scenario, k, grid) for k in range(p)])
    intercept_basis, slope_basis = _random_effect_basis(grid)

    fixed_covariates, random_covariates = [], []
    unit_coefficients = np.empty((spec.n, INTERCEPT_SDS.size + SLOPE_SDS.size))
    fixed_parts, random_parts = [], []
    for i in range(spec.n):
        X_i = _draw_covariates(spec, i, p, ROLE_FIXED_COVARIATES)
        Z_i = X_i.copy() if spec.scenario == "A" else _draw_covariates(spec, i, q, ROLE_RANDOM_COVARIATES)
        rng = substream(spec.seed, spec.replication, i, 0, ROLE_RANDOM_EFFECTS)
        unit_coefficients[i] = rng.standard_normal(unit_coefficients.shape[1]) * np.concatenate(
            [INTERCEPT_SDS, SLOPE_SDS])
        u_intercept = unit_coefficients[i, :2] @ intercept_basis
        u_slope = unit_coefficients[i, 2:] @ slope_basis
        fixed_covariates.append(X_i)
        random_covariates.append(Z_i)
        fixed_parts.append(X_i @ betas)
        random_parts.append(np.outer(Z_i[:, 0], u_intercept) + np.outer(Z_i[:, 3], u_slope))

    sd_fixed = float(np.std(np.concatenate(fixed_parts)))
    sd_random_unit = float(np.std(np.concatenate(random_parts)))
    if sd_fixed == 0.0 or sd_random_unit == 0.0:
        raise GenerationError("fixed or random contribution has zero spread; cannot calibrate SNR_B")
    sigma_b = sd_fixed / (spec.snr_b * sd_random_unit)

    predictors = [F + sigma_b * R for F, R in zip(fixed_parts, random_parts)]
    sd_predictor = float(np.std(np.concatenate(predictors)))
    if sd_predictor == 0.0:
        raise GenerationError("linear predictor has zero spread; cannot calibrate SNR_eps")
    sigma_eps = 0.0 if np.isinf(spec.snr_eps) else sd_predictor / spec.snr_eps

    responses = []
    for i, eta in enumerate(predictors):
        if sigma_eps == 0.0:
            responses.append(eta.copy())
            continue
        noise = np.vstack([
            substream(spec.seed, spec.replication, i, j, ROLE_NOISE).standard_normal(spec.m)
            for j in range(spec.J)
        ])
        responses.append(eta + sigma_eps * noise)

    sd_random = float(np.std(sigma_b * np.concatenate(random_parts)))
    truth = GroundTruth(
        scenario=spec.scenario,
        p=p,
        q=q,
        sigma_b=sigma_b,
        sigma_eps=sigma_eps,
        snr_b_realized=sd_fixed / sd_random,
        snr_eps_realized=float("inf") if sigma_eps == 0.0 else sd_predictor / sigma_eps,
        random_coefficients=sigma_b * unit_coefficients,
    )
    raw = RawDataset(
        grid=grid,
        responses=responses,
        fixed_covariates=fixed_covariates,
        random_covariates=random_covariates,
    )
    logger.debug(
        f"Generated scenario {spec.scenario} (n={spec.n}, J={spec.J}, m={spec.m}, "
        f"replication={spec.replication}): sigma_B={sigma_b:.5g}, sigma_eps={sigma_eps:.5g}"
    )
    return raw, truth
