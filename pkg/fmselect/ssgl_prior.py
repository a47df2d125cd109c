"""
SSGL Prior Module
Spike-and-slab group-lasso density machinery: multivariate Laplace log-density,
slab probabilities, adaptive penalty weights and the log-posterior evaluator.
"""

import logging
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit, gammaln

from fmselect.exceptions import DomainError, ParameterError
from fmselect.model_core import expand_L

logger = logging.getLogger(__name__)

LOG_2 = np.log(2.0)
LOG_PI = np.log(np.pi)


class SsglConfig(BaseModel):
    """Spike/slab rates and hyperparameters of the SSGL priors.

    ``b0`` and ``b1`` default to the number of fixed and random covariates;
    resolve them against a dataset with :meth:`resolved`.
    """
    model_config = ConfigDict(extra="forbid", frozen=True)

    lambda0: float = Field(50.0, gt=0)
    lambda1: float = Field(1.0, gt=0)
    nu0: float = Field(20.0, gt=0)
    nu1: float = Field(1.0, gt=0)
    a0: float = Field(1.0, gt=0)
    b0: Optional[float] = Field(None, gt=0)
    a1: float = Field(1.0, gt=0)
    b1: Optional[float] = Field(None, gt=0)
    c0: float = Field(1.0, gt=0)
    d0: float = Field(1.0, gt=0)
    scale_random_spike: bool = True

    @model_validator(mode="after")
    def _spike_exceeds_slab(self):
        if self.lambda0 < self.lambda1:
            raise ValueError(f"lambda0={self.lambda0} must not be below lambda1={self.lambda1}")
        if self.nu0 < self.nu1:
            raise ValueError(f"nu0={self.nu0} must not be below nu1={self.nu1}")
        return self

    def resolved(self, p: int, q: int) -> "SsglConfig":
        """Copy with the beta hyperparameters ``b0 = p`` and ``b1 = q`` filled in."""
        return self.model_copy(update={
            "b0": float(p) if self.b0 is None else self.b0,
            "b1": float(q) if self.b1 is None else self.b1,
        })

    def random_spikes(self, group_sizes: Sequence[int]) -> np.ndarray:
        """Per-group random-effect spike, ``nu0 * sqrt(N_r)`` when scaling is on."""
        sizes = np.asarray(group_sizes, dtype=float)
        if self.scale_random_spike:
            return self.nu0 * np.sqrt(sizes)
        return np.full(sizes.size, self.nu0)


def log_psi(v: np.ndarray, lam: float) -> float:
    """Log-density of the multivariate Laplace ``Psi(v | lam)``.

    Args:
        v: Coefficient block of length g
        lam: Rate parameter

    Returns:
        float: ``g log(lam) - lam ||v|| - g log 2 - (g-1)/2 log(pi) - log Gamma((g+1)/2)``
    """
    if not lam > 0:
        raise ParameterError(f"Laplace rate must be positive, got {lam}")
    v = np.atleast_1d(np.asarray(v, dtype=float))
    g = v.size
    if g < 1:
        raise ParameterError("Laplace block must be non-empty")
    return float(
        g * np.log(lam) - lam * np.linalg.norm(v)
        - g * LOG_2 - 0.5 * (g - 1) * LOG_PI - gammaln(0.5 * (g + 1))
    )


def slab_prob(v: np.ndarray, mix: float, spike: float, slab: float) -> float:
    """Posterior probability that ``v`` came from the slab component."""
    if not 0.0 <= mix <= 1.0:
        raise ParameterError(f"mixing proportion {mix} outside [0, 1]")
    if mix == 0.0:
        return 0.0
    if mix == 1.0:
        return 1.0
    log_slab = np.log(mix) + log_psi(v, slab)
    log_spike = np.log1p(-mix) + log_psi(v, spike)
    return float(expit(log_slab - log_spike))


def slab_prob_fixed(gamma_k: np.ndarray, theta: float, cfg: SsglConfig) -> float:
    """Slab probability ``p_k`` of a fixed-effect block."""
    return slab_prob(gamma_k, theta, cfg.lambda0, cfg.lambda1)


def slab_prob_random(Ltilde_r: np.ndarray, theta_star: float, cfg: SsglConfig,
                     spike: Optional[float] = None) -> float:
    """Slab probability ``p_r*`` of a Cholesky row block.

    Args:
        Ltilde_r: Stacked entries of row block r
        theta_star: Random-effect mixing proportion
        cfg: Prior configuration
        spike: Group-specific spike; defaults to ``cfg.nu0``
    """
    return slab_prob(Ltilde_r, theta_star, cfg.nu0 if spike is None else spike, cfg.nu1)


def adaptive_weights(p_vec: np.ndarray, spike, slab: float) -> np.ndarray:
    """Convex combinations ``spike (1 - p) + slab p``."""
    p_vec = np.asarray(p_vec, dtype=float)
    return np.asarray(spike, dtype=float) * (1.0 - p_vec) + slab * p_vec


def log_mixture(v: np.ndarray, mix: float, spike: float, slab: float) -> float:
    """``log[(1 - mix) Psi(v | spike) + mix Psi(v | slab)]``."""
    return float(np.logaddexp(
        np.log1p(-mix) + log_psi(v, spike),
        np.log(mix) + log_psi(v, slab),
    ))


def random_component(data, Ltilde: np.ndarray, b: np.ndarray) -> List[np.ndarray]:
    """Per-cluster ``Z_i L b_i``."""
    L = expand_L(Ltilde, data.layout)
    return [Z_i @ (L @ b_i) for Z_i, b_i in zip(data.Z, b)]


def log_posterior(phi, data, cfg: SsglConfig, random_spikes: Optional[np.ndarray] = None) -> float:
    """Log posterior of the parameter state up to a fixed additive constant.

    Args:
        phi: ParameterState
        data: ModelData
        cfg: Prior configuration (``b0``/``b1`` resolved against the data)
        random_spikes: Per-group random spikes; defaults to ``cfg.random_spikes``

    Returns:
        float: Data term, ``b`` term, mixture terms, beta and inverse-gamma terms
    """
    if not phi.sigma2 > 0:
        raise DomainError(f"sigma2 must be positive, got {phi.sigma2}")
    for name, value in (("theta", phi.theta), ("theta_star", phi.theta_star)):
        if not 0.0 < value < 1.0:
            raise DomainError(f"{name} must lie in (0, 1), got {value}")
    cfg = cfg.resolved(data.p, data.q)
    if random_spikes is None:
        random_spikes = cfg.random_spikes(data.layout.group_sizes)

    sigma2 = phi.sigma2
    random_part = random_component(data, phi.Ltilde, phi.b)
    rss = sum(
        float(np.sum((Y_i - X_i @ phi.gamma - R_i) ** 2))
        for Y_i, X_i, R_i in zip(data.Y, data.X, random_part)
    )
    value = -0.5 * data.N * np.log(sigma2) - rss / (2.0 * sigma2)
    value -= 0.5 * float(np.sum(phi.b ** 2))

    for block in data.fixed_slices:
        value += log_mixture(phi.gamma[block], phi.theta, cfg.lambda0, cfg.lambda1)
    for block, spike in zip(data.random_slices, random_spikes):
        value += log_mixture(phi.Ltilde[block], phi.theta_star, spike, cfg.nu1)

    value += (cfg.a0 - 1.0) * np.log(phi.theta) + (cfg.b0 - 1.0) * np.log1p(-phi.theta)
    value += (cfg.a1 - 1.0) * np.log(phi.theta_star) + (cfg.b1 - 1.0) * np.log1p(-phi.theta_star)
    value -= 0.5 * (cfg.c0 + 2.0) * np.log(sigma2) + cfg.d0 / (2.0 * sigma2)
    return float(value)
