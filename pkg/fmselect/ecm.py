"""
ECM Module
Expectation Conditional Maximization for MAP estimation under spike-and-slab
group-lasso priors on the fixed-effect basis coefficients and on the row blocks
of the random-effect Cholesky factor.
"""

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import linalg

from fmselect.exceptions import AssemblyError, NumericError, ParameterError
from fmselect.group_lasso import GroupLassoProblem, solve
from fmselect.model_core import CholeskyLayout, ModelData, expand_L
from fmselect.spline_basis import BSplineBasis, make_cubic_basis
from fmselect.ssgl_prior import (
    SsglConfig,
    adaptive_weights,
    log_posterior,
    random_component,
    slab_prob_fixed,
    slab_prob_random,
)

logger = logging.getLogger(__name__)


class EcmConfig(BaseModel):
    """Stopping rules, inner-solver settings and numerical floors of the ECM loop."""
    model_config = ConfigDict(extra="forbid", frozen=True)

    prior: SsglConfig = Field(default_factory=SsglConfig)
    tol_gamma: float = Field(1e-5, gt=0)
    tol_ltilde: float = Field(1e-5, gt=0)
    max_iter: int = Field(500, ge=1)
    inner_tol: float = Field(1e-7, gt=0)
    inner_max_iter: int = Field(1000, ge=1)
    sigma2_floor: float = Field(1e-10, gt=0)
    theta_clamp: float = Field(1e-12, gt=0, lt=0.5)
    ridge_scale: float = Field(1e-4, ge=0)
    init_ltilde_diag: float = 0.1
    ascent_rtol: float = Field(1e-6, ge=0)

    def with_spikes(self, lambda0: float, nu0: float) -> "EcmConfig":
        return self.model_copy(update={"prior": self.prior.model_copy(update={"lambda0": lambda0, "nu0": nu0})})


@dataclass
class ParameterState:
    """The full parameter vector ``{gamma, L~, b, theta, theta*, sigma2}``."""
    gamma: np.ndarray
    Ltilde: np.ndarray
    b: np.ndarray
    theta: float
    theta_star: float
    sigma2: float

    def copy(self) -> "ParameterState":
        return ParameterState(
            gamma=self.gamma.copy(),
            Ltilde=self.Ltilde.copy(),
            b=self.b.copy(),
            theta=self.theta,
            theta_star=self.theta_star,
            sigma2=self.sigma2,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gamma": self.gamma.tolist(),
            "Ltilde": self.Ltilde.tolist(),
            "b": self.b.tolist(),
            "theta": float(self.theta),
            "theta_star": float(self.theta_star),
            "sigma2": float(self.sigma2),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "ParameterState":
        return cls(
            gamma=np.asarray(payload["gamma"], dtype=float),
            Ltilde=np.asarray(payload["Ltilde"], dtype=float),
            b=np.asarray(payload["b"], dtype=float).reshape(len(payload["b"]), -1),
            theta=float(payload["theta"]),
            theta_star=float(payload["theta_star"]),
            sigma2=float(payload["sigma2"]),
        )


@dataclass
class EStepState:
    """Slab probabilities and the adaptive weights derived from them."""
    p_fixed: np.ndarray
    p_random: np.ndarray
    lambda_star: np.ndarray
    nu_star: np.ndarray


@dataclass
class FitResult:
    """MAP estimates and diagnostics of one ECM run."""
    phi_hat: ParameterState
    fixed_basis_dims: List[int]
    random_basis_dims: List[int]
    fixed_names: List[str]
    random_names: List[str]
    prior: SsglConfig
    log_posterior_trace: List[float]
    iterations: int
    converged: bool
    domain: Tuple[float, float] = (0.0, 1.0)
    ascent_violations: int = 0
    inner_nonconverged: int = 0
    elapsed_seconds: float = 0.0
    bic: Optional[float] = None
    curve_grid: Optional[np.ndarray] = None
    layout: CholeskyLayout = field(init=False, repr=False)
    fixed_slices: List[slice] = field(init=False, repr=False)

    def __post_init__(self):
        self.layout = CholeskyLayout(self.random_basis_dims)
        starts = np.concatenate([[0], np.cumsum(self.fixed_basis_dims)]).astype(int)
        self.fixed_slices = [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]

    @property
    def selected_fixed(self) -> List[int]:
        return [k for k, s in enumerate(self.fixed_slices) if np.linalg.norm(self.phi_hat.gamma[s]) > 0.0]

    @property
    def selected_random(self) -> List[int]:
        return [r for r, s in enumerate(self.layout.block_slices)
                if np.linalg.norm(self.phi_hat.Ltilde[s]) > 0.0]

    @property
    def L_hat(self) -> np.ndarray:
        return expand_L(self.phi_hat.Ltilde, self.layout)

    @property
    def D_hat(self) -> np.ndarray:
        L = self.L_hat
        return L @ L.T

    @property
    def eta_hat(self) -> np.ndarray:
        """Predicted random coefficients ``eta_i = L b_i``, one row per cluster."""
        return self.phi_hat.b @ self.L_hat.T

    @property
    def degrees_of_freedom(self) -> int:
        return int(np.count_nonzero(self.phi_hat.gamma) + np.count_nonzero(self.phi_hat.Ltilde))

    def fixed_bases(self) -> List[BSplineBasis]:
        return [make_cubic_basis(d, self.domain) for d in self.fixed_basis_dims]

    def random_bases(self) -> List[BSplineBasis]:
        return [make_cubic_basis(d, self.domain) for d in self.random_basis_dims]

    def beta_curves(self, grid: np.ndarray) -> np.ndarray:
        """Fixed-effect functions on a grid, shape (p, len(grid))."""
        return np.vstack([
            basis.evaluate_matrix(grid) @ self.phi_hat.gamma[s]
            for basis, s in zip(self.fixed_bases(), self.fixed_slices)
        ])

    def random_curves(self, grid: np.ndarray) -> np.ndarray:
        """Cluster-specific random functions on a grid, shape (n, q, len(grid))."""
        eta = self.eta_hat
        offsets = np.concatenate([[0], np.cumsum(self.random_basis_dims)]).astype(int)
        curves = [
            eta[:, offsets[r]:offsets[r + 1]] @ basis.evaluate_matrix(grid).T
            for r, basis in enumerate(self.random_bases())
        ]
        return np.stack(curves, axis=1)

    def predict_cluster_means(self, data: ModelData) -> List[np.ndarray]:
        """Fitted curves ``X_i gamma + Z_i L b_i`` reshaped to (J_i, m)."""
        random_part = random_component(data, self.phi_hat.Ltilde, self.phi_hat.b)
        return [
            (X_i @ self.phi_hat.gamma + R_i).reshape(J_i, -1)
            for X_i, R_i, J_i in zip(data.X, random_part, data.replicate_counts)
        ]

    def summary(self) -> Dict[str, Any]:
        return {
            "lambda0": self.prior.lambda0,
            "nu0": self.prior.nu0,
            "selected_fixed": self.selected_fixed,
            "selected_random": self.selected_random,
            "iterations": self.iterations,
            "converged": self.converged,
            "sigma2": self.phi_hat.sigma2,
            "bic": self.bic,
        }

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            "fixed_names": list(self.fixed_names),
            "random_names": list(self.random_names),
            "fixed_basis_dims": [int(d) for d in self.fixed_basis_dims],
            "random_basis_dims": [int(d) for d in self.random_basis_dims],
            "domain": [float(self.domain[0]), float(self.domain[1])],
            "prior": self.prior.model_dump(),
            "selected_fixed": self.selected_fixed,
            "selected_random": self.selected_random,
            "phi_hat": self.phi_hat.to_dict(),
            "D_hat": self.D_hat.tolist(),
            "log_posterior_trace": [float(v) for v in self.log_posterior_trace],
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "ascent_violations": int(self.ascent_violations),
            "inner_nonconverged": int(self.inner_nonconverged),
            "bic": None if self.bic is None else float(self.bic),
        }
        if self.curve_grid is not None:
            curves = self.beta_curves(self.curve_grid)
            payload["beta_curves"] = {
                "grid": [float(s) for s in self.curve_grid],
                "values": {name: curves[k].tolist() for k, name in enumerate(self.fixed_names)},
            }
        return payload

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "FitResult":
        curves = payload.get("beta_curves")
        return cls(
            phi_hat=ParameterState.from_dict(payload["phi_hat"]),
            fixed_basis_dims=list(payload["fixed_basis_dims"]),
            random_basis_dims=list(payload["random_basis_dims"]),
            fixed_names=list(payload["fixed_names"]),
            random_names=list(payload["random_names"]),
            prior=SsglConfig(**payload["prior"]),
            log_posterior_trace=list(payload["log_posterior_trace"]),
            iterations=int(payload["iterations"]),
            converged=bool(payload["converged"]),
            domain=tuple(payload.get("domain", (0.0, 1.0))),
            ascent_violations=int(payload.get("ascent_violations", 0)),
            inner_nonconverged=int(payload.get("inner_nonconverged", 0)),
            bic=payload.get("bic"),
            curve_grid=None if curves is None else np.asarray(curves["grid"], dtype=float),
        )


def _clamp(value: float, eps: float) -> float:
    return float(min(max(value, eps), 1.0 - eps))


def _relative_change(new: np.ndarray, old: np.ndarray) -> float:
    change = float(np.sum((new - old) ** 2))
    base = float(np.sum(old ** 2))
    return change / base if base > 0.0 else change


def initialize(data: ModelData, cfg: EcmConfig) -> ParameterState:
    """Starting values: ridge fit of the fixed-only model, ``L = 0.1 I``, ``b = 0``.

    Args:
        data: Assembled model data
        cfg: ECM configuration

    Returns:
        ParameterState: Initial state with ``theta = theta* = 0.5``
    """
    XtX = data.XtX
    XtY = sum(X_i.T @ Y_i for X_i, Y_i in zip(data.X, data.Y))
    ridge = cfg.ridge_scale * float(np.trace(XtX)) / data.n_fixed
    if ridge > 0.0:
        gamma = linalg.cho_solve(linalg.cho_factor(XtX + ridge * np.eye(data.n_fixed)), XtY)
    else:
        gamma = np.linalg.lstsq(XtX, XtY, rcond=None)[0]
    rss = sum(float(np.sum((Y_i - X_i @ gamma) ** 2)) for X_i, Y_i in zip(data.X, data.Y))
    sigma2 = max(rss / data.N, cfg.sigma2_floor)

    Ltilde = np.zeros(data.layout.length)
    Ltilde[data.layout.diagonal_indices] = cfg.init_ltilde_diag
    return ParameterState(
        gamma=gamma,
        Ltilde=Ltilde,
        b=np.zeros((data.n, data.n_random)),
        theta=0.5,
        theta_star=0.5,
        sigma2=sigma2,
    )


def e_step(phi: ParameterState, data: ModelData, prior: SsglConfig) -> EStepState:
    """Slab probabilities of every block and the adaptive penalty weights."""
    spikes = prior.random_spikes(data.layout.group_sizes)
    p_fixed = np.array([slab_prob_fixed(phi.gamma[s], phi.theta, prior) for s in data.fixed_slices])
    p_random = np.array([
        slab_prob_random(phi.Ltilde[s], phi.theta_star, prior, spike)
        for s, spike in zip(data.random_slices, spikes)
    ])
    return EStepState(
        p_fixed=p_fixed,
        p_random=p_random,
        lambda_star=adaptive_weights(p_fixed, prior.lambda0, prior.lambda1),
        nu_star=adaptive_weights(p_random, spikes, prior.nu1),
    )


def cm_step1(phi: ParameterState, estep: EStepState, data: ModelData,
             cfg: EcmConfig) -> Tuple[float, float, np.ndarray]:
    """Closed-form updates of ``theta``, ``theta*`` and every ``b_i``.

    Returns:
        Tuple of (theta, theta_star, b) with ``b`` of shape (n, d'q)
    """
    prior = cfg.prior.resolved(data.p, data.q)
    denom_fixed = prior.a0 + prior.b0 + data.p - 2.0
    denom_random = prior.a1 + prior.b1 + data.q - 2.0
    if denom_fixed <= 0 or denom_random <= 0:
        raise ParameterError("beta hyperparameters leave the mixing-proportion update undefined")
    theta = _clamp((prior.a0 - 1.0 + float(np.sum(estep.p_fixed))) / denom_fixed, cfg.theta_clamp)
    theta_star = _clamp((prior.a1 - 1.0 + float(np.sum(estep.p_random))) / denom_random, cfg.theta_clamp)

    L = expand_L(phi.Ltilde, data.layout)
    sigma2 = max(phi.sigma2, cfg.sigma2_floor)
    identity = np.eye(data.n_random)
    b = np.empty((data.n, data.n_random))
    for i, (Y_i, X_i, Z_i, ZtZ_i) in enumerate(zip(data.Y, data.X, data.Z, data.ZtZ)):
        system = L.T @ ZtZ_i @ L + sigma2 * identity
        rhs = L.T @ (Z_i.T @ (Y_i - X_i @ phi.gamma))
        try:
            b[i] = linalg.cho_solve(linalg.cho_factor(system, lower=True), rhs)
        except linalg.LinAlgError as exc:
            raise NumericError(f"b update for cluster {i} is not positive definite", state=phi) from exc
    return theta, theta_star, b


def fixed_subproblem(phi: ParameterState, estep: EStepState, data: ModelData) -> GroupLassoProblem:
    """Group-lasso problem for ``gamma`` given ``b`` and ``L~``."""
    random_part = random_component(data, phi.Ltilde, phi.b)
    targets = [Y_i - R_i for Y_i, R_i in zip(data.Y, random_part)]
    moment = sum(X_i.T @ t for X_i, t in zip(data.X, targets))
    response_sq = sum(float(t @ t) for t in targets)
    return GroupLassoProblem.from_gram(
        data.XtX, moment, response_sq,
        groups=data.fixed_slices,
        weights=2.0 * estep.lambda_star * phi.sigma2,
    )


def random_subproblem(phi: ParameterState, estep: EStepState, data: ModelData,
                      gamma: np.ndarray) -> GroupLassoProblem:
    """Group-lasso problem for ``L~`` given ``b`` and the updated ``gamma``."""
    layout = data.layout
    rows, cols = layout.rows, layout.cols
    gram = np.zeros((layout.length, layout.length))
    moment = np.zeros(layout.length)
    response_sq = 0.0
    for Y_i, X_i, Z_i, ZtZ_i, b_i in zip(data.Y, data.X, data.Z, data.ZtZ, phi.b):
        target = Y_i - X_i @ gamma
        b_cols = b_i[cols]
        gram += ZtZ_i[np.ix_(rows, rows)] * np.outer(b_cols, b_cols)
        moment += (Z_i.T @ target)[rows] * b_cols
        response_sq += float(target @ target)
    return GroupLassoProblem.from_gram(
        gram, moment, response_sq,
        groups=layout.block_slices,
        weights=2.0 * estep.nu_star * phi.sigma2,
    )


def cm_step2(phi: ParameterState, estep: EStepState, data: ModelData,
             cfg: EcmConfig) -> Tuple[np.ndarray, np.ndarray, float, int]:
    """Group-lasso updates of ``gamma`` then ``L~``, then the closed-form ``sigma2``.

    Args:
        phi: State carrying the CM-step-1 values of theta, theta* and b
        estep: Current E-step
        data: Assembled model data
        cfg: ECM configuration

    Returns:
        Tuple of (gamma, Ltilde, sigma2, number of non-converged inner solves)
    """
    prior = cfg.prior.resolved(data.p, data.q)
    nonconverged = 0

    gamma_fit = solve(fixed_subproblem(phi, estep, data), init=phi.gamma,
                      tol=cfg.inner_tol, max_iter=cfg.inner_max_iter)
    nonconverged += int(not gamma_fit.converged)
    gamma = gamma_fit.coefficients

    ltilde_fit = solve(random_subproblem(phi, estep, data, gamma), init=phi.Ltilde,
                       tol=cfg.inner_tol, max_iter=cfg.inner_max_iter)
    nonconverged += int(not ltilde_fit.converged)
    Ltilde = ltilde_fit.coefficients

    random_part = random_component(data, Ltilde, phi.b)
    rss = sum(
        float(np.sum((Y_i - X_i @ gamma - R_i) ** 2))
        for Y_i, X_i, R_i in zip(data.Y, data.X, random_part)
    )
    sigma2 = max((rss + prior.d0) / (data.N + prior.c0 + 2.0), cfg.sigma2_floor)
    return gamma, Ltilde, sigma2, nonconverged


def _check_state(phi: ParameterState, data: ModelData):
    if phi.gamma.shape != (data.n_fixed,) or phi.Ltilde.shape != (data.layout.length,):
        raise AssemblyError("initial state does not match the assembled design")
    if phi.b.shape != (data.n, data.n_random):
        raise AssemblyError(f"initial b has shape {phi.b.shape}, expected {(data.n, data.n_random)}")


def run_ecm(data: ModelData, cfg: EcmConfig, init: Optional[ParameterState] = None) -> FitResult:
    """Iterate E-step, CM-step 1 and CM-step 2 until both relative changes settle.

    Args:
        data: Assembled model data
        cfg: ECM configuration with the prior settings
        init: Warm start; :func:`initialize` is used when omitted

    Returns:
        FitResult: MAP estimates, log-posterior trace and convergence flags
    """
    started = time.perf_counter()
    prior = cfg.prior.resolved(data.p, data.q)
    phi = initialize(data, cfg) if init is None else init.copy()
    _check_state(phi, data)
    phi.theta = _clamp(phi.theta, cfg.theta_clamp)
    phi.theta_star = _clamp(phi.theta_star, cfg.theta_clamp)

    current = log_posterior(phi, data, prior)
    if not np.isfinite(current):
        raise NumericError("initial log posterior is not finite", state=phi)
    trace = [current]
    violations = 0
    inner_nonconverged = 0
    converged = False
    iteration = 0

    for iteration in range(1, cfg.max_iter + 1):
        estep = e_step(phi, data, prior)
        theta, theta_star, b = cm_step1(phi, estep, data, cfg)
        mid = replace(phi, theta=theta, theta_star=theta_star, b=b)
        gamma, Ltilde, sigma2, nonconverged = cm_step2(mid, estep, data, cfg)
        inner_nonconverged += nonconverged
        updated = ParameterState(gamma=gamma, Ltilde=Ltilde, b=b,
                                 theta=theta, theta_star=theta_star, sigma2=sigma2)

        value = log_posterior(updated, data, prior)
        if not np.isfinite(value):
            raise NumericError(f"log posterior became non-finite at iteration {iteration}", state=updated)
        if value < current - cfg.ascent_rtol * abs(current):
            violations += 1
            logger.warning(f"Log posterior decreased at iteration {iteration}: {current:.10g} -> {value:.10g}")
        trace.append(value)

        diff_gamma = _relative_change(gamma, phi.gamma)
        diff_ltilde = _relative_change(Ltilde, phi.Ltilde)
        logger.debug(
            f"ECM iteration {iteration}: log posterior={value:.6f}, diff_gamma={diff_gamma:.3e}, "
            f"diff_ltilde={diff_ltilde:.3e}, sigma2={sigma2:.5g}"
        )
        phi, current = updated, value
        if diff_gamma <= cfg.tol_gamma and diff_ltilde <= cfg.tol_ltilde:
            converged = True
            break

    if not converged:
        logger.warning(f"ECM reached max_iter={cfg.max_iter} without converging "
                       f"(lambda0={prior.lambda0}, nu0={prior.nu0})")

    result = FitResult(
        phi_hat=phi,
        fixed_basis_dims=data.fixed_group_sizes,
        random_basis_dims=list(data.layout.block_dims),
        fixed_names=list(data.fixed_names),
        random_names=list(data.random_names),
        prior=prior,
        log_posterior_trace=trace,
        iterations=iteration,
        converged=converged,
        domain=data.fixed_bases[0].domain,
        ascent_violations=violations,
        inner_nonconverged=inner_nonconverged,
        elapsed_seconds=time.perf_counter() - started,
    )
    logger.info(
        f"ECM finished in {iteration} iterations (converged={converged}): "
        f"fixed={result.selected_fixed}, random={result.selected_random}"
    )
    return result
