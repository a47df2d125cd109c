"""
Group Lasso Module
Block coordinate descent for weighted group-lasso problems

    minimize ||y - A beta||^2 + sum_g w_g ||beta_g||_2

over contiguous coefficient blocks of arbitrary sizes, with exact zeros on
deselected blocks.
"""

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np
from scipy import linalg
from scipy.optimize import brentq

from fmselect.exceptions import AssemblyError, NumericError

logger = logging.getLogger(__name__)

MAX_ITER = 1000
INNER_MAX_ITER = 5000
ORTHOGONAL_ATOL = 1e-10


def _as_slices(groups: Sequence[Union[int, slice]], n_coef: int) -> List[slice]:
    slices, start = [], 0
    for group in groups:
        if isinstance(group, slice):
            block = slice(int(group.start), int(group.stop))
        else:
            block = slice(start, start + int(group))
        if block.start != start or block.stop <= block.start:
            raise AssemblyError("groups must be non-empty contiguous blocks covering all columns in order")
        slices.append(block)
        start = block.stop
    if start != n_coef:
        raise AssemblyError(f"groups cover {start} columns, problem has {n_coef}")
    return slices


@dataclass
class GroupLassoProblem:
    """Weighted group-lasso problem, held in Gram form.

    Either ``design``/``response`` or ``gram``/``moment``/``response_sq`` must be
    given; the Gram form (``A^T A``, ``A^T y``, ``y^T y``) is what the solver uses.
    """
    groups: Sequence[Union[int, slice]]
    weights: np.ndarray
    response: Optional[np.ndarray] = None
    design: Optional[np.ndarray] = None
    gram: Optional[np.ndarray] = None
    moment: Optional[np.ndarray] = None
    response_sq: Optional[float] = None
    blocks: List[slice] = field(init=False)

    def __post_init__(self):
        if self.gram is None:
            if self.design is None or self.response is None:
                raise AssemblyError("need either a design and response or a Gram matrix and moment")
            A = np.asarray(self.design, dtype=float)
            y = np.asarray(self.response, dtype=float).ravel()
            if A.ndim != 2 or A.shape[0] != y.size:
                raise AssemblyError(f"design {A.shape} does not match response of length {y.size}")
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
                raise NumericError("group-lasso design or response contains non-finite values")
            self.design, self.response = A, y
            self.gram = A.T @ A
            self.moment = A.T @ y
            self.response_sq = float(y @ y)
        self.gram = np.asarray(self.gram, dtype=float)
        self.moment = np.asarray(self.moment, dtype=float).ravel()
        self.response_sq = float(self.response_sq or 0.0)
        if self.gram.shape != (self.moment.size, self.moment.size):
            raise AssemblyError(f"Gram matrix {self.gram.shape} does not match moment of length {self.moment.size}")
        if not (np.all(np.isfinite(self.gram)) and np.all(np.isfinite(self.moment))):
            raise NumericError("group-lasso Gram matrix or moment contains non-finite values")

        self.blocks = _as_slices(self.groups, self.moment.size)
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        if self.weights.size != len(self.blocks):
            raise AssemblyError(f"{self.weights.size} weights for {len(self.blocks)} groups")
        if np.any(self.weights < 0) or not np.all(np.isfinite(self.weights)):
            raise AssemblyError("group weights must be finite and non-negative")

    @classmethod
    def from_gram(cls, gram: np.ndarray, moment: np.ndarray, response_sq: float,
                  groups: Sequence[Union[int, slice]], weights: np.ndarray) -> "GroupLassoProblem":
        return cls(groups=groups, weights=weights, gram=gram, moment=moment, response_sq=response_sq)

    @property
    def n_coef(self) -> int:
        return self.moment.size

    def objective(self, beta: np.ndarray) -> float:
        """``||y - A beta||^2 + sum_g w_g ||beta_g||``."""
        quad = self.response_sq - 2.0 * float(beta @ self.moment) + float(beta @ self.gram @ beta)
        penalty = sum(w * np.linalg.norm(beta[b]) for w, b in zip(self.weights, self.blocks))
        return float(quad + penalty)


@dataclass
class GroupLassoSolution:
    """Result of :func:`solve`."""
    coefficients: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float
    objective_trace: List[float] = field(default_factory=list)
    monotonicity_violations: int = 0


@dataclass
class BlockStatus:
    index: int
    active: bool
    violation: float


@dataclass
class KktReport:
    """Optimality certificate for a candidate solution."""
    max_violation: float
    blocks: List[BlockStatus]

    @property
    def satisfied(self) -> bool:
        return all(status.violation == 0.0 for status in self.blocks)


class _BlockSystem:
    """Spectral data of one diagonal Gram block, computed once per solve."""

    def __init__(self, gram_block: np.ndarray):
        self.gram = gram_block
        size = gram_block.shape[0]
        self.eigvals, self.eigvecs = linalg.eigh(gram_block)
        self.eigvals = np.clip(self.eigvals, 0.0, None)
        self.lipschitz = float(self.eigvals[-1])
        scale = float(np.trace(gram_block)) / size
        self.orthogonal = scale > 0 and np.allclose(
            gram_block, scale * np.eye(size), rtol=0.0, atol=ORTHOGONAL_ATOL * scale
        )
        self.scale = scale
        self.singular = self.eigvals[0] <= 1e-12 * max(self.lipschitz, 1e-300)


def _block_minimize(system: _BlockSystem, z: np.ndarray, w: float, current: np.ndarray,
                    tol: float) -> np.ndarray:
    """Minimize ``b^T G b - 2 z^T b + w ||b||`` over one block."""
    z_norm = float(np.linalg.norm(z))
    if z_norm <= 0.5 * w:
        return np.zeros_like(z)
    if system.lipschitz == 0.0:
        raise NumericError(
            f"group-lasso block has a zero Gram matrix but ||z|| = {z_norm:.6g} exceeds w/2 = {0.5 * w:.6g}; "
            "the block objective is unbounded"
        )
    if system.orthogonal:
        return (1.0 - 0.5 * w / z_norm) * z / system.scale
    if not system.singular:
        lam, Q = system.eigvals, system.eigvecs
        z_hat = Q.T @ z
        if w == 0.0:
            return Q @ (z_hat / lam)
        # ||b|| = t solves sum z_hat^2 / (lam t + w/2)^2 = 1
        half_w = 0.5 * w

        def norm_gap(t):
            return float(np.sum((z_hat / (lam * t + half_w)) ** 2)) - 1.0

        t_hi = z_norm / lam[0]
        t = brentq(norm_gap, 0.0, t_hi, xtol=1e-15 * max(t_hi, 1.0), rtol=4 * np.finfo(float).eps)
        return Q @ (z_hat * t / (lam * t + half_w))

    # rank-deficient block: proximal gradient with step 1/l_g
    beta = current.copy()
    step = 1.0 / system.lipschitz
    threshold = 0.5 * w * step
    for _ in range(INNER_MAX_ITER):
        candidate = beta - step * (system.gram @ beta - z)
        c_norm = np.linalg.norm(candidate)
        if c_norm <= threshold:
            candidate = np.zeros_like(candidate)
        else:
            candidate *= 1.0 - threshold / c_norm
        delta = np.max(np.abs(candidate - beta)) if beta.size else 0.0
        beta = candidate
        if delta <= tol * max(1.0, np.max(np.abs(beta))):
            break
    return beta


def solve(problem: GroupLassoProblem, init: Optional[np.ndarray] = None,
          tol: float = 1e-7, max_iter: int = MAX_ITER) -> GroupLassoSolution:
    """Block coordinate descent over groups in ascending order.

    Args:
        problem: Group-lasso problem
        init: Warm start; zeros when omitted
        tol: Stop when the largest coefficient change falls below
            ``tol * max(1, max |beta|)``
        max_iter: Maximum number of full sweeps

    Returns:
        GroupLassoSolution: Best iterate with the non-convergence flag when the
        sweep budget runs out
    """
    if not tol > 0:
        raise AssemblyError(f"tolerance must be positive, got {tol}")
    G, moment = problem.gram, problem.moment
    beta = np.zeros(problem.n_coef) if init is None else np.array(init, dtype=float).ravel()
    if beta.size != problem.n_coef or not np.all(np.isfinite(beta)):
        raise NumericError("warm start has the wrong length or non-finite entries")

    systems = [_BlockSystem(G[b, b]) for b in problem.blocks]
    G_beta = G @ beta
    objective = problem.objective(beta)
    trace = [objective]
    violations = 0
    converged = False
    iterations = 0

    for iterations in range(1, max_iter + 1):
        previous = beta.copy()
        for block, system, w in zip(problem.blocks, systems, problem.weights):
            current = beta[block]
            z = moment[block] - G_beta[block] + system.gram @ current
            updated = _block_minimize(system, z, w, current, tol)
            delta = updated - current
            if np.any(delta != 0.0):
                G_beta += G[:, block] @ delta
                beta[block] = updated

        new_objective = problem.objective(beta)
        if new_objective > objective + 1e-10 * max(1.0, abs(objective)):
            violations += 1
            logger.warning(f"Group-lasso objective rose from {objective:.10g} to {new_objective:.10g}")
        objective = new_objective
        trace.append(objective)

        change = float(np.max(np.abs(beta - previous))) if beta.size else 0.0
        if change <= tol * max(1.0, float(np.max(np.abs(beta)))):
            converged = True
            break

    if not converged:
        logger.warning(f"Group lasso stopped after {max_iter} sweeps without converging")

    report = kkt_check(problem, beta)
    return GroupLassoSolution(
        coefficients=beta,
        objective=objective,
        iterations=iterations,
        converged=converged,
        kkt_residual=report.max_violation,
        objective_trace=trace,
        monotonicity_violations=violations,
    )


def kkt_check(problem: GroupLassoProblem, solution: np.ndarray, tol: float = 0.0) -> KktReport:
    """Measure violation of the group-lasso optimality conditions.

    Active blocks need ``2 A_g^T (A beta - y) + w_g beta_g / ||beta_g|| = 0``;
    zero blocks need ``||2 A_g^T (y - A beta)|| <= w_g``. Violations not
    exceeding ``tol`` are reported as zero.
    """
    beta = np.asarray(solution, dtype=float).ravel()
    if beta.size != problem.n_coef:
        raise AssemblyError(f"solution has {beta.size} entries, problem has {problem.n_coef}")
    grad = 2.0 * (problem.gram @ beta - problem.moment)
    statuses = []
    for index, (block, w) in enumerate(zip(problem.blocks, problem.weights)):
        b_norm = float(np.linalg.norm(beta[block]))
        if b_norm > 0.0:
            violation = float(np.linalg.norm(grad[block] + w * beta[block] / b_norm))
        else:
            violation = max(0.0, float(np.linalg.norm(grad[block])) - w)
        if violation <= tol:
            violation = 0.0
        statuses.append(BlockStatus(index=index, active=b_norm > 0.0, violation=violation))
    max_violation = max((s.violation for s in statuses), default=0.0)
    return KktReport(max_violation=max_violation, blocks=statuses)
