"""
Spline Basis Module
Clamped cubic B-spline bases for the fixed and random coefficient functions.
"""

import logging
from typing import Tuple

import numpy as np

from fmselect.exceptions import DomainError, InvalidDimensionError

logger = logging.getLogger(__name__)

CUBIC_DEGREE = 3
DOMAIN_SLACK = 1e-12


class BSplineBasis:
    """Clamped B-spline basis on a closed interval.

    The knot vector repeats each boundary knot ``degree + 1`` times, so the
    basis interpolates at the endpoints and forms a partition of unity.
    """

    def __init__(self, knot_vector: np.ndarray, degree: int = CUBIC_DEGREE,
                 domain: Tuple[float, float] = (0.0, 1.0)):
        """Initialize basis from a full knot vector.

        Args:
            knot_vector: Non-decreasing knots including repeated boundary knots
            degree: Polynomial degree of each piece
            domain: Closed evaluation interval
        """
        knots = np.array(knot_vector, dtype=float)
        if np.any(np.diff(knots) < 0):
            raise InvalidDimensionError("knot vector must be non-decreasing")
        self.degree = int(degree)
        self.domain = (float(domain[0]), float(domain[1]))
        self.knot_vector = knots
        self.knot_vector.setflags(write=False)
        self.num_basis = knots.size - self.degree - 1
        if self.num_basis < self.degree + 1:
            raise InvalidDimensionError(
                f"knot vector of length {knots.size} defines only {self.num_basis} "
                f"functions of degree {self.degree}"
            )

    @property
    def interior_knots(self) -> np.ndarray:
        return self.knot_vector[self.degree + 1:self.num_basis]

    def support(self, u: int) -> Tuple[float, float]:
        """Knot span outside of which basis function ``u`` vanishes."""
        return float(self.knot_vector[u]), float(self.knot_vector[u + self.degree + 1])

    def evaluate(self, s: float) -> np.ndarray:
        """Evaluate all basis functions at a single point."""
        return self.evaluate_matrix(np.array([s], dtype=float))[0]

    def evaluate_matrix(self, grid: np.ndarray) -> np.ndarray:
        """Evaluate all basis functions on a grid with the Cox–de Boor recursion.

        Args:
            grid: Evaluation points inside the domain

        Returns:
            np.ndarray: Matrix of shape (len(grid), num_basis)
        """
        x = self._check_points(grid)
        t = self.knot_vector
        n_intervals = t.size - 1

        # degree-0 indicators, half-open spans; the right endpoint is
        # assigned to the last non-degenerate span
        basis = np.zeros((x.size, n_intervals))
        last_span = int(np.nonzero(t[:-1] < t[1:])[0][-1])
        for j in range(n_intervals):
            if t[j] < t[j + 1]:
                basis[:, j] = (t[j] <= x) & (x < t[j + 1])
        basis[x >= t[last_span + 1], last_span] = 1.0

        for p in range(1, self.degree + 1):
            n_funcs = n_intervals - p
            nxt = np.zeros((x.size, n_funcs))
            for j in range(n_funcs):
                left_den = t[j + p] - t[j]
                right_den = t[j + p + 1] - t[j + 1]
                if left_den > 0:
                    nxt[:, j] += (x - t[j]) / left_den * basis[:, j]
                if right_den > 0:
                    nxt[:, j] += (t[j + p + 1] - x) / right_den * basis[:, j + 1]
            basis = nxt
        return basis

    def _check_points(self, grid) -> np.ndarray:
        x = np.atleast_1d(np.asarray(grid, dtype=float))
        lo, hi = self.domain
        if not np.all(np.isfinite(x)):
            raise DomainError("evaluation points must be finite")
        if np.any(x < lo - DOMAIN_SLACK) or np.any(x > hi + DOMAIN_SLACK):
            bad = x[(x < lo - DOMAIN_SLACK) | (x > hi + DOMAIN_SLACK)][0]
            raise DomainError(f"point {bad} outside basis domain [{lo}, {hi}]")
        return np.clip(x, lo, hi)

    def to_dict(self) -> dict:
        return {"num_basis": self.num_basis, "degree": self.degree, "domain": list(self.domain)}

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BSplineBasis)
            and self.degree == other.degree
            and self.domain == other.domain
            and np.array_equal(self.knot_vector, other.knot_vector)
        )

    def __repr__(self) -> str:
        return f"BSplineBasis(num_basis={self.num_basis}, degree={self.degree}, domain={self.domain})"


def make_cubic_basis(num_basis: int, domain: Tuple[float, float] = (0.0, 1.0)) -> BSplineBasis:
    """Build a clamped cubic basis with equally spaced interior knots.

    Args:
        num_basis: Number of basis functions, at least 4
        domain: Closed interval the basis lives on

    Returns:
        BSplineBasis: Basis with ``num_basis - 4`` interior knots
    """
    if int(num_basis) != num_basis or num_basis < CUBIC_DEGREE + 1:
        raise InvalidDimensionError(f"cubic basis needs num_basis >= 4, got {num_basis}")
    lo, hi = float(domain[0]), float(domain[1])
    if not hi > lo:
        raise InvalidDimensionError(f"empty basis domain [{lo}, {hi}]")
    n_interior = int(num_basis) - CUBIC_DEGREE - 1
    interior = lo + (hi - lo) * np.arange(1, n_interior + 1) / (n_interior + 1)
    knots = np.concatenate([
        np.full(CUBIC_DEGREE + 1, lo),
        interior,
        np.full(CUBIC_DEGREE + 1, hi),
    ])
    return BSplineBasis(knots, degree=CUBIC_DEGREE, domain=(lo, hi))


def evaluate_basis(basis: BSplineBasis, s: float) -> np.ndarray:
    """Vector of basis values at ``s``."""
    return basis.evaluate(s)


def evaluate_basis_matrix(basis: BSplineBasis, grid: np.ndarray) -> np.ndarray:
    """Matrix whose row ``t`` is ``evaluate_basis(basis, grid[t])``."""
    return basis.evaluate_matrix(grid)
