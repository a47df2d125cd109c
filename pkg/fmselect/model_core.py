"""
Model Core Module
Stacked regression representation of the multilevel functional mixed model:
per-cluster responses, fixed and random basis designs, and the Cholesky-factor
bookkeeping that maps the stacked lower-triangular vector onto ``vec(L)``.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from fmselect.exceptions import AssemblyError, DatasetError, InvalidDimensionError
from fmselect.spline_basis import BSplineBasis, make_cubic_basis

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawDataset:
    """Multilevel functional data observed on one shared grid.

    Cluster ``i`` holds ``J_i`` replicate curves; ``responses[i]`` has shape
    (J_i, m), ``fixed_covariates[i]`` (J_i, p) and ``random_covariates[i]`` (J_i, q).
    """
    grid: np.ndarray
    responses: List[np.ndarray]
    fixed_covariates: List[np.ndarray]
    random_covariates: List[np.ndarray]
    cluster_ids: List[str] = field(default_factory=list)
    replicate_ids: List[List[str]] = field(default_factory=list)
    fixed_names: List[str] = field(default_factory=list)
    random_names: List[str] = field(default_factory=list)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        object.__setattr__(self, "grid", grid)
        n = len(self.responses)
        if n < 1:
            raise DatasetError("dataset needs at least one cluster")
        if grid.ndim != 1 or grid.size < 2:
            raise DatasetError("grid needs at least two points")
        if np.any(np.diff(grid) <= 0):
            raise DatasetError("grid must be strictly increasing")
        if len(self.fixed_covariates) != n or len(self.random_covariates) != n:
            raise DatasetError("covariate lists must have one entry per cluster")

        responses = [np.atleast_2d(np.asarray(y, dtype=float)) for y in self.responses]
        fixed = [np.atleast_2d(np.asarray(x, dtype=float)) for x in self.fixed_covariates]
        random = [np.atleast_2d(np.asarray(z, dtype=float)) for z in self.random_covariates]
        p, q = fixed[0].shape[1], random[0].shape[1]
        if p < 1 or q < 1:
            raise DatasetError("need at least one fixed and one random covariate")
        for i, (y, x, z) in enumerate(zip(responses, fixed, random)):
            if y.shape[1] != grid.size:
                raise DatasetError(f"cluster {i}: responses have {y.shape[1]} grid points, expected {grid.size}")
            if y.shape[0] < 1 or x.shape[0] != y.shape[0] or z.shape[0] != y.shape[0]:
                raise DatasetError(f"cluster {i}: replicate counts of responses and covariates differ")
            if x.shape[1] != p or z.shape[1] != q:
                raise DatasetError(f"cluster {i}: covariate dimension differs from cluster 0")
            if not (np.all(np.isfinite(y)) and np.all(np.isfinite(x)) and np.all(np.isfinite(z))):
                raise DatasetError(f"cluster {i}: missing or non-finite values")
        object.__setattr__(self, "responses", responses)
        object.__setattr__(self, "fixed_covariates", fixed)
        object.__setattr__(self, "random_covariates", random)

        if not self.cluster_ids:
            object.__setattr__(self, "cluster_ids", [str(i + 1) for i in range(n)])
        if not self.replicate_ids:
            object.__setattr__(self, "replicate_ids",
                               [[str(j + 1) for j in range(y.shape[0])] for y in responses])
        if not self.fixed_names:
            object.__setattr__(self, "fixed_names", [f"x{k + 1}" for k in range(p)])
        if not self.random_names:
            object.__setattr__(self, "random_names", [f"z{r + 1}" for r in range(q)])
        if len(self.fixed_names) != p or len(self.random_names) != q:
            raise DatasetError("covariate names do not match covariate dimensions")

    @property
    def n_clusters(self) -> int:
        return len(self.responses)

    @property
    def p(self) -> int:
        return self.fixed_covariates[0].shape[1]

    @property
    def q(self) -> int:
        return self.random_covariates[0].shape[1]

    @property
    def m(self) -> int:
        return self.grid.size

    @property
    def replicate_counts(self) -> List[int]:
        return [y.shape[0] for y in self.responses]

    @property
    def total_observations(self) -> int:
        return self.m * sum(self.replicate_counts)

    def with_responses(self, responses: Sequence[np.ndarray]) -> "RawDataset":
        """Copy of the dataset with the responses replaced."""
        return replace(self, responses=list(responses))

    def standardize(self, columns: Sequence[str]) -> Tuple["RawDataset", Dict[str, Tuple[float, float]]]:
        """Center and scale the named covariate columns over all replicates.

        Args:
            columns: Fixed and/or random covariate names

        Returns:
            Tuple of the transformed dataset and ``{name: (mean, sd)}``
        """
        fixed = [x.copy() for x in self.fixed_covariates]
        random = [z.copy() for z in self.random_covariates]
        scaling = {}
        for name in columns:
            if name in self.fixed_names:
                target, col = fixed, self.fixed_names.index(name)
            elif name in self.random_names:
                target, col = random, self.random_names.index(name)
            else:
                raise DatasetError(f"cannot standardize unknown column '{name}'")
            pooled = np.concatenate([block[:, col] for block in target])
            mean, sd = float(pooled.mean()), float(pooled.std())
            if sd == 0.0:
                raise DatasetError(f"column '{name}' is constant and cannot be standardized")
            for block in target:
                block[:, col] = (block[:, col] - mean) / sd
            scaling[name] = (mean, sd)
            logger.debug(f"Standardized {name}: mean={mean:.4g}, sd={sd:.4g}")
        return replace(self, fixed_covariates=fixed, random_covariates=random), scaling


class CholeskyLayout:
    """Bookkeeping for the lower-triangular factor ``L`` of ``D = L L^T``.

    Row block ``r`` of ``L`` holds the ``block_dims[r]`` rows belonging to random
    covariate ``r``. The stacked vector ``L~`` lists the lower-triangular entries
    row by row, so each block occupies a contiguous slice of length ``N_r``.
    """

    def __init__(self, block_dims: Sequence[int]):
        """Initialize layout.

        Args:
            block_dims: Random-effect basis dimension of each covariate
        """
        dims = [int(d) for d in block_dims]
        if not dims or any(d < 1 for d in dims):
            raise InvalidDimensionError(f"invalid random-effect block dimensions {dims}")
        self.block_dims = dims
        self.size = sum(dims)
        self.offsets = np.concatenate([[0], np.cumsum(dims)[:-1]]).astype(int)

        rows, cols = [], []
        for row in range(self.size):
            for col in range(row + 1):
                rows.append(row)
                cols.append(col)
        self.rows = np.asarray(rows, dtype=int)
        self.cols = np.asarray(cols, dtype=int)
        self.length = self.rows.size

        self.group_sizes = [
            int(off * d + d * (d + 1) // 2) for off, d in zip(self.offsets, dims)
        ]
        starts = np.concatenate([[0], np.cumsum(self.group_sizes)]).astype(int)
        self.block_slices = [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]

    @classmethod
    def uniform(cls, d_prime: int, q: int) -> "CholeskyLayout":
        return cls([d_prime] * q)

    @property
    def q(self) -> int:
        return len(self.block_dims)

    @property
    def diagonal_indices(self) -> np.ndarray:
        return np.nonzero(self.rows == self.cols)[0]

    def vec_indices(self) -> np.ndarray:
        """Position of each ``L~`` entry inside the column-major ``vec(L)``."""
        return self.cols * self.size + self.rows

    def kron_design(self, Z_i: np.ndarray, b_i: np.ndarray) -> np.ndarray:
        """``(b_i^T kron Z_i) J`` without forming the Kronecker product."""
        return Z_i[:, self.rows] * b_i[self.cols]

    def __eq__(self, other) -> bool:
        return isinstance(other, CholeskyLayout) and self.block_dims == other.block_dims

    def __repr__(self) -> str:
        return f"CholeskyLayout(block_dims={self.block_dims})"


@dataclass
class ModelData:
    """Assembled per-cluster designs for the stacked mixed model."""
    Y: List[np.ndarray]
    X: List[np.ndarray]
    Z: List[np.ndarray]
    fixed_bases: List[BSplineBasis]
    random_bases: List[BSplineBasis]
    layout: CholeskyLayout
    grid: np.ndarray
    fixed_names: List[str]
    random_names: List[str]
    replicate_counts: List[int]
    fixed_slices: List[slice] = field(init=False)
    XtX: np.ndarray = field(init=False, repr=False)
    ZtZ: List[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        sizes = [basis.num_basis for basis in self.fixed_bases]
        starts = np.concatenate([[0], np.cumsum(sizes)]).astype(int)
        self.fixed_slices = [slice(int(a), int(b)) for a, b in zip(starts[:-1], starts[1:])]
        self.XtX = sum(x.T @ x for x in self.X)
        self.ZtZ = [z.T @ z for z in self.Z]

    @property
    def n(self) -> int:
        return len(self.Y)

    @property
    def p(self) -> int:
        return len(self.fixed_bases)

    @property
    def q(self) -> int:
        return len(self.random_bases)

    @property
    def N(self) -> int:
        return int(sum(y.size for y in self.Y))

    @property
    def fixed_group_sizes(self) -> List[int]:
        return [s.stop - s.start for s in self.fixed_slices]

    @property
    def random_slices(self) -> List[slice]:
        return self.layout.block_slices

    @property
    def n_fixed(self) -> int:
        return self.fixed_slices[-1].stop

    @property
    def n_random(self) -> int:
        return self.layout.size

    @property
    def duplication(self) -> np.ndarray:
        return duplication_matrix(self.layout)


def duplication_matrix(d_prime, q: Optional[int] = None) -> np.ndarray:
    """Binary matrix ``J`` with ``vec(L) = J L~`` (column-major ``vec``).

    Args:
        d_prime: Uniform block dimension, or a ``CholeskyLayout``
        q: Number of random covariates when ``d_prime`` is an integer

    Returns:
        np.ndarray: Matrix of shape ((d'q)^2, d'q(d'q+1)/2)
    """
    layout = d_prime if isinstance(d_prime, CholeskyLayout) else CholeskyLayout.uniform(d_prime, q)
    J = np.zeros((layout.size ** 2, layout.length))
    J[layout.vec_indices(), np.arange(layout.length)] = 1.0
    return J


def expand_L(Ltilde: np.ndarray, layout: CholeskyLayout) -> np.ndarray:
    """Lower-triangular ``L`` from its row-stacked nonzero entries."""
    Ltilde = np.asarray(Ltilde, dtype=float)
    if Ltilde.ndim != 1 or Ltilde.size != layout.length:
        raise AssemblyError(f"L~ has length {Ltilde.size}, layout expects {layout.length}")
    L = np.zeros((layout.size, layout.size))
    L[layout.rows, layout.cols] = Ltilde
    return L


def random_effect_design(Z_i: np.ndarray, b_i: np.ndarray, J: np.ndarray) -> np.ndarray:
    """``(b_i^T kron Z_i) J``, the design of ``L~`` for cluster ``i``."""
    b_i = np.asarray(b_i, dtype=float).ravel()
    K = Z_i.shape[1]
    if b_i.size != K or J.shape[0] != K * K:
        raise AssemblyError(
            f"random design mismatch: Z has {K} columns, b has {b_i.size} entries, J has {J.shape[0]} rows"
        )
    return np.kron(b_i[None, :], Z_i) @ J


def _stack_design(covariates: np.ndarray, bases: Sequence[BSplineBasis], grid: np.ndarray) -> np.ndarray:
    # rows: replicate-major, grid-minor; columns: covariate-major, basis-minor
    n_rep, m = covariates.shape[0], grid.size
    blocks = []
    for k, basis in enumerate(bases):
        B = basis.evaluate_matrix(grid)
        blocks.append(np.repeat(covariates[:, k], m)[:, None] * np.tile(B, (n_rep, 1)))
    return np.hstack(blocks)


def assemble_design(raw: RawDataset, fixed_bases: Sequence[BSplineBasis],
                    random_bases: Sequence[BSplineBasis]) -> ModelData:
    """Build ``Y_i``, ``X_i`` and ``Z_i`` for every cluster.

    Args:
        raw: Dataset on a shared grid
        fixed_bases: One basis per fixed covariate
        random_bases: One basis per random covariate

    Returns:
        ModelData: Assembled designs plus the Cholesky layout and ``J``
    """
    if len(fixed_bases) != raw.p:
        raise AssemblyError(f"{len(fixed_bases)} fixed bases for {raw.p} fixed covariates")
    if len(random_bases) != raw.q:
        raise AssemblyError(f"{len(random_bases)} random bases for {raw.q} random covariates")
    for basis in list(fixed_bases) + list(random_bases):
        lo, hi = basis.domain
        if raw.grid[0] < lo or raw.grid[-1] > hi:
            raise AssemblyError(f"grid [{raw.grid[0]}, {raw.grid[-1]}] exceeds basis domain {basis.domain}")

    Y = [y.reshape(-1) for y in raw.responses]
    X = [_stack_design(x, fixed_bases, raw.grid) for x in raw.fixed_covariates]
    Z = [_stack_design(z, random_bases, raw.grid) for z in raw.random_covariates]
    layout = CholeskyLayout([basis.num_basis for basis in random_bases])

    data = ModelData(
        Y=Y,
        X=X,
        Z=Z,
        fixed_bases=list(fixed_bases),
        random_bases=list(random_bases),
        layout=layout,
        grid=raw.grid.copy(),
        fixed_names=list(raw.fixed_names),
        random_names=list(raw.random_names),
        replicate_counts=raw.replicate_counts,
    )
    logger.debug(
        f"Assembled design: n={data.n}, N={data.N}, fixed columns={data.n_fixed}, "
        f"random columns={data.n_random}, L~ length={layout.length}"
    )
    return data


def _expand_dims(dims: Union[int, Sequence[int]], count: int, label: str) -> List[int]:
    if isinstance(dims, (int, np.integer)):
        return [int(dims)] * count
    dims = [int(d) for d in dims]
    if len(dims) != count:
        raise InvalidDimensionError(f"{len(dims)} {label} basis dimensions for {count} covariates")
    return dims


def build_model(raw: RawDataset, fixed_dims: Union[int, Sequence[int]] = 5,
                random_dims: Union[int, Sequence[int]] = 5,
                domain: Tuple[float, float] = (0.0, 1.0)) -> ModelData:
    """Cubic bases of the requested dimensions plus :func:`assemble_design`.

    Dimensions are either one value for every covariate or one per covariate.
    """
    fixed_bases = [make_cubic_basis(d, domain) for d in _expand_dims(fixed_dims, raw.p, "fixed")]
    random_bases = [make_cubic_basis(d, domain) for d in _expand_dims(random_dims, raw.q, "random")]
    return assemble_design(raw, fixed_bases, random_bases)
