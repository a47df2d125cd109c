"""
Data I/O Module
Long-format dataset CSV, result tables and JSON artifacts.

Dataset CSV header: ``cluster,replicate,s,y,x1..xp,z1..zq``. Floats are written
with 17 significant digits so every file re-loads to identical values.
"""

import json
import logging
import platform
import re
from pathlib import Path
from typing import Any, Dict, Union

import joblib
import numpy as np
import pandas as pd
import scipy

from fmselect import __version__
from fmselect.exceptions import DatasetError
from fmselect.model_core import RawDataset

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
FIXED_COLUMN = re.compile(r"^x(\d+)$")
RANDOM_COLUMN = re.compile(r"^z(\d+)$")
KEY_COLUMNS = ["cluster", "replicate", "s", "y"]

PathLike = Union[str, Path]


def _covariate_columns(columns, pattern) -> list:
    matched = [(int(pattern.match(c).group(1)), c) for c in columns if pattern.match(c)]
    return [c for _, c in sorted(matched)]


def _natural_key(column: pd.Series) -> pd.Series:
    # numeric ids sort as numbers, anything else as text
    if column.name in ("cluster", "replicate"):
        as_number = pd.to_numeric(column, errors="coerce")
        if not as_number.isna().any():
            return as_number
    return column


def read_dataset_csv(path: PathLike) -> RawDataset:
    """Load a long-format dataset, re-sorted by cluster, replicate and ``s``.

    The grid is the sorted set of ``s`` values and must be identical for every
    (cluster, replicate) pair; covariates must be constant within a pair.
    """
    try:
        frame = pd.read_csv(path, dtype={"cluster": str, "replicate": str})
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
        raise DatasetError(f"cannot read dataset {path}: {exc}") from exc

    missing = [c for c in KEY_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"dataset {path} is missing columns {missing}")
    fixed_cols = _covariate_columns(frame.columns, FIXED_COLUMN)
    random_cols = _covariate_columns(frame.columns, RANDOM_COLUMN)
    if not fixed_cols or not random_cols:
        raise DatasetError(f"dataset {path} needs x<k> and z<r> covariate columns")
    numeric = ["s", "y"] + fixed_cols + random_cols
    if frame[numeric].isna().any().any():
        raise DatasetError(f"dataset {path} has missing values")

    frame = frame.sort_values(["cluster", "replicate", "s"], key=_natural_key, kind="mergesort")
    frame = frame.reset_index(drop=True)
    grid = np.sort(frame["s"].unique()).astype(float)

    responses, fixed, random, cluster_ids, replicate_ids = [], [], [], [], []
    for cluster, cluster_frame in frame.groupby("cluster", sort=False):
        ys, xs, zs, reps = [], [], [], []
        for replicate, curve in cluster_frame.groupby("replicate", sort=False):
            s_values = curve["s"].to_numpy(dtype=float)
            if s_values.size != grid.size or not np.array_equal(s_values, grid):
                raise DatasetError(f"cluster {cluster}, replicate {replicate}: grid differs from the shared grid")
            covariates = curve[fixed_cols + random_cols].to_numpy(dtype=float)
            if np.any(covariates != covariates[0]):
                raise DatasetError(f"cluster {cluster}, replicate {replicate}: covariates vary along s")
            ys.append(curve["y"].to_numpy(dtype=float))
            xs.append(covariates[0, :len(fixed_cols)])
            zs.append(covariates[0, len(fixed_cols):])
            reps.append(str(replicate))
        responses.append(np.vstack(ys))
        fixed.append(np.vstack(xs))
        random.append(np.vstack(zs))
        cluster_ids.append(str(cluster))
        replicate_ids.append(reps)

    logger.info(f"Loaded {path}: {len(responses)} clusters, {len(frame)} rows, m={grid.size}")
    return RawDataset(
        grid=grid,
        responses=responses,
        fixed_covariates=fixed,
        random_covariates=random,
        cluster_ids=cluster_ids,
        replicate_ids=replicate_ids,
        fixed_names=fixed_cols,
        random_names=random_cols,
    )


def dataset_frame(raw: RawDataset) -> pd.DataFrame:
    """Long-format frame with one row per (cluster, replicate, grid point)."""
    m = raw.m
    blocks = []
    for i, (Y_i, X_i, Z_i) in enumerate(zip(raw.responses, raw.fixed_covariates, raw.random_covariates)):
        J_i = Y_i.shape[0]
        block = pd.DataFrame({
            "cluster": np.repeat(raw.cluster_ids[i], J_i * m),
            "replicate": np.repeat(raw.replicate_ids[i], m),
            "s": np.tile(raw.grid, J_i),
            "y": Y_i.reshape(-1),
        })
        for k, name in enumerate(raw.fixed_names):
            block[name] = np.repeat(X_i[:, k], m)
        for r, name in enumerate(raw.random_names):
            block[name] = np.repeat(Z_i[:, r], m)
        blocks.append(block)
    return pd.concat(blocks, ignore_index=True)


def write_dataset_csv(raw: RawDataset, path: PathLike) -> Path:
    return write_frame(dataset_frame(raw), path)


def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    logger.debug(f"Wrote {len(frame)} rows to {path}")
    return path


def _to_builtin(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_builtin(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    return value


def dumps_json(payload: Dict[str, Any]) -> str:
    """JSON text with shortest round-trip float representations."""
    return json.dumps(_to_builtin(payload), indent=2) + "\n"


def write_json(payload: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(payload), encoding="utf-8")
    return path


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read JSON {path}: {exc}") from exc


def package_versions() -> Dict[str, str]:
    return {
        "fmselect": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
        "joblib": joblib.__version__,
    }


def build_manifest(command: str, config: Dict[str, Any], **extra: Any) -> Dict[str, Any]:
    """Run manifest: command, full resolved configuration and package versions."""
    manifest = {"command": command, "config": config, "versions": package_versions()}
    manifest.update(extra)
    return manifest
