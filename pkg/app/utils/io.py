import json
import logging
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
import pandas as pd

from app.exceptions import ConfigError
from app.versions import APP_VERSION, CSV_SCHEMA_VERSION

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
CLOUD_COLUMNS = ["x", "y", "z", "nx", "ny", "nz", "kappa"]
BOUNDARY_COLUMNS = ["x", "y", "z", "cx", "cy", "cz", "weight", "piece_id"]
WEIGHT_COLUMNS = ["x", "y", "z", "weight"]
RESULT_COLUMNS = ["experiment", "n_points", "seed", "estimate", "reference", "rel_error", "h_max",
                  "order_est", "wall_ms", "baseline", "error"]

PathLike = Union[str, Path]


def _write(df: pd.DataFrame, path_or_buf) -> None:
    if isinstance(path_or_buf, (str, Path)):
        Path(path_or_buf).parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path_or_buf, index=False, float_format=FLOAT_FORMAT)


def cloud_frame(cloud) -> pd.DataFrame:
    pos = cloud.positions
    data = {"x": pos[:, 0], "y": pos[:, 1]}
    if pos.shape[1] == 3:
        data["z"] = pos[:, 2]
    if cloud.normals is not None:
        for i, name in enumerate(("nx", "ny", "nz")[: pos.shape[1]]):
            data[name] = cloud.normals[:, i]
    if cloud.kappa is not None:
        data["kappa"] = cloud.kappa
    return pd.DataFrame(data)


def write_cloud_csv(cloud, path_or_buf) -> None:
    _write(cloud_frame(cloud), path_or_buf)


def read_cloud_csv(path_or_buf):
    """Point cloud from `x,y[,z][,nx,ny[,nz]][,kappa]`; without `z` the cloud is planar."""
    from app.services.geometry import PointCloud

    df = pd.read_csv(path_or_buf, float_precision="round_trip")
    missing = {"x", "y"} - set(df.columns)
    if missing:
        raise ConfigError(f"point-cloud CSV lacks columns {sorted(missing)}")
    coords = ["x", "y", "z"] if "z" in df.columns else ["x", "y"]
    normal_cols = ["nx", "ny", "nz"][: len(coords)]
    positions = df[coords].to_numpy(dtype=float)
    normals = df[normal_cols].to_numpy(dtype=float) if set(normal_cols) <= set(df.columns) else None
    kappa = df["kappa"].to_numpy(dtype=float) if "kappa" in df.columns else None
    return PointCloud(positions=positions, normals=normals, kappa=kappa, n_interior=len(df))


def write_boundary_csv(quad, path_or_buf) -> None:
    df = pd.DataFrame({
        "x": quad.nodes[:, 0], "y": quad.nodes[:, 1], "z": quad.nodes[:, 2],
        "cx": quad.conormals[:, 0], "cy": quad.conormals[:, 1], "cz": quad.conormals[:, 2],
        "weight": quad.weights, "piece_id": quad.piece_ids,
    }, columns=BOUNDARY_COLUMNS)
    _write(df, path_or_buf)


def write_weights_csv(positions: np.ndarray, weights: np.ndarray, path_or_buf) -> None:
    coords = ["x", "y", "z"][: positions.shape[1]]
    data = {name: positions[:, i] for i, name in enumerate(coords)}
    data["weight"] = weights
    _write(pd.DataFrame(data, columns=coords + ["weight"]), path_or_buf)


def write_results(rows: Sequence, path: PathLike, config=None) -> Path:
    """Results CSV in row order plus a `<name>.meta.json` sidecar."""
    path = Path(path)
    df = pd.DataFrame([r.model_dump() for r in rows], columns=RESULT_COLUMNS)
    _write(df, path)
    meta = {
        "schema_version": CSV_SCHEMA_VERSION,
        "app_version": APP_VERSION,
        "columns": RESULT_COLUMNS,
        "config": None if config is None else config.model_dump(mode="json"),
    }
    path.with_suffix(".meta.json").write_text(json.dumps(meta, indent=2))
    logger.info("wrote %d rows to %s", len(rows), path)
    return path


def read_results(path: PathLike) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip")
    if list(df.columns) != RESULT_COLUMNS:
        raise ConfigError(f"unexpected results header {list(df.columns)}")
    return df


def read_meta(path: PathLike) -> Optional[dict]:
    meta = Path(path).with_suffix(".meta.json")
    return json.loads(meta.read_text()) if meta.exists() else None
