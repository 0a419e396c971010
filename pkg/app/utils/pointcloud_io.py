"""
Point clouds as PLY (through open3d, optional normals) or CSV with an "x,y,z" header.
The format is picked from the file suffix.
"""
import logging
from pathlib import Path

import numpy as np
import open3d as o3d

from app.utils.contracts import require

logger = logging.getLogger(__name__)

CSV_HEADER = "x,y,z"


def write_ply(path: str | Path, points, normals=None, ascii: bool = False) -> Path:
    """Binary PLY keeps full float64 precision; ascii=True trades it for readability."""
    path = Path(path)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    require(points.shape[0] > 0, "cannot write an empty point cloud")
    pcd = o3d.geometry.PointCloud()
    pcd.points = o3d.utility.Vector3dVector(points)
    if normals is not None:
        normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        require(normals.shape == points.shape, "normals must match the points one-to-one")
        pcd.normals = o3d.utility.Vector3dVector(normals)
    if not o3d.io.write_point_cloud(str(path), pcd, write_ascii=ascii):
        raise OSError(f"open3d could not write {path}")
    logger.debug(f"[PointCloud] Wrote {points.shape[0]} points to {path}")
    return path


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray | None]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such point cloud: {path}")
    pcd = o3d.io.read_point_cloud(str(path), format="ply")
    points = np.asarray(pcd.points, dtype=np.float64).reshape(-1, 3)
    require(points.shape[0] > 0, f"no points could be read from {path}")
    normals = np.asarray(pcd.normals, dtype=np.float64).reshape(-1, 3) if pcd.has_normals() else None
    return points, normals


def write_csv(path: str | Path, points) -> Path:
    path = Path(path)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    np.savetxt(path, points, fmt="%.17g", delimiter=",", header=CSV_HEADER, comments="")
    return path


def read_csv(path: str | Path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().replace(" ", "")
        require(header == CSV_HEADER, f"{path} must start with an {CSV_HEADER} header")
        body = fh.read()
    if not body.strip():
        return np.empty((0, 3))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    require(data.shape[1] == 3, f"{path} must hold three columns, got {data.shape[1]}")
    return data


def read_points(path: str | Path) -> np.ndarray:
    suffix = Path(path).suffix.lower()
    if suffix == ".ply":
        return read_ply(path)[0]
    if suffix == ".csv":
        return read_csv(path)
    raise ValueError(f"unsupported point cloud format '{suffix}' (expected .ply or .csv)")
