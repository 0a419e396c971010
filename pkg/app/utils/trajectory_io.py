"""TUM trajectory files: one pose per line, "timestamp tx ty tz qx qy qz qw"; '#' starts a comment."""
from pathlib import Path
from typing import Sequence

import numpy as np

from app.services.geometry_metrics import TrajectoryPose
from app.utils.contracts import require


def parse_tum_lines(lines: Sequence[str]) -> list[TrajectoryPose]:
    poses = []
    for number, line in enumerate(lines, start=1):
        text = line.split("#", 1)[0].replace(",", " ").strip()
        if not text:
            continue
        values = text.split()
        require(len(values) == 8, f"line {number}: expected 8 values, got {len(values)}")
        try:
            stamp, tx, ty, tz, qx, qy, qz, qw = (float(v) for v in values)
        except ValueError as e:
            raise ValueError(f"line {number}: {e}") from e
        q = np.array([qw, qx, qy, qz])
        norm = np.linalg.norm(q)
        require(norm > 0.0, f"line {number}: zero quaternion")
        poses.append(TrajectoryPose(timestamp=stamp, quaternion=q / norm, translation=[tx, ty, tz]))
    return poses


def read_tum(path: str | Path) -> list[TrajectoryPose]:
    with open(path, encoding="utf-8") as fh:
        return parse_tum_lines(fh.readlines())


def format_tum(trajectory: Sequence[TrajectoryPose]) -> str:
    rows = ["# timestamp tx ty tz qx qy qz qw"]
    for pose in trajectory:
        w, x, y, z = pose.quaternion
        tx, ty, tz = pose.translation
        rows.append(" ".join(repr(float(v)) for v in (pose.timestamp, tx, ty, tz, x, y, z, w)))
    return "\n".join(rows) + "\n"


def write_tum(trajectory: Sequence[TrajectoryPose], path: str | Path) -> Path:
    path = Path(path)
    path.write_text(format_tum(trajectory), encoding="utf-8")
    return path
