import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from app.utils.contracts import require, require_finite

logger = logging.getLogger(__name__)

DEFAULT_BETA = 0.2
QUATERNION_TOLERANCE = 1e-9


@dataclass
class PointMap:
    points: np.ndarray  # (n, 3)
    confidence: np.ndarray  # (n,), > 0 on valid entries
    valid: np.ndarray  # (n,) bool

    @classmethod
    def from_points(cls, points, confidence=None, valid=None) -> "PointMap":
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = points.shape[0]
        confidence = np.ones(n) if confidence is None else np.asarray(confidence, dtype=np.float64).reshape(n)
        valid = np.ones(n, dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(n)
        return cls(points=points, confidence=confidence, valid=valid)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def masked(self, mask: np.ndarray) -> "PointMap":
        return PointMap(self.points, self.confidence, self.valid & mask)


@dataclass(frozen=True)
class PoseTarget:
    quaternion: np.ndarray  # (w, x, y, z), unit norm
    translation: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64)
        require(q.shape == (4,), f"quaternion must have 4 entries, got {q.shape}")
        require(
            abs(np.linalg.norm(q) - 1.0) <= QUATERNION_TOLERANCE,
            f"quaternion norm {np.linalg.norm(q)} is not 1",
        )
        require(self.scale > 0.0, f"pose scale must be positive, got {self.scale}")
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))


def scale_norm(pm: PointMap) -> float:
    """Mean Euclidean norm of the valid points."""
    pts = pm.points[pm.valid]
    require(pts.shape[0] > 0, "scale undefined: point map has no valid points")
    require_finite(pts, "valid points")
    value = float(np.mean(np.linalg.norm(pts, axis=1)))
    require(value > 0.0, "scale undefined: all valid points are at the origin")
    return value


def conf_regression_loss(pred: PointMap, target: PointMap, beta: float = DEFAULT_BETA) -> float:
    """sum over jointly valid points of c * ||z_hat/s_hat - z/s|| - beta * log c."""
    require(len(pred) == len(target), f"point maps differ in length: {len(pred)} vs {len(target)}")
    require(beta >= 0.0, f"beta must be non-negative, got {beta}")
    mask = pred.valid & target.valid
    pred_m, target_m = pred.masked(mask), target.masked(mask)
    s_hat, s = scale_norm(pred_m), scale_norm(target_m)

    conf = pred.confidence[mask]
    require(bool(np.all(conf > 0.0)), "confidence must be strictly positive on valid points")
    residual = np.linalg.norm(pred.points[mask] / s_hat - target.points[mask] / s, axis=1)
    return float(np.sum(conf * residual - beta * np.log(conf)))


def loss_3d(pred_self: PointMap, tgt_self: PointMap, pred_world: PointMap, tgt_world: PointMap, beta: float = DEFAULT_BETA) -> float:
    return conf_regression_loss(pred_self, tgt_self, beta) + conf_regression_loss(pred_world, tgt_world, beta)


def pose_loss(preds: Sequence[PoseTarget], targets: Sequence[PoseTarget], canonicalize: bool = False) -> float:
    """
    sum_t ||q_hat - q|| + ||tau_hat/s_hat - tau/s||.
    With canonicalize=True the predicted quaternion is flipped into the target's hemisphere first.
    """
    require(len(preds) == len(targets), f"pose sequences differ in length: {len(preds)} vs {len(targets)}")
    require(len(preds) >= 1, "pose loss needs at least one frame")
    total = 0.0
    for pred, tgt in zip(preds, targets):
        q_hat = pred.quaternion
        if canonicalize and np.dot(q_hat, tgt.quaternion) < 0.0:
            q_hat = -q_hat
        total += float(np.linalg.norm(q_hat - tgt.quaternion))
        total += float(np.linalg.norm(pred.translation / pred.scale - tgt.translation / tgt.scale))
    return total


def rgb_loss(pred_image, target_image) -> float:
    pred_image = np.asarray(pred_image, dtype=np.float64)
    target_image = np.asarray(target_image, dtype=np.float64)
    require(
        pred_image.shape == target_image.shape,
        f"image shapes differ: {pred_image.shape} vs {target_image.shape}",
    )
    diff = pred_image - target_image
    return float(np.sum(diff * diff))


def total_loss(l3d: float, lpose: float, lrgb: float, is_raymap: bool) -> float:
    return float(l3d + lpose + (lrgb if is_raymap else 0.0))
