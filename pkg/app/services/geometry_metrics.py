"""
Evaluation metrics: Sim(3) alignment, ATE, RPE, depth metrics, Chamfer distance and normal
consistency. Trajectories are associated by index.
"""
import logging
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
from scipy.spatial import KDTree
from scipy.spatial.distance import cdist

from app.utils.contracts import require, require_finite
from app.utils.rotations import pose_matrix, quat_to_matrix, rotation_angle_deg

logger = logging.getLogger(__name__)

QUATERNION_TOLERANCE = 1e-9
RANK_TOLERANCE = 1e-12
NORMAL_RANK_TOLERANCE = 1e-10
DELTA_THRESHOLD = 1.25


@dataclass(frozen=True)
class TrajectoryPose:
    timestamp: float
    quaternion: np.ndarray  # (w, x, y, z), camera-to-world rotation
    translation: np.ndarray  # camera centre in world coordinates

    def __post_init__(self):
        q = np.asarray(self.quaternion, dtype=np.float64)
        require(q.shape == (4,), f"quaternion must have 4 entries, got {q.shape}")
        require(
            abs(np.linalg.norm(q) - 1.0) <= QUATERNION_TOLERANCE,
            f"quaternion norm {np.linalg.norm(q)} is not 1",
        )
        object.__setattr__(self, "quaternion", q)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=np.float64).reshape(3))

    def matrix(self) -> np.ndarray:
        return pose_matrix(self.quaternion, self.translation)

    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.quaternion)


@dataclass(frozen=True)
class Sim3Transform:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return self.scale * points @ self.rotation.T + self.translation


@dataclass
class DepthFrame:
    estimate: np.ndarray
    truth: np.ndarray
    valid: np.ndarray | None = None


def _translations(trajectory: Sequence[TrajectoryPose]) -> np.ndarray:
    return np.array([p.translation for p in trajectory], dtype=np.float64).reshape(-1, 3)


def check_timestamps(trajectory: Sequence[TrajectoryPose]) -> None:
    stamps = np.array([p.timestamp for p in trajectory])
    require(bool(np.all(np.diff(stamps) > 0.0)), "trajectory timestamps must be strictly increasing")


# ============================================================
# Alignment and trajectory errors
# ============================================================
def umeyama_sim3(src, dst) -> Sim3Transform:
    """Least-squares (s, R, t) minimising sum ||dst_i - (s R src_i + t)||^2, with det R = +1."""
    src = np.asarray(src, dtype=np.float64).reshape(-1, 3)
    dst = np.asarray(dst, dtype=np.float64).reshape(-1, 3)
    require(src.shape == dst.shape, f"correspondence sets differ: {src.shape} vs {dst.shape}")
    n = src.shape[0]
    require(n >= 3, f"Sim(3) alignment needs at least 3 correspondences, got {n}")
    require_finite(src, "source points")
    require_finite(dst, "target points")

    mu_src, mu_dst = src.mean(axis=0), dst.mean(axis=0)
    src_c, dst_c = src - mu_src, dst - mu_dst

    spread = np.linalg.svd(src_c, compute_uv=False)
    require(
        spread[0] > 0.0 and spread[1] > RANK_TOLERANCE * spread[0],
        "source points are collinear; Sim(3) is not identifiable",
    )

    cov = dst_c.T @ src_c / n
    sigma2 = float(np.sum(src_c * src_c) / n)
    U, D, Vt = np.linalg.svd(cov)
    require(D[0] > 0.0 and D[1] > RANK_TOLERANCE * D[0], "cross-covariance is rank-deficient")

    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0.0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    s = float(np.trace(np.diag(D) @ S) / sigma2)
    t = mu_dst - s * R @ mu_src
    return Sim3Transform(scale=s, rotation=R, translation=t)


def ate(est: Sequence[TrajectoryPose], gt: Sequence[TrajectoryPose]) -> float:
    """RMSE of translation residuals after aligning the estimate onto the ground truth."""
    require(len(est) == len(gt), f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    require(len(est) >= 3, f"ATE needs at least 3 poses, got {len(est)}")
    est_t, gt_t = _translations(est), _translations(gt)
    transform = umeyama_sim3(est_t, gt_t)
    residual = transform.apply(est_t) - gt_t
    return float(np.sqrt(np.mean(np.sum(residual * residual, axis=1))))


def ate_by_length(est: Sequence[TrajectoryPose], gt: Sequence[TrajectoryPose], lengths: Sequence[int]) -> dict[int, float]:
    """ATE of each prefix of the stream; prefixes longer than the trajectory are skipped."""
    require(len(est) == len(gt), f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    out: dict[int, float] = {}
    for length in sorted(set(int(n) for n in lengths)):
        if length > len(est):
            logger.warning(f"[Metrics] Skipping ATE@{length}: trajectory has {len(est)} poses")
            continue
        out[length] = ate(est[:length], gt[:length])
    return out


def rpe(est: Sequence[TrajectoryPose], gt: Sequence[TrajectoryPose], delta: int = 1) -> tuple[float, float]:
    """RMSE of relative-pose errors at a fixed frame offset: (meters, degrees)."""
    require(len(est) == len(gt), f"trajectory lengths differ: {len(est)} vs {len(gt)}")
    require(delta >= 1, f"delta must be >= 1, got {delta}")
    require(len(est) > delta, f"delta={delta} must be smaller than the trajectory length {len(est)}")

    est_m = [p.matrix() for p in est]
    gt_m = [p.matrix() for p in gt]
    trans_sq, rot_sq = [], []
    for i in range(len(est) - delta):
        gt_rel = np.linalg.inv(gt_m[i]) @ gt_m[i + delta]
        est_rel = np.linalg.inv(est_m[i]) @ est_m[i + delta]
        error = np.linalg.inv(gt_rel) @ est_rel
        trans_sq.append(float(np.sum(error[:3, 3] ** 2)))
        rot_sq.append(rotation_angle_deg(error[:3, :3]) ** 2)
    return float(np.sqrt(np.mean(trans_sq))), float(np.sqrt(np.mean(rot_sq)))


# ============================================================
# Depth
# ============================================================
def depth_metrics(
    frames: Sequence[DepthFrame],
    mode: Literal["metric", "per-seq-scaled"] = "metric",
    threshold: float = DELTA_THRESHOLD,
) -> tuple[float, float]:
    """(abs_rel, percentage of pixels with max(d_gt/d_est, d_est/d_gt) < threshold)."""
    require(mode in ("metric", "per-seq-scaled"), f"unknown depth mode '{mode}'")
    est_all, gt_all = [], []
    for frame in frames:
        est = np.asarray(frame.estimate, dtype=np.float64)
        gt = np.asarray(frame.truth, dtype=np.float64)
        require(est.shape == gt.shape, f"depth maps differ in shape: {est.shape} vs {gt.shape}")
        mask = np.isfinite(est) & np.isfinite(gt) & (est > 0.0) & (gt > 0.0)
        if frame.valid is not None:
            mask &= np.asarray(frame.valid, dtype=bool)
        est_all.append(est[mask])
        gt_all.append(gt[mask])

    est = np.concatenate(est_all) if est_all else np.empty(0)
    gt = np.concatenate(gt_all) if gt_all else np.empty(0)
    require(est.size > 0, "depth metrics need at least one valid pixel")

    if mode == "per-seq-scaled":
        est = est * float(np.median(gt / est))

    abs_rel = float(np.mean(np.abs(est - gt) / gt))
    ratio = np.maximum(gt / est, est / gt)
    delta = float(100.0 * np.mean(ratio < threshold))
    return abs_rel, delta


# ============================================================
# Point clouds
# ============================================================
def _as_cloud(points, name: str) -> np.ndarray:
    cloud = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    require(cloud.shape[0] > 0, f"{name} point cloud is empty")
    require_finite(cloud, f"{name} point cloud")
    return cloud


def chamfer(pred, truth) -> tuple[float, float, float]:
    """(cd, accuracy, completeness) with cd the mean of the two directed mean distances."""
    pred, truth = _as_cloud(pred, "predicted"), _as_cloud(truth, "ground-truth")
    accuracy = float(np.mean(KDTree(truth).query(pred, k=1)[0]))
    completeness = float(np.mean(KDTree(pred).query(truth, k=1)[0]))
    return (accuracy + completeness) / 2.0, accuracy, completeness


def chamfer_bruteforce(pred, truth) -> tuple[float, float, float]:
    """O(n*m) reference for chamfer()."""
    pred, truth = _as_cloud(pred, "predicted"), _as_cloud(truth, "ground-truth")
    dist = cdist(pred, truth)
    accuracy = float(np.mean(dist.min(axis=1)))
    completeness = float(np.mean(dist.min(axis=0)))
    return (accuracy + completeness) / 2.0, accuracy, completeness


def estimate_normals(points, k: int) -> tuple[np.ndarray, np.ndarray]:
    """PCA normals from each point's k nearest neighbours; returns (normals, usable mask)."""
    cloud = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    _, idx = KDTree(cloud).query(cloud, k=k + 1)
    normals = np.zeros_like(cloud)
    usable = np.zeros(cloud.shape[0], dtype=bool)
    for i, neighbours in enumerate(idx):
        patch = cloud[neighbours]
        centred = patch - patch.mean(axis=0)
        eigvals, eigvecs = np.linalg.eigh(centred.T @ centred)
        if eigvals[2] <= 0.0 or eigvals[1] <= NORMAL_RANK_TOLERANCE * eigvals[2]:
            continue
        normals[i] = eigvecs[:, 0]
        usable[i] = True
    return normals, usable


def _directed_consistency(src, src_n, dst, dst_n) -> float:
    _, nearest = KDTree(dst).query(src, k=1)
    return float(np.mean(np.abs(np.sum(src_n * dst_n[nearest], axis=1))))


def normal_consistency(pred, truth, k: int = 8) -> float:
    """Symmetrised mean |n_p . n_q| over nearest-neighbour pairs of points with usable normals."""
    require(k >= 3, f"normal estimation needs k >= 3, got {k}")
    pred, truth = _as_cloud(pred, "predicted"), _as_cloud(truth, "ground-truth")
    require(
        pred.shape[0] >= k + 1 and truth.shape[0] >= k + 1,
        f"both clouds need at least k+1={k + 1} points",
    )
    pred_n, pred_ok = estimate_normals(pred, k)
    truth_n, truth_ok = estimate_normals(truth, k)
    excluded = int((~pred_ok).sum() + (~truth_ok).sum())
    if excluded:
        logger.warning(f"[Metrics] Excluded {excluded} points with degenerate neighbourhoods from NC")
    require(pred_ok.any() and truth_ok.any(), "every neighbourhood is degenerate; NC undefined")

    pred, pred_n = pred[pred_ok], pred_n[pred_ok]
    truth, truth_n = truth[truth_ok], truth_n[truth_ok]
    forward = _directed_consistency(pred, pred_n, truth, truth_n)
    backward = _directed_consistency(truth, truth_n, pred, pred_n)
    return (forward + backward) / 2.0
