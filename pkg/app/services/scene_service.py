"""
Synthetic scenes and the feature packets streamed from them.

A scene is a set of landmarks on the faces of a cube plus a camera trajectory around it.
featurize() stands in for the image encoder: visible landmarks are projected into the
camera, binned on a grid x grid token layout, and each occupied bin is embedded into a
d_in-wide token by a seeded random linear code.
"""
import logging
from dataclasses import dataclass, replace
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from app.services.frame_packet import FramePacket
from app.services.geometry_metrics import TrajectoryPose
from app.services.objectives import PointMap, PoseTarget, scale_norm
from app.utils.contracts import ContractError, require
from app.utils.rotations import matrix_to_quat

logger = logging.getLogger(__name__)

TrajKind = Literal["orbit", "corridor", "random-walk"]

BOX_HALF_EXTENT = 1.5
ORBIT_CENTER = np.array([0.0, 0.0, 0.5])
ORBIT_RADIUS = 4.0
MIN_WALK_DISTANCE = 3.0
WALK_STEP_STD = 0.05
CORRIDOR_HEIGHT = 0.3
CORRIDOR_WEAVE = 0.2  # vertical amplitude; keeps the centres off a single line
FRAME_RATE = 30.0
EMPTY_CHANNEL = 0
RAW_FEATURES = 7  # occupancy, mean depth, bearing xyz, bin centre uv

_FACE_NORMALS = np.array([
    [1.0, 0.0, 0.0], [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0], [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0], [0.0, 0.0, -1.0],
])


@dataclass(frozen=True)
class SyntheticScene:
    landmarks: np.ndarray  # (n, 3)
    normals: np.ndarray  # (n, 3)
    trajectory: list[TrajectoryPose]
    seed: int
    frame_count: int
    traj_kind: str

    def translated(self, offset) -> "SyntheticScene":
        """The same scene with landmarks and camera centres shifted by one vector."""
        offset = np.asarray(offset, dtype=np.float64).reshape(3)
        trajectory = [
            TrajectoryPose(p.timestamp, p.quaternion, p.translation + offset) for p in self.trajectory
        ]
        return replace(self, landmarks=self.landmarks + offset, trajectory=trajectory)


class FeaturizerConfig(BaseModel):
    d_in: int = Field(64, gt=1)
    grid: int = Field(4, gt=0, description="Token grid side; at most grid*grid tokens per frame")
    seed: int = 0
    focal: float = Field(1.0, gt=0.0)
    near: float = Field(0.05, gt=0.0)


@dataclass(frozen=True)
class FrameTargets:
    """Per-token ground truth in the featurizer's token order."""

    self_points: PointMap
    world_points: PointMap
    depth: np.ndarray
    pose: PoseTarget | None


@dataclass(frozen=True)
class _BinnedView:
    bins: np.ndarray  # sorted occupied bin ids
    members: list[np.ndarray]  # landmark indices per bin
    camera_points: np.ndarray  # (n, 3), every landmark in camera coordinates


# ============================================================
# Scene generation
# ============================================================
def look_at(center: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world rotation with z forward, x right and y down."""
    forward = target - center
    forward = forward / np.linalg.norm(forward)
    up = np.array([0.0, 0.0, 1.0])
    if abs(float(np.dot(forward, up))) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right = right / np.linalg.norm(right)
    down = np.cross(forward, right)
    return np.column_stack([right, down, forward])


def _sample_landmarks(rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    faces = rng.integers(0, 6, size=n)
    points = rng.uniform(-BOX_HALF_EXTENT, BOX_HALF_EXTENT, size=(n, 3))
    normals = _FACE_NORMALS[faces]
    axis = faces // 2
    points[np.arange(n), axis] = normals[np.arange(n), axis] * BOX_HALF_EXTENT
    return points, normals.copy()


def _camera_centres(rng: np.random.Generator, traj_kind: str, frame_count: int) -> tuple[np.ndarray, np.ndarray]:
    """(centres, look-at targets), one row per frame."""
    t = np.arange(frame_count)
    if traj_kind == "orbit":
        theta = 2.0 * np.pi * t / frame_count
        centres = ORBIT_CENTER + ORBIT_RADIUS * np.column_stack([np.cos(theta), np.sin(theta), np.zeros(frame_count)])
        return centres, np.zeros((frame_count, 3))

    if traj_kind == "corridor":
        x = np.linspace(-3.0, 3.0, frame_count)
        z = CORRIDOR_HEIGHT + CORRIDOR_WEAVE * np.cos(0.5 * np.pi * x)
        centres = np.column_stack([x, np.full(frame_count, -ORBIT_RADIUS), z])
        return centres, centres + np.array([0.0, 1.0, 0.0])

    centres = np.empty((frame_count, 3))
    position = np.array([0.0, -ORBIT_RADIUS, 0.5])
    for i in range(frame_count):
        if i > 0:
            position = position + rng.normal(0.0, WALK_STEP_STD, size=3)
            distance = np.linalg.norm(position)
            if distance < MIN_WALK_DISTANCE:
                position = position * (MIN_WALK_DISTANCE / distance)
        centres[i] = position
    return centres, np.zeros((frame_count, 3))


def generate_scene(seed: int, n_landmarks: int, traj_kind: TrajKind = "orbit", frame_count: int = 100) -> SyntheticScene:
    require(n_landmarks >= 4, f"a scene needs at least 4 landmarks, got {n_landmarks}")
    require(frame_count >= 2, f"a stream needs at least 2 frames, got {frame_count}")
    require(traj_kind in ("orbit", "corridor", "random-walk"), f"unknown trajectory kind '{traj_kind}'")

    landmark_seq, walk_seq = np.random.SeedSequence(seed).spawn(2)
    landmarks, normals = _sample_landmarks(np.random.default_rng(landmark_seq), n_landmarks)
    centres, targets = _camera_centres(np.random.default_rng(walk_seq), traj_kind, frame_count)

    trajectory = [
        TrajectoryPose(
            timestamp=i / FRAME_RATE,
            quaternion=matrix_to_quat(look_at(centres[i], targets[i])),
            translation=centres[i],
        )
        for i in range(frame_count)
    ]
    logger.info(f"[Stream] Scene generated (seed={seed}, landmarks={n_landmarks}, traj={traj_kind}, frames={frame_count})")
    return SyntheticScene(
        landmarks=landmarks,
        normals=normals,
        trajectory=trajectory,
        seed=seed,
        frame_count=frame_count,
        traj_kind=traj_kind,
    )


# ============================================================
# Featurisation
# ============================================================
def _bin_view(scene: SyntheticScene, frame_index: int, cfg: FeaturizerConfig) -> _BinnedView:
    require(
        0 <= frame_index < scene.frame_count,
        f"frame index {frame_index} out of range for a {scene.frame_count}-frame scene",
    )
    pose = scene.trajectory[frame_index]
    camera_points = (scene.landmarks - pose.translation) @ pose.rotation()

    z = camera_points[:, 2]
    in_front = z > cfg.near
    safe_z = np.where(in_front, z, 1.0)
    u = cfg.focal * camera_points[:, 0] / safe_z
    v = cfg.focal * camera_points[:, 1] / safe_z
    visible = in_front & (np.abs(u) < 1.0) & (np.abs(v) < 1.0)

    col = np.clip(np.floor((u + 1.0) / 2.0 * cfg.grid), 0, cfg.grid - 1).astype(np.int64)
    row = np.clip(np.floor((v + 1.0) / 2.0 * cfg.grid), 0, cfg.grid - 1).astype(np.int64)
    bin_ids = row * cfg.grid + col

    idx = np.flatnonzero(visible)
    bins = np.unique(bin_ids[idx])
    members = [idx[bin_ids[idx] == b] for b in bins]
    return _BinnedView(bins=bins, members=members, camera_points=camera_points)


def _linear_code(cfg: FeaturizerConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    return rng.normal(0.0, 1.0 / np.sqrt(RAW_FEATURES), size=(cfg.d_in - 1, RAW_FEATURES))


def featurize(scene: SyntheticScene, frame_index: int, cfg: FeaturizerConfig) -> FramePacket:
    view = _bin_view(scene, frame_index, cfg)
    if view.bins.size == 0:
        empty = np.zeros((1, cfg.d_in))
        empty[0, EMPTY_CHANNEL] = 1.0
        logger.debug(f"[Stream] Frame {frame_index} sees no landmarks; emitting the empty token")
        return FramePacket.from_tokens(empty, frame_index=frame_index)

    n = scene.landmarks.shape[0]
    raw = np.empty((view.bins.size, RAW_FEATURES))
    for k, (b, members) in enumerate(zip(view.bins, view.members)):
        pts = view.camera_points[members]
        bearing = np.mean(pts / np.linalg.norm(pts, axis=1, keepdims=True), axis=0)
        row, col = divmod(int(b), cfg.grid)
        raw[k] = [
            members.size / n,
            float(np.mean(pts[:, 2])),
            *bearing,
            (col + 0.5) / cfg.grid * 2.0 - 1.0,
            (row + 0.5) / cfg.grid * 2.0 - 1.0,
        ]

    tokens = np.zeros((view.bins.size, cfg.d_in))
    tokens[:, EMPTY_CHANNEL + 1:] = raw @ _linear_code(cfg).T
    return FramePacket.from_tokens(tokens, frame_index=frame_index)


def frame_targets(scene: SyntheticScene, frame_index: int, cfg: FeaturizerConfig) -> FrameTargets:
    """Mean camera-frame point, world point and depth per token; the empty token is invalid."""
    view = _bin_view(scene, frame_index, cfg)
    pose = scene.trajectory[frame_index]
    if view.bins.size == 0:
        nothing = PointMap.from_points(np.zeros((1, 3)), valid=np.zeros(1, dtype=bool))
        return FrameTargets(self_points=nothing, world_points=nothing, depth=np.zeros(1), pose=None)

    local = np.array([view.camera_points[m].mean(axis=0) for m in view.members])
    world = np.array([scene.landmarks[m].mean(axis=0) for m in view.members])
    world_map = PointMap.from_points(world)
    try:
        pose_target = PoseTarget(pose.quaternion, pose.translation, scale=scale_norm(world_map))
    except ContractError:
        pose_target = None
    return FrameTargets(
        self_points=PointMap.from_points(local),
        world_points=world_map,
        depth=local[:, 2].copy(),
        pose=pose_target,
    )
