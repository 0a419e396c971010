"""Quaternions are stored scalar-first (w, x, y, z); scipy's Rotation is scalar-last."""
import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY_QUATERNION = np.array([1.0, 0.0, 0.0, 0.0])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64)
    return Rotation.from_quat([x, y, z, w]).as_matrix()


def matrix_to_quat(rotation: np.ndarray) -> np.ndarray:
    x, y, z, w = Rotation.from_matrix(rotation).as_quat()
    q = np.array([w, x, y, z])
    return -q if w < 0.0 else q


def pose_matrix(q, t) -> np.ndarray:
    T = np.eye(4)
    T[:3, :3] = quat_to_matrix(q)
    T[:3, 3] = np.asarray(t, dtype=np.float64)
    return T


def rotation_angle_deg(rotation: np.ndarray) -> float:
    cos_angle = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.degrees(np.arccos(cos_angle)))


def axis_angle_quat(axis, angle_deg: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    rotvec = axis / np.linalg.norm(axis) * np.radians(angle_deg)
    return matrix_to_quat(Rotation.from_rotvec(rotvec).as_matrix())
