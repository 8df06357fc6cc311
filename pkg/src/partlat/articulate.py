"""Per-part rigid motion fitting and articulated reassembly.

Two poses of the same object with point-wise correspondence give one
least-squares rigid transform per part (cross-covariance SVD with the
usual reflection fix). Interpolating those transforms -- rotation along
the geodesic, translation linearly -- replays the motion between the
poses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, NumericError

_ORTHO_TOL = 1e-9


@dataclass(frozen=True)
class RigidTransform:
    rotation: np.ndarray  # 3x3, proper
    translation: np.ndarray  # 3-vector

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (3, 3) or t.shape != (3,):
            raise InputError("RigidTransform needs a 3x3 rotation and a 3-vector translation")
        if np.max(np.abs(r.T @ r - np.eye(3))) > 1e-6:
            raise NumericError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise NumericError("rotation must be proper (det = +1)")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self applied after other: x -> R_self (R_other x + t_other) + t_self."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)


def _check_points(points, name: str) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise InputError(f"{name} must be (n, 3), got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InputError(f"{name} contains non-finite coordinates")
    return pts


def fit_rigid(src, dst) -> tuple[RigidTransform, float]:
    """Least-squares (R, t) minimizing sum ||R src_k + t - dst_k||^2.

    Points must be point-wise corresponded and src must span at least a
    plane (covariance rank >= 2). Returns the transform and the residual
    RMS. A reflection optimum is corrected to the best proper rotation.
    """
    src = _check_points(src, "src")
    dst = _check_points(dst, "dst")
    if src.shape != dst.shape:
        raise InputError(f"pose point counts differ: {src.shape[0]} vs {dst.shape[0]}")
    if src.shape[0] < 3:
        raise InputError("rigid fitting needs at least 3 corresponded points")
    c_src = src.mean(axis=0)
    c_dst = dst.mean(axis=0)
    h = (src - c_src).T @ (dst - c_dst)
    u, s, vt = np.linalg.svd(h)
    if np.sum(s > max(s[0], 1e-300) * 1e-9) < 2:
        raise InputError("degenerate configuration: source points are collinear or coincident")
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    rot = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    t = c_dst - rot @ c_src
    residual = float(np.sqrt(np.mean(np.sum((src @ rot.T + t - dst) ** 2, axis=1))))
    return RigidTransform(rot, t), residual


def apply_transform(points, transform: RigidTransform) -> np.ndarray:
    """Pointwise R x + t (preserves pairwise distances)."""
    pts = _check_points(points, "points")
    return pts @ transform.rotation.T + transform.translation


def _axis_angle(rotation: np.ndarray) -> tuple[np.ndarray, float]:
    """Axis and angle in [0, pi] of a proper rotation, robust near pi."""
    cos_theta = np.clip((np.trace(rotation) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < 1e-12:
        return np.array([1.0, 0.0, 0.0]), 0.0
    if np.pi - theta > 1e-6:
        axis = np.array(
            [
                rotation[2, 1] - rotation[1, 2],
                rotation[0, 2] - rotation[2, 0],
                rotation[1, 0] - rotation[0, 1],
            ]
        ) / (2.0 * np.sin(theta))
        return axis / np.linalg.norm(axis), theta
    # near pi the skew part vanishes; use the dominant column of R + I
    m = rotation + np.eye(3)
    col = int(np.argmax(np.diag(m)))
    axis = m[:, col]
    return axis / np.linalg.norm(axis), theta


def _rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0.0, -axis[2], axis[1]],
            [axis[2], 0.0, -axis[0]],
            [-axis[1], axis[0], 0.0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1.0 - np.cos(angle)) * (k @ k)


def interpolate(transform: RigidTransform, s: float) -> RigidTransform:
    """Geodesic partial motion: rotation scaled by s in axis-angle form,
    translation scaled linearly. s=0 is the identity, s=1 is the input."""
    if not (0.0 <= s <= 1.0):
        raise InputError(f"interpolation parameter must lie in [0, 1], got {s}")
    if s == 0.0:
        return RigidTransform.identity()
    if s == 1.0:
        return RigidTransform(transform.rotation.copy(), transform.translation.copy())
    axis, angle = _axis_angle(transform.rotation)
    return RigidTransform(_rotation_about(axis, s * angle), s * transform.translation)


def reassemble(
    parts: dict[int, np.ndarray],
    transforms: dict[int, RigidTransform],
    s: float = 1.0,
) -> np.ndarray:
    """Union of interpolate-then-apply over all parts, in part-id order."""
    if not parts:
        raise InputError("no parts to reassemble")
    missing = sorted(set(parts) - set(transforms))
    if missing:
        raise InputError(f"missing transforms for part id(s) {missing}")
    moved = []
    for pid in sorted(parts):
        moved.append(apply_transform(parts[pid], interpolate(transforms[pid], s)))
    return np.concatenate(moved, axis=0)


def fit_pose_pair(
    pose_a: np.ndarray,
    pose_b: np.ndarray,
    part_ids: np.ndarray,
) -> dict[int, tuple[RigidTransform, float]]:
    """Per-part rigid fits between two corresponded poses.

    ``part_ids`` assigns each point row to a part; both poses must list
    the same points in the same order.
    """
    pose_a = _check_points(pose_a, "pose_a")
    pose_b = _check_points(pose_b, "pose_b")
    part_ids = np.asarray(part_ids, dtype=np.int64)
    if pose_a.shape != pose_b.shape or part_ids.shape != (pose_a.shape[0],):
        raise InputError("poses and part index must describe the same points")
    fits = {}
    for pid in sorted(set(part_ids.tolist())):
        sel = part_ids == pid
        fits[int(pid)] = fit_rigid(pose_a[sel], pose_b[sel])
    return fits


def read_part_index(path, n_points: int) -> np.ndarray:
    """One integer part id per line, aligned with the pose files' points."""
    ids = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                ids.append(int(line))
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: part id must be an integer") from exc
    if len(ids) != n_points:
        raise InputError(f"{path}: {len(ids)} part ids for {n_points} points")
    return np.asarray(ids, dtype=np.int64)
