import numpy as np
import pytest

from partlat.articulate import (
    RigidTransform,
    apply_transform,
    fit_pose_pair,
    fit_rigid,
    interpolate,
    read_part_index,
    reassemble,
)
from partlat.errors import InputError


def rotation_about(axis, angle):
    axis = np.asarray(axis, float)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def random_rotation(rng, angle=None):
    axis = rng.normal(size=3)
    theta = rng.uniform(0, np.pi) if angle is None else angle
    return rotation_about(axis, theta)


def test_fit_identity():
    src = np.random.default_rng(0).normal(size=(10, 3))
    T, res = fit_rigid(src, src)
    assert np.allclose(T.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(T.translation, 0, atol=1e-9)
    assert res < 1e-9


def test_fit_pure_translation():
    src = np.random.default_rng(1).normal(size=(12, 3))
    T, res = fit_rigid(src, src + np.array([1.0, 2.0, 3.0]))
    assert np.allclose(T.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(T.translation, [1, 2, 3], atol=1e-9)
    assert res < 1e-9


def test_generate_and_recover_500_trials(rng):
    for k in range(500):
        angle = np.pi - 1e-7 if k % 10 == 0 else None  # exercise near-180 fits
        R = random_rotation(rng, angle)
        t = rng.normal(size=3)
        src = rng.normal(size=(20, 3))
        dst = src @ R.T + t
        T, res = fit_rigid(src, dst)
        assert np.max(np.abs(T.rotation - R)) < 1e-6
        assert np.max(np.abs(T.translation - t)) < 1e-6
        assert res <= 1e-9
        assert abs(np.linalg.det(T.rotation) - 1.0) < 1e-9
        assert np.max(np.abs(T.rotation.T @ T.rotation - np.eye(3))) < 1e-9


def test_fit_residual_decreases_with_noise(rng):
    src = rng.normal(size=(60, 3))
    R = random_rotation(rng)
    t = rng.normal(size=3)
    dst = src @ R.T + t
    residuals = []
    for scale in (0.1, 0.01, 0.0):
        noisy = dst + rng.normal(scale=scale, size=dst.shape) if scale else dst
        residuals.append(fit_rigid(src, noisy)[1])
    assert residuals[0] > residuals[1] > residuals[2]
    assert residuals[2] <= 1e-9


def test_fit_reflection_resolved_to_proper_rotation(rng):
    # planar points invite a reflection optimum; det must still be +1
    src = rng.normal(size=(15, 3))
    src[:, 2] = 0.0
    dst = src @ np.diag([1.0, -1.0, 1.0])  # a reflection of the plane
    T, _ = fit_rigid(src, dst)
    assert abs(np.linalg.det(T.rotation) - 1.0) < 1e-9


def test_fit_degenerate_inputs():
    line = np.stack([np.linspace(0, 1, 5)] * 3, axis=1)  # collinear
    with pytest.raises(InputError):
        fit_rigid(line, line + 1.0)
    with pytest.raises(InputError):
        fit_rigid(np.zeros((2, 3)), np.zeros((2, 3)))


def test_apply_transform_preserves_distances(rng):
    pts = rng.normal(size=(30, 3))
    T = RigidTransform(random_rotation(rng), rng.normal(size=3))
    moved = apply_transform(pts, T)
    d0 = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
    d1 = np.linalg.norm(moved[:, None] - moved[None, :], axis=2)
    assert np.max(np.abs(d0 - d1)) < 1e-9


def test_apply_identity_and_inverse(rng):
    pts = rng.normal(size=(10, 3))
    assert np.array_equal(apply_transform(pts, RigidTransform.identity()), pts)
    T = RigidTransform(random_rotation(rng), rng.normal(size=3))
    back = apply_transform(apply_transform(pts, T), T.inverse())
    assert np.max(np.abs(back - pts)) < 1e-9
    comp = T.compose(T.inverse())
    assert np.allclose(comp.rotation, np.eye(3), atol=1e-9)
    assert np.allclose(comp.translation, 0, atol=1e-9)


def test_interpolate_endpoints(rng):
    T = RigidTransform(random_rotation(rng), rng.normal(size=3))
    s0 = interpolate(T, 0.0)
    assert np.array_equal(s0.rotation, np.eye(3)) and np.array_equal(s0.translation, np.zeros(3))
    s1 = interpolate(T, 1.0)
    assert np.array_equal(s1.rotation, T.rotation) and np.array_equal(s1.translation, T.translation)
    with pytest.raises(InputError):
        interpolate(T, 1.5)


def test_interpolate_half_angle():
    T = RigidTransform(rotation_about([0, 0, 1], 1.0), np.array([2.0, 0.0, 0.0]))
    H = interpolate(T, 0.5)
    assert np.allclose(H.rotation, rotation_about([0, 0, 1], 0.5), atol=1e-12)
    assert np.allclose(H.translation, [1, 0, 0], atol=1e-12)


def test_interpolate_geodesic_composition(rng):
    T = RigidTransform(random_rotation(rng), np.zeros(3))
    half = interpolate(T, 0.5)
    assert np.allclose(half.rotation @ half.rotation, T.rotation, atol=1e-9)


def test_reassemble_identity_and_targets(rng):
    parts = {0: rng.normal(size=(10, 3)), 1: rng.normal(size=(7, 3))}
    idt = {0: RigidTransform.identity(), 1: RigidTransform.identity()}
    src_union = np.concatenate([parts[0], parts[1]])
    assert np.array_equal(reassemble(parts, idt, 0.3), src_union)

    Ts = {
        0: RigidTransform(random_rotation(rng), rng.normal(size=3)),
        1: RigidTransform(random_rotation(rng), rng.normal(size=3)),
    }
    target = np.concatenate([apply_transform(parts[k], Ts[k]) for k in (0, 1)])
    assert np.max(np.abs(reassemble(parts, Ts, 1.0) - target)) < 1e-12


def test_reassemble_two_pose_pipeline(rng):
    # build two poses, fit per part, reassemble at s=1: must hit pose B
    n0, n1 = 25, 30
    part_ids = np.concatenate([np.zeros(n0, int), np.ones(n1, int)])
    pose_a = rng.normal(size=(n0 + n1, 3))
    Ts = {0: RigidTransform(random_rotation(rng), rng.normal(size=3)),
          1: RigidTransform(random_rotation(rng), rng.normal(size=3))}
    pose_b = np.concatenate([apply_transform(pose_a[:n0], Ts[0]), apply_transform(pose_a[n0:], Ts[1])])
    fits = fit_pose_pair(pose_a, pose_b, part_ids)
    parts = {0: pose_a[:n0], 1: pose_a[n0:]}
    moved = reassemble(parts, {pid: f[0] for pid, f in fits.items()}, 1.0)
    assert np.max(np.abs(moved - pose_b)) < 1e-6


def test_reassemble_errors():
    with pytest.raises(InputError):
        reassemble({}, {}, 1.0)
    with pytest.raises(InputError):
        reassemble({0: np.zeros((3, 3))}, {}, 1.0)


def test_read_part_index(tmp_path):
    p = tmp_path / "parts.txt"
    p.write_text("0\n0\n1\n")
    assert np.array_equal(read_part_index(p, 3), [0, 0, 1])
    with pytest.raises(InputError):
        read_part_index(p, 4)
    p.write_text("0\nx\n1\n")
    with pytest.raises(InputError):
        read_part_index(p, 3)
