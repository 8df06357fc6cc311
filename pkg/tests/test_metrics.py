import itertools

import numpy as np
import pytest

from partlat.errors import FormatError, InputError
from partlat.metrics import (
    VoxelGrid,
    chamfer,
    emd,
    emd_entropic,
    emd_exact,
    fscore,
    metric_report,
    nearest_sq_dists,
    normalized_inner_product,
    pairwise_iou,
    read_ply,
    read_point_cloud,
    read_xyz,
    voxel_iou,
    voxelize,
    write_ply,
    write_xyz,
)


def chamfer_brute(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return d2.min(axis=1).mean() + d2.min(axis=0).mean()


def emd_factorial(a, b):
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    n = len(a)
    best = min(cost[range(n), perm].sum() for perm in itertools.permutations(range(n)))
    return best / n


# ---------------------------------------------------------------------------
# chamfer
# ---------------------------------------------------------------------------


def test_chamfer_identity_zero(rng):
    a = rng.normal(size=(20, 3))
    assert chamfer(a, a) == 0.0


def test_chamfer_two_point_case():
    assert chamfer(np.zeros((1, 3)), np.array([[1.0, 0.0, 0.0]])) == 2.0


def test_chamfer_matches_brute_force(rng):
    for _ in range(200):
        a = rng.normal(size=(int(rng.integers(1, 33)), 3))
        b = rng.normal(size=(int(rng.integers(1, 33)), 3))
        assert chamfer(a, b) == chamfer_brute(a, b)


def test_chamfer_symmetric(rng):
    a, b = rng.normal(size=(10, 3)), rng.normal(size=(14, 3))
    assert chamfer(a, b) == chamfer(b, a)


def test_chamfer_absolute_mode(rng):
    a, b = rng.normal(size=(6, 3)), rng.normal(size=(6, 3))
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    expect = np.sqrt(d2.min(axis=1)).mean() + np.sqrt(d2.min(axis=0)).mean()
    assert abs(chamfer(a, b, squared=False) - expect) < 1e-12


def test_nearest_accelerated_path_bit_identical(rng):
    a = rng.normal(size=(120, 3))
    b = rng.normal(size=(400, 3))  # above the brute-force cutoff
    accel = nearest_sq_dists(a, b)
    brute = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    assert np.array_equal(accel, brute)


def test_chamfer_empty_cloud_error():
    with pytest.raises(InputError):
        chamfer(np.zeros((0, 3)), np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# EMD
# ---------------------------------------------------------------------------


def test_emd_identity_zero(rng):
    a = rng.normal(size=(8, 3))
    assert emd_exact(a, a) < 1e-12


def test_emd_multiset_swap_zero():
    a = np.array([[0.0, 0, 0], [1.0, 0, 0]])
    b = np.array([[1.0, 0, 0], [0.0, 0, 0]])
    assert emd_exact(a, b) == 0.0


def test_emd_exact_matches_factorial_enumeration(rng):
    for _ in range(200):
        n = int(rng.integers(1, 7))
        a, b = rng.normal(size=(n, 3)), rng.normal(size=(n, 3))
        assert abs(emd_exact(a, b) - emd_factorial(a, b)) < 1e-12


def test_emd_exact_size_mismatch():
    with pytest.raises(InputError):
        emd_exact(np.zeros((2, 3)), np.zeros((3, 3)))


def test_emd_entropic_brackets_exact(rng):
    a, b = rng.normal(size=(30, 3)), rng.normal(size=(30, 3))
    exact = emd_exact(a, b)
    primal, gap = emd_entropic(a, b, reg=0.01, n_iter=2000)
    assert exact <= primal + 1e-9
    assert primal - gap <= exact + 1e-9


def test_emd_entropic_uneven_sizes(rng):
    primal, gap = emd_entropic(rng.normal(size=(10, 3)), rng.normal(size=(17, 3)))
    assert primal >= 0 and gap >= 0


def test_emd_auto_mode(rng):
    a = rng.normal(size=(5, 3))
    assert emd(a, a.copy()) < 1e-12
    assert emd(a, rng.normal(size=(9, 3))) > 0  # falls back to entropic


# ---------------------------------------------------------------------------
# voxelization + IoU
# ---------------------------------------------------------------------------


def test_voxelize_center_point_index():
    g = voxelize(np.zeros((1, 3)), resolution=4)
    assert g.count == 1 and g.occupancy[2, 2, 2]


def test_voxelize_outside_points_dropped():
    g = voxelize(np.array([[0.0, 0, 0], [5.0, 5, 5]]), resolution=4)
    assert g.count == 1 and g.dropped == 1
    with pytest.warns(UserWarning):
        empty = voxelize(np.array([[5.0, 5, 5]]), resolution=4)
    assert empty.count == 0 and empty.dropped == 1


def test_voxelize_duplicates_idempotent(rng):
    pts = rng.uniform(-1, 1, size=(50, 3))
    doubled = np.concatenate([pts, pts])
    a, b = voxelize(pts), voxelize(doubled)
    assert np.array_equal(a.occupancy, b.occupancy)
    assert a.count <= min(64**3, 50)


def test_voxelize_max_face_clamped():
    g = voxelize(np.array([[1.0, 1.0, 1.0]]), resolution=4)
    assert g.occupancy[3, 3, 3]


def test_voxelize_degenerate_frame():
    with pytest.raises(InputError):
        voxelize(np.zeros((1, 3)), frame=(1.0, 1.0))


def test_voxel_iou_trivial_cases(rng):
    pts = rng.uniform(-1, 1, size=(40, 3))
    a = voxelize(pts)
    assert voxel_iou(a, a) == 1.0
    left = voxelize(rng.uniform(-1, -0.6, size=(30, 3)))
    right = voxelize(rng.uniform(0.6, 1.0, size=(30, 3)))
    assert voxel_iou(left, right) == 0.0


def test_pairwise_iou_bit_count_oracle():
    occ1 = np.zeros((4, 4, 4), bool); occ1[:2] = True     # 32 cells
    occ2 = np.zeros((4, 4, 4), bool); occ2[1:3] = True    # 32 cells, overlap 16
    occ3 = np.zeros((4, 4, 4), bool); occ3[3] = True      # 16 cells, disjoint
    grids = [VoxelGrid(4, o, np.full(3, -1.0), np.full(3, 1.0)) for o in (occ1, occ2, occ3)]
    expect = (16 / 48 + 0.0 + 0.0) / 3
    assert abs(pairwise_iou(grids) - expect) < 1e-15
    # invariant to list order
    assert pairwise_iou(list(reversed(grids))) == pairwise_iou(grids)


def test_pairwise_iou_empty_pair_convention():
    empty = np.zeros((4, 4, 4), bool)
    grids = [VoxelGrid(4, empty.copy(), np.full(3, -1.0), np.full(3, 1.0)) for _ in range(2)]
    assert pairwise_iou(grids) == 0.0


def test_pairwise_iou_requires_two_parts_and_same_frame():
    g = voxelize(np.zeros((1, 3)))
    with pytest.raises(InputError):
        pairwise_iou([g])
    other = voxelize(np.zeros((1, 3)), frame=(-2.0, 2.0))
    with pytest.raises(InputError):
        pairwise_iou([g, other])


def test_pairwise_iou_in_unit_interval(rng):
    grids = [voxelize(rng.uniform(-1, 1, size=(60, 3)), resolution=8) for _ in range(4)]
    v = pairwise_iou(grids)
    assert 0.0 <= v <= 1.0


# ---------------------------------------------------------------------------
# F-score
# ---------------------------------------------------------------------------


def test_fscore_identity_and_miss(rng):
    a = rng.normal(size=(25, 3))
    assert fscore(a, a) == 1.0
    far = a + 10.0
    assert fscore(far, a, tau=0.005) == 0.0


def test_fscore_constructed_two_thirds():
    gt = np.array([[0.0, 0, 0], [10.0, 0, 0]])
    pred = np.array([[0.0, 0, 0]])  # precision 1, recall 0.5
    assert fscore(pred, gt, tau=0.005) == 2.0 / 3.0


def test_fscore_monotone_in_tau(rng):
    pred = rng.normal(size=(30, 3))
    gt = pred + rng.normal(scale=0.01, size=(30, 3))
    taus = [0.001, 0.005, 0.02, 0.1, 1.0]
    vals = [fscore(pred, gt, tau=t) for t in taus]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert all(0.0 <= v <= 1.0 for v in vals)


def test_fscore_tau_validation():
    with pytest.raises(InputError):
        fscore(np.zeros((1, 3)), np.zeros((1, 3)), tau=0.0)


def test_normalized_inner_product():
    assert abs(normalized_inner_product([2, 0, 0], [4, 0, 0]) - 1.0) < 1e-12
    assert abs(normalized_inner_product([1, 0], [0, 1])) < 1e-12
    with pytest.raises(InputError):
        normalized_inner_product([0, 0], [1, 0])


# ---------------------------------------------------------------------------
# IO
# ---------------------------------------------------------------------------


def test_xyz_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(17, 3))
    path = tmp_path / "c.xyz"
    write_xyz(path, pts)
    assert np.array_equal(read_xyz(path), pts)  # %.17g preserves doubles


def test_xyz_rejects_malformed(tmp_path):
    p = tmp_path / "bad.xyz"
    p.write_text("1 2\n")
    with pytest.raises(FormatError):
        read_xyz(p)
    p.write_text("a b c\n")
    with pytest.raises(FormatError):
        read_xyz(p)


def test_ply_roundtrip(tmp_path, rng):
    pts = rng.normal(size=(9, 3)).astype(np.float32).astype(np.float64)
    path = tmp_path / "c.ply"
    write_ply(path, pts)
    assert np.array_equal(read_ply(path), pts)
    assert np.array_equal(read_point_cloud(path), pts)


def test_ply_rejects_ascii_format(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_bytes(b"ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n")
    with pytest.raises(FormatError):
        read_ply(p)


def test_metric_report_keys(rng):
    pred = rng.uniform(-0.5, 0.5, size=(40, 3))
    report = metric_report(pred, pred.copy())
    assert report["chamfer"] == 0.0 and report["fscore"] == 1.0
    assert report["emd_mode"] == "exact" and report["voxel_iou"] == 1.0
    assert report["voxel_resolution"] == 64 and report["fscore_tau"] == 0.005


def test_voxelize_warns_when_everything_clipped():
    with pytest.warns(UserWarning, match="outside the voxel frame"):
        g = voxelize(np.array([[5.0, 5, 5]]), resolution=4)
    assert g.count == 0 and g.dropped == 1


def test_embedding_alignment_passthrough(tmp_path):
    from partlat.metrics import embedding_alignment
    from partlat.semantics import write_embf

    table = {"caption": np.array([1.0, 0.0, 0.0]), "shape": np.array([0.5, 0.0, 0.0]),
             "other": np.array([0.0, 2.0, 0.0])}
    path = tmp_path / "align.embf"
    write_embf(path, table, 3)
    assert abs(embedding_alignment(path, "caption", "shape") - 1.0) < 1e-6
    assert abs(embedding_alignment(path, "caption", "other")) < 1e-6
    with pytest.raises(InputError):
        embedding_alignment(path, "caption", "missing")
