"""Point-cloud geometry metrics: Chamfer, EMD, voxel IoU, F-score.

Conventions: Chamfer sums the mean squared nearest-neighbor distance in
both directions (configurable to absolute distances); exact EMD solves
the assignment problem and reports the mean matched Euclidean distance;
voxel grids live in a shared canonical frame, 64^3 by default; the
F-score threshold default is 0.005.

Nearest-neighbor queries switch to a k-d tree above 256 reference
points, but recompute the chosen distances with the brute-force formula
so both paths return identical values.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree

from .errors import DimensionError, FormatError, InputError

VOXEL_RESOLUTION = 64
FSCORE_TAU = 0.005
EXACT_EMD_MAX_POINTS = 2048
BRUTE_FORCE_MAX = 256
CANONICAL_FRAME = (-1.0, 1.0)  # per-axis bounds of the shared canonical space


def _check_cloud(points, name: str = "cloud") -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise InputError(f"{name} must be a nonempty (n, 3) array, got shape {pts.shape}")
    if not np.all(np.isfinite(pts)):
        raise InputError(f"{name} contains non-finite coordinates")
    return pts


def nearest_sq_dists(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from each query point to its nearest ref point."""
    query = _check_cloud(query, "query")
    ref = _check_cloud(ref, "ref")
    if ref.shape[0] <= BRUTE_FORCE_MAX:
        d2 = ((query[:, None, :] - ref[None, :, :]) ** 2).sum(axis=2)
        return d2.min(axis=1)
    _, idx = cKDTree(ref).query(query, k=1)
    # recompute with the brute-force formula so the two paths agree exactly
    return ((query - ref[idx]) ** 2).sum(axis=1)


def chamfer(a, b, squared: bool = True) -> float:
    """Symmetric Chamfer distance; zero iff the two sets coincide."""
    a = _check_cloud(a, "a")
    b = _check_cloud(b, "b")
    d_ab = nearest_sq_dists(a, b)
    d_ba = nearest_sq_dists(b, a)
    if not squared:
        d_ab, d_ba = np.sqrt(d_ab), np.sqrt(d_ba)
    return float(d_ab.mean() + d_ba.mean())


def _cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(np.maximum(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2), 0.0))


def emd_exact(a, b) -> float:
    """Mean matched Euclidean distance under the optimal bijection."""
    a = _check_cloud(a, "a")
    b = _check_cloud(b, "b")
    if a.shape[0] != b.shape[0]:
        raise InputError(f"exact EMD needs equal sizes, got {a.shape[0]} vs {b.shape[0]}")
    if a.shape[0] > EXACT_EMD_MAX_POINTS:
        raise InputError(f"exact EMD capped at {EXACT_EMD_MAX_POINTS} points; use entropic mode")
    cost = _cost_matrix(a, b)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum() / a.shape[0])


def emd_entropic(a, b, reg: float = 0.01, n_iter: int = 500) -> tuple[float, float]:
    """Entropic transport approximation: (primal value, duality gap).

    Log-domain Sinkhorn on uniform marginals; the returned plan is rounded
    onto the transport polytope, so the primal value upper-bounds the true
    EMD and (primal - gap) lower-bounds it.
    """
    a = _check_cloud(a, "a")
    b = _check_cloud(b, "b")
    n, m = a.shape[0], b.shape[0]
    wa = np.full(n, 1.0 / n)
    wb = np.full(m, 1.0 / m)
    cost = _cost_matrix(a, b)
    f = np.zeros(n)
    g = np.zeros(m)
    for _ in range(n_iter):
        f = reg * (np.log(wa) - _logsumexp_rows((g[None, :] - cost) / reg))
        g = reg * (np.log(wb) - _logsumexp_rows(((f[:, None] - cost) / reg).T))
    plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
    plan = _round_to_polytope(plan, wa, wb)
    primal = float((plan * cost).sum())
    # feasible dual for the unregularized problem: tighten g columnwise
    g_feas = (cost - f[:, None]).min(axis=0)
    dual = float(wa @ f + wb @ g_feas)
    return primal, max(primal - dual, 0.0)


def _logsumexp_rows(mat: np.ndarray) -> np.ndarray:
    mx = mat.max(axis=1)
    return mx + np.log(np.exp(mat - mx[:, None]).sum(axis=1))


def _round_to_polytope(plan: np.ndarray, wa: np.ndarray, wb: np.ndarray) -> np.ndarray:
    """Altschuler-style rounding of an approximate plan onto exact marginals."""
    r = plan.sum(axis=1)
    plan = plan * np.minimum(1.0, wa / np.maximum(r, 1e-300))[:, None]
    c = plan.sum(axis=0)
    plan = plan * np.minimum(1.0, wb / np.maximum(c, 1e-300))[None, :]
    da = wa - plan.sum(axis=1)
    db = wb - plan.sum(axis=0)
    s = da.sum()
    if s > 0:
        plan = plan + np.outer(da, db) / s
    return plan


def emd(a, b, mode: str | None = None) -> float:
    """Earth mover's distance; mode None picks exact when feasible."""
    a = _check_cloud(a, "a")
    b = _check_cloud(b, "b")
    if mode is None:
        mode = "exact" if (a.shape[0] == b.shape[0] and a.shape[0] <= EXACT_EMD_MAX_POINTS) else "entropic"
    if mode == "exact":
        return emd_exact(a, b)
    if mode == "entropic":
        return emd_entropic(a, b)[0]
    raise InputError(f"unknown EMD mode {mode!r}")


# ---------------------------------------------------------------------------
# Voxel occupancy
# ---------------------------------------------------------------------------


@dataclass
class VoxelGrid:
    resolution: int
    occupancy: np.ndarray  # (R, R, R) bool
    frame_min: np.ndarray
    frame_max: np.ndarray
    dropped: int = 0  # points outside the frame

    def __post_init__(self):
        if self.resolution < 2:
            raise InputError(f"resolution must be >= 2, got {self.resolution}")
        self.occupancy = np.asarray(self.occupancy, dtype=bool)
        if self.occupancy.shape != (self.resolution,) * 3:
            raise DimensionError("occupancy shape does not match resolution")
        self.frame_min = np.asarray(self.frame_min, dtype=np.float64)
        self.frame_max = np.asarray(self.frame_max, dtype=np.float64)
        if np.any(self.frame_min >= self.frame_max):
            raise InputError("degenerate frame: min must be < max on every axis")

    @property
    def count(self) -> int:
        return int(self.occupancy.sum())

    def same_frame(self, other: "VoxelGrid") -> bool:
        return (
            self.resolution == other.resolution
            and np.allclose(self.frame_min, other.frame_min)
            and np.allclose(self.frame_max, other.frame_max)
        )


def voxelize(points, frame=None, resolution: int = VOXEL_RESOLUTION) -> VoxelGrid:
    """Occupancy grid of a cloud in the canonical frame.

    Cell index = floor((x - min)/cell), clamped to R-1 on the max face;
    points outside the frame are dropped and counted. An empty result is
    legal (callers can check ``count``).
    """
    pts = _check_cloud(points)
    if frame is None:
        lo = np.full(3, CANONICAL_FRAME[0])
        hi = np.full(3, CANONICAL_FRAME[1])
    else:
        lo = np.asarray(frame[0], dtype=np.float64) * np.ones(3)
        hi = np.asarray(frame[1], dtype=np.float64) * np.ones(3)
    if np.any(lo >= hi):
        raise InputError("degenerate frame: min must be < max on every axis")
    inside = np.all((pts >= lo) & (pts <= hi), axis=1)
    dropped = int((~inside).sum())
    occ = np.zeros((resolution,) * 3, dtype=bool)
    kept = pts[inside]
    if kept.shape[0] == 0:
        warnings.warn(f"all {dropped} points fall outside the voxel frame; grid is empty", stacklevel=2)
    if kept.shape[0] > 0:
        cell = (hi - lo) / resolution
        idx = np.floor((kept - lo) / cell).astype(np.int64)
        idx = np.minimum(idx, resolution - 1)
        occ[idx[:, 0], idx[:, 1], idx[:, 2]] = True
    return VoxelGrid(resolution, occ, lo, hi, dropped)


def voxel_iou(a: VoxelGrid, b: VoxelGrid) -> float:
    """|A and B| / |A or B|; an empty pair counts as 0 by convention."""
    if not a.same_frame(b):
        raise InputError("voxel grids must share resolution and frame")
    union = int(np.logical_or(a.occupancy, b.occupancy).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a.occupancy, b.occupancy).sum())
    return inter / union


def pairwise_iou(parts: list[VoxelGrid]) -> float:
    """Mean IoU over unordered part pairs (lower = better disentanglement)."""
    if len(parts) < 2:
        raise InputError("pairwise IoU needs at least 2 parts")
    vals = []
    for i in range(len(parts)):
        for j in range(i + 1, len(parts)):
            vals.append(voxel_iou(parts[i], parts[j]))
    return float(np.mean(vals))


def fscore(pred, gt, tau: float = FSCORE_TAU) -> float:
    """Harmonic mean of precision/recall at distance threshold tau."""
    if tau <= 0:
        raise InputError(f"tau must be positive, got {tau}")
    pred = _check_cloud(pred, "pred")
    gt = _check_cloud(gt, "gt")
    precision = float((nearest_sq_dists(pred, gt) <= tau * tau).mean())
    recall = float((nearest_sq_dists(gt, pred) <= tau * tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def embedding_alignment(embf_path, key_a: str, key_b: str) -> float:
    """Normalized inner product of two precomputed embedding vectors.

    Pure pass-through over an EMBF lookup file: this package computes no
    alignment embeddings of its own, it only scores vectors produced
    elsewhere.
    """
    from .semantics import read_embf

    table, _ = read_embf(embf_path)
    for key in (key_a, key_b):
        if key not in table:
            raise InputError(f"key {key!r} not present in {embf_path}")
    return normalized_inner_product(table[key_a], table[key_b])


def normalized_inner_product(a: np.ndarray, b: np.ndarray) -> float:
    """Inner product of two unit-normalized embedding vectors.

    Pass-through utility for precomputed alignment embeddings (this
    package computes no embeddings of its own for this purpose).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionError(f"embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise InputError("cannot normalize a zero embedding")
    return float((a / na) @ (b / nb))


# ---------------------------------------------------------------------------
# Point-cloud file IO: ASCII XYZ and binary little-endian PLY
# ---------------------------------------------------------------------------


def read_xyz(path) -> np.ndarray:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            fields = line.split()
            if len(fields) != 3:
                raise FormatError(f"{path}:{lineno}: expected 'x y z', got {len(fields)} fields")
            try:
                rows.append([float(v) for v in fields])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: non-numeric coordinate") from exc
    if not rows:
        raise FormatError(f"{path}: no points")
    return np.asarray(rows, dtype=np.float64)


def write_xyz(path, points: np.ndarray) -> None:
    pts = _check_cloud(points)
    with open(path, "w", encoding="utf-8") as fh:
        for p in pts:
            fh.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")


def read_ply(path) -> np.ndarray:
    """Binary little-endian PLY with float x/y/z vertex properties only."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.find(b"end_header\n")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    header = data[:end].decode("ascii", errors="replace").splitlines()
    n_vertices = None
    props = []
    fmt_ok = False
    for line in header:
        parts = line.split()
        if parts[:2] == ["format", "binary_little_endian"]:
            fmt_ok = True
        elif parts[:2] == ["element", "vertex"]:
            n_vertices = int(parts[2])
        elif parts and parts[0] == "element" and n_vertices is not None:
            break  # only the vertex element is supported
        elif parts[:1] == ["property"] and n_vertices is not None:
            props.append((parts[1], parts[2]))
    if not fmt_ok:
        raise FormatError(f"{path}: only binary_little_endian PLY is supported")
    if n_vertices is None:
        raise FormatError(f"{path}: missing vertex element")
    if props != [("float", "x"), ("float", "y"), ("float", "z")]:
        raise FormatError(f"{path}: vertex element must be exactly float x, y, z (got {props})")
    body = data[end + len(b"end_header\n") :]
    need = 12 * n_vertices
    if len(body) < need:
        raise FormatError(f"{path}: truncated vertex data")
    pts = np.frombuffer(body[:need], dtype="<f4").reshape(n_vertices, 3)
    return pts.astype(np.float64)


def write_ply(path, points: np.ndarray) -> None:
    pts = _check_cloud(points)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {pts.shape[0]}\n"
        "property float x\nproperty float y\nproperty float z\nend_header\n"
    )
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(pts.astype("<f4").tobytes())


def read_point_cloud(path) -> np.ndarray:
    path = str(path)
    if path.endswith(".ply"):
        return read_ply(path)
    return read_xyz(path)


def write_point_cloud(path, points: np.ndarray) -> None:
    path = str(path)
    if path.endswith(".ply"):
        write_ply(path, points)
    else:
        write_xyz(path, points)


def metric_report(pred, gt, voxel_resolution: int = VOXEL_RESOLUTION, tau: float = FSCORE_TAU) -> dict:
    """The four headline metrics for a predicted/reference cloud pair."""
    pred = _check_cloud(pred, "pred")
    gt = _check_cloud(gt, "gt")
    exact_ok = pred.shape[0] == gt.shape[0] and pred.shape[0] <= EXACT_EMD_MAX_POINTS
    if exact_ok:
        emd_value, emd_mode, emd_gap = emd_exact(pred, gt), "exact", 0.0
    else:
        emd_value, emd_gap = emd_entropic(pred, gt)
        emd_mode = "entropic"
    lo = min(pred.min(), gt.min(), CANONICAL_FRAME[0])
    hi = max(pred.max(), gt.max(), CANONICAL_FRAME[1])
    grid_pred = voxelize(pred, frame=(lo, hi), resolution=voxel_resolution)
    grid_gt = voxelize(gt, frame=(lo, hi), resolution=voxel_resolution)
    return {
        "chamfer": chamfer(pred, gt),
        "emd": emd_value,
        "emd_mode": emd_mode,
        "emd_gap": emd_gap,
        "voxel_iou": voxel_iou(grid_pred, grid_gt),
        "voxel_resolution": voxel_resolution,
        "fscore": fscore(pred, gt, tau),
        "fscore_tau": tau,
        "n_pred": int(pred.shape[0]),
        "n_gt": int(gt.shape[0]),
    }
