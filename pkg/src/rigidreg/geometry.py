"""Point-cloud containers, rigid-transform algebra, voxel downsampling, and
an exact nearest-neighbor index.

Conventions used throughout the package:

- point clouds are ``(N, 3)`` float64 arrays, one point per row, in meters;
- features are ``(N, D)`` float64 arrays aligned row-for-row with the points;
- rotations are ``(3, 3)`` matrices acting on column vectors, so a point
  ``p`` maps to ``R @ p + t``.

All containers are frozen dataclasses whose arrays are made read-only at
construction, so instances can be shared freely across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TypeAlias

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import EmptyCloud, NotARotation

F64: TypeAlias = np.float64
Points: TypeAlias = NDArray[F64]  # (N, 3)
Mat3: TypeAlias = NDArray[F64]    # (3, 3)
Vec3: TypeAlias = NDArray[F64]    # (3,)

ORTHONORMALITY_TOL = 1e-9


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.float64, copy=True)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class PointCloud:
    """An ordered set of 3D points with optional per-point feature vectors."""

    points: Points
    features: NDArray[F64] | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite coordinates")
        object.__setattr__(self, "points", _readonly(pts))
        if self.features is not None:
            feats = np.asarray(self.features, dtype=np.float64)
            if feats.ndim != 2 or feats.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"features must have shape ({pts.shape[0]}, D), got {feats.shape}"
                )
            if feats.shape[1] < 1:
                raise ValueError("feature dimension must be >= 1")
            if not np.all(np.isfinite(feats)):
                raise ValueError("features contain non-finite values")
            object.__setattr__(self, "features", _readonly(feats))

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_features(self) -> bool:
        return self.features is not None

    def with_features(self, features: np.ndarray) -> "PointCloud":
        return PointCloud(self.points, features)


@dataclass(frozen=True)
class RigidTransform:
    """A proper rigid motion: rotation ``R`` in SO(3) plus translation ``t``.

    Construction validates orthonormality (``max |R^T R - I| <= 1e-9``) and
    ``|det R - 1| <= 1e-9``; use :func:`orthonormalize` to repair a drifting
    matrix first.
    """

    rotation: Mat3
    translation: Vec3

    def __post_init__(self) -> None:
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise NotARotation("transform contains non-finite entries")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > ORTHONORMALITY_TOL:
            raise NotARotation(f"rotation is not orthonormal (max deviation {err:.3e})")
        det = float(np.linalg.det(R))
        if abs(det - 1.0) > ORTHONORMALITY_TOL:
            raise NotARotation(f"rotation has determinant {det!r}, expected +1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points: Points) -> Points:
        pts = np.asarray(points, dtype=np.float64)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def matrix4(self) -> NDArray[F64]:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def orthonormalize(R: Mat3) -> Mat3:
    """Project a near-rotation onto the closest orthogonal matrix.

    Uses the polar factor from the SVD, which preserves the determinant
    sign, so a drifting proper rotation stays proper.
    """
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=np.float64))
    return U @ Vt


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """Map every point through the rigid motion; features travel unchanged."""
    return PointCloud(transform.apply(cloud.points), cloud.features)


def compose(first: RigidTransform, second: RigidTransform) -> RigidTransform:
    """Return the transform equivalent to applying ``second`` then ``first``.

    ``compose(T1, T2)(p) == T1(T2(p))``. The composed rotation is
    re-orthonormalized if float drift pushes it past the SO(3) tolerance.
    """
    R = first.rotation @ second.rotation
    t = first.rotation @ second.translation + first.translation
    if np.abs(R.T @ R - np.eye(3)).max() > ORTHONORMALITY_TOL:
        R = orthonormalize(R)
    return RigidTransform(R, t)


def voxel_downsample(cloud: PointCloud, voxel_size: float, seed: int) -> PointCloud:
    """Keep one uniformly chosen original point per occupied voxel cell.

    Cells are ``floor(coordinate / voxel_size)`` per axis with the grid
    origin at (0, 0, 0). Output points are ordered by cell key, so the
    result is deterministic given the seed and idempotent at fixed grid.
    """
    if voxel_size <= 0:
        raise ValueError("voxel_size must be positive")
    if len(cloud) == 0:
        raise EmptyCloud("cannot downsample an empty cloud")

    keys = np.floor(cloud.points / voxel_size).astype(np.int64)
    # lexicographic order over (kx, ky, kz); stable sort keeps original
    # order within a cell so the uniform draw below is well defined
    order = np.lexsort((keys[:, 2], keys[:, 1], keys[:, 0]))
    sorted_keys = keys[order]
    boundaries = np.ones(len(order), dtype=bool)
    boundaries[1:] = np.any(sorted_keys[1:] != sorted_keys[:-1], axis=1)
    starts = np.flatnonzero(boundaries)
    ends = np.append(starts[1:], len(order))

    rng = np.random.default_rng(seed)
    picks = starts + (rng.random(len(starts)) * (ends - starts)).astype(np.int64)
    chosen = order[picks]

    feats = cloud.features[chosen] if cloud.features is not None else None
    return PointCloud(cloud.points[chosen], feats)


def occupied_voxel_count(points: Points, voxel_size: float) -> int:
    """Number of distinct voxel cells covering ``points`` (same hash as
    :func:`voxel_downsample`)."""
    keys = np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)
    return int(np.unique(keys, axis=0).shape[0])


class SpatialIndex:
    """Exact Euclidean 1-nearest-neighbor index over a fixed set of vectors.

    Ties are broken toward the lowest stored index, matching the brute-force
    scan, so both query paths are interchangeable in tests.
    """

    def __init__(self, data: np.ndarray):
        arr = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise EmptyCloud("index requires at least one vector")
        self._data = arr
        self._tree = cKDTree(arr)

    @property
    def size(self) -> int:
        return self._data.shape[0]

    @property
    def dim(self) -> int:
        return self._data.shape[1]

    def query(self, queries: np.ndarray) -> tuple[NDArray[np.int64], NDArray[F64]]:
        """Nearest stored index and distance for each query row."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        k = min(2, self.size)
        dist, idx = self._tree.query(q, k=k)
        if k == 1:
            return idx.astype(np.int64).reshape(-1), np.asarray(dist).reshape(-1)
        d1 = dist[:, 0].copy()
        best = idx[:, 0].astype(np.int64)
        # A second neighbor at the same distance signals a tie; re-resolve
        # those queries against every candidate inside the tie radius.
        tied = np.flatnonzero(dist[:, 1] <= d1)
        for row in tied:
            candidates = self._tree.query_ball_point(q[row], r=d1[row] * (1 + 1e-12) + 1e-300)
            candidates = np.asarray(sorted(candidates), dtype=np.int64)
            cd = np.linalg.norm(self._data[candidates] - q[row], axis=1)
            pick = int(np.argmin(cd))  # argmin takes the first (lowest) index
            best[row] = candidates[pick]
            d1[row] = cd[pick]
        return best, d1

    def query_two(self, queries: np.ndarray) -> tuple[NDArray[F64], NDArray[F64]]:
        """Distances to the first and second nearest stored vectors.

        With a single stored vector the second distance is ``inf``.
        """
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if self.size == 1:
            dist, _ = self._tree.query(q, k=1)
            d1 = np.asarray(dist).reshape(-1)
            return d1, np.full_like(d1, np.inf)
        dist, _ = self._tree.query(q, k=2)
        return dist[:, 0].copy(), dist[:, 1].copy()


def build_index(cloud: PointCloud, space: str = "coordinates") -> SpatialIndex:
    """Build an exact 1-NN index over point coordinates or features."""
    if space == "coordinates":
        if len(cloud) == 0:
            raise EmptyCloud("cannot index an empty cloud")
        return SpatialIndex(cloud.points)
    if space == "features":
        from .errors import MissingFeatures

        if cloud.features is None:
            raise MissingFeatures("cloud has no features to index")
        return SpatialIndex(cloud.features)
    raise ValueError(f"unknown index space {space!r}")


def nearest_bruteforce(data: np.ndarray, queries: np.ndarray) -> tuple[NDArray[np.int64], NDArray[F64]]:
    """Reference linear-scan nearest neighbor (ties to lowest index)."""
    data = np.asarray(data, dtype=np.float64)
    q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    idx = np.empty(q.shape[0], dtype=np.int64)
    dist = np.empty(q.shape[0], dtype=np.float64)
    for row in range(q.shape[0]):
        d = np.linalg.norm(data - q[row], axis=1)
        idx[row] = int(np.argmin(d))
        dist[row] = d[idx[row]]
    return idx, dist
