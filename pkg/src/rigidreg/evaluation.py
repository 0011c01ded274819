"""Pose-error metrics, synthetic scan-pair generation, and a benchmark
harness with recall reporting.

Rotation error is the geodesic angle arccos((Tr(R̂ᵀR*) - 1)/2); translation
error is reported as the Euclidean distance ||t̂ - t*|| (the squared form is
exposed separately for use as a loss). A pair counts as a success when both
errors are strictly below their thresholds; mean errors aggregate over the
successes only, so recall alone reflects the failures.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from numpy.typing import NDArray

from .correspondence import CorrespondenceSet, OracleWeighter
from .errors import RegistrationError
from .geometry import F64, PointCloud, RigidTransform
from .pipeline import PipelineConfig, register, resolve_weighter
from .results import RegistrationResult

# default sweep grids for the recall-vs-threshold curves
_RE_GRID_DEG = tuple(float(x) for x in np.linspace(0.0, 30.0, 61))
_TE_GRID_M = tuple(float(x) for x in np.linspace(0.0, 0.6, 61))


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def rotation_error(r_hat: np.ndarray, r_star: np.ndarray) -> float:
    """Geodesic angle between two rotations, in radians within [0, pi].

    The trace argument is clamped to [-1, 1]; floating-point products can
    exceed the bound by a few ulps.
    """
    r_hat = np.asarray(r_hat, dtype=np.float64)
    r_star = np.asarray(r_star, dtype=np.float64)
    c = (np.trace(r_hat.T @ r_star) - 1.0) / 2.0
    return float(np.arccos(np.clip(c, -1.0, 1.0)))


def translation_error(t_hat: np.ndarray, t_star: np.ndarray) -> float:
    """Euclidean distance between translations, in meters."""
    return float(np.linalg.norm(np.asarray(t_hat, float) - np.asarray(t_star, float)))


def translation_error_squared(t_hat: np.ndarray, t_star: np.ndarray) -> float:
    """Squared distance, the form used as a training-style loss."""
    d = np.asarray(t_hat, float) - np.asarray(t_star, float)
    return float(d @ d)


@dataclass(frozen=True)
class PairMetrics:
    re: float  # radians
    te: float  # meters
    success: bool

    def __post_init__(self) -> None:
        if not 0.0 <= self.re <= math.pi + 1e-12:
            raise ValueError("re must lie in [0, pi]")
        if self.te < 0.0:
            raise ValueError("te must be non-negative")


def pair_metrics(
    estimate: RigidTransform,
    truth: RigidTransform,
    re_threshold: float,
    te_threshold: float,
) -> PairMetrics:
    """Errors of an estimated pose against the truth, with the strict
    two-threshold success test."""
    re = rotation_error(estimate.rotation, truth.rotation)
    te = translation_error(estimate.translation, truth.translation)
    return PairMetrics(re, te, re < re_threshold and te < te_threshold)


# ---------------------------------------------------------------------------
# synthetic pairs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticPairSpec:
    """Recipe for one synthetic scan pair.

    ``transform_magnitude`` bounds the true motion as (max rotation angle in
    radians, max translation in meters). ``outlier_ratio`` is the fraction
    of target points replaced by uniform noise in the target bounding box.
    """

    n_points: int = 500
    overlap_ratio: float = 0.8
    noise_sigma: float = 0.0
    outlier_ratio: float = 0.0
    transform_magnitude: tuple[float, float] = (math.pi, 1.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 10:
            raise ValueError("n_points must be at least 10")
        if not 0.0 <= self.overlap_ratio <= 1.0:
            raise ValueError("overlap_ratio must lie in [0, 1]")
        if not 0.0 <= self.outlier_ratio <= 1.0:
            raise ValueError("outlier_ratio must lie in [0, 1]")
        if self.noise_sigma < 0.0:
            raise ValueError("noise_sigma must be non-negative")
        if self.transform_magnitude[0] < 0 or self.transform_magnitude[1] < 0:
            raise ValueError("transform magnitudes must be non-negative")


@dataclass(frozen=True)
class SyntheticPair:
    """Generated pair with full provenance.

    ``correspondences`` pairs every target point that originated from a
    source point with that source point, including the ones later replaced
    by outliers; ``inlier_mask`` flags which of those pairs survived intact.
    """

    source: PointCloud
    target: PointCloud
    transform: RigidTransform
    correspondences: CorrespondenceSet
    inlier_mask: NDArray[np.bool_]


@dataclass(frozen=True)
class FilePairSpec:
    """A pair loaded from disk: two clouds plus a ground-truth pose file."""

    source_path: str
    target_path: str
    pose_path: str


def _random_rotation(rng: np.random.Generator, max_angle: float) -> np.ndarray:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle) if max_angle > 0 else 0.0
    K = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + math.sin(angle) * K + (1.0 - math.cos(angle)) * (K @ K)


def _patch_cloud(rng: np.random.Generator, count: int) -> np.ndarray:
    """Union of random planar patches: surface-like, with enough distinct
    orientations that the covariance has full rank."""
    n_patches = 6
    per = np.full(n_patches, count // n_patches)
    per[: count % n_patches] += 1
    pieces = []
    for k in range(n_patches):
        center = rng.uniform(-1.0, 1.0, 3)
        basis = np.linalg.qr(rng.normal(size=(3, 3)))[0][:, :2]
        extent = rng.uniform(0.3, 1.0, 2)
        uv = rng.uniform(-0.5, 0.5, (per[k], 2)) * extent
        pieces.append(center + uv @ basis.T)
    return np.concatenate(pieces, axis=0)


def generate_pair(spec: SyntheticPairSpec) -> SyntheticPair:
    """Deterministic synthetic pair: a patchwork surface, a rigid motion, a
    partial-overlap target with optional Gaussian noise, and outliers with
    a clearance from their true position so construction labels stay exact.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.n_points
    shared_count = int(round(spec.overlap_ratio * n))
    extra = n - shared_count

    base = _patch_cloud(rng, n + extra)
    source_points = base[:n]
    shared_idx = rng.choice(n, size=shared_count, replace=False)

    R = _random_rotation(rng, spec.transform_magnitude[0])
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    t = direction * rng.uniform(0.0, spec.transform_magnitude[1])
    transform = RigidTransform(R, t)

    target_pre = np.concatenate([source_points[shared_idx], base[n:]], axis=0)
    origin = np.concatenate([shared_idx, np.full(extra, -1, dtype=np.int64)])
    perm = rng.permutation(n)
    target_pre = target_pre[perm]
    origin = origin[perm]

    target_points = transform.apply(target_pre)
    if spec.noise_sigma > 0:
        target_points = target_points + rng.normal(
            scale=spec.noise_sigma, size=target_points.shape
        )

    outlier_count = int(round(spec.outlier_ratio * n))
    replaced = np.zeros(n, dtype=bool)
    if outlier_count > 0:
        chosen = rng.choice(n, size=outlier_count, replace=False)
        low = target_points.min(axis=0)
        high = target_points.max(axis=0)
        # keep outliers clear of the position they would have to hit to be
        # mistaken for inliers, so labels derived from the construction and
        # labels derived from residuals agree
        clearance = max(0.2, 10.0 * spec.noise_sigma)
        for j in chosen:
            for _ in range(100):
                candidate = rng.uniform(low, high)
                if np.linalg.norm(candidate - target_points[j]) > clearance:
                    break
            target_points[j] = candidate
        replaced[chosen] = True

    paired = origin >= 0
    pairs = np.column_stack([origin[paired], np.flatnonzero(paired)])
    correspondences = CorrespondenceSet(pairs, n, n)
    inlier_mask = ~replaced[pairs[:, 1]]
    inlier_mask.flags.writeable = False

    return SyntheticPair(
        source=PointCloud(source_points),
        target=PointCloud(target_points),
        transform=transform,
        correspondences=correspondences,
        inlier_mask=inlier_mask,
    )


# ---------------------------------------------------------------------------
# benchmark harness
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PairRecord:
    """One benchmark row; ``re``/``te`` are None when registration raised
    instead of returning a pose."""

    pair_id: int
    branch: str | None
    re: float | None
    te: float | None
    success: bool
    error: str | None


@dataclass(frozen=True)
class BenchmarkReport:
    records: tuple[PairRecord, ...]
    recall: float
    mean_re: float | None
    mean_te: float | None
    branch_counts: Mapping[str, int]
    re_curve: tuple[tuple[float, float], ...]  # (threshold radians, recall)
    te_curve: tuple[tuple[float, float], ...]  # (threshold meters, recall)
    re_threshold: float
    te_threshold: float
    stage_seconds: Mapping[str, float]
    total_seconds: float


@dataclass(frozen=True)
class Preset:
    """A pipeline configuration bundled with its success thresholds."""

    name: str
    pipeline: PipelineConfig
    re_threshold: float  # radians
    te_threshold: float  # meters


def indoor_preset() -> Preset:
    """Room-scale scans: 5 cm voxels, success within 15 degrees / 30 cm."""
    return Preset(
        name="indoor",
        pipeline=PipelineConfig(voxel_size=0.05),
        re_threshold=math.radians(15.0),
        te_threshold=0.30,
    )


def outdoor_preset() -> Preset:
    """Street-scale scans: 30 cm voxels, success within 5 degrees / 60 cm."""
    return Preset(
        name="outdoor",
        pipeline=PipelineConfig(
            voxel_size=0.30,
            ransac=None,  # resolves to inlier_threshold = 0.30
        ),
        re_threshold=math.radians(5.0),
        te_threshold=0.60,
    )


PRESETS = {"indoor": indoor_preset, "outdoor": outdoor_preset}


def worker_count() -> int:
    """Parallelism cap from the DGR_THREADS environment variable; 0 or
    unset means the hardware default."""
    raw = os.environ.get("DGR_THREADS", "").strip()
    if raw in ("", "0"):
        return os.cpu_count() or 1
    value = int(raw)
    if value < 0:
        raise ValueError("DGR_THREADS must be non-negative")
    return value


def _materialize(entry):
    """Turn a suite entry into (source, target, ground_truth)."""
    if isinstance(entry, SyntheticPairSpec):
        pair = generate_pair(entry)
        return pair.source, pair.target, pair.transform
    if isinstance(entry, FilePairSpec):
        from .io import read_ply, read_pose_json  # file formats live in io

        return (
            read_ply(entry.source_path),
            read_ply(entry.target_path),
            read_pose_json(entry.pose_path),
        )
    raise TypeError(f"unsupported suite entry {type(entry).__name__}")


def _run_one(pair_id: int, entry, cfg: PipelineConfig, re_t: float, te_t: float,
             weighter=None):
    source, target, truth = _materialize(entry)
    if weighter is not None:
        provider = weighter
    elif cfg.weighter.startswith("oracle"):
        provider = resolve_weighter(cfg.weighter, ground_truth=truth)
    else:
        provider = resolve_weighter(cfg.weighter)
    try:
        result: RegistrationResult = register(source, target, cfg, weighter=provider)
    except RegistrationError as exc:
        return (
            PairRecord(pair_id, None, None, None, False, type(exc).__name__),
            {},
        )
    metrics = pair_metrics(result.transform, truth, re_t, te_t)
    record = PairRecord(
        pair_id, result.branch, metrics.re, metrics.te, metrics.success, None
    )
    return record, dict(result.stage_seconds or {})


def _recall_curve(records, grid, key) -> tuple[tuple[float, float], ...]:
    n = len(records)
    points = []
    for threshold in grid:
        hits = sum(
            1
            for rec in records
            if getattr(rec, key) is not None and getattr(rec, key) < threshold
        )
        points.append((float(threshold), hits / n))
    return tuple(points)


def run_benchmark(
    suite: Sequence[SyntheticPairSpec | FilePairSpec],
    cfg: PipelineConfig,
    re_threshold: float,
    te_threshold: float,
    weighter=None,
) -> BenchmarkReport:
    """Register every pair in the suite and aggregate recall and errors.

    Per-pair registration failures are recorded as unsuccessful rows; the
    suite always runs to completion. Pairs are evaluated in parallel up to
    :func:`worker_count` threads, with aggregation independent of schedule.
    An explicit ``weighter`` overrides ``cfg.weighter`` for every pair, same
    as in :func:`register`.
    """
    if len(suite) == 0:
        raise ValueError("benchmark suite is empty")
    begin = time.perf_counter()

    workers = min(worker_count(), len(suite))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(
                pool.map(
                    lambda item: _run_one(
                        item[0], item[1], cfg, re_threshold, te_threshold, weighter
                    ),
                    enumerate(suite),
                )
            )
    else:
        outcomes = [
            _run_one(i, entry, cfg, re_threshold, te_threshold, weighter)
            for i, entry in enumerate(suite)
        ]

    records = tuple(rec for rec, _ in outcomes)
    stage_totals: dict[str, float] = {}
    for _, stages in outcomes:
        for name, seconds in stages.items():
            stage_totals[name] = stage_totals.get(name, 0.0) + seconds

    successes = [rec for rec in records if rec.success]
    recall = len(successes) / len(records)
    mean_re = float(np.mean([rec.re for rec in successes])) if successes else None
    mean_te = float(np.mean([rec.te for rec in successes])) if successes else None

    branch_counts: dict[str, int] = {}
    for rec in records:
        name = rec.branch if rec.branch is not None else "failed"
        branch_counts[name] = branch_counts.get(name, 0) + 1

    re_curve = _recall_curve(records, [math.radians(x) for x in _RE_GRID_DEG], "re")
    te_curve = _recall_curve(records, _TE_GRID_M, "te")

    return BenchmarkReport(
        records=records,
        recall=recall,
        mean_re=mean_re,
        mean_te=mean_te,
        branch_counts=branch_counts,
        re_curve=re_curve,
        te_curve=te_curve,
        re_threshold=re_threshold,
        te_threshold=te_threshold,
        stage_seconds=stage_totals,
        total_seconds=time.perf_counter() - begin,
    )
