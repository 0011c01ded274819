"""Putative correspondence generation and confidence weighting.

Matching is exact nearest neighbor in feature space, one match per source
point. Weights come from pluggable providers so externally computed
likelihoods (e.g. a learned matcher's output) can drive the same pipeline
as the built-in heuristics.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .errors import (
    DimensionMismatch,
    EmptyCloud,
    LengthMismatch,
    MissingFeatures,
    WeightLengthMismatch,
)
from .geometry import F64, PointCloud, RigidTransform, SpatialIndex

_DESCRIPTORS = ("raw_xyz", "local_histogram", "precomputed")


# ---------------------------------------------------------------------------
# containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorrespondenceSet:
    """Index pairs (i, j) linking a source cloud of ``source_size`` points
    to a target cloud of ``target_size`` points; each source index appears
    at most once."""

    pairs: NDArray[np.int64]
    source_size: int
    target_size: int

    def __post_init__(self) -> None:
        p = np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)
        if self.source_size < 0 or self.target_size < 0:
            raise ValueError("cloud sizes must be non-negative")
        if p.shape[0] > 0:
            if p[:, 0].min() < 0 or p[:, 0].max() >= self.source_size:
                raise ValueError("source index out of range")
            if p[:, 1].min() < 0 or p[:, 1].max() >= self.target_size:
                raise ValueError("target index out of range")
            if np.unique(p[:, 0]).size != p.shape[0]:
                raise ValueError("duplicate source index in correspondence set")
        p.flags.writeable = False
        object.__setattr__(self, "pairs", p)

    def __len__(self) -> int:
        return self.pairs.shape[0]


@dataclass(frozen=True)
class WeightVector:
    """Per-correspondence confidence values in [0, 1]."""

    values: NDArray[F64]

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise ValueError("weights must be finite")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("weights must lie in [0, 1]")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class InlierLabels:
    """Ground-truth inlier flags: pair (i, j) is an inlier iff the residual
    of x_i mapped through the true transform to y_j is strictly below tau."""

    labels: NDArray[np.bool_]
    tau: float

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels, dtype=bool).reshape(-1)
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        lab.flags.writeable = False
        object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass(frozen=True)
class FeatureConfig:
    """Descriptor choice and its parameters.

    ``raw_xyz`` normalizes each point to a direction vector (3 dims).
    ``local_histogram`` is invariant to translation and rotation: a
    ``bins``-bin histogram of neighbor distances within ``radius`` plus the
    three normalized eigenvalues of the neighborhood covariance
    (``bins + 3`` dims). ``precomputed`` renormalizes features already
    attached to the cloud.
    """

    descriptor: str = "local_histogram"
    radius: float = 0.25
    bins: int = 8

    def __post_init__(self) -> None:
        if self.descriptor not in _DESCRIPTORS:
            raise ValueError(f"unknown descriptor {self.descriptor!r}")
        if self.descriptor == "local_histogram":
            if not self.radius > 0:
                raise ValueError("radius must be positive")
            if self.bins < 2:
                raise ValueError("bins must be at least 2")


def feature_dimension(cfg: FeatureConfig) -> int:
    """Output dimension of :func:`compute_features` for this config
    (``precomputed`` keeps whatever dimension the cloud carries)."""
    if cfg.descriptor == "raw_xyz":
        return 3
    if cfg.descriptor == "local_histogram":
        return cfg.bins + 3
    raise ValueError("precomputed dimension is defined by the input cloud")


# ---------------------------------------------------------------------------
# descriptors
# ---------------------------------------------------------------------------

def _normalize_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    # zero rows stay zero rather than dividing by zero
    return np.where(norms > 0.0, a / np.where(norms > 0.0, norms, 1.0), 0.0)


def _local_histogram(points: np.ndarray, radius: float, bins: int) -> np.ndarray:
    n = points.shape[0]
    tree = cKDTree(points)
    pair_idx = tree.query_pairs(radius, output_type="ndarray")

    # distance histogram; the query point itself occupies bin 0, so the
    # histogram never comes back empty and the normalization below is
    # well defined
    hist = np.zeros((n, bins), dtype=np.float64)
    hist[:, 0] = 1.0
    count = np.ones(n, dtype=np.float64)
    # neighborhood first and second moments for the covariance eigenvalues
    first = points.copy()
    second = np.einsum("ni,nj->nij", points, points)

    if pair_idx.shape[0] > 0:
        a = pair_idx[:, 0]
        b = pair_idx[:, 1]
        d = np.linalg.norm(points[a] - points[b], axis=1)
        slot = np.minimum((d / radius * bins).astype(np.int64), bins - 1)
        np.add.at(hist, (a, slot), 1.0)
        np.add.at(hist, (b, slot), 1.0)
        np.add.at(count, a, 1.0)
        np.add.at(count, b, 1.0)
        np.add.at(first, a, points[b])
        np.add.at(first, b, points[a])
        outer = np.einsum("ni,nj->nij", points[b], points[b])
        np.add.at(second, a, outer)
        outer = np.einsum("ni,nj->nij", points[a], points[a])
        np.add.at(second, b, outer)

    hist /= count[:, None]
    mean = first / count[:, None]
    cov = second / count[:, None, None] - np.einsum("ni,nj->nij", mean, mean)
    eig = np.linalg.eigvalsh(cov)[:, ::-1]
    eig = np.clip(eig, 0.0, None)  # clip tiny negative rounding artifacts
    total = eig.sum(axis=1, keepdims=True)
    eig = np.where(total > 0.0, eig / np.where(total > 0.0, total, 1.0), 0.0)

    return _normalize_rows(np.concatenate([hist, eig], axis=1))


def compute_features(cloud: PointCloud, cfg: FeatureConfig) -> PointCloud:
    """Attach a unit-norm descriptor to every point.

    Deterministic given inputs. ``raw_xyz`` maps a point at the origin to
    the zero vector since it has no direction.
    """
    if len(cloud) == 0:
        raise EmptyCloud("cannot compute features on an empty cloud")
    if cfg.descriptor == "raw_xyz":
        feats = _normalize_rows(cloud.points)
    elif cfg.descriptor == "local_histogram":
        feats = _local_histogram(cloud.points, cfg.radius, cfg.bins)
    else:  # precomputed
        if cloud.features is None:
            raise MissingFeatures("precomputed descriptor requires attached features")
        feats = _normalize_rows(cloud.features)
    return cloud.with_features(feats)


# ---------------------------------------------------------------------------
# matching and labeling
# ---------------------------------------------------------------------------

def match_nearest(source: PointCloud, target: PointCloud) -> CorrespondenceSet:
    """One correspondence per source point: its exact nearest neighbor in
    feature space (ties to the lowest target index)."""
    if source.features is None or target.features is None:
        raise MissingFeatures("both clouds need features before matching")
    if source.features.shape[1] != target.features.shape[1]:
        raise DimensionMismatch(
            f"feature dimensions differ: {source.features.shape[1]} vs "
            f"{target.features.shape[1]}"
        )
    index = SpatialIndex(target.features)
    nearest, _ = index.query(source.features)
    pairs = np.column_stack([np.arange(len(source), dtype=np.int64), nearest])
    return CorrespondenceSet(pairs, len(source), len(target))


def label_inliers(
    matches: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    true_transform: RigidTransform,
    tau: float,
) -> InlierLabels:
    """Flag each pair whose residual under the true transform is < tau."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    mapped = true_transform.apply(source.points[matches.pairs[:, 0]])
    residual = np.linalg.norm(mapped - target.points[matches.pairs[:, 1]], axis=1)
    return InlierLabels(residual < tau, tau)


# ---------------------------------------------------------------------------
# weight providers
# ---------------------------------------------------------------------------

@runtime_checkable
class WeightProvider(Protocol):
    """Maps a correspondence set to per-pair confidences in [0, 1]."""

    def __call__(
        self, matches: CorrespondenceSet, source: PointCloud, target: PointCloud
    ) -> NDArray[F64]: ...


class UniformWeighter:
    """Every correspondence gets weight 1."""

    def __call__(self, matches, source, target):
        return np.ones(len(matches), dtype=np.float64)


class OracleWeighter:
    """Weight 1 for pairs that are inliers under a known true transform,
    0 otherwise. Useful for synthetic evaluation where the truth is known."""

    def __init__(self, true_transform: RigidTransform, tau: float = 0.1):
        self.true_transform = true_transform
        self.tau = float(tau)

    def __call__(self, matches, source, target):
        labels = label_inliers(matches, source, target, self.true_transform, self.tau)
        return labels.labels.astype(np.float64)


class HeuristicWeighter:
    """Reciprocity times a ratio-test score.

    The reciprocity indicator is 1 when the matched target point's nearest
    source feature is the pair's own source point. The ratio score is
    1 - d1/d2 clamped to [0, 1], where d1 is the pair's feature distance and
    d2 the source feature's second-nearest distance in the target cloud; an
    exact feature match scores 1 regardless of competitors.
    """

    def __call__(self, matches, source, target):
        if source.features is None or target.features is None:
            raise MissingFeatures("heuristic weighting needs features on both clouds")
        if len(matches) == 0:
            return np.zeros(0, dtype=np.float64)
        si = matches.pairs[:, 0]
        ti = matches.pairs[:, 1]
        fs = source.features[si]
        ft = target.features[ti]
        d1 = np.linalg.norm(fs - ft, axis=1)

        forward = SpatialIndex(target.features)
        _, d2 = forward.query_two(fs)

        reverse = SpatialIndex(source.features)
        back, _ = reverse.query(target.features[ti])
        reciprocal = (back == si).astype(np.float64)

        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(d2 > 0.0, d1 / d2, np.where(d1 == 0.0, 0.0, np.inf))
        ratio = np.where(d1 == 0.0, 0.0, ratio)
        score = np.clip(1.0 - ratio, 0.0, 1.0)
        return reciprocal * score


class FileWeighter:
    """Weights read from a weight file; pairs must match the correspondence
    set exactly (see the file-format module for the layout)."""

    def __init__(self, path):
        self.path = path

    def __call__(self, matches, source, target):
        from .io import read_weight_file  # file formats live in io

        from .errors import FileFormatError

        source_size, target_size, pairs, weights = read_weight_file(self.path)
        if source_size != matches.source_size or target_size != matches.target_size:
            raise WeightLengthMismatch(
                f"weight file declares cloud sizes {source_size}x{target_size}, "
                f"correspondences expect {matches.source_size}x{matches.target_size}"
            )
        if pairs.shape[0] != len(matches):
            raise WeightLengthMismatch(
                f"weight file has {pairs.shape[0]} entries, expected {len(matches)}"
            )
        if not np.array_equal(pairs, matches.pairs):
            first = int(np.flatnonzero(np.any(pairs != matches.pairs, axis=1))[0])
            raise FileFormatError(
                f"{self.path}: entry {first} pairs ({pairs[first, 0]}, "
                f"{pairs[first, 1]}) but correspondence {first} is "
                f"({matches.pairs[first, 0]}, {matches.pairs[first, 1]})"
            )
        return weights


def weigh(
    matches: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    provider: WeightProvider,
) -> WeightVector:
    """Run a weight provider and validate its output length and range."""
    values = np.asarray(provider(matches, source, target), dtype=np.float64)
    if values.shape != (len(matches),):
        raise WeightLengthMismatch(
            f"provider produced {values.shape[0] if values.ndim == 1 else 'non-1d'} "
            f"weights for {len(matches)} correspondences"
        )
    return WeightVector(values)


# ---------------------------------------------------------------------------
# weighter quality
# ---------------------------------------------------------------------------

_CLAMP_EPS = 1e-7


def bce_score(weights: WeightVector, labels: InlierLabels) -> float:
    """Binary cross-entropy between predicted confidences and ground-truth
    inlier labels, returned as a non-negative mean NLL (0 is perfect).

    Weights are clamped to [1e-7, 1 - 1e-7] so hard 0/1 predictions do not
    produce infinite logs.
    """
    if len(weights) != len(labels):
        raise LengthMismatch(
            f"{len(weights)} weights vs {len(labels)} labels"
        )
    p = np.clip(weights.values, _CLAMP_EPS, 1.0 - _CLAMP_EPS)
    lab = labels.labels
    return float(-np.mean(np.where(lab, np.log(p), np.log1p(-p))))
