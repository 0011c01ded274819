"""End-to-end registration: downsample, describe, match, weigh, then either
the weighted closed-form solve plus robust refinement, or the RANSAC
safeguard when the weight mass is too thin to trust.

The branch decision is the strict test

    inlier_fraction(w, prefilter_tau) < safeguard_tau_s  ->  safeguard,

and any solver degeneracy (all weights filtered, fewer than 3 surviving
pairs, collinear weighted geometry) also diverts to the safeguard with the
reason recorded on the result.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, replace

from .correspondence import (
    CorrespondenceSet,
    FeatureConfig,
    FileWeighter,
    HeuristicWeighter,
    UniformWeighter,
    WeightProvider,
    WeightVector,
    compute_features,
    match_nearest,
    weigh,
)
from .errors import (
    AllWeightsFiltered,
    DegenerateConfiguration,
    EmptyCloud,
    LengthMismatch,
    NoConsensus,
    RegistrationFailed,
    TooFewCorrespondences,
)
from .geometry import PointCloud, voxel_downsample
from .procrustes import normalize_weights, solve
from .ransac import RansacConfig, inlier_fraction, ransac_register
from .refine import RefineConfig, refine
from .results import MAIN_BRANCH, RegistrationResult


@dataclass(frozen=True)
class PipelineConfig:
    """Knobs for the full pipeline.

    ``weighter`` is a provider name: "uniform", "heuristic", "file:PATH",
    or "oracle[:TAU]" (the oracle needs a ground-truth transform and is
    only resolvable where one exists, e.g. the synthetic benchmark).
    ``prefilter_tau`` is shared by weight normalization, the refinement
    energy, and the safeguard statistic. ``seed`` drives the voxel
    subsampling draw. A ``ransac`` of None resolves to defaults with
    ``inlier_threshold = voxel_size``.
    """

    feature: FeatureConfig = FeatureConfig()
    weighter: str = "uniform"
    voxel_size: float = 0.05
    safeguard_tau_s: float = 0.05
    prefilter_tau: float = 0.4
    refine: RefineConfig = RefineConfig()
    ransac: RansacConfig | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.voxel_size > 0:
            raise ValueError("voxel_size must be positive")
        if not 0.0 < self.safeguard_tau_s < 1.0:
            raise ValueError("safeguard_tau_s must lie in (0, 1)")
        if not 0.0 <= self.prefilter_tau < 1.0:
            raise ValueError("prefilter_tau must lie in [0, 1)")
        if self.ransac is None:
            object.__setattr__(
                self, "ransac", RansacConfig(inlier_threshold=self.voxel_size)
            )


def resolve_weighter(spec: str, ground_truth=None, oracle_tau: float = 0.1) -> WeightProvider:
    """Instantiate the provider named by a config string."""
    from .correspondence import OracleWeighter

    if spec == "uniform":
        return UniformWeighter()
    if spec == "heuristic":
        return HeuristicWeighter()
    if spec.startswith("file:"):
        path = spec[len("file:"):]
        if not path:
            raise ValueError("file weighter needs a path: file:PATH")
        return FileWeighter(path)
    if spec == "oracle" or spec.startswith("oracle:"):
        if ground_truth is None:
            raise ValueError(
                "oracle weighter requires a ground-truth transform; it is only "
                "available where one is known (synthetic benchmarks)"
            )
        tau = oracle_tau
        if spec.startswith("oracle:"):
            tau = float(spec[len("oracle:"):])
        return OracleWeighter(ground_truth, tau)
    raise ValueError(f"unknown weighter {spec!r}")


def _core(
    matches: CorrespondenceSet,
    weights: WeightVector,
    source: PointCloud,
    target: PointCloud,
    cfg: PipelineConfig,
    stage_seconds: dict,
) -> RegistrationResult:
    fraction = inlier_fraction(weights, cfg.prefilter_tau)
    fallback_reason = None
    if fraction < cfg.safeguard_tau_s:
        fallback_reason = "low_inlier_fraction"
    else:
        try:
            begin = time.perf_counter()
            normalized = normalize_weights(weights, cfg.prefilter_tau)
            matched_x = source.points[matches.pairs[:, 0]]
            matched_y = target.points[matches.pairs[:, 1]]
            solution = solve(matched_x, matched_y, normalized)
            stage_seconds["solve"] = time.perf_counter() - begin

            begin = time.perf_counter()
            refine_cfg = replace(cfg.refine, prefilter_tau=cfg.prefilter_tau)
            transform, trace = refine(
                solution.transform, matches, source, target, weights, refine_cfg
            )
            stage_seconds["refine"] = time.perf_counter() - begin
            return RegistrationResult(
                transform=transform,
                branch=MAIN_BRANCH,
                inlier_fraction=fraction,
                trace=trace,
                correspondence_count=len(matches),
                stage_seconds=dict(stage_seconds),
            )
        except (AllWeightsFiltered, TooFewCorrespondences, DegenerateConfiguration) as exc:
            fallback_reason = type(exc).__name__

    begin = time.perf_counter()
    try:
        result = ransac_register(matches, source, target, cfg.ransac)
    except (TooFewCorrespondences, NoConsensus) as exc:
        raise RegistrationFailed(
            f"safeguard failed after {fallback_reason}: {exc}"
        ) from exc
    stage_seconds["safeguard"] = time.perf_counter() - begin
    return replace(
        result,
        inlier_fraction=fraction,
        fallback_reason=fallback_reason,
        stage_seconds=dict(stage_seconds),
    )


def register(
    source: PointCloud,
    target: PointCloud,
    cfg: PipelineConfig,
    weighter: WeightProvider | None = None,
) -> RegistrationResult:
    """Full pipeline on raw clouds.

    ``weighter`` overrides the provider named in the config; callers that
    know a ground truth use it to pass an oracle.
    """
    stage_seconds: dict = {}

    begin = time.perf_counter()
    # the same seed on both clouds makes identical inputs pick identical
    # voxel representatives, so self-registration is exact
    source_d = voxel_downsample(source, cfg.voxel_size, cfg.seed)
    target_d = voxel_downsample(target, cfg.voxel_size, cfg.seed)
    stage_seconds["downsample"] = time.perf_counter() - begin
    if len(source_d) < 3 or len(target_d) < 3:
        raise EmptyCloud("fewer than 3 points survive voxel downsampling")

    begin = time.perf_counter()
    source_d = compute_features(source_d, cfg.feature)
    target_d = compute_features(target_d, cfg.feature)
    stage_seconds["features"] = time.perf_counter() - begin

    begin = time.perf_counter()
    matches = match_nearest(source_d, target_d)
    stage_seconds["match"] = time.perf_counter() - begin

    begin = time.perf_counter()
    provider = weighter if weighter is not None else resolve_weighter(cfg.weighter)
    weights = weigh(matches, source_d, target_d, provider)
    stage_seconds["weigh"] = time.perf_counter() - begin

    return _core(matches, weights, source_d, target_d, cfg, stage_seconds)


def register_with_correspondences(
    matches: CorrespondenceSet,
    weights: WeightVector,
    source: PointCloud,
    target: PointCloud,
    cfg: PipelineConfig,
) -> RegistrationResult:
    """Pipeline entry for externally computed matches and weights: skips
    downsampling, description, and matching, then behaves exactly like
    :func:`register` from the safeguard test onward."""
    if matches.source_size != len(source) or matches.target_size != len(target):
        raise LengthMismatch(
            f"correspondences sized {matches.source_size}x{matches.target_size} "
            f"against clouds {len(source)}x{len(target)}"
        )
    if len(weights) != len(matches):
        raise LengthMismatch(
            f"{len(weights)} weights for {len(matches)} correspondences"
        )
    return _core(matches, weights, source, target, cfg, {})
