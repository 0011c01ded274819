"""Closed-form weighted rigid alignment and its derivative with respect to
the correspondence weights.

Given matched points x_i <-> y_i and normalized weights w̃ summing to 1, the
minimizer of sum_i w̃_i ||y_i - (R x_i + t)||^2 over rotations and
translations is

    R̂ = U S Vᵀ,  t̂ = ȳ - R̂ x̄,

where x̄, ȳ are the weighted centroids, U Σ Vᵀ is the SVD of the weighted
centered cross-covariance Σ_xy = Σ_i w̃_i (y_i - ȳ)(x_i - x̄)ᵀ, and
S = diag(1, 1, det(U)det(V)) flips the smallest singular direction when the
unconstrained optimum would be a reflection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .correspondence import WeightVector
from .errors import (
    AllWeightsFiltered,
    DegenerateConfiguration,
    LengthMismatch,
    NumericallyUnstableGradient,
    TooFewCorrespondences,
    WeightLengthMismatch,
)
from .geometry import F64, Mat3, RigidTransform, Vec3

# rank test: rotation is underdetermined when the weighted points are
# collinear or coincident, i.e. the second singular value vanishes
_RANK_TOL = 1e-12
# gradient through the SVD divides by differences of squared singular
# values; refuse instances where any two are this close
_GAP_TOL = 1e-6


@dataclass(frozen=True)
class NormalizedWeights:
    """Prefiltered, L1-normalized weights.

    ``w_tilde`` is phi(w)/||phi(w)||_1 with phi(w) = I[w > tau]*w applied
    elementwise to the raw weights; ``scale`` keeps ||phi(w)||_1 so the raw
    surviving weights can be reconstructed as ``w_tilde * scale``.
    """

    w_tilde: NDArray[F64]
    prefilter_tau: float
    scale: float

    def __post_init__(self) -> None:
        w = np.asarray(self.w_tilde, dtype=np.float64).reshape(-1)
        if w.size == 0:
            raise ValueError("empty weight vector")
        if w.min() < 0.0:
            raise ValueError("normalized weights must be non-negative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("normalized weights must sum to 1")
        if not 0.0 <= self.prefilter_tau < 1.0:
            raise ValueError("prefilter_tau must lie in [0, 1)")
        if not self.scale > 0.0:
            raise ValueError("scale must be positive")
        w.flags.writeable = False
        object.__setattr__(self, "w_tilde", w)


@dataclass(frozen=True)
class ProcrustesSolution:
    """Solver output plus the factorization it came from.

    The SVD factors and weighted centroids are retained so the weight
    gradient reuses the exact decomposition that produced the transform.
    """

    transform: RigidTransform
    residual: float
    cross_covariance: Mat3
    svd_u: Mat3
    svd_s: Vec3
    svd_vt: Mat3
    centroid_source: Vec3
    centroid_target: Vec3


def normalize_weights(weights: WeightVector, tau: float) -> NormalizedWeights:
    """Zero out weights <= tau (strict survival test w > tau), then divide
    by the L1 norm of the survivors."""
    if not 0.0 <= tau < 1.0:
        raise ValueError("tau must lie in [0, 1)")
    raw = weights.values
    phi = np.where(raw > tau, raw, 0.0)
    total = float(phi.sum())
    if total == 0.0:
        raise AllWeightsFiltered(
            f"no weight above tau = {tau}; safeguard registration required"
        )
    return NormalizedWeights(phi / total, tau, total)


def solve(
    source_points: np.ndarray,
    target_points: np.ndarray,
    weights: NormalizedWeights,
) -> ProcrustesSolution:
    """Best rigid transform mapping matched source points onto targets under
    the given normalized weights (global minimizer of the weighted squared
    error)."""
    X = np.asarray(source_points, dtype=np.float64).reshape(-1, 3)
    Y = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    if X.shape[0] != Y.shape[0]:
        raise LengthMismatch(
            f"matched lists differ in length: {X.shape[0]} vs {Y.shape[0]}"
        )
    w = weights.w_tilde
    if w.shape[0] != X.shape[0]:
        raise WeightLengthMismatch(
            f"{w.shape[0]} weights for {X.shape[0]} matched pairs"
        )
    if int(np.count_nonzero(w > 0.0)) < 3:
        raise TooFewCorrespondences(
            "weighted alignment needs at least 3 positive-weight pairs"
        )

    centroid_x = w @ X
    centroid_y = w @ Y
    Xc = X - centroid_x
    Yc = Y - centroid_y
    cross = (Yc * w[:, None]).T @ Xc

    U, sigma, Vt = np.linalg.svd(cross)
    if sigma[1] <= _RANK_TOL * max(1.0, sigma[0]):
        raise DegenerateConfiguration(
            "weighted points are (near-)collinear; rotation underdetermined"
        )
    flip = 1.0 if np.linalg.det(U) * np.linalg.det(Vt) > 0 else -1.0
    R = (U * np.array([1.0, 1.0, flip])) @ Vt
    t = centroid_y - R @ centroid_x

    diff = Y - (X @ R.T + t)
    residual = float(np.sum(w * np.einsum("ij,ij->i", diff, diff)))
    return ProcrustesSolution(
        transform=RigidTransform(R, t),
        residual=residual,
        cross_covariance=cross,
        svd_u=U,
        svd_s=sigma,
        svd_vt=Vt,
        centroid_source=centroid_x,
        centroid_target=centroid_y,
    )


def grad_weights(
    solution: ProcrustesSolution,
    source_points: np.ndarray,
    target_points: np.ndarray,
    weights: NormalizedWeights,
    grad_rotation: np.ndarray,
    grad_translation: np.ndarray,
) -> NDArray[F64]:
    """Derivative of a scalar loss with respect to the raw weights, given
    the loss gradients at the solver output (dL/dR̂ and dL/dt̂).

    The chain runs backwards through t̂ = ȳ - R̂ x̄, the SVD that produced
    R̂, the weighted centroids, and finally the prefilter-plus-normalization
    that took raw w to w̃. Entries the prefilter removed get gradient 0.
    Raises NumericallyUnstableGradient when two singular values are within
    1e-6 of each other relative to the largest, since the SVD derivative
    blows up there.
    """
    X = np.asarray(source_points, dtype=np.float64).reshape(-1, 3)
    Y = np.asarray(target_points, dtype=np.float64).reshape(-1, 3)
    G_R = np.asarray(grad_rotation, dtype=np.float64).reshape(3, 3)
    g_t = np.asarray(grad_translation, dtype=np.float64).reshape(3)
    w = weights.w_tilde
    if X.shape[0] != Y.shape[0] or w.shape[0] != X.shape[0]:
        raise LengthMismatch("points and weights must agree in length")

    U = solution.svd_u
    sigma = solution.svd_s
    Vt = solution.svd_vt
    gaps = np.abs(sigma[:, None] - sigma[None, :])[np.triu_indices(3, k=1)]
    if gaps.min() < _GAP_TOL * max(sigma[0], 1e-300):
        raise NumericallyUnstableGradient(
            "singular values too close for a stable SVD derivative"
        )

    R = solution.transform.rotation
    x_bar = solution.centroid_source
    y_bar = solution.centroid_target

    # t̂ = ȳ - R̂ x̄ makes the translation path feed the rotation gradient
    G_eff = G_R - np.outer(g_t, x_bar)

    # reverse through R̂ = U S Vᵀ with S = diag(1, 1, flip): for the
    # off-diagonal entries of B = Uᵀ (dΣ_xy) V,
    #   dL/dB_ij = [ (H_ij s_j - s_i H_ji) σ_j + σ_i (H_ji s_j - s_i H_ij) ]
    #              / (σ_j² - σ_i²),
    # where H = Uᵀ G_eff V and s holds the diagonal of S. The diagonal of B
    # only moves the singular values, which R̂ does not depend on.
    flip = 1.0 if np.linalg.det(U) * np.linalg.det(Vt) > 0 else -1.0
    s = np.array([1.0, 1.0, flip])
    H = U.T @ G_eff @ Vt.T
    B = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            if i == j:
                continue
            num = (H[i, j] * s[j] - s[i] * H[j, i]) * sigma[j] + sigma[i] * (
                H[j, i] * s[j] - s[i] * H[i, j]
            )
            B[i, j] = num / (sigma[j] ** 2 - sigma[i] ** 2)
    A_bar = U @ B @ Vt

    # Σ_xy = Σ w̃_i (y_i - ȳ)(x_i - x̄)ᵀ; the centroid terms drop out of its
    # differential because the centered sums Σ w̃_i (x_i - x̄) vanish
    Xc = X - x_bar
    Yc = Y - y_bar
    g_wtilde = np.einsum("ij,jk,ik->i", Yc, A_bar, Xc)
    # translation path through both centroids
    g_wtilde += (Y - X @ R.T) @ g_t

    # w̃ = phi(w)/||phi(w)||_1: surviving entries see the normalized
    # gradient, filtered entries are locally constant zeros
    active = w > 0.0
    correction = float(g_wtilde @ w)
    g_raw = np.where(active, (g_wtilde - correction) / weights.scale, 0.0)
    return g_raw
