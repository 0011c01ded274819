"""Robust pose fine-tuning over the continuous 6D rotation representation.

A rotation is parameterized by two 3-vectors (a1, a2); Gram-Schmidt plus a
cross product maps them to an orthonormal matrix:

    b1 = N(a1),  b2 = N(a2 - (b1 . a2) b1),  b3 = b1 x b2,

with N the L2 normalization. The inverse simply reads the first two matrix
columns. Refinement runs first-order descent on (a1, a2, t) against a
prefiltered Huber energy, with step halving so the recorded energy sequence
never increases. Weights are fixed for the whole run; correspondences are
never re-matched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from .correspondence import CorrespondenceSet, WeightVector
from .errors import DegenerateRepresentation, NoActiveCorrespondences, NotARotation
from .geometry import F64, Mat3, PointCloud, RigidTransform, Vec3

_PARALLEL_TOL = 1e-12
_MAX_HALVINGS = 60


@dataclass(frozen=True)
class Rot6D:
    """The (a1, a2) rotation parameterization; a1 must be nonzero and a2
    must keep a component orthogonal to a1."""

    a1: Vec3
    a2: Vec3

    def __post_init__(self) -> None:
        a1 = np.asarray(self.a1, dtype=np.float64).reshape(3)
        a2 = np.asarray(self.a2, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(a1)) and np.all(np.isfinite(a2))):
            raise DegenerateRepresentation("rotation parameters must be finite")
        n1 = np.linalg.norm(a1)
        if n1 <= 0.0:
            raise DegenerateRepresentation("a1 must be nonzero")
        b1 = a1 / n1
        rejection = a2 - (b1 @ a2) * b1
        if np.linalg.norm(rejection) <= _PARALLEL_TOL:
            raise DegenerateRepresentation("a2 is (near-)parallel to a1")
        a1.flags.writeable = False
        a2.flags.writeable = False
        object.__setattr__(self, "a1", a1)
        object.__setattr__(self, "a2", a2)


@dataclass(frozen=True)
class RefineConfig:
    prefilter_tau: float = 0.4
    huber_delta: float = 0.05
    max_iters: int = 200
    step_size: float = 0.1
    convergence_tol: float = 1e-8

    def __post_init__(self) -> None:
        if not 0.0 <= self.prefilter_tau < 1.0:
            raise ValueError("prefilter_tau must lie in [0, 1)")
        if not self.huber_delta > 0:
            raise ValueError("huber_delta must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not self.convergence_tol > 0:
            raise ValueError("convergence_tol must be positive")


@dataclass(frozen=True)
class RefineTrace:
    """Energy recorded before iterating and after every accepted step."""

    energies: tuple[float, ...]
    iterations: int
    termination: str  # "converged" | "max_iters"


def rot6d_to_matrix(a: Rot6D) -> Mat3:
    """Gram-Schmidt the two parameter vectors into rotation columns."""
    b1 = a.a1 / np.linalg.norm(a.a1)
    u = a.a2 - (b1 @ a.a2) * b1
    b2 = u / np.linalg.norm(u)
    b3 = np.cross(b1, b2)
    return np.column_stack([b1, b2, b3])


def matrix_to_rot6d(R: np.ndarray) -> Rot6D:
    """Drop the third column; the first two determine the rotation."""
    R = np.asarray(R, dtype=np.float64)
    if R.shape != (3, 3) or not np.all(np.isfinite(R)):
        raise NotARotation("expected a finite 3x3 matrix")
    if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
        raise NotARotation("matrix is not a proper rotation")
    return Rot6D(R[:, 0].copy(), R[:, 1].copy())


# ---------------------------------------------------------------------------
# energy and gradient
# ---------------------------------------------------------------------------

def _huber(r: np.ndarray, delta: float) -> np.ndarray:
    return np.where(r <= delta, 0.5 * r * r, delta * (r - 0.5 * delta))


def _active_arrays(matches, source, target, weights, tau):
    w = weights.values
    active = w > tau
    if not active.any():
        raise NoActiveCorrespondences(
            f"no correspondence weight above tau = {tau}"
        )
    pairs = matches.pairs[active]
    return (
        source.points[pairs[:, 0]],
        target.points[pairs[:, 1]],
        w[active],
    )


def energy(
    a: Rot6D,
    t: np.ndarray,
    matches: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    weights: WeightVector,
    cfg: RefineConfig,
) -> float:
    """Weighted Huber energy of the residuals y_j - (R x_i + t); pairs with
    weight <= prefilter_tau contribute exactly 0."""
    w = weights.values
    active = w > cfg.prefilter_tau
    if not active.any():
        return 0.0
    pairs = matches.pairs[active]
    R = rot6d_to_matrix(a)
    d = source.points[pairs[:, 0]] @ R.T + np.asarray(t, dtype=np.float64) - (
        target.points[pairs[:, 1]]
    )
    r = np.linalg.norm(d, axis=1)
    return float(np.sum(w[active] * _huber(r, cfg.huber_delta)))


def energy_gradient(
    a: Rot6D,
    t: np.ndarray,
    matches: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    weights: WeightVector,
    cfg: RefineConfig,
) -> tuple[Vec3, Vec3, Vec3]:
    """Analytic gradient of :func:`energy` in (a1, a2, t).

    The per-pair residual gradient is phi(w) * min(1, delta/r) * d (the
    Huber loss is C1, so the quadratic branch's value serves at the kink),
    accumulated into d/dt and d/dR, then chained through the Gram-Schmidt
    construction back to the parameter vectors.
    """
    Xa, Ya, wa = _active_arrays(matches, source, target, weights, cfg.prefilter_tau)
    t = np.asarray(t, dtype=np.float64).reshape(3)

    n1 = np.linalg.norm(a.a1)
    b1 = a.a1 / n1
    u = a.a2 - (b1 @ a.a2) * b1
    nu = np.linalg.norm(u)
    b2 = u / nu
    b3 = np.cross(b1, b2)
    R = np.column_stack([b1, b2, b3])

    d = Xa @ R.T + t - Ya
    r = np.linalg.norm(d, axis=1)
    delta = cfg.huber_delta
    with np.errstate(divide="ignore"):
        coef = wa * np.where(r <= delta, 1.0, delta / np.where(r > 0, r, 1.0))
    g_d = coef[:, None] * d

    g_t = g_d.sum(axis=0)
    G_R = g_d.T @ Xa  # dE/dR, since d = R x + t - y

    g1, g2, g3 = G_R[:, 0], G_R[:, 1], G_R[:, 2]
    # b3 = b1 x b2 routes its gradient onto both factors
    gb1 = g1 + np.cross(b2, g3)
    gb2 = g2 - np.cross(b1, g3)
    # b2 = u/||u||
    gu = (gb2 - (b2 @ gb2) * b2) / nu
    # u = a2 - (b1 . a2) b1
    ga2 = gu - (b1 @ gu) * b1
    gb1 = gb1 - (b1 @ gu) * a.a2 - (b1 @ a.a2) * gu
    # b1 = a1/||a1||
    ga1 = (gb1 - (b1 @ gb1) * b1) / n1
    return ga1, ga2, g_t


# ---------------------------------------------------------------------------
# descent loop
# ---------------------------------------------------------------------------

def refine(
    init: RigidTransform,
    matches: CorrespondenceSet,
    source: PointCloud,
    target: PointCloud,
    weights: WeightVector,
    cfg: RefineConfig,
) -> tuple[RigidTransform, RefineTrace]:
    """Descend the Huber energy from an initial pose.

    Each iteration restarts from ``step_size`` and halves until the energy
    strictly decreases; if no halving helps, the pose is a local minimum at
    this resolution and the loop reports convergence. The returned rotation
    is rebuilt through the 6D map, so it is orthonormal by construction.
    """
    # raises NoActiveCorrespondences before any work when nothing survives
    _active_arrays(matches, source, target, weights, cfg.prefilter_tau)

    a = matrix_to_rot6d(init.rotation)
    params = np.concatenate([a.a1, a.a2, init.translation])

    def unpack(p):
        return Rot6D(p[0:3], p[3:6]), p[6:9]

    def safe_energy(p):
        try:
            rot, trans = unpack(p)
        except DegenerateRepresentation:
            return np.inf
        return energy(rot, trans, matches, source, target, weights, cfg)

    current = safe_energy(params)
    energies = [current]
    iterations = 0
    termination = "max_iters"

    for _ in range(cfg.max_iters):
        iterations += 1
        rot, trans = unpack(params)
        ga1, ga2, gt = energy_gradient(rot, trans, matches, source, target, weights, cfg)
        grad = np.concatenate([ga1, ga2, gt])
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm == 0.0:
            termination = "converged"
            break

        step = cfg.step_size
        candidate = safe_energy(params - step * grad)
        halvings = 0
        while candidate >= current and halvings < _MAX_HALVINGS:
            step *= 0.5
            halvings += 1
            candidate = safe_energy(params - step * grad)
        if candidate >= current:
            # no descent available along the gradient at any tried scale
            termination = "converged"
            break

        params = params - step * grad
        decrease = current - candidate
        current = candidate
        energies.append(current)
        if decrease <= cfg.convergence_tol * max(abs(current), 1.0) or (
            step * grad_norm <= cfg.convergence_tol
        ):
            termination = "converged"
            break

    rot, trans = unpack(params)
    final = RigidTransform(rot6d_to_matrix(rot), trans)
    trace = RefineTrace(tuple(energies), iterations, termination)
    return final, trace
