"""Shared fixtures: structured clouds whose neighborhoods are distinctive
enough that feature matching is exact on clean data."""

from __future__ import annotations

import numpy as np
import pytest

from rigidreg import PointCloud


def _grid(center, u, v, nu, nv, su, sv):
    """Points of a planar rectangle sampled on a regular nu x nv lattice."""
    us = (np.arange(nu) - (nu - 1) / 2.0) * su
    vs = (np.arange(nv) - (nv - 1) / 2.0) * sv
    uu, vv = np.meshgrid(us, vs, indexing="ij")
    return (
        np.asarray(center)
        + uu.reshape(-1, 1) * np.asarray(u)
        + vv.reshape(-1, 1) * np.asarray(v)
    )


def structured_points(jitter_seed: int | None = 7) -> np.ndarray:
    """Four planar patches with different extents and spacings (408 points).

    A small deterministic jitter breaks the lattice mirror symmetries so
    local neighborhoods are pairwise distinct and nearest feature matching
    on clean copies is the identity. Pass ``jitter_seed=None`` for the bare
    lattice.
    """
    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    e3 = np.array([0.0, 0.0, 1.0])
    d1 = np.array([1.0, 1.0, 0.0]) / np.sqrt(2.0)
    patches = [
        _grid([0.30, 0.20, 0.10], e1, e2, 12, 10, 0.071, 0.083),
        _grid([-0.40, 0.10, 0.35], e2, e3, 10, 9, 0.067, 0.091),
        _grid([0.10, -0.45, -0.20], e1, e3, 11, 9, 0.077, 0.069),
        _grid([-0.15, 0.50, -0.40], d1, e3, 9, 11, 0.093, 0.061),
    ]
    pts = np.concatenate(patches, axis=0)
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        pts = pts + rng.normal(scale=1e-3, size=pts.shape)
    return pts


@pytest.fixture
def patch_cloud() -> PointCloud:
    return PointCloud(structured_points())


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260825)
