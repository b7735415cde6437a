"""Low-discrepancy candidate offsets and nearest-sample scoring."""
from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree
from scipy.stats import norm, qmc


class SearchFailure(RuntimeError):
    """No candidate offset reached the required margin."""

    def __init__(self, message: str, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class HypothesisError(ValueError):
    """An input violates a size hypothesis of the perturbation algorithm."""

    def __init__(self, quantity: str, value: float, limit: float):
        super().__init__(f"{quantity} = {value:.6g} exceeds {limit:.6g}")
        self.quantity = quantity
        self.value = value
        self.limit = limit


def ball_candidates(dim: int, radius: float, count: int, seed: int,
                    center: np.ndarray | None = None, outer: float | None = None) -> np.ndarray:
    """Scrambled Sobol points filling the complex ball B(center, radius) in C^dim.

    The first candidate is the center itself.  With ``outer`` given, points
    are clipped radially into the origin-centered ball of that radius.
    """
    center = np.zeros(dim, np.complex128) if center is None else np.asarray(center, np.complex128)
    sob = qmc.Sobol(d=2 * dim + 1, scramble=True, seed=seed)
    u = sob.random_base2(max(1, math.ceil(math.log2(max(count, 2)))))[: count - 1]
    u = np.clip(u, 1e-12, 1 - 1e-12)
    gauss = norm.ppf(u[:, : 2 * dim])
    direction = gauss / np.linalg.norm(gauss, axis=1, keepdims=True)
    r = radius * u[:, 2 * dim] ** (1.0 / (2 * dim))
    real = direction * r[:, None]
    pts = center + real[:, :dim] + 1j * real[:, dim:]
    pts = np.vstack([center[None, :], pts])
    if outer is not None:
        mags = np.linalg.norm(pts, axis=1)
        pts = pts * np.minimum(1.0, outer / np.maximum(mags, 1e-300))[:, None]
    return pts


def as_real(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, np.complex128)
    return np.concatenate([z.real, z.imag], axis=-1)


def distance_to_samples(candidates: np.ndarray, samples: np.ndarray) -> np.ndarray:
    """Euclidean distance from each candidate to the nearest sample point."""
    if len(samples) == 0:
        return np.full(len(candidates), np.inf)
    tree = cKDTree(as_real(samples))
    d, _ = tree.query(as_real(candidates))
    return d


def rank_by_score(scores: np.ndarray) -> np.ndarray:
    """Indices by decreasing score; ties broken by candidate index."""
    return np.lexsort((np.arange(len(scores)), -scores))
