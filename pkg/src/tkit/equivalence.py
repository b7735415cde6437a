"""Covector characterization of surjectivity, checked by sampling.

For an m x n matrix L with m <= n, the minimum of |v* L| over unit covectors v
equals sigma_min(L), and L has a right inverse of norm 1/sigma_min.  This
module measures both sides on random matrices.
"""
from __future__ import annotations

import numpy as np

from .transversality import Rejection, min_singular_value, right_inverse


def unit_vectors(rng: np.random.Generator, count: int, m: int) -> np.ndarray:
    """Uniform samples on the unit sphere of C^m, shape (count, m)."""
    V = rng.standard_normal((count, m)) + 1j * rng.standard_normal((count, m))
    return V / np.linalg.norm(V, axis=1)[:, None]


def sampled_covector_min(L: np.ndarray, V: np.ndarray, refine: int = 20) -> tuple[float, float]:
    """(raw, refined) minimum of |v* L| over the sample bank V.

    The refined value starts from the best sample and applies inverse iteration
    on L L*, which never leaves the unit sphere.
    """
    A = L @ L.conj().T
    q = np.einsum("pi,pi->p", V.conj(), V @ A.T).real
    best = int(np.argmin(q))
    raw = float(np.sqrt(max(q[best], 0.0)))
    v = V[best]
    for _ in range(refine):
        try:
            v = np.linalg.solve(A, v)
        except np.linalg.LinAlgError:
            break
        v = v / np.linalg.norm(v)
    refined = min(raw, float(np.linalg.norm(v.conj() @ L)))
    return raw, refined


def random_matrix(rng: np.random.Generator, max_dim: int = 4) -> np.ndarray:
    n = int(rng.integers(1, max_dim + 1))
    m = int(rng.integers(1, n + 1))
    return (rng.standard_normal((m, n)) + 1j * rng.standard_normal((m, n))) / np.sqrt(2)


def equivalence_suite(count: int = 1000, samples: int = 100_000, seed: int = 0,
                      max_dim: int = 4) -> dict:
    """Compare sampled covector minima and right inverses against the SVD.

    One sample bank per row count m is shared by all matrices with that m.
    """
    rng = np.random.default_rng(seed)
    banks: dict[int, np.ndarray] = {}
    raw_gap = refined_gap = identity_err = norm_err = 0.0
    rejected = 0
    for _ in range(count):
        L = random_matrix(rng, max_dim)
        m = L.shape[0]
        if m not in banks:
            banks[m] = unit_vectors(rng, samples, m)
        sigma = min_singular_value(L)
        raw, refined = sampled_covector_min(L, banks[m])
        raw_gap = max(raw_gap, abs(raw - sigma))
        refined_gap = max(refined_gap, abs(refined - sigma))
        R = right_inverse(L, 0.5 * sigma)
        if isinstance(R, Rejection):
            rejected += 1
            continue
        identity_err = max(identity_err, float(np.linalg.norm(L @ R - np.eye(m), 2)))
        norm_err = max(norm_err, abs(float(np.linalg.norm(R, 2)) * sigma - 1.0))
    return {
        "count": count,
        "samples": samples,
        "seed": seed,
        "max_raw_gap": raw_gap,
        "max_refined_gap": refined_gap,
        "max_identity_error": identity_err,
        "max_norm_product_error": norm_err,
        "rejected": rejected,
    }
