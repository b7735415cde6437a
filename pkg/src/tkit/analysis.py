"""Jets, derivative bounds and certified sup-norms of polynomial maps."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import Ball, GridSpec, certified_maximum, certified_minimum, grid_for
from .poly import PolyMap


@dataclass(frozen=True, eq=False)
class JetSample:
    point: np.ndarray
    value: np.ndarray
    dz: np.ndarray
    dzbar: np.ndarray


@dataclass(frozen=True)
class Norms:
    c0: float
    c1: float
    c2: float
    dbar_c0: float
    dbar_c1: float

    @property
    def c1_norm(self) -> float:
        """|p|_{C^1}: the larger of the sup of |p| and of its derivative."""
        return max(self.c0, self.c1)

    @property
    def dbar_c1_norm(self) -> float:
        return max(self.dbar_c0, self.dbar_c1)


def evaluate_jet(p: PolyMap, z) -> JetSample:
    z = np.atleast_1d(np.asarray(z, np.complex128))
    if z.shape != (p.n,):
        raise ValueError(f"point has shape {z.shape}, expected ({p.n},)")
    val, dz, dzb = p.jets(z[None, :])
    return JetSample(z, val[0], dz[0], dzb[0])


def derivative_bound(p: PolyMap, ball: Ball, order: int) -> float:
    """Coefficient-sum bound on the sup over ``ball`` of the order-th real derivative.

    For a monomial of total degree d the order-th derivative along unit
    directions is at most d!/(d-order)! * R^(d-order) with R the largest |z|
    on the ball; vector coefficients enter through their Euclidean norm.
    """
    if order < 0:
        raise ValueError("order must be nonnegative")
    if p.nterms == 0:
        return 0.0
    R = ball.reach
    d = p.term_degrees
    mags = np.linalg.norm(p.coeffs, axis=1)
    keep = d >= order
    d, mags = d[keep], mags[keep]
    falling = np.array([math.perm(int(k), order) for k in d], dtype=float)
    return float(np.sum(mags * falling * R ** (d - order).astype(float)))


def certified_sup(p: PolyMap, ball: Ball, grid: GridSpec | None = None,
                  rtol: float = 0.02) -> float:
    """Certified upper bound on sup over ball of |p| (Euclidean norm of the output)."""
    if p.nterms == 0:
        return 0.0
    grid = grid_for(ball, grid)
    M2 = derivative_bound(p, ball, 2)

    def bound(pts, rho):
        val, dz, dzb = p.jets(pts)
        P = len(pts)
        v = np.linalg.norm(val, axis=1)
        slope = np.linalg.norm(dz.reshape(P, -1), axis=1) + np.linalg.norm(dzb.reshape(P, -1), axis=1)
        return v, v + slope * rho + 0.5 * M2 * rho ** 2

    return certified_maximum(grid, bound, rtol=rtol).bound


def c_norms(p: PolyMap, ball: Ball, grid: GridSpec | None = None) -> Norms:
    """Certified upper bounds on C^0, C^1, C^2 sizes of p and C^0, C^1 of dbar p.

    The first derivative is bounded by |dp| + |dbar p| (Frobenius norms), the
    second by |dd p| + 2 |d dbar p| + |dbar dbar p|.
    """
    grid = grid_for(ball, grid)
    if len(grid.lattice()) == 0:
        raise ValueError("empty grid")
    J, Jb = p.jacobian_map, p.dbar_map
    sup = lambda q: certified_sup(q, ball, grid)
    c0 = sup(p)
    dz, dzb = sup(J), sup(Jb)
    JJ, JJb, JbJb = J.jacobian_map, J.dbar_map, Jb.dbar_map
    c2 = sup(JJ) + 2 * sup(JJb) + sup(JbJb)
    dbar_c1 = sup(Jb.jacobian_map) + sup(JbJb)
    return Norms(c0=c0, c1=dz + dzb, c2=c2, dbar_c0=dzb, dbar_c1=dbar_c1)


def c1_bound(p: PolyMap, ball: Ball) -> float:
    """Analytic C^1 bound: max of the order-0 and order-1 coefficient bounds."""
    return max(derivative_bound(p, ball, 0), derivative_bound(p, ball, 1))


def truncate_to_degree(p: PolyMap, d: int, ball: Ball) -> tuple[PolyMap, float]:
    """Keep the holomorphic terms of degree <= d; bound the C^1 size of the rest."""
    if d < 0:
        raise ValueError("degree must be nonnegative")
    holo = ~p.exps[:, p.n:].any(axis=1)
    keep = holo & (p.term_degrees <= d)
    h = PolyMap.from_arrays(p.n, p.m, p.exps[keep], p.coeffs[keep])
    tail = PolyMap.from_arrays(p.n, p.m, p.exps[~keep], p.coeffs[~keep])
    return h, c1_bound(tail, ball)


def certified_inf_norm(p: PolyMap, ball: Ball, grid: GridSpec | None = None,
                       rtol: float = 0.05, max_evals: int = 2_000_000):
    """Certified lower bound on inf over ball of |p|; returns the search result."""
    grid = grid_for(ball, grid)
    M2 = derivative_bound(p, ball, 2)

    def bound(pts, rho):
        val, dz, dzb = p.jets(pts)
        P = len(pts)
        v = np.linalg.norm(val, axis=1)
        slope = np.linalg.norm(dz.reshape(P, -1), axis=1) + np.linalg.norm(dzb.reshape(P, -1), axis=1)
        return v, v - slope * rho - 0.5 * M2 * rho ** 2

    return certified_minimum(grid, bound, rtol=rtol, max_evals=max_evals)
