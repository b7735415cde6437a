"""Pointwise and ball-certified transversality margins.

The margin of a map at a point is ``max(|f|, sigma)`` where ``sigma`` is the
smallest singular value of the holomorphic Jacobian, optionally reduced by the
operator size of the antiholomorphic Jacobian.  A map is eta-transverse to 0
on a ball exactly when the infimum of the margin there is at least eta.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .analysis import JetSample, derivative_bound
from .geometry import Ball, GridSpec, certified_minimum, grid_for
from .poly import PolyMap


@dataclass(frozen=True)
class Rejection:
    """Returned by :func:`right_inverse` when the matrix is not alpha-surjective."""

    sigma_min: float


def _as_matrix(L) -> np.ndarray:
    L = np.atleast_2d(np.asarray(L, np.complex128))
    if L.shape[0] > L.shape[1]:
        raise ValueError(f"unsupported shape {L.shape}: need m <= n")
    return L


def min_singular_value(L) -> float:
    L = _as_matrix(L)
    return float(np.linalg.svd(L, compute_uv=False)[-1])


def right_inverse(L, alpha: float):
    """R = L^* (L L^*)^{-1} when sigma_min(L) >= alpha, else a :class:`Rejection`."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    L = _as_matrix(L)
    sigma = min_singular_value(L)
    if sigma < alpha:
        return Rejection(sigma)
    Lh = L.conj().T
    return Lh @ np.linalg.inv(L @ Lh)


def sigma_min_batch(M: np.ndarray) -> np.ndarray:
    """Smallest singular value of each (m, n) matrix in a (P, m, n) stack, m <= n."""
    if M.shape[1] == 1:
        return np.linalg.norm(M[:, 0, :], axis=1)
    return np.linalg.svd(M, compute_uv=False)[:, -1]


def margin_at(jet: JetSample, use_full_gradient: bool = False) -> float:
    value = float(np.linalg.norm(jet.value))
    m, n = np.shape(jet.dz)
    if m > n:
        return value
    sigma = min_singular_value(jet.dz)
    if use_full_gradient:
        sigma = max(0.0, sigma - float(np.linalg.norm(jet.dzbar)))
    return max(value, sigma)


def margin_field(p: PolyMap, pts: np.ndarray, use_full_gradient: bool = False):
    """Batched pointwise margins: returns (margin, |f|, sigma, dbar penalty)."""
    val, dz, dzb = p.jets(pts)
    absv = np.linalg.norm(val, axis=1)
    if p.m > p.n:
        zeros = np.zeros(len(absv))
        return absv, absv, zeros, zeros
    sigma = sigma_min_batch(dz)
    pen = np.linalg.norm(dzb.reshape(len(dzb), -1), axis=1) if use_full_gradient else np.zeros(len(absv))
    return np.maximum(absv, np.maximum(sigma - pen, 0.0)), absv, sigma, pen


@dataclass(frozen=True, eq=False)
class TransversalityCertificate:
    ball: Ball
    grid: GridSpec
    margin: float
    lipschitz_slack: float
    holomorphic_only: bool
    dbar_penalty: float
    void: bool = False
    shift: float = 0.0
    witness: np.ndarray | None = None
    evaluations: int = 0

    def to_dict(self) -> dict:
        return {
            "ball": self.ball.to_dict(),
            "grid": self.grid.to_dict(),
            "margin": float(self.margin),
            "lipschitz_slack": float(self.lipschitz_slack),
            "holomorphic_only": bool(self.holomorphic_only),
            "dbar_penalty": float(self.dbar_penalty),
            "void": bool(self.void),
            "shift": float(self.shift),
            "witness": None if self.witness is None else
            [[float(c.real), float(c.imag)] for c in self.witness],
            "evaluations": int(self.evaluations),
        }

    @classmethod
    def from_dict(cls, d) -> "TransversalityCertificate":
        w = d.get("witness")
        return cls(
            ball=Ball.from_dict(d["ball"]),
            grid=GridSpec.from_dict(d["grid"]),
            margin=float(d["margin"]),
            lipschitz_slack=float(d["lipschitz_slack"]),
            holomorphic_only=bool(d["holomorphic_only"]),
            dbar_penalty=float(d["dbar_penalty"]),
            void=bool(d.get("void", False)),
            shift=float(d.get("shift", 0.0)),
            witness=None if w is None else np.array([complex(a, b) for a, b in w]),
            evaluations=int(d.get("evaluations", 0)),
        )


def certify_transverse(p: PolyMap, ball: Ball, grid: GridSpec | None = None,
                       use_full_gradient: bool | None = None, rtol: float = 0.05,
                       max_evals: int = 2_000_000) -> TransversalityCertificate:
    """Certified lower bound on the infimum over ``ball`` of the margin of p.

    On a cell of radius rho around c, each ingredient q of the margin obeys
    ``q(x) >= q(c) - |Dq(c)| rho - M2 rho^2 / 2`` with |Dq(c)| read off the jet
    at c and M2 a coefficient bound on the second derivative over the ball.
    """
    if ball.n != p.n:
        raise ValueError("ball dimension does not match the map")
    grid = grid_for(ball, grid)
    if use_full_gradient is None:
        use_full_gradient = not p.is_holomorphic
    value_only = p.m > p.n
    J, Jb = p.jacobian_map, p.dbar_map
    M_val = derivative_bound(p, ball, 2)
    M_sig = derivative_bound(J, ball, 2)
    M_pen = derivative_bound(Jb, ball, 2) if use_full_gradient else 0.0
    worst_pen = [0.0]

    def bound(pts, rho):
        val, dz, dzb = p.jets(pts)
        P = len(pts)
        absv = np.linalg.norm(val, axis=1)
        slope = np.linalg.norm(dz.reshape(P, -1), axis=1) + np.linalg.norm(dzb.reshape(P, -1), axis=1)
        low = absv - slope * rho - 0.5 * M_val * rho ** 2
        if value_only:
            return absv, low
        sigma = sigma_min_batch(dz)
        _, jdz, jdzb = J.jets(pts)
        jslope = np.linalg.norm(jdz.reshape(P, -1), axis=1) + np.linalg.norm(jdzb.reshape(P, -1), axis=1)
        if use_full_gradient:
            pen = np.linalg.norm(dzb.reshape(P, -1), axis=1)
            _, bdz, bdzb = Jb.jets(pts)
            pslope = np.linalg.norm(bdz.reshape(P, -1), axis=1) + np.linalg.norm(bdzb.reshape(P, -1), axis=1)
            worst_pen[0] = max(worst_pen[0], float((pen + pslope * rho + 0.5 * M_pen * rho ** 2).max()))
        else:
            pen = pslope = np.zeros(P)
        low = np.maximum(low, sigma - pen - (jslope + pslope) * rho - 0.5 * (M_sig + M_pen) * rho ** 2)
        return np.maximum(absv, np.maximum(sigma - pen, 0.0)), low

    res = certified_minimum(grid, bound, rtol=rtol, max_evals=max_evals)
    margin = max(0.0, res.bound)
    return TransversalityCertificate(
        ball=ball, grid=grid, margin=margin,
        lipschitz_slack=max(0.0, res.best - res.bound),
        holomorphic_only=not use_full_gradient,
        dbar_penalty=worst_pen[0],
        void=res.bound <= 0.0,
        witness=res.argbest,
        evaluations=res.evaluations,
    )


def openness_shift(cert: TransversalityCertificate, eps_c1: float) -> TransversalityCertificate:
    """Margin valid for every map within C^1 distance ``eps_c1`` of the certified one."""
    if eps_c1 < 0:
        raise ValueError("eps_c1 must be nonnegative")
    raw = cert.margin - eps_c1
    return dataclasses.replace(cert, margin=max(0.0, raw), void=cert.void or raw <= 0,
                               shift=cert.shift + eps_c1)


def c1_distance_of_affine(w: np.ndarray, n: int, radius: float = 1.0) -> float:
    """C^1 size over the ball of the affine map w_0 + sum w_i z_i."""
    w = np.asarray(w, np.complex128).reshape(n + 1, -1)
    lin = float(np.linalg.norm(w[1:]))
    return max(float(np.linalg.norm(w[0])) + radius * lin, lin)


__all__ = [
    "Rejection", "TransversalityCertificate", "min_singular_value", "right_inverse",
    "margin_at", "margin_field", "certify_transverse", "openness_shift",
    "sigma_min_batch", "c1_distance_of_affine",
]

