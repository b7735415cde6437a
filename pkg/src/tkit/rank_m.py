"""Affine perturbations of C^m-valued maps (m <= n).

A perturbation ``h - w_0 - sum w_i z_i`` fails to be transverse exactly when
w lies in the bad set S: some z in the ball has ``h(z) = w_0 + sum w_i z_i``
and ``dh(z) - (w_1 .. w_n)`` of rank < m.  S is the image of an explicit
polynomial parametrization of one complex dimension less than the space of
offsets, so a random small offset avoids its eta-neighborhood with high
probability.  Offsets are stored as (n + 1, m) blocks flattened row-major.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .analysis import certified_sup, truncate_to_degree
from .geometry import Ball, GridSpec, grid_for
from .poly import PolyMap
from .rank_one import (HYPOTHESIS_TOL, OUTER_RADIUS, ConstantsProfile, FamilyResult,
                       PerturbationResult, check_delta, outer_norms, track_family)
from .search import HypothesisError, SearchFailure, ball_candidates, distance_to_samples, rank_by_score
from .transversality import certify_transverse, openness_shift, sigma_min_batch


def degree_bound(N: int, d: int) -> int:
    """Degree of a hypersurface containing the image of a degree-d map C^{N-1} -> C^N."""
    if N < 2 or d < 2:
        raise ValueError(f"need N >= 2 and d >= 2, got N={N}, d={d}")
    return N * d ** (N - 1)


def dimension_count_check(N: int, d: int, D: int) -> bool:
    """Whether degree-D polynomials on C^N outnumber degree-dD ones on C^{N-1}."""
    if min(N, d, D) < 1:
        raise ValueError("N, d, D must be positive")
    return math.comb(D + N, N) > math.comb(d * D + N - 1, N - 1)


@dataclass(frozen=True, eq=False)
class BadSetParam:
    """Parametrization (z, theta, lam) -> w of the bad set of h.

    For rows j < m the linear part is ``dh^j(z) + theta^j``; row m is
    ``dh^m(z) + sum_j lam_j theta^j``, so ``dh(z) - w_lin`` has rank < m.  The
    constant part makes ``h(z) = w_0 + sum w_i z_i``.
    """

    h: PolyMap
    delta: float
    theta_bound: float
    lambda_bound: float

    @property
    def n(self) -> int:
        return self.h.n

    @property
    def m(self) -> int:
        return self.h.m

    @property
    def N(self) -> int:
        return self.m * (self.n + 1)

    @property
    def param_dim(self) -> int:
        return self.n + (self.m - 1) * self.n + (self.m - 1)

    def evaluate(self, z: np.ndarray, theta: np.ndarray, lam: np.ndarray) -> np.ndarray:
        """Offsets (P, N) from z (P, n), theta (P, m-1, n), lam (P, m-1)."""
        z = np.asarray(z, np.complex128).reshape(-1, self.n)
        P, m, n = len(z), self.m, self.n
        theta = np.asarray(theta, np.complex128).reshape(P, m - 1, n)
        lam = np.asarray(lam, np.complex128).reshape(P, m - 1)
        val, dz, _ = self.h.jets(z)
        lin = dz.copy()  # (P, m, n): lin[p, j, i] = w_i^j
        lin[:, : m - 1, :] += theta
        lin[:, m - 1, :] += np.einsum("pj,pji->pi", lam, theta)
        w0 = val - np.einsum("pji,pi->pj", lin, z)
        return np.concatenate([w0[:, None, :], lin.transpose(0, 2, 1)], axis=1).reshape(P, -1)

    def membership_residuals(self, w: np.ndarray, z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(|h(z) - w_0 - sum w_i z_i|, sigma_min(dh(z) - w_lin)) for each row."""
        w = np.asarray(w, np.complex128).reshape(-1, self.n + 1, self.m)
        z = np.asarray(z, np.complex128).reshape(-1, self.n)
        val, dz, _ = self.h.jets(z)
        lin = w[:, 1:, :].transpose(0, 2, 1)
        value_res = np.linalg.norm(val - w[:, 0, :] - np.einsum("pji,pi->pj", lin, z), axis=1)
        return value_res, sigma_min_batch(dz - lin)

    def sample_uniform(self, rng: np.random.Generator, count: int):
        """Parameters drawn uniformly from the box; returns (z, theta, lam, w)."""
        n, m = self.n, self.m
        z = _uniform_ball(rng, count, n, 1.0)
        theta = _uniform_disc(rng, (count, m - 1, n), self.theta_bound)
        lam = _uniform_disc(rng, (count, m - 1), self.lambda_bound)
        return z, theta, lam, self.evaluate(z, theta, lam)

    def sample_near(self, rng: np.random.Generator, count: int, grid: GridSpec):
        """Parameters aimed at the part of S inside the delta-ball.

        z is drawn among grid points where |h| <= 3 delta, the first m-1 rows
        of the linear part uniformly from the delta-box, and lam by least
        squares so that the last row is as small as possible, plus jitter.
        """
        n, m = self.n, self.m
        pts = grid.points()
        near = pts[np.linalg.norm(self.h._eval_batch(pts), axis=1) <= 3 * self.delta]
        if len(near) == 0:
            near = pts
        z = near[rng.integers(0, len(near), count)]
        z = z + _uniform_ball(rng, count, n, grid.covering_radius)
        z = Ball.unit(n).project(z)
        _, dz, _ = self.h.jets(z)
        rows = _uniform_disc(rng, (count, m - 1, n), self.delta)
        theta = rows - dz[:, : m - 1, :]
        if m > 1:
            # least squares: theta^T lam = -dh^m
            A = theta.transpose(0, 2, 1)
            lam = np.stack([np.linalg.lstsq(A[p], -dz[p, m - 1], rcond=None)[0] for p in range(count)])
            lam = lam + _uniform_disc(rng, lam.shape, 0.1 * self.delta)
            scale = np.maximum(1.0, np.abs(lam) / self.lambda_bound)
            lam = lam / scale
        else:
            lam = np.zeros((count, 0), np.complex128)
        return z, theta, lam, self.evaluate(z, theta, lam)

    def to_dict(self) -> dict:
        return {"n": self.n, "m": self.m, "N": self.N, "degree": self.h.degree,
                "delta": float(self.delta), "theta_bound": float(self.theta_bound),
                "lambda_bound": float(self.lambda_bound)}


def _uniform_disc(rng, shape, radius):
    r = radius * np.sqrt(rng.random(shape))
    return r * np.exp(2j * np.pi * rng.random(shape))


def _uniform_ball(rng, count, n, radius):
    g = rng.standard_normal((count, 2 * n))
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    g *= radius * rng.random((count, 1)) ** (1.0 / (2 * n))
    return g[:, :n] + 1j * g[:, n:]


def build_bad_set(h: PolyMap, delta: float = 0.1, grid: GridSpec | None = None) -> BadSetParam:
    if h.m > h.n:
        raise ValueError(f"bad set needs m <= n, got m={h.m}, n={h.n}")
    if not h.is_holomorphic:
        raise ValueError("bad set parametrization needs a holomorphic map")
    ball = Ball.unit(h.n)
    dh = certified_sup(h.jacobian_map, ball, grid_for(ball, grid)) if h.nterms else 0.0
    theta_bound = delta + dh
    return BadSetParam(h, delta, theta_bound, 1.0 + dh / delta)


@dataclass(frozen=True)
class CoveringBudget:
    N: int
    d: int
    D: int
    delta: float
    eta: float
    C: float
    c: float
    M: float
    Z_volume_fraction: float

    @property
    def feasible(self) -> bool:
        return self.Z_volume_fraction < 1.0

    def to_dict(self) -> dict:
        return {"N": self.N, "d": self.d, "D": self.D, "delta": self.delta, "eta": self.eta,
                "C": self.C, "c": self.c, "M": self.M,
                "Z_volume_fraction": self.Z_volume_fraction, "feasible": self.feasible}


def covering_budget(N: int, d: int, delta: float, eta: float, C: float | None = None,
                    c: float = 0.0) -> CoveringBudget:
    """Count of eta-balls covering S within the delta-ball, and the share of the
    delta-ball within ``(3c + 5) eta`` of S (an advisory volume heuristic)."""
    if not 0 < eta < delta < 0.25:
        raise ValueError("need 0 < eta < delta < 1/4")
    D = degree_bound(N, d)
    C = float(5 ** N) if C is None else float(C)
    M = C * D * (delta / eta) ** (2 * N - 2)
    frac = M * ((3 * c + 5) * eta / delta) ** (2 * N)
    return CoveringBudget(N, d, D, delta, eta, C, c, M, frac)


def offset_is_transverse(h: PolyMap, w: np.ndarray, alpha: float, grid: GridSpec | None = None) -> bool:
    """Whether h - w_0 - sum w_i z_i is certified alpha-transverse over the unit ball."""
    ht = h - PolyMap.affine(h.n, np.asarray(w).reshape(h.n + 1, h.m))
    return certify_transverse(ht, Ball.unit(h.n), grid, use_full_gradient=False).margin >= alpha


def witness_direction(h: PolyMap, w: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Unit v in C^m minimizing |v^* dh~(z)| (left singular vector of sigma_min)."""
    ht = h - PolyMap.affine(h.n, np.asarray(w).reshape(h.n + 1, h.m))
    _, dz, _ = ht.jets(np.asarray(z, np.complex128)[None, :])
    U, _, _ = np.linalg.svd(dz[0])
    return U[:, -1]


def bad_set_witness(h: PolyMap, z: np.ndarray, v: np.ndarray | None, w: np.ndarray) -> np.ndarray:
    """Correction u with w + u in the bad set, witnessed at z along v.

    ``u_i = <v, dh~/dz_i> v`` and ``u_0 = h~(z) - sum z_i u_i``; then
    ``h - (w + u)`` vanishes at z and its Jacobian there kills v.
    """
    z = np.asarray(z, np.complex128).reshape(h.n)
    if v is None:
        v = witness_direction(h, w, z)
    v = np.asarray(v, np.complex128).reshape(h.m)
    ht = h - PolyMap.affine(h.n, np.asarray(w).reshape(h.n + 1, h.m))
    val, dz, _ = ht.jets(z[None, :])
    A = dz[0]
    coef = v.conj() @ A  # <v, dh~/dz_i>
    ui = np.outer(coef, v)  # (n, m)
    u0 = val[0] - z @ ui
    return np.vstack([u0[None, :], ui]).ravel()


def check_rank_m_hypotheses(f: PolyMap, eta: float, grid: GridSpec | None = None,
                            strict: bool = False):
    norms = outer_norms(f, grid)
    if strict and norms.c0 > 1 + HYPOTHESIS_TOL:
        raise HypothesisError("|f|_C0(B+)", norms.c0, 1.0)
    if norms.dbar_c1_norm > eta:
        raise HypothesisError("|dbar f|_C1(B+)", norms.dbar_c1_norm, eta)
    return norms


def perturb_rank_m(f: PolyMap, delta: float, profile: ConstantsProfile | None = None,
                   grid: GridSpec | None = None, seed: int = 0, budget: int = 2048,
                   samples: int = 4000, n_certify: int = 8, strict: bool = False,
                   use_full_gradient: bool | None = None,
                   center: np.ndarray | None = None, radius: float | None = None,
                   eta: float | None = None) -> PerturbationResult:
    """Search an offset w in C^{m(n+1)}, |w| <= delta, with f - w_0 - sum w_i z_i
    certified eta-transverse on the unit ball.

    f is truncated to a holomorphic polynomial h; candidates are ranked by
    their distance to sampled points of the bad set of h and the best ones
    are certified directly on f.
    """
    if f.m > f.n:
        raise ValueError(f"perturb_rank_m needs m <= n, got m={f.m}, n={f.n}")
    profile = profile or ConstantsProfile()
    check_delta(delta)
    eta = profile.eta_of_delta(delta) if eta is None else eta
    ball = Ball.unit(f.n)
    grid = grid_for(ball, grid)
    norms = check_rank_m_hypotheses(f, eta, grid, strict)
    d = profile.truncation_degree(eta)
    h, err_c1 = truncate_to_degree(f, d, ball)
    N = f.m * (f.n + 1)
    budget_report = covering_budget(N, d, delta, eta, c=err_c1 / eta) if eta < delta else None

    rng = np.random.default_rng(seed)
    bad = build_bad_set(h, delta, grid)
    s_near = bad.sample_near(rng, samples, grid)[3]
    s_unif = bad.sample_uniform(rng, samples)[3]
    S = np.vstack([s_near, s_unif])
    S = S[np.linalg.norm(S, axis=1) <= 2 * delta]

    if center is None:
        cands = ball_candidates(N, delta, budget, seed)
    else:
        cands = ball_candidates(N, radius, budget, seed, center=center, outer=delta)
    score = distance_to_samples(cands, S)
    order = rank_by_score(score)

    best = None
    attempts = 0
    for idx in order[:n_certify]:
        attempts += 1
        w = cands[idx]
        ft = f - PolyMap.affine(f.n, w.reshape(f.n + 1, f.m))
        cert = certify_transverse(ft, ball, grid, use_full_gradient)
        if best is None or cert.margin > best[1].margin:
            best = (idx, cert)
        if cert.margin >= eta:
            break
    idx, cert = best
    w = cands[idx]
    if cert.margin < eta:
        raise SearchFailure("certified margin below eta for every ranked offset",
                            best_margin=cert.margin, eta=eta, budget=budget,
                            best_distance_to_S=float(score[order[0]]), best_w=w)
    ht = h - PolyMap.affine(f.n, w.reshape(f.n + 1, f.m))
    h_cert = certify_transverse(ht, ball, grid, use_full_gradient=False)
    details = {
        "truncation_degree": d,
        "err_c1": err_c1,
        "distance_to_S": float(score[idx]),
        "S_samples": int(len(S)),
        "openness_margin": openness_shift(h_cert, err_c1).margin,
        "size_c0": norms.c0,
        "size_hypothesis_ok": bool(norms.c0 <= 1 + HYPOTHESIS_TOL),
        "bad_set": bad.to_dict(),
        "scored": len(cands),
    }
    if budget_report is not None:
        details["covering_budget"] = budget_report.to_dict()
    return PerturbationResult(w=w, n=f.n, m=f.m, delta=delta, eta=eta,
                              alpha=float(score[idx]), achieved_margin=cert.margin,
                              certificate=cert, attempts=attempts, details=details)


def perturb_rank_m_family(fs: Sequence[PolyMap], delta: float,
                          profile: ConstantsProfile | None = None,
                          grid: GridSpec | None = None, seed: int = 0,
                          ts: Sequence[float] | None = None, **kwargs) -> FamilyResult:
    profile = profile or ConstantsProfile()
    eta = profile.eta_of_delta(delta)
    ts = np.linspace(0.0, 1.0, len(fs)) if ts is None else ts

    def solve(f, center=None, radius=None):
        return perturb_rank_m(f, delta, profile, grid, seed, center=center, radius=radius,
                              **kwargs)

    return track_family(list(fs), list(ts), delta, eta, solve, grid)
