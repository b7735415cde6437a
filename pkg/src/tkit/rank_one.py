"""Affine perturbations making a scalar map transverse to 0.

The scalar map f is lifted to the C^{n+1}-valued map
``g = (f - sum z_i df/dz_i, df/dz_1, ..., df/dz_n)``.  An offset w with
``|g - w| >= alpha`` on the unit ball makes ``f - w_0 - sum w_i z_i`` a map
whose value and holomorphic gradient never vanish together; the resulting
margin is at least alpha / 8 up to the dbar contribution, and is re-certified
directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .analysis import c1_bound, c_norms, certified_inf_norm, certified_sup
from .geometry import Ball, GridSpec, grid_for
from .poly import PolyMap
from .search import (HypothesisError, SearchFailure, ball_candidates,
                     distance_to_samples, rank_by_score)
from .transversality import (TransversalityCertificate, c1_distance_of_affine,
                             certify_transverse)

OUTER_RADIUS = 1.1
HYPOTHESIS_TOL = 1e-9


@dataclass(frozen=True)
class ConstantsProfile:
    """Calibration of eta(delta) = delta * log(1/delta)^(-p) / safety."""

    p_exponent: int = 2
    safety: float = 8.0
    c_approx: float = 1.0

    def __post_init__(self):
        if self.p_exponent < 1:
            raise ValueError("p_exponent must be >= 1")

    def eta_of_delta(self, delta: float) -> float:
        check_delta(delta)
        return delta * math.log(1.0 / delta) ** (-self.p_exponent) / self.safety

    def truncation_degree(self, eta: float) -> int:
        return max(2, math.ceil(self.c_approx * math.log(1.0 / eta)))

    def to_dict(self) -> dict:
        return {"p_exponent": self.p_exponent, "safety": self.safety, "c_approx": self.c_approx}


def check_delta(delta: float) -> None:
    if not 0.0 < delta < 0.25:
        raise ValueError(f"delta must lie in (0, 1/4), got {delta}")


@dataclass(eq=False)
class PerturbationResult:
    w: np.ndarray
    n: int
    m: int
    delta: float
    eta: float
    alpha: float
    achieved_margin: float
    certificate: TransversalityCertificate
    attempts: int
    details: dict = field(default_factory=dict)

    @property
    def blocks(self) -> np.ndarray:
        """Offsets as an (n + 1, m) array: row 0 is w_0, row i is w_i."""
        return self.w.reshape(self.n + 1, self.m)

    def perturbed(self, f: PolyMap) -> PolyMap:
        return f - PolyMap.affine(self.n, self.blocks)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "w": [[float(x.real), float(x.imag)] for x in self.w],
            "w_norm": float(np.linalg.norm(self.w)),
            "delta": float(self.delta),
            "eta": float(self.eta),
            "alpha": float(self.alpha),
            "achieved_margin": float(self.achieved_margin),
            "attempts": int(self.attempts),
            "certificate": self.certificate.to_dict(),
            "details": {k: _jsonable(v) for k, v in sorted(self.details.items())},
        }


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer, int, bool)):
        return v if isinstance(v, bool) else int(v)
    if isinstance(v, np.ndarray) and np.iscomplexobj(v):
        return [[float(x.real), float(x.imag)] for x in v.ravel()]
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    return v


def build_auxiliary(f: PolyMap) -> PolyMap:
    if f.m != 1:
        raise ValueError(f"auxiliary lift needs a scalar map, got m={f.m}")
    grads = [f.diff(i) for i in range(f.n)]
    g0 = f
    for i, gi in enumerate(grads):
        g0 = g0 - PolyMap.variable(f.n, i) * gi
    return PolyMap.stack([g0] + grads)


@dataclass
class OffsetSearch:
    w: np.ndarray
    alpha: float
    ranked: list[tuple[np.ndarray, float]]
    scored: int
    image_distance: float


def find_offset(g: PolyMap, delta: float, grid: GridSpec | None = None, budget: int = 2048,
                seed: int = 0, eta: float = 0.0, n_certify: int = 8,
                center: np.ndarray | None = None, radius: float | None = None) -> OffsetSearch:
    """Offset w with |w| <= delta keeping g - w away from 0 on the unit ball.

    Candidates fill the delta-ball (or B(center, radius) clipped to it), are
    scored by their distance to the sampled image of g, and the best-scored
    ones are certified.  Raises :class:`SearchFailure` when no certified
    distance reaches ``eta``.
    """
    check_delta(delta)
    ball = Ball.unit(g.n)
    grid = grid_for(ball, grid)
    image = g._eval_batch(grid.points())
    if center is None:
        cands = ball_candidates(g.m, delta, budget, seed)
    else:
        cands = ball_candidates(g.m, radius, budget, seed, center=center, outer=delta)
    score = distance_to_samples(cands, image)
    order = rank_by_score(score)
    ranked = []
    for idx in order[:n_certify]:
        w = cands[idx]
        res = certified_inf_norm(g - PolyMap.constant(g.n, w), ball, grid)
        ranked.append((w, max(0.0, res.bound)))
    ranked.sort(key=lambda wa: -wa[1])  # stable: ties keep score order
    best_w, best_alpha = ranked[0]
    if best_alpha < eta or best_alpha <= 0.0:
        raise SearchFailure("no offset reached the required distance from the image",
                            best_alpha=best_alpha, eta=eta, budget=budget,
                            best_w=best_w)
    return OffsetSearch(best_w, best_alpha, ranked, len(cands), float(score[order[0]]))


def outer_norms(f: PolyMap, grid: GridSpec | None = None):
    outer = Ball.unit(f.n, OUTER_RADIUS)
    og = None if grid is None else GridSpec(outer, grid.spacing * OUTER_RADIUS)
    return c_norms(f, outer, og)


def check_rank_one_hypotheses(f: PolyMap, eta: float, grid: GridSpec | None = None,
                              strict: bool = False):
    """Check the dbar smallness (always) and the C^1 size bound (when strict).

    Returns the outer-ball norms.  The size bound is a normalization: without
    it the search and the certificate remain valid, only the a priori margin
    estimate alpha / 8 loses its meaning.
    """
    norms = outer_norms(f, grid)
    if strict and norms.c1_norm > 1 + HYPOTHESIS_TOL:
        raise HypothesisError("|f|_C1(B+)", norms.c1_norm, 1.0)
    dbar = max(norms.dbar_c0, norms.dbar_c1)
    if dbar > eta:
        raise HypothesisError("|dbar f|_C2(B+)", dbar, eta)
    return norms


def perturb_rank_one(f: PolyMap, delta: float, profile: ConstantsProfile | None = None,
                     grid: GridSpec | None = None, seed: int = 0, budget: int = 2048,
                     strict: bool = False, use_full_gradient: bool | None = None,
                     center: np.ndarray | None = None, radius: float | None = None,
                     eta: float | None = None) -> PerturbationResult:
    if f.m != 1:
        raise ValueError("perturb_rank_one needs a scalar map")
    profile = profile or ConstantsProfile()
    check_delta(delta)
    eta = profile.eta_of_delta(delta) if eta is None else eta
    ball = Ball.unit(f.n)
    grid = grid_for(ball, grid)
    norms = check_rank_one_hypotheses(f, eta, grid, strict)
    dbar_c0 = norms.dbar_c0
    g = build_auxiliary(f)
    lift_size = certified_sup(g, Ball.unit(f.n, OUTER_RADIUS))
    search = find_offset(g, delta, grid, budget, seed, eta=eta, center=center, radius=radius)
    attempts = 0
    best = None
    for w, alpha in search.ranked:
        attempts += 1
        ft = f - PolyMap.affine(f.n, w.reshape(f.n + 1, 1))
        cert = certify_transverse(ft, ball, grid, use_full_gradient)
        if best is None or cert.margin > best[2].margin:
            best = (w, alpha, cert)
        if cert.margin >= eta:
            break
    w, alpha, cert = best
    if cert.margin < eta:
        raise SearchFailure("certified margin below eta for every ranked offset",
                            best_margin=cert.margin, eta=eta, best_w=w)
    return PerturbationResult(
        w=np.asarray(w), n=f.n, m=1, delta=delta, eta=eta, alpha=alpha,
        achieved_margin=cert.margin, certificate=cert, attempts=attempts,
        details={"chain_margin": alpha / 8 - dbar_c0, "lift_c0": lift_size,
                 "image_distance": search.image_distance, "scored": search.scored,
                 "dbar_c0": dbar_c0, "size_c1": norms.c1_norm,
                 "size_hypothesis_ok": bool(norms.c1_norm <= 1 + HYPOTHESIS_TOL)},
    )


# -- one-parameter families ---------------------------------------------------


class FamilyFailure(SearchFailure):
    def __init__(self, message: str, t: float, **diagnostics):
        super().__init__(message, t=t, **diagnostics)
        self.t = t


@dataclass(eq=False)
class FamilyResult:
    ts: np.ndarray
    results: list[PerturbationResult]
    jumps: np.ndarray
    interpolated_margins: np.ndarray
    eta: float
    delta: float

    def w_at(self, t: float) -> np.ndarray:
        """Piecewise-linear offset path through the accepted anchors."""
        ws = np.array([r.w for r in self.results])
        t = float(np.clip(t, self.ts[0], self.ts[-1]))
        k = int(np.searchsorted(self.ts, t, side="right") - 1)
        k = min(k, len(self.ts) - 2)
        if len(self.ts) == 1:
            return ws[0]
        lam = (t - self.ts[k]) / (self.ts[k + 1] - self.ts[k])
        return (1 - lam) * ws[k] + lam * ws[k + 1]

    def to_dict(self) -> dict:
        return {
            "ts": [float(t) for t in self.ts],
            "eta": float(self.eta),
            "delta": float(self.delta),
            "jumps": [float(j) for j in self.jumps],
            "interpolated_margins": [float(m) for m in self.interpolated_margins],
            "max_jump": float(self.jumps.max()) if len(self.jumps) else 0.0,
            "min_interpolated_margin": float(self.interpolated_margins.min())
            if len(self.interpolated_margins) else float(self.results[0].achieved_margin),
            "results": [r.to_dict() for r in self.results],
        }


def densify_family(fs: Sequence[PolyMap], ts: Sequence[float], step_c1: float,
                   ball: Ball, max_depth: int = 16) -> tuple[list[PolyMap], list[float]]:
    """Bisect each interval (linear interpolation) until C^1 steps are <= step_c1."""
    out_f, out_t = [fs[0]], [float(ts[0])]

    def fill(fa, ta, fb, tb, depth):
        if c1_bound(fb - fa, ball) <= step_c1 or depth >= max_depth:
            if depth >= max_depth:
                raise FamilyFailure("family step cannot be made C^1-small", t=ta)
            out_f.append(fb)
            out_t.append(tb)
            return
        fm, tm = 0.5 * (fa + fb), 0.5 * (ta + tb)
        fill(fa, ta, fm, tm, depth + 1)
        fill(fm, tm, fb, tb, depth + 1)

    for k in range(len(fs) - 1):
        fill(fs[k], ts[k], fs[k + 1], ts[k + 1], 0)
    return out_f, out_t


def track_family(fs: Sequence[PolyMap], ts: Sequence[float], delta: float, eta: float,
                 solve: Callable[..., PerturbationResult], grid: GridSpec | None = None
                 ) -> FamilyResult:
    """Follow a continuous offset path w_t along a family of maps.

    The previous offset is reused while it certifies; otherwise a new one is
    searched within delta/4 of it.  Between anchors a and b the interpolated
    map is within ``lam * Delta`` in C^1 of either end, so its margin is at
    least ``(m_a + m_b - Delta) / 2``; that bound must stay >= eta/2.
    """
    ball = Ball.unit(fs[0].n)
    outer = Ball.unit(fs[0].n, OUTER_RADIUS)
    fs, ts = densify_family(fs, ts, eta / 4, outer)
    results = [solve(fs[0])]
    jumps, interp = [], []
    for k in range(1, len(fs)):
        prev = results[-1]
        f = fs[k]
        cert = certify_transverse(prev.perturbed(f), ball, grid)
        if cert.margin >= eta:
            res = PerturbationResult(prev.w, prev.n, prev.m, delta, eta, prev.alpha,
                                     cert.margin, cert, 0, {"reused": True})
        else:
            try:
                res = solve(f, center=prev.w, radius=delta / 4)
            except SearchFailure as exc:
                raise FamilyFailure("no certified offset near the previous one", t=ts[k],
                                    **exc.diagnostics) from exc
        jump = float(np.linalg.norm(res.w - prev.w))
        dist = c1_bound(f - fs[k - 1], outer) + c1_distance_of_affine(res.w - prev.w, f.n, OUTER_RADIUS)
        lower = 0.5 * (prev.achieved_margin + res.achieved_margin - dist)
        if jump > delta / 4 + 1e-12 or lower < eta / 2:
            raise FamilyFailure("continuity budget exhausted", t=ts[k], jump=jump,
                                interpolated_margin=lower)
        jumps.append(jump)
        interp.append(lower)
        results.append(res)
    return FamilyResult(np.array(ts), results, np.array(jumps), np.array(interp), eta, delta)


def perturb_rank_one_family(fs: Sequence[PolyMap], delta: float,
                            profile: ConstantsProfile | None = None,
                            grid: GridSpec | None = None, seed: int = 0,
                            ts: Sequence[float] | None = None, **kwargs) -> FamilyResult:
    profile = profile or ConstantsProfile()
    eta = profile.eta_of_delta(delta)
    ts = np.linspace(0.0, 1.0, len(fs)) if ts is None else ts

    def solve(f, center=None, radius=None):
        return perturb_rank_one(f, delta, profile, grid, seed, center=center, radius=radius,
                                **kwargs)

    return track_family(list(fs), list(ts), delta, eta, solve, grid)
