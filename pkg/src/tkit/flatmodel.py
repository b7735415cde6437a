"""Sections of the flat model line bundle and their transversality.

Coordinates are the rescaled ones ``u = sqrt(k) z`` in which the metric is
standard.  The bundle is trivialized globally with connection
``(u dubar - ubar du) / 4``, so that

    d_nabla  = d/du    - ubar / 4
    db_nabla = d/dubar + u / 4.

A section is a finite sum over lattice centers xi of

    P(u - xi) * chi(|u - xi|^2 / R^2) * exp(-|u - xi|^2 / 4) * phase_xi(u)

with P affine, chi a C^3 cutoff, R = k^(1/6) and ``phase_xi(u) =
exp((conj(xi).u - xi.conj(u)) / 4)`` the gauge change from the frame centered
at xi.  In that frame a term ``h E`` (E the Gaussian) has covariant
derivatives ``(dh - vbar h / 2) E`` and ``(dbar h) E``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .analysis import c1_bound
from .geometry import Ball, GridSpec, certified_minimum
from .poly import PolyMap
from .rank_one import (ConstantsProfile, PerturbationResult, build_auxiliary, check_delta,
                       find_offset, perturb_rank_one)
from .search import SearchFailure
from .transversality import TransversalityCertificate, sigma_min_batch

# septic smoothstep S(t) = 35t^4 - 84t^5 + 70t^6 - 20t^7 on t = (q - 1/4) / (3/4)
_T = np.linspace(0.0, 1.0, 200_001)
CHI1 = (4 / 3) * 140 / 64  # max |d chi / dq|
CHI2 = (16 / 9) * 420 * float(np.max(np.abs(_T ** 2 * (1 - _T) ** 2 * (1 - 2 * _T)))) * 1.001
del _T


def cutoff(q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """chi(q) and d chi / dq: 1 for q <= 1/4, 0 for q >= 1, C^3 in between."""
    t = np.clip((np.asarray(q, float) - 0.25) / 0.75, 0.0, 1.0)
    S = t ** 4 * (35 - 84 * t + 70 * t ** 2 - 20 * t ** 3)
    dS = 140 * t ** 3 * (1 - t) ** 3
    return np.clip(1.0 - S, 0.0, 1.0), -(4 / 3) * dS


def gaussian_envelope(r) -> np.ndarray:
    """k-independent decay profile (1 + r/2 + r^2/2) exp(-r^2/4) of a reference
    section and its first derivatives."""
    r = np.asarray(r, float)
    return (1 + r / 2 + r ** 2 / 2) * np.exp(-(r ** 2) / 4)


def _real(z: np.ndarray) -> np.ndarray:
    return np.concatenate([z.real, z.imag], axis=-1)


def affine_exponents(n: int, degree: int = 1) -> np.ndarray:
    """Holomorphic exponents of degree <= ``degree``, constant and linear ones first."""
    exps = [(0,) * n] + [tuple(int(i == j) for j in range(n)) for i in range(n)]
    for d in range(2, degree + 1):
        if n == 1:
            exps.append((d,))
        else:
            exps.extend((i, d - i) for i in range(d, -1, -1))
    return np.array(exps, np.int64)


@dataclass(frozen=True, eq=False)
class SectionField:
    """A section given by holomorphic polynomials at lattice centers (u-coordinates).

    ``coeffs[t, j]`` multiplies the monomial ``v^exps[j]`` of the term at
    ``centers[t]``; by default the monomials are 1, v_1, ..., v_n.
    """

    k: int
    centers: np.ndarray
    coeffs: np.ndarray
    cutoff_radius: float
    exps: np.ndarray | None = None
    _tree: cKDTree | None = field(default=None, repr=False)

    def __post_init__(self):
        c = np.asarray(self.centers, np.complex128)
        c = c.reshape(len(c), -1)
        exps = affine_exponents(c.shape[1]) if self.exps is None else np.asarray(self.exps, np.int64)
        a = np.asarray(self.coeffs, np.complex128).reshape(len(c), len(exps))
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "coeffs", a)
        object.__setattr__(self, "exps", exps)
        if self._tree is None and len(c):
            object.__setattr__(self, "_tree", cKDTree(_real(c)))

    @property
    def n(self) -> int:
        return self.centers.shape[1]

    @property
    def degrees(self) -> np.ndarray:
        return self.exps.sum(axis=1)

    def with_coeffs(self, coeffs: np.ndarray) -> "SectionField":
        return replace(self, coeffs=np.asarray(coeffs, np.complex128))

    def added(self, index: int, delta: np.ndarray) -> "SectionField":
        a = self.coeffs.copy()
        delta = np.asarray(delta, np.complex128)
        a[index, : len(delta)] += delta
        return self.with_coeffs(a)

    def restricted(self, center: np.ndarray, radius: float) -> "SectionField":
        """The terms that can be nonzero within ``radius`` of ``center``."""
        idx = sorted(self._tree.query_ball_point(_real(np.asarray(center, np.complex128)),
                                                 radius + self.cutoff_radius))
        return SectionField(self.k, self.centers[idx], self.coeffs[idx], self.cutoff_radius,
                            self.exps)

    def extended(self, centers: np.ndarray, coeffs: np.ndarray) -> "SectionField":
        """This section plus extra terms (coefficients padded to the monomial list)."""
        coeffs = np.asarray(coeffs, np.complex128)
        pad = np.zeros((len(coeffs), len(self.exps)), np.complex128)
        pad[:, : coeffs.shape[1]] = coeffs
        return SectionField(self.k, np.vstack([self.centers, centers]),
                            np.vstack([self.coeffs, pad]), self.cutoff_radius, self.exps)

    def _pairs(self, Y: np.ndarray, radius: float):
        """Index pairs (point, term) with the point within ``radius`` of the term center."""
        T = len(self.centers)
        if not T or not len(Y):
            return np.zeros(0, int), np.zeros(0, int)
        live = np.flatnonzero(np.any(self.coeffs != 0, axis=1))
        if len(live) <= 64:
            D = np.linalg.norm(Y[:, None, :] - self.centers[None, live, :], axis=2)
            p, j = np.nonzero(D <= radius)
            return p, live[j]
        tree = cKDTree(_real(Y))
        hits = tree.query_ball_point(_real(self.centers[live]), radius)
        lens = np.fromiter((len(h) for h in hits), int, count=len(hits))
        t_idx = np.repeat(live, lens)
        p_idx = np.concatenate([np.asarray(h, int) for h in hits]) if lens.sum() else np.zeros(0, int)
        return p_idx, t_idx

    def _poly(self, a: np.ndarray, v: np.ndarray):
        """P(v) and its holomorphic gradient for per-pair coefficients a."""
        E = self.exps
        mono = np.prod(v[:, None, :] ** E[None, :, :], axis=2)
        Pv = np.sum(a * mono, axis=1)
        grad = np.zeros(v.shape, np.complex128)
        for i in range(self.n):
            Ei = E.copy()
            Ei[:, i] = np.maximum(Ei[:, i] - 1, 0)
            di = E[:, i] * np.prod(v[:, None, :] ** Ei[None, :, :], axis=2)
            grad[:, i] = np.sum(a * di, axis=1)
        return Pv, grad

    def jets(self, Y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value (P,), covariant d (P, n) and covariant dbar (P, n) at points Y."""
        Y = np.asarray(Y, np.complex128).reshape(-1, self.n)
        P, n, R2 = len(Y), self.n, self.cutoff_radius ** 2
        val = np.zeros(P, np.complex128)
        d = np.zeros((P, n), np.complex128)
        db = np.zeros((P, n), np.complex128)
        p, t = self._pairs(Y, self.cutoff_radius)
        if not len(p):
            return val, d, db
        xi = self.centers[t]
        y = Y[p]
        v = y - xi
        r2 = np.sum(np.abs(v) ** 2, axis=1)
        chi, dchi = cutoff(r2 / R2)
        Pv, gP = self._poly(self.coeffs[t], v)
        frame = np.exp(-r2 / 4 + (np.sum(xi.conj() * y, axis=1) - np.sum(xi * y.conj(), axis=1)) / 4)
        h = Pv * chi
        dh = gP * chi[:, None] + (Pv * dchi / R2)[:, None] * v.conj()
        dbh = (Pv * dchi / R2)[:, None] * v
        np.add.at(val, p, h * frame)
        np.add.at(d, p, (dh - 0.5 * v.conj() * h[:, None]) * frame[:, None])
        np.add.at(db, p, dbh * frame[:, None])
        return val, d, db

    def __call__(self, Y) -> np.ndarray:
        return self.jets(Y)[0]

    def plain_derivatives(self, Y) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Value and ordinary d/du, d/dubar in the global trivialization."""
        Y = np.asarray(Y, np.complex128).reshape(-1, self.n)
        val, d, db = self.jets(Y)
        return val, d + 0.25 * Y.conj() * val[:, None], db - 0.25 * Y * val[:, None]

    def second_majorant(self, Y, rho: float) -> np.ndarray:
        """Upper bound on all second covariant derivatives over the rho-balls around Y.

        Each term contributes ``Q(r_hi) exp(-r_lo^2 / 4)`` where [r_lo, r_hi] is
        the range of distances to its center and Q, increasing in r, collects
        bounds for the value and the first two derivatives of P * chi.
        """
        Y = np.asarray(Y, np.complex128).reshape(-1, self.n)
        out = np.zeros(len(Y))
        R = self.cutoff_radius
        p, t = self._pairs(Y, R + rho)
        if not len(p):
            return out
        r = np.linalg.norm(Y[p] - self.centers[t], axis=1)
        lo = np.maximum(r - rho, 0.0)
        hi = np.minimum(r + rho, R)
        mag = np.abs(self.coeffs[t])
        deg = self.degrees.astype(float)
        pw = lambda e: np.where(e[None, :] >= 0, hi[:, None] ** np.maximum(e, 0)[None, :], 0.0)
        P0 = np.sum(mag * pw(deg), axis=1)
        P1 = np.sum(mag * deg * pw(deg - 1), axis=1)
        P2 = np.sum(mag * deg * (deg - 1) * pw(deg - 2), axis=1)
        sn = math.sqrt(self.n)
        s = 2 * CHI1 * hi / R ** 2
        a0 = P0
        a1 = P1 + P0 * s
        a2 = P2 + 2 * P1 * s + P0 * (CHI2 * 4 * hi ** 2 / R ** 4 + CHI1 * 4 * sn / R ** 2)
        Q = 4 * a2 + 2 * hi * a1 + (hi ** 2 / 4 + sn / 2) * a0
        np.add.at(out, p, Q * np.exp(-lo ** 2 / 4))
        return out

    def to_dict(self) -> dict:
        pair = lambda x: [float(x.real), float(x.imag)]
        return {
            "k": int(self.k),
            "n": self.n,
            "cutoff_radius": float(self.cutoff_radius),
            "exps": self.exps.tolist(),
            "centers": [[pair(c) for c in row] for row in self.centers],
            "coeffs": [[pair(c) for c in row] for row in self.coeffs],
        }

    @classmethod
    def from_dict(cls, d) -> "SectionField":
        cplx = lambda rows: np.array([[complex(a, b) for a, b in row] for row in rows], np.complex128)
        n = int(d["n"])
        exps = np.array(d.get("exps", affine_exponents(n)), np.int64).reshape(-1, n)
        centers = cplx(d["centers"]).reshape(-1, n)
        coeffs = cplx(d["coeffs"]).reshape(-1, len(exps))
        return cls(int(d["k"]), centers, coeffs, float(d["cutoff_radius"]), exps)


def section_margin_field(s: SectionField, Y, use_full_gradient: bool = False):
    """Pointwise (margin, |s|, sigma, |dbar s|) of a section."""
    val, d, db = s.jets(Y)
    absv = np.abs(val)
    sigma = np.linalg.norm(d, axis=1)
    pen = np.linalg.norm(db, axis=1)
    eff = np.maximum(sigma - pen, 0.0) if use_full_gradient else sigma
    return np.maximum(absv, eff), absv, sigma, pen


def certify_section(s: SectionField, ball: Ball, spacing: float | None = None,
                    use_full_gradient: bool = False, rtol: float = 0.1,
                    max_evals: int = 400_000) -> TransversalityCertificate:
    """Certified lower bound on the margin of a section over a ball (u-coordinates).

    |s| and the smallest singular value of the covariant derivative are both
    1-Lipschitz along the connection, so on a cell of radius rho around c
    they drop by at most ``rho |nabla s(c)| + rho^2 M / 2`` and ``rho M``,
    with M the second-derivative majorant over the cell.
    """
    grid = GridSpec(ball, spacing or ball.radius / 8)
    worst_pen = [0.0]

    def bound(pts, rho):
        val, d, db = s.jets(pts)
        M = s.second_majorant(pts, rho)
        absv = np.abs(val)
        grad = np.linalg.norm(d, axis=1) + np.linalg.norm(db, axis=1)
        sigma = sigma_min_batch(d[:, None, :])
        low = absv - rho * grad - 0.5 * M * rho ** 2
        if use_full_gradient:
            pen = np.linalg.norm(db, axis=1)
            worst_pen[0] = max(worst_pen[0], float((pen + rho * M).max()))
            sig_low = sigma - pen - 2 * rho * M
            eff = np.maximum(sigma - pen, 0.0)
        else:
            sig_low = sigma - rho * M
            eff = sigma
        return np.maximum(absv, eff), np.maximum(low, sig_low)

    res = certified_minimum(grid, bound, rtol=rtol, max_evals=max_evals)
    return TransversalityCertificate(
        ball=ball, grid=grid, margin=max(0.0, res.bound),
        lipschitz_slack=max(0.0, res.best - res.bound),
        holomorphic_only=not use_full_gradient, dbar_penalty=worst_pen[0],
        void=res.bound <= 0.0, witness=res.argbest, evaluations=res.evaluations,
    )


# -- model configuration and cover ----------------------------------------------


INITIAL_KINDS = ("random", "reference", "zero")


@dataclass(frozen=True)
class ModelConfig:
    """Flat model on a ball of C^n (radius in unscaled units).

    ``c_radius`` is the radius, in rescaled units, of the balls on which
    local perturbations are certified; the cover centers form a lattice whose
    balls of that radius cover the region.
    """

    n: int = 1
    k: int = 100
    region_radius: float = 3.0
    c_radius: float = 1.35
    cutoff_exponent: float = 1 / 6
    cutoff_scale: float = 1.5
    interference: float = 0.1
    initial: str = "random"
    use_full_gradient: bool = True

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError("flat model supports n = 1 or 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not (self.region_radius > 0 and self.c_radius > 0 and self.cutoff_scale > 0):
            raise ValueError("radii must be positive")
        if self.initial not in INITIAL_KINDS:
            raise ValueError(f"initial must be one of {INITIAL_KINDS}")

    @property
    def scale(self) -> float:
        return math.sqrt(self.k)

    @property
    def region(self) -> Ball:
        """The region in rescaled coordinates."""
        return Ball.unit(self.n, self.region_radius * self.scale)

    @property
    def cutoff_radius(self) -> float:
        return self.cutoff_scale * self.k ** self.cutoff_exponent

    @property
    def lattice_spacing(self) -> float:
        # hexagonal (n = 1) or cubic (n = 2) lattice covering at radius c
        return math.sqrt(3) * self.c_radius if self.n == 1 else self.c_radius

    def to_dict(self) -> dict:
        return {"n": self.n, "k": self.k, "region_radius": self.region_radius,
                "c_radius": self.c_radius, "cutoff_exponent": self.cutoff_exponent,
                "cutoff_scale": self.cutoff_scale, "interference": self.interference,
                "initial": self.initial, "use_full_gradient": self.use_full_gradient}


@dataclass(frozen=True, eq=False)
class Cover:
    centers: np.ndarray  # (T, n) complex, rescaled coordinates
    labels: np.ndarray  # (T, 2n) integer lattice coordinates
    colors: np.ndarray  # (T,) color index
    modulus: int

    @property
    def n_colors(self) -> int:
        return self.modulus ** self.labels.shape[1]

    def color_members(self, color: int) -> np.ndarray:
        return np.flatnonzero(self.colors == color)


def color_modulus(cfg: ModelConfig) -> int:
    """Smallest q such that centers q lattice steps apart interfere by at most
    ``cfg.interference`` (relative) on each other's balls."""
    a, c = cfg.lattice_spacing, cfg.c_radius
    q = 1
    while gaussian_envelope(q * a - c) > cfg.interference or q * a <= 2 * c:
        q += 1
    return q


def build_cover(cfg: ModelConfig) -> Cover:
    n, a, c = cfg.n, cfg.lattice_spacing, cfg.c_radius
    reach = cfg.region.radius + c
    if n == 1:
        jmax = int(math.ceil(reach / (a * math.sqrt(3) / 2))) + 1
        imax = int(math.ceil(reach / a)) + jmax
        I, J = np.meshgrid(np.arange(-imax, imax + 1), np.arange(-jmax, jmax + 1), indexing="ij")
        labels = np.stack([I.ravel(), J.ravel()], axis=1)
        pts = a * (labels[:, 0] + 0.5 * labels[:, 1]) + 1j * a * (math.sqrt(3) / 2) * labels[:, 1]
        pts = pts[:, None]
    else:
        kmax = int(math.ceil(reach / a))
        if (2 * kmax + 1) ** 4 > 4e6:
            raise ValueError("region too large for an n = 2 cover")
        ax = np.arange(-kmax, kmax + 1)
        labels = np.stack([g.ravel() for g in np.meshgrid(ax, ax, ax, ax, indexing="ij")], axis=1)
        pts = a * (labels[:, :2] + 1j * labels[:, 2:])
    keep = np.linalg.norm(pts, axis=1) <= reach
    labels, pts = labels[keep], pts[keep]
    order = np.lexsort(labels.T[::-1])
    labels, pts = labels[order], pts[order]
    q = color_modulus(cfg)
    digits = np.mod(labels, q)
    colors = np.zeros(len(labels), int)
    for col in range(labels.shape[1]):
        colors = colors * q + digits[:, col]
    return Cover(pts, labels, colors, q)


def initial_section(cfg: ModelConfig, cover: Cover, amplitude: float = 1.0,
                    seed: int = 0) -> SectionField:
    """Starting section on the cover centers.

    "reference": amplitude times the sum of the reference sections;
    "random": the same sum with seeded unit phases; "zero": the zero section.
    """
    coeffs = np.zeros((len(cover.centers), cfg.n + 1), np.complex128)
    if cfg.initial == "reference":
        coeffs[:, 0] = amplitude
    elif cfg.initial == "random":
        phases = np.random.default_rng(seed).random(len(cover.centers))
        coeffs[:, 0] = amplitude * np.exp(2j * np.pi * phases)
    return SectionField(cfg.k, cover.centers, coeffs, cfg.cutoff_radius)


def reference_section(cfg: ModelConfig, x) -> SectionField:
    """Gaussian reference section centered at x (unscaled coordinates)."""
    x = np.atleast_1d(np.asarray(x, np.complex128))
    if x.shape != (cfg.n,):
        raise ValueError("center has the wrong dimension")
    if np.linalg.norm(x) > cfg.region_radius + 1e-12:
        raise ValueError("center lies outside the region")
    coeffs = np.zeros((1, cfg.n + 1), np.complex128)
    coeffs[0, 0] = 1.0
    return SectionField(cfg.k, (x * cfg.scale)[None, :], coeffs, cfg.cutoff_radius)


def section_from_polynomial(cfg: ModelConfig, center, p: PolyMap) -> SectionField:
    """The section ``p(u - center) s_ref`` for a holomorphic scalar polynomial p
    (center in rescaled coordinates)."""
    if p.m != 1 or p.n != cfg.n or not p.is_holomorphic:
        raise ValueError("need a holomorphic scalar polynomial in n variables")
    exps = affine_exponents(cfg.n, max(1, p.degree))
    coeffs = np.zeros((1, len(exps)), np.complex128)
    lookup = {tuple(e): j for j, e in enumerate(exps.tolist())}
    for e, c in zip(p.exps[:, : cfg.n].tolist(), p.coeffs[:, 0]):
        coeffs[0, lookup[tuple(e)]] += c
    center = np.atleast_1d(np.asarray(center, np.complex128))
    return SectionField(cfg.k, center[None, :], coeffs, cfg.cutoff_radius, exps)


def _ball_points(center: np.ndarray, radius: float, spacing: float) -> np.ndarray:
    return GridSpec(Ball(center, radius), spacing).points()


def section_ledger(s: SectionField, ball: Ball, spacing: float = 0.05) -> dict:
    """Measured C^0, C^1 and dbar sizes of a section on a ball (rescaled metric)."""
    Y = _ball_points(ball.center, ball.radius, spacing)
    val, d, db = s.jets(Y)
    grad = np.linalg.norm(d, axis=1) + np.linalg.norm(db, axis=1)
    return {
        "sup_value": float(np.abs(val).max()),
        "sup_gradient": float(grad.max()),
        "sup_dbar": float(np.linalg.norm(db, axis=1).max()),
        "min_value": float(np.abs(val).min()),
        "points": int(len(Y)),
    }


def reference_ledger(cfg: ModelConfig, spacing: float = 0.02) -> dict:
    """Measurements of the reference section at the origin for this k.

    Reports the lower bound of |s| on the unit ball, the dbar size (also
    times sqrt(k)) and the worst ratio of |s| to the Gaussian envelope
    outside the cutoff annulus.
    """
    s = reference_section(cfg, np.zeros(cfg.n))
    R = cfg.cutoff_radius
    unit = section_ledger(s, Ball.unit(cfg.n, 1.0), spacing)
    full = section_ledger(s, Ball.unit(cfg.n, R * 1.05), spacing)
    Y = _ball_points(np.zeros(cfg.n, np.complex128), R * 1.5, spacing * 2)
    r = np.linalg.norm(Y, axis=1)
    outside = (r <= R / 2) | (r >= R)
    ratio = np.abs(s(Y[outside])) / np.exp(-r[outside] ** 2 / 4)
    return {
        "k": cfg.k,
        "cutoff_radius": R,
        "c0_unit_ball": unit["min_value"],
        "sup_dbar": full["sup_dbar"],
        "sup_dbar_scaled": full["sup_dbar"] * math.sqrt(cfg.k),
        "sup_gradient": full["sup_gradient"],
        "decay_ratio_max": float(ratio.max()),
    }


# -- local perturbation -----------------------------------------------------------

FIT_DEGREE = {1: 10, 2: 5}
LOCAL_RTOL = 0.3


def _frame(center: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Gaussian frame centered at ``center`` (no cutoff), global trivialization."""
    v = Y - center
    r2 = np.sum(np.abs(v) ** 2, axis=1)
    return np.exp(-r2 / 4 + (Y @ center.conj() - Y.conj() @ center) / 4)


def fit_local_function(s: SectionField, center: np.ndarray, radius: float, scale: float,
                       degree: int) -> tuple[PolyMap, float]:
    """Holomorphic least-squares fit of s / frame in zeta = (u - center) / scale.

    Returns the fitted polynomial and the largest residual on the sample.
    """
    n = s.n
    Y = _ball_points(center, radius, radius / (12 if n == 1 else 4))
    F = s(Y) / _frame(center, Y)
    zeta = (Y - center) / scale
    exps = [e for e in _multi_indices(n, degree)]
    A = np.stack([np.prod(zeta ** np.array(e), axis=1) for e in exps], axis=1)
    coef, *_ = np.linalg.lstsq(A, F, rcond=None)
    resid = float(np.abs(A @ coef - F).max())
    full = np.array([list(e) + [0] * n for e in exps], np.int64)
    return PolyMap.from_arrays(n, 1, full, coef[:, None]), resid


def _multi_indices(n: int, degree: int):
    if n == 1:
        return [(d,) for d in range(degree + 1)]
    return [(i, j) for i in range(degree + 1) for j in range(degree + 1 - i)]


def perturbation_gain(cfg: ModelConfig) -> float:
    """Bound on the C^1 size (rescaled metric) of ``(w_0 + w.(u - x)/c) s_ref`` per unit |w|."""
    c, R = cfg.c_radius, cfg.cutoff_radius
    r = np.linspace(0.0, R, 4001)
    chi, dchi = cutoff(r ** 2 / R ** 2)
    E = np.exp(-r ** 2 / 4)
    P = np.sqrt(1 + r ** 2 / c ** 2)
    A0 = P * chi * E
    A1 = (chi / c + P * (0.5 * r * chi + 2 * np.abs(dchi) * r / R ** 2)) * E
    return float(max(A0.max(), A1.max())) * 1.01


@dataclass
class LocalStep:
    index: int
    tau: np.ndarray
    result: PerturbationResult
    margin_before: float
    eta_target: float
    tau_c1: float


def local_perturbation(s: SectionField, index: int, cfg: ModelConfig, delta: float,
                       profile: ConstantsProfile | None = None, seed: int = 0,
                       fit_degree: int | None = None) -> tuple[SectionField, PerturbationResult]:
    """Perturbation tau supported near center ``index`` making s + tau transverse
    on the ball of radius c there; returns (tau, result)."""
    step = _local_step(s, index, cfg, delta, profile, seed, fit_degree)
    tau = SectionField(cfg.k, s.centers[index][None, :], step.tau[None, :], cfg.cutoff_radius)
    return tau, step.result


def _local_step(s: SectionField, index: int, cfg: ModelConfig, delta: float,
                profile: ConstantsProfile | None, seed: int, fit_degree: int | None) -> LocalStep:
    profile = profile or ConstantsProfile()
    check_delta(delta)
    n, c, R = cfg.n, cfg.c_radius, cfg.cutoff_radius
    x = s.centers[index]
    ball = Ball(x, c)
    loc = s.restricted(x, 1.1 * c)
    f, resid = fit_local_function(loc, x, 1.1 * c, c, fit_degree or FIT_DEGREE[n])
    K = max(1.0, c1_bound(f, Ball.unit(n, 1.1)))
    gain = perturbation_gain(cfg)
    delta_hat = min(delta / (K * gain), 0.2)
    c_ref = float(cutoff(c ** 2 / R ** 2)[0]) * math.exp(-c ** 2 / 4)
    eta_target = 0.5 * c_ref * K * min(1.0, 1.0 / c) * profile.eta_of_delta(delta_hat)
    cert0 = certify_section(loc, ball, rtol=LOCAL_RTOL,
                            use_full_gradient=cfg.use_full_gradient)
    details = {"fit_residual": resid, "K": K, "gain": gain, "delta_hat": delta_hat,
               "c_ref": c_ref, "eta_target": eta_target, "margin_before": cert0.margin}
    zero = np.zeros(n + 1, np.complex128)
    if cert0.margin >= eta_target:
        res = PerturbationResult(np.zeros(n + 1, np.complex128), n, 1, delta, eta_target, 0.0,
                                 cert0.margin, cert0, 0, details)
        return LocalStep(index, zero, res, cert0.margin, eta_target, 0.0)

    def tau_of(w):
        w = np.asarray(w, np.complex128)
        return -K * np.concatenate([w[:1], w[1:] / c])

    def certify_with(tau):
        return certify_section(loc.extended(x[None, :], tau[None, :]), ball, rtol=LOCAL_RTOL,
                               use_full_gradient=cfg.use_full_gradient)

    fK = (1.0 / K) * f
    candidates = []
    try:
        pr = perturb_rank_one(fK, delta_hat, profile, seed=seed)
        candidates.append((pr.w, pr.alpha))
    except SearchFailure:
        pass
    best = None
    attempts = 0
    for w, alpha in candidates:
        attempts += 1
        cert = certify_with(tau_of(w))
        best = (w, alpha, cert)
    if best is None or best[2].margin < eta_target:
        search = find_offset(build_auxiliary(fK), delta_hat, seed=seed, n_certify=16)
        for w, alpha in search.ranked:
            attempts += 1
            cert = certify_with(tau_of(w))
            if best is None or cert.margin > best[2].margin:
                best = (w, alpha, cert)
            if cert.margin >= eta_target:
                break
    w, alpha, cert = best
    if cert.margin < eta_target:
        raise SearchFailure("local perturbation did not reach the target margin",
                            index=index, margin=cert.margin, eta_target=eta_target,
                            margin_before=cert0.margin)
    tau = tau_of(w)
    tau_sec = SectionField(cfg.k, x[None, :], tau[None, :], R)
    led = section_ledger(tau_sec, Ball(x, R), 0.05 if n == 1 else 0.4)
    tau_c1 = max(led["sup_value"], led["sup_gradient"])
    details["tau_c1"] = tau_c1
    res = PerturbationResult(np.asarray(w), n, 1, delta, eta_target, alpha, cert.margin,
                             cert, attempts, details)
    return LocalStep(index, tau, res, cert0.margin, eta_target, tau_c1)


# -- global iteration ---------------------------------------------------------------


def _thread_count(threads: int | None) -> int:
    if threads is None:
        threads = int(os.environ.get("TKIT_THREADS", "1") or 1)
    return max(1, threads)


def interference_bound(cfg: ModelConfig, cover: Cover, members: np.ndarray, delta: float) -> float:
    """Worst C^1 influence on one ball of the other perturbations of the same color.

    A perturbation of C^1 size delta centered at distance D affects the
    ball of radius c around another center by at most ``delta * env(D - c)``,
    and not at all when ``D - c`` exceeds the cutoff radius.
    """
    if len(members) < 2:
        return 0.0
    pts = _real(cover.centers[members])
    tree = cKDTree(pts)
    reach = cfg.cutoff_radius + cfg.c_radius
    worst = 0.0
    for i, nbrs in enumerate(tree.query_ball_point(pts, reach)):
        D = np.array([np.linalg.norm(pts[i] - pts[j]) for j in nbrs if j != i])
        if len(D):
            worst = max(worst, float(np.sum(delta * gaussian_envelope(D - cfg.c_radius))))
    return worst


def global_iteration(cfg: ModelConfig, s0: SectionField | None = None, delta0: float = 0.1,
                     profile: ConstantsProfile | None = None, seed: int = 0,
                     threads: int | None = None, min_delta: float = 1e-12):
    """Make a section uniformly transverse over the region, one color at a time.

    All balls of one color are perturbed against the same section and the
    perturbations merged in center order.  The next step size is half the
    smallest margin certified so far.  Returns (final section, report).
    """
    profile = profile or ConstantsProfile()
    check_delta(delta0)
    cover = build_cover(cfg)
    s = initial_section(cfg, cover, seed=seed) if s0 is None else s0
    if s.centers.shape != cover.centers.shape or not np.allclose(s.centers, cover.centers):
        raise ValueError("initial section must live on the cover centers")
    workers = _thread_count(threads)
    delta = delta0
    running = math.inf
    steps = []
    step_margin = np.zeros(len(cover.centers))
    step_of = np.zeros(len(cover.centers), int)
    for color in range(cover.n_colors):
        members = cover.color_members(color)
        if not len(members):
            continue
        if delta < min_delta:
            raise SearchFailure("step size underflow", color=color, delta=delta)

        def work(idx, s=s, delta=delta):
            try:
                return _local_step(s, int(idx), cfg, delta, profile, seed + int(idx), None)
            except SearchFailure as exc:
                raise SearchFailure(f"ball {int(idx)} failed at color {color}",
                                    index=int(idx), color=color, delta=delta,
                                    **exc.diagnostics) from exc

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(work, members))
        else:
            results = [work(i) for i in members]
        coeffs = s.coeffs.copy()
        for st in results:  # member order
            coeffs[st.index, : len(st.tau)] += st.tau
        s = s.with_coeffs(coeffs)
        margins = np.array([st.result.achieved_margin for st in results])
        step_margin[members] = margins
        step_of[members] = len(steps)
        eta_step = float(margins.min())
        running = min(running, eta_step)
        steps.append({
            "color": int(color),
            "delta": float(delta),
            "balls": int(len(members)),
            "perturbed": int(sum(bool(np.any(st.tau != 0)) for st in results)),
            "worst_margin": eta_step,
            "max_tau_c1": float(max(st.tau_c1 for st in results)),
            "interference_bound": interference_bound(cfg, cover, members, delta),
        })
        delta = min(delta, running / 2)

    finals = []
    finals_full = []
    for idx in range(len(cover.centers)):
        ball = Ball(cover.centers[idx], cfg.c_radius)
        loc = s.restricted(ball.center, ball.radius)
        finals.append(certify_section(loc, ball).margin)
        finals_full.append(certify_section(loc, ball, use_full_gradient=True).margin)
    finals = np.array(finals)
    finals_full = np.array(finals_full)
    binding = finals_full if cfg.use_full_gradient else finals
    later = np.array([sum(st["delta"] for st in steps[j + 1:]) for j in range(len(steps))])
    predicted = step_margin - later[step_of]
    ball_margins = binding
    report = {
        "config": cfg.to_dict(),
        "balls": int(len(cover.centers)),
        "colors": int(cover.n_colors),
        "color_modulus": int(cover.modulus),
        "color_steps": len(steps),
        "steps": steps,
        "eta_star": float(binding.min()),
        "eta_star_holomorphic": float(finals.min()),
        "eta_star_full_gradient": float(finals_full.min()),
        "openness_predicted_min": float(predicted.min()),
        "openness_shortfalls": int(np.sum(ball_margins < predicted - 1e-12)),
    }
    return s, report


# -- zero sets ------------------------------------------------------------------------


@dataclass
class ZeroLocus:
    point: np.ndarray  # rescaled coordinates
    sign: int
    ratio: float  # |dbar s| / |d s| at the zero
    residual: float

    @property
    def symplectic(self) -> bool:
        return self.ratio < 1.0

    def to_dict(self) -> dict:
        return {"point": [[float(c.real), float(c.imag)] for c in self.point],
                "sign": int(self.sign), "ratio": float(self.ratio),
                "residual": float(self.residual), "symplectic": self.symplectic}


def _wrapped(d: np.ndarray) -> np.ndarray:
    return (d + np.pi) % (2 * np.pi) - np.pi


def _cell_windings(F, xs: np.ndarray, ys: np.ndarray, sub: int) -> np.ndarray:
    """Winding number of F around each grid cell (edges sampled ``sub`` times)."""
    nx, ny = len(xs) - 1, len(ys) - 1
    fx = np.linspace(xs[0], xs[-1], nx * sub + 1)
    fy = np.linspace(ys[0], ys[-1], ny * sub + 1)
    # phases along horizontal lines y = ys[j] and vertical lines x = xs[i]
    H = np.angle(F((fx[None, :] + 1j * ys[:, None]).ravel())).reshape(len(ys), -1)
    V = np.angle(F((xs[:, None] + 1j * fy[None, :]).ravel())).reshape(len(xs), -1)
    dH = _wrapped(np.diff(H, axis=1)).reshape(len(ys), nx, sub).sum(axis=2)  # (ny+1, nx)
    dV = _wrapped(np.diff(V, axis=1)).reshape(len(xs), ny, sub).sum(axis=2)  # (nx+1, ny)
    total = dH[:-1, :] + dV[1:, :].T - dH[1:, :] - dV[:-1, :].T
    return np.rint(total / (2 * np.pi)).astype(int)  # (ny, nx)


def _newton(s: SectionField, z0: complex, steps: int = 30, shift: np.ndarray | None = None):
    """Newton iteration in the real plane for a scalar section restricted to a line."""
    z = complex(z0)
    pt = (lambda w: np.array([[w]])) if shift is None else (lambda w: np.concatenate([[w], shift])[None, :])
    for _ in range(steps):
        val, du, dub = s.plain_derivatives(pt(z))
        a, b, f = du[0, 0], dub[0, 0], val[0]
        # solve a dz + b conj(dz) = -f
        det = abs(a) ** 2 - abs(b) ** 2
        if det == 0:
            break
        dz = (-a.conjugate() * f + b * f.conjugate()) / det
        z += dz
        if abs(dz) < 1e-14:
            break
    val, d, db = s.jets(pt(z))
    return z, abs(val[0]), float(np.linalg.norm(db[0]) / max(np.linalg.norm(d[0]), 1e-300))


def boundary_winding(s: SectionField, radius: float, center: complex = 0.0,
                     start: int = 4096, max_points: int = 1 << 22) -> int:
    """Winding of s around the circle |u - center| = radius (n = 1), refined until
    every sampled phase step is below pi/4."""
    m = start
    while True:
        th = np.linspace(0.0, 2 * np.pi, m, endpoint=False)
        ph = np.angle(s((center + radius * np.exp(1j * th))[:, None]))
        d = _wrapped(np.diff(np.r_[ph, ph[0]]))
        if np.abs(d).max() < np.pi / 4 or m >= max_points:
            return int(np.rint(d.sum() / (2 * np.pi)))
        m *= 4


def extract_zero_set(s: SectionField, region: Ball, spacing: float = 0.25,
                     certified_margin: float | None = None, slices: int = 9) -> list[ZeroLocus]:
    """Zeros of s inside the region (rescaled coordinates).

    n = 1: cells with nonzero winding seed a Newton polish.  n = 2: the same
    on complex lines z_2 = const (``slices`` values per real axis), giving
    sample points of the zero curve.
    """
    if certified_margin is not None and certified_margin <= 0:
        raise ValueError("section is not certified transverse")
    if s.n == 1:
        return _zeros_on_line(s, region.center[0], region.radius, spacing, None)
    out = []
    r2 = region.radius
    ticks = np.linspace(-r2, r2, slices)
    for a in ticks:
        for b in ticks:
            w = region.center[1] + complex(a, b)
            rad = r2 ** 2 - abs(w - region.center[1]) ** 2
            if rad <= 0:
                continue
            out.extend(_zeros_on_line(s, region.center[0], math.sqrt(rad), spacing, np.array([w])))
    return out


def _zeros_on_line(s, center, radius, spacing, shift):
    def F(z):
        z = np.asarray(z, np.complex128).ravel()
        pts = z[:, None] if shift is None else np.concatenate([z[:, None], np.repeat(shift[None, :], len(z), 0)], 1)
        return s(pts)

    nx = int(math.ceil(2 * radius / spacing)) + 1
    xs = center.real + np.linspace(-radius, radius, nx + 1)
    ys = center.imag + np.linspace(-radius, radius, nx + 1)
    W = _cell_windings(F, xs, ys, sub=4)
    found: list[ZeroLocus] = []
    for j, i in zip(*np.nonzero(W)):
        _polish_cell(s, F, xs[i], xs[i + 1], ys[j], ys[j + 1], int(W[j, i]), shift,
                     center, radius, found, depth=0)
    return found


def _polish_cell(s, F, x0, x1, y0, y1, winding, shift, center, radius, found, depth):
    """Newton from the cell center when it holds one zero; otherwise subdivide."""
    if abs(winding) == 1:
        z0 = complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))
        z, res, ratio = _newton(s, z0, shift=shift)
        pad = 0.25 * (x1 - x0)
        inside = x0 - pad <= z.real <= x1 + pad and y0 - pad <= z.imag <= y1 + pad
        if inside and res < 1e-9:
            if abs(z - center) < radius and not any(abs(z - q.point[0]) < 1e-8 for q in found):
                pt = np.array([z]) if shift is None else np.concatenate([[z], shift])
                found.append(ZeroLocus(pt, winding, ratio, res))
            return
    if depth >= 6:
        return
    xs = np.linspace(x0, x1, 5)
    ys = np.linspace(y0, y1, 5)
    W = _cell_windings(F, xs, ys, sub=16)
    for j, i in zip(*np.nonzero(W)):
        _polish_cell(s, F, xs[i], xs[i + 1], ys[j], ys[j + 1], int(W[j, i]), shift,
                     center, radius, found, depth + 1)
