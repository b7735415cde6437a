"""Balls, lattice grids and a Lipschitz branch-and-bound over them.

Cells are axis-aligned cubes in the 2n real coordinates of C^n.  A cell is
represented by its center, projected onto the ball when it lies outside,
together with the radius of the cube.  Projection onto a convex set is
non-expansive, so every ball point of the cube lies within that radius of the
projected center and all evaluation points stay inside the ball.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

BoundFn = Callable[[np.ndarray, float], tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.center, np.complex128))
        object.__setattr__(self, "center", c)
        if not self.radius > 0:
            raise ValueError("ball radius must be positive")

    @classmethod
    def unit(cls, n: int, radius: float = 1.0) -> "Ball":
        return cls(np.zeros(n, np.complex128), radius)

    @property
    def n(self) -> int:
        return len(self.center)

    @property
    def reach(self) -> float:
        """Largest modulus |z| attained on the ball."""
        return float(np.linalg.norm(self.center)) + self.radius

    def scaled(self, radius: float) -> "Ball":
        return Ball(self.center, radius)

    def contains(self, z, tol: float = 0.0) -> np.ndarray:
        z = np.asarray(z, np.complex128).reshape(-1, self.n)
        return np.linalg.norm(z - self.center, axis=1) <= self.radius + tol

    def project(self, z: np.ndarray) -> np.ndarray:
        d = z - self.center
        r = np.linalg.norm(d, axis=1)
        scale = np.minimum(1.0, self.radius / np.maximum(r, 1e-300))
        return self.center + d * scale[:, None]

    def to_dict(self) -> dict:
        return {"center": [[float(c.real), float(c.imag)] for c in self.center],
                "radius": float(self.radius)}

    @classmethod
    def from_dict(cls, d) -> "Ball":
        return cls(np.array([complex(a, b) for a, b in d["center"]]), float(d["radius"]))


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Lattice of spacing ``spacing`` anchored at the ball center."""

    ball: Ball
    spacing: float

    def __post_init__(self):
        if not self.spacing > 0:
            raise ValueError("grid spacing must be positive")

    @property
    def covering_radius(self) -> float:
        return self.spacing * math.sqrt(2 * self.ball.n) / 2

    def lattice(self) -> np.ndarray:
        """Lattice points within radius + covering radius, as complex (P, n)."""
        n = self.ball.n
        reach = self.ball.radius + self.covering_radius
        k = int(math.floor(reach / self.spacing))
        ticks = np.arange(-k, k + 1) * self.spacing
        count = len(ticks) ** (2 * n)
        if count > 5e7:
            raise ValueError(f"grid too fine: {count:.3g} lattice candidates")
        axes = np.meshgrid(*([ticks] * (2 * n)), indexing="ij")
        real = np.stack([a.ravel() for a in axes], axis=1)
        real = real[np.linalg.norm(real, axis=1) <= reach + 1e-12]
        pts = real[:, :n] + 1j * real[:, n:]
        return pts + self.ball.center

    def points(self) -> np.ndarray:
        """Lattice points projected onto the ball (the evaluation points)."""
        return self.ball.project(self.lattice())

    def to_dict(self) -> dict:
        return {"ball": self.ball.to_dict(), "spacing": float(self.spacing)}

    @classmethod
    def from_dict(cls, d) -> "GridSpec":
        return cls(Ball.from_dict(d["ball"]), float(d["spacing"]))


def default_grid(ball: Ball) -> GridSpec:
    divisions = {1: 64, 2: 8}.get(ball.n, 3)
    return GridSpec(ball, ball.radius / divisions)


def grid_for(ball: Ball, grid: GridSpec | None) -> GridSpec:
    if grid is None:
        return default_grid(ball)
    if grid.ball is ball:
        return grid
    return GridSpec(ball, grid.spacing)


@dataclass
class SearchResult:
    """Outcome of a certified extremum search.

    ``bound`` is the certified value (lower bound of the infimum for
    :func:`certified_minimum`), ``best`` the best sampled value and
    ``argbest`` where it was attained.
    """

    bound: float
    best: float
    argbest: np.ndarray
    evaluations: int
    exhausted: bool
    extras: dict = field(default_factory=dict)


def certified_minimum(grid: GridSpec, bound_fn: BoundFn, rtol: float = 0.05,
                      atol: float = 1e-9, max_evals: int = 2_000_000) -> SearchResult:
    """Branch-and-bound lower bound on the infimum of a function over a ball.

    ``bound_fn(points, rho)`` returns (values at points, lower bounds valid on
    the rho-ball around each point intersected with the ball).  Cells whose
    lower bound is within ``max(rtol*best, atol)`` of the best sampled value
    are left alone; the others are split until the budget runs out.
    """
    ball = grid.ball
    n2 = 2 * ball.n
    centers = grid.lattice()
    half = grid.spacing / 2
    offsets = _child_offsets(n2)
    leaf_lowers: list[np.ndarray] = []
    best, argbest = math.inf, None
    evals = 0
    exhausted = False
    while len(centers):
        rho = half * math.sqrt(n2)
        pts = ball.project(centers)
        vals, lows = bound_fn(pts, rho)
        evals += len(pts)
        i = int(np.argmin(vals))
        if vals[i] < best:
            best, argbest = float(vals[i]), pts[i]
        threshold = best - max(rtol * abs(best), atol)
        split = lows < threshold
        leaf_lowers.append(lows[~split])
        if not split.any():
            break
        todo = centers[split]
        if evals + len(todo) * len(offsets) > max_evals:
            leaf_lowers.append(lows[split])
            exhausted = True
            break
        half /= 2
        real = np.concatenate([todo.real, todo.imag], axis=1)
        child = (real[:, None, :] + offsets[None, :, :] * half).reshape(-1, n2)
        child = child[:, :ball.n] + 1j * child[:, ball.n:]
        # drop cubes that miss the ball entirely
        dist = np.linalg.norm(child - ball.center, axis=1)
        centers = child[dist - half * math.sqrt(n2) <= ball.radius]
    lowest = min((float(a.min()) for a in leaf_lowers if len(a)), default=best)
    return SearchResult(min(lowest, best), best, argbest, evals, exhausted)


def certified_maximum(grid: GridSpec, bound_fn: BoundFn, rtol: float = 0.02,
                      atol: float = 1e-12, max_evals: int = 2_000_000) -> SearchResult:
    """Upper bound on the supremum; ``bound_fn`` returns (values, upper bounds)."""

    def neg(pts, rho):
        v, u = bound_fn(pts, rho)
        return -v, -u

    res = certified_minimum(grid, neg, rtol, atol, max_evals)
    return SearchResult(-res.bound, -res.best, res.argbest, res.evaluations, res.exhausted)


def _child_offsets(n2: int) -> np.ndarray:
    grid = np.array(np.meshgrid(*([[-1.0, 1.0]] * n2), indexing="ij"))
    return grid.reshape(n2, -1).T
