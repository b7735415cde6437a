"""Complex polynomial maps in (z, zbar) multi-index form.

A :class:`PolyMap` stores a map C^n -> C^m as a list of monomials
``z^a zbar^b`` with vector coefficients in C^m.  Terms are kept sorted by
exponent so that every derived quantity is deterministic.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np

COEFF_RTOL = 1e-14
_CHUNK = 4096


@dataclass(frozen=True, eq=False)
class PolyMap:
    """Polynomial map C^n -> C^m.

    ``exps`` has shape (T, 2n): the first n columns are the holomorphic
    exponents, the last n the antiholomorphic ones.  ``coeffs`` has shape
    (T, m).
    """

    n: int
    m: int
    exps: np.ndarray = field(repr=False)
    coeffs: np.ndarray = field(repr=False)

    @classmethod
    def from_arrays(cls, n: int, m: int, exps, coeffs) -> "PolyMap":
        exps = np.asarray(exps, dtype=np.int64).reshape(-1, 2 * n)
        coeffs = np.asarray(coeffs, dtype=np.complex128).reshape(-1, m)
        if len(exps) != len(coeffs):
            raise ValueError("exps and coeffs disagree in length")
        if (exps < 0).any():
            raise ValueError("negative exponent")
        if len(exps) == 0:
            return cls(n, m, np.zeros((0, 2 * n), np.int64), np.zeros((0, m), np.complex128))
        # merge duplicate monomials, order lexicographically
        uniq, inv = np.unique(exps, axis=0, return_inverse=True)
        merged = np.zeros((len(uniq), m), dtype=np.complex128)
        np.add.at(merged, inv.ravel(), coeffs)
        mags = np.linalg.norm(merged, axis=1)
        scale = mags.max() if len(mags) else 0.0
        keep = mags > COEFF_RTOL * scale if scale > 0 else np.zeros(len(mags), bool)
        return cls(n, m, uniq[keep], merged[keep])

    @classmethod
    def from_terms(cls, n: int, m: int, terms: Mapping) -> "PolyMap":
        """Build from ``{(zexp, zbarexp): coeff}``; coeff may be scalar when m == 1."""
        exps, coeffs = [], []
        for (za, zb), c in terms.items():
            exps.append(tuple(za) + tuple(zb))
            coeffs.append(np.broadcast_to(np.asarray(c, np.complex128), (m,)))
        return cls.from_arrays(n, m, exps, coeffs)

    @classmethod
    def zero(cls, n: int, m: int = 1) -> "PolyMap":
        return cls.from_arrays(n, m, [], [])

    @classmethod
    def constant(cls, n: int, value) -> "PolyMap":
        value = np.atleast_1d(np.asarray(value, np.complex128))
        return cls.from_arrays(n, len(value), [[0] * (2 * n)], [value])

    @classmethod
    def variable(cls, n: int, i: int, conj: bool = False) -> "PolyMap":
        e = [0] * (2 * n)
        e[i + n if conj else i] = 1
        return cls.from_arrays(n, 1, [e], [[1.0]])

    @classmethod
    def affine(cls, n: int, w) -> "PolyMap":
        """The map w_0 + sum_i w_i z_i for w of shape (n + 1, m) (or flat)."""
        w = np.asarray(w, np.complex128)
        if w.ndim == 1:
            w = w.reshape(n + 1, -1)
        m = w.shape[1]
        exps = np.zeros((n + 1, 2 * n), np.int64)
        for i in range(n):
            exps[i + 1, i] = 1
        return cls.from_arrays(n, m, exps, w)

    @classmethod
    def stack(cls, maps: Sequence["PolyMap"]) -> "PolyMap":
        n = maps[0].n
        m_tot = sum(p.m for p in maps)
        exps, coeffs, off = [], [], 0
        for p in maps:
            if p.n != n:
                raise ValueError("stacked maps must share n")
            c = np.zeros((p.nterms, m_tot), np.complex128)
            c[:, off:off + p.m] = p.coeffs
            exps.append(p.exps)
            coeffs.append(c)
            off += p.m
        return cls.from_arrays(n, m_tot, np.vstack(exps), np.vstack(coeffs))

    # -- structure -------------------------------------------------------

    @property
    def nterms(self) -> int:
        return len(self.exps)

    @cached_property
    def term_degrees(self) -> np.ndarray:
        return self.exps.sum(axis=1)

    @property
    def degree(self) -> int:
        return int(self.term_degrees.max()) if self.nterms else 0

    @property
    def is_holomorphic(self) -> bool:
        return not self.exps[:, self.n:].any()

    def component(self, j: int) -> "PolyMap":
        return PolyMap.from_arrays(self.n, 1, self.exps, self.coeffs[:, j:j + 1])

    def holomorphic_part(self) -> "PolyMap":
        keep = ~self.exps[:, self.n:].any(axis=1)
        return PolyMap.from_arrays(self.n, self.m, self.exps[keep], self.coeffs[keep])

    def terms(self) -> Iterable[tuple[tuple[int, ...], tuple[int, ...], np.ndarray]]:
        for e, c in zip(self.exps, self.coeffs):
            yield tuple(int(x) for x in e[:self.n]), tuple(int(x) for x in e[self.n:]), c

    # -- arithmetic ------------------------------------------------------

    def __add__(self, other) -> "PolyMap":
        if not isinstance(other, PolyMap):
            other = PolyMap.constant(self.n, np.broadcast_to(np.asarray(other, complex), (self.m,)))
        if (other.n, other.m) != (self.n, self.m):
            raise ValueError("shape mismatch in PolyMap addition")
        return PolyMap.from_arrays(self.n, self.m, np.vstack([self.exps, other.exps]),
                                   np.vstack([self.coeffs, other.coeffs]))

    __radd__ = __add__

    def __neg__(self) -> "PolyMap":
        return PolyMap(self.n, self.m, self.exps, -self.coeffs)

    def __sub__(self, other) -> "PolyMap":
        return self + (-other if isinstance(other, PolyMap) else -np.asarray(other, complex))

    def __rsub__(self, other) -> "PolyMap":
        return (-self) + other

    def __mul__(self, other) -> "PolyMap":
        if isinstance(other, PolyMap):
            return self._poly_mul(other)
        other = np.asarray(other, np.complex128)
        return PolyMap.from_arrays(self.n, self.m, self.exps, self.coeffs * other)

    __rmul__ = __mul__

    def _poly_mul(self, other: "PolyMap") -> "PolyMap":
        # componentwise product; a scalar-valued factor broadcasts
        if self.n != other.n:
            raise ValueError("n mismatch")
        if self.m != other.m and 1 not in (self.m, other.m):
            raise ValueError("m mismatch in product")
        m = max(self.m, other.m)
        if self.nterms == 0 or other.nterms == 0:
            return PolyMap.zero(self.n, m)
        e = (self.exps[:, None, :] + other.exps[None, :, :]).reshape(-1, 2 * self.n)
        c = (self.coeffs[:, None, :] * other.coeffs[None, :, :]).reshape(-1, m)
        return PolyMap.from_arrays(self.n, m, e, c)

    # -- calculus --------------------------------------------------------

    def diff(self, i: int, conj: bool = False) -> "PolyMap":
        """Wirtinger derivative d/dz_i (or d/dzbar_i when ``conj``)."""
        col = i + self.n if conj else i
        a = self.exps[:, col]
        keep = a > 0
        e = self.exps[keep].copy()
        e[:, col] -= 1
        return PolyMap.from_arrays(self.n, self.m, e, self.coeffs[keep] * a[keep, None])

    @cached_property
    def jacobian_map(self) -> "PolyMap":
        """Entries dp^j/dz_i flattened row-major (m * n outputs)."""
        return self._derivative_block(conj=False)

    @cached_property
    def dbar_map(self) -> "PolyMap":
        """Entries dp^j/dzbar_i flattened row-major (m * n outputs)."""
        return self._derivative_block(conj=True)

    def _derivative_block(self, conj: bool) -> "PolyMap":
        parts = [self.diff(i, conj) for i in range(self.n)]
        exps, coeffs = [], []
        for i, d in enumerate(parts):
            c = np.zeros((d.nterms, self.m * self.n), np.complex128)
            c[:, i::self.n] = d.coeffs
            exps.append(d.exps)
            coeffs.append(c)
        return PolyMap.from_arrays(self.n, self.m * self.n, np.vstack(exps), np.vstack(coeffs))

    @cached_property
    def _jet_map(self) -> "PolyMap":
        return PolyMap.stack([self, self.jacobian_map, self.dbar_map])

    # -- evaluation ------------------------------------------------------

    def _check_points(self, z) -> np.ndarray:
        z = np.asarray(z, np.complex128)
        if z.ndim == 0:
            z = z.reshape(1)
        if z.shape[-1] != self.n:
            raise ValueError(f"point dimension {z.shape[-1]} does not match n={self.n}")
        if not np.isfinite(z).all():
            raise ValueError("non-finite evaluation point")
        return z

    def __call__(self, z) -> np.ndarray:
        z = self._check_points(z)
        single = z.ndim == 1
        out = self._eval_batch(z.reshape(-1, self.n))
        return out[0] if single else out

    def _eval_batch(self, Z: np.ndarray) -> np.ndarray:
        P = len(Z)
        out = np.zeros((P, self.m), np.complex128)
        if self.nterms == 0 or P == 0:
            return out
        deg = int(self.exps.max())
        za, zb = self.exps[:, :self.n], self.exps[:, self.n:]
        for s in range(0, P, _CHUNK):
            Zc = Z[s:s + _CHUNK]
            pw = np.ones((deg + 1,) + Zc.shape, np.complex128)
            for k in range(1, deg + 1):
                pw[k] = pw[k - 1] * Zc
            pwb = pw.conj()
            mono = np.ones((self.nterms, len(Zc)), np.complex128)
            for i in range(self.n):
                mono *= pw[za[:, i], :, i]
                if zb[:, i].any():
                    mono *= pwb[zb[:, i], :, i]
            out[s:s + _CHUNK] = mono.T @ self.coeffs
        return out

    def jets(self, Z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Batched (value, dz, dzbar) with shapes (P, m), (P, m, n), (P, m, n)."""
        Z = self._check_points(Z).reshape(-1, self.n)
        full = self._jet_map._eval_batch(Z)
        m, n = self.m, self.n
        val = full[:, :m]
        dz = full[:, m:m + m * n].reshape(-1, m, n)
        dzb = full[:, m + m * n:].reshape(-1, m, n)
        return val, dz, dzb

    # -- serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "terms": [
                {"zexp": list(za), "zbarexp": list(zb),
                 "coeff": [[float(x.real), float(x.imag)] for x in c]}
                for za, zb, c in self.terms()
            ],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PolyMap":
        try:
            n, m = int(d["n"]), int(d["m"])
            exps, coeffs = [], []
            for t in d["terms"]:
                za, zb = list(t["zexp"]), list(t["zbarexp"])
                if len(za) != n or len(zb) != n:
                    raise ValueError("exponent length does not match n")
                c = [complex(re, im) for re, im in t["coeff"]]
                if len(c) != m:
                    raise ValueError("coefficient length does not match m")
                exps.append(za + zb)
                coeffs.append(c)
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed PolyMap JSON: {exc}") from exc
        return cls.from_arrays(n, m, exps, coeffs)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PolyMap":
        return cls.from_dict(json.loads(text))

    def allclose(self, other: "PolyMap", atol: float = 1e-12) -> bool:
        if (self.n, self.m) != (other.n, other.m):
            return False
        diff = self - other
        return diff.nterms == 0 or float(np.abs(diff.coeffs).max()) <= atol

    def __repr__(self) -> str:
        return f"PolyMap(n={self.n}, m={self.m}, terms={self.nterms}, degree={self.degree})"


def random_polymap(rng: np.random.Generator, n: int, m: int, degree: int,
                   holomorphic: bool = True, density: float = 1.0) -> PolyMap:
    """Random map with complex Gaussian coefficients scaled by 1/(total degree)!."""
    exps, coeffs = [], []
    width = n if holomorphic else 2 * n
    for e in _exponents_up_to(width, degree):
        if density < 1.0 and rng.random() > density:
            continue
        full = list(e) + [0] * (2 * n - width)
        scale = 1.0 / math.factorial(sum(e))
        exps.append(full)
        coeffs.append(scale * (rng.standard_normal(m) + 1j * rng.standard_normal(m)))
    return PolyMap.from_arrays(n, m, exps, coeffs)


def _exponents_up_to(width: int, degree: int):
    if width == 0:
        yield ()
        return
    for a in range(degree + 1):
        for rest in _exponents_up_to(width - 1, degree - a):
            yield (a,) + rest
