import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkit import Ball, PolyMap, c_norms, derivative_bound, evaluate_jet, random_polymap, truncate_to_degree
from tkit.geometry import GridSpec, certified_minimum

z = PolyMap.variable(1, 0)
zb = PolyMap.variable(1, 0, conj=True)


def wirtinger_fd(p, x, h=1e-6):
    """Central differences: d/dz = (d/dx - i d/dy)/2, d/dzbar = (d/dx + i d/dy)/2."""
    n = p.n
    dz = np.zeros((p.m, n), complex)
    dzb = np.zeros((p.m, n), complex)
    for i in range(n):
        e = np.zeros(n, complex)
        e[i] = h
        fx = (p(x + e) - p(x - e)) / (2 * h)
        fy = (p(x + 1j * e) - p(x - 1j * e)) / (2 * h)
        dz[:, i] = (fx - 1j * fy) / 2
        dzb[:, i] = (fx + 1j * fy) / 2
    return dz, dzb


def test_identity_jet():
    j = evaluate_jet(z, 0.5)
    assert j.value[0] == pytest.approx(0.5)
    assert j.dz[0, 0] == pytest.approx(1)
    assert j.dzbar[0, 0] == 0


def test_modulus_squared_jet():
    j = evaluate_jet(z * zb, 1.0)
    assert j.value[0] == pytest.approx(1)
    assert j.dz[0, 0] == pytest.approx(1)
    assert j.dzbar[0, 0] == pytest.approx(1)


@pytest.mark.parametrize("seed", range(5))
def test_jets_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = random_polymap(rng, 2, 2, 3, holomorphic=False)
    x = 0.4 * (rng.standard_normal(2) + 1j * rng.standard_normal(2))
    j = evaluate_jet(p, x)
    dz, dzb = wirtinger_fd(p, x)
    assert np.abs(j.dz - dz).max() < 1e-6
    assert np.abs(j.dzbar - dzb).max() < 1e-6


def test_norms_of_linear_map():
    nm = c_norms(z, Ball.unit(1))
    assert nm.c0 == pytest.approx(1, rel=0.03)
    assert nm.c1 == pytest.approx(1, rel=0.03)
    assert nm.dbar_c0 == 0


def test_norms_of_square():
    nm = c_norms(z * z, Ball.unit(1))
    assert nm.c0 == pytest.approx(1, rel=0.03)
    assert nm.c1 == pytest.approx(2, rel=0.03)
    assert nm.c0 >= 1 and nm.c1 >= 2


@pytest.mark.parametrize("seed", range(3))
def test_certified_sup_dominates_fine_grid(seed):
    rng = np.random.default_rng(seed)
    p = random_polymap(rng, 1, 1, 4)
    ball = Ball.unit(1)
    nm = c_norms(p, ball)
    pts = GridSpec(ball, 1 / 640).points()
    assert nm.c0 >= np.abs(p._eval_batch(pts)).max()


def test_derivative_bound_monomial_and_scaling():
    assert derivative_bound(z * z, Ball.unit(1), 1) == pytest.approx(2)
    assert derivative_bound(z * z, Ball.unit(1, 2.0), 1) == pytest.approx(4)


@pytest.mark.parametrize("seed", range(3))
def test_derivative_bound_dominates_sampled_gradient(seed):
    rng = np.random.default_rng(seed)
    p = random_polymap(rng, 2, 1, 3, holomorphic=False)
    ball = Ball.unit(2)
    pts = GridSpec(ball, 0.1).points()
    _, dz, dzb = p.jets(pts)
    sampled = (np.linalg.norm(dz.reshape(len(pts), -1), axis=1)
               + np.linalg.norm(dzb.reshape(len(pts), -1), axis=1)).max()
    assert derivative_bound(p, ball, 1) >= sampled


def test_truncation_keeps_holomorphic_cubic():
    rng = np.random.default_rng(3)
    p = random_polymap(rng, 1, 1, 3)
    h, err = truncate_to_degree(p, 3, Ball.unit(1))
    assert h.allclose(p)
    assert err == 0


def test_truncation_of_small_antiholomorphic_term():
    h, err = truncate_to_degree(z + 0.01 * zb, 1, Ball.unit(1))
    assert h.allclose(z)
    assert 0.01 <= err <= 0.02


# sum over j = 4..6 of (1 + j)/j!, exact rational 5/24 + 1/20 + 7/720
EXP_TAIL = 193 / 720


def test_truncation_of_exponential_series():
    p = PolyMap.zero(1)
    for j in range(7):
        term = PolyMap.constant(1, 1 / math.factorial(j))
        for _ in range(j):
            term = term * z
        p = p + term
    h, err = truncate_to_degree(p, 3, Ball.unit(1))
    assert h.degree == 3
    assert err <= EXP_TAIL + 1e-15


def test_certified_minimum_of_distance():
    # inf over the unit disc of |x - 0.5| is 0
    ball = Ball.unit(1)

    def bound(pts, rho):
        v = np.abs(pts[:, 0] - 0.5)
        return v, v - rho

    res = certified_minimum(GridSpec(ball, 0.1), bound, atol=1e-4)
    assert -1e-3 <= res.bound <= 0
    assert res.best < 1e-2


coeff = st.complex_numbers(max_magnitude=2, allow_nan=False, allow_infinity=False)


@settings(max_examples=40, deadline=None)
@given(a=coeff, b=coeff, c=coeff, x=st.complex_numbers(max_magnitude=1))
def test_algebra_is_pointwise(a, b, c, x):
    p = PolyMap.constant(1, a) + b * z * z
    q = c * zb + z
    assert (p + q)(x)[0] == pytest.approx(p(x)[0] + q(x)[0], abs=1e-9)
    assert (p * q)(x)[0] == pytest.approx(p(x)[0] * q(x)[0], abs=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 3), m=st.integers(1, 3))
def test_json_round_trip(seed, n, m):
    p = random_polymap(np.random.default_rng(seed), n, m, 2, holomorphic=False, density=0.5)
    assert PolyMap.from_json(p.to_json()).allclose(p, atol=0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_holomorphic_maps_have_no_dbar(seed):
    p = random_polymap(np.random.default_rng(seed), 2, 1, 3)
    assert p.is_holomorphic
    assert p.dbar_map.nterms == 0


def test_malformed_json_is_rejected():
    with pytest.raises(ValueError):
        PolyMap.from_dict({"n": 1})
    with pytest.raises(ValueError):
        PolyMap.from_dict({"n": 1, "m": 1, "terms": [{"zexp": [1, 0], "zbarexp": [0], "coeff": [[1, 0]]}]})
