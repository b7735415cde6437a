import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkit import (Ball, PolyMap, Rejection, TransversalityCertificate, certify_transverse, evaluate_jet,
                  margin_at, min_singular_value, openness_shift, random_polymap, right_inverse)
from tkit.analysis import c1_bound
from tkit.equivalence import sampled_covector_min, unit_vectors
from tkit.geometry import GridSpec
from tkit.transversality import margin_field

z = PolyMap.variable(1, 0)


def test_sigma_min_identity_and_diagonal():
    assert min_singular_value(np.eye(2)) == pytest.approx(1)
    assert min_singular_value(np.diag([3, 0.5])) == pytest.approx(0.5)


def test_sigma_min_matches_raw_covector_sampling():
    rng = np.random.default_rng(7)
    L = rng.standard_normal((2, 3)) + 1j * rng.standard_normal((2, 3))
    raw, _ = sampled_covector_min(L, unit_vectors(rng, 100_000, 2), refine=0)
    assert abs(raw - min_singular_value(L)) < 1e-4


def test_right_inverse_of_identity():
    R = right_inverse(np.eye(2), 0.5)
    assert np.allclose(R, np.eye(2))
    assert np.linalg.norm(R, 2) <= 2


def test_right_inverse_rejects_rank_deficient():
    r = right_inverse(np.array([[1, 0], [0, 0]]), 0.1)
    assert isinstance(r, Rejection)
    assert r.sigma_min == pytest.approx(0, abs=1e-15)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 100_000), m=st.integers(1, 3), extra=st.integers(0, 2))
def test_right_inverse_is_exact(seed, m, extra):
    rng = np.random.default_rng(seed)
    L = rng.standard_normal((m, m + extra)) + 1j * rng.standard_normal((m, m + extra))
    s = min_singular_value(L)
    R = right_inverse(L, s / 2)
    assert np.linalg.norm(L @ R - np.eye(m), 2) < 1e-10
    assert np.linalg.norm(R, 2) * s == pytest.approx(1, abs=1e-8)


def test_margin_at_points():
    assert margin_at(evaluate_jet(z, 0)) == 1
    assert margin_at(evaluate_jet(z * z, 0)) == 0


def test_margin_field_minimum_near_origin():
    p = z * z - PolyMap.constant(1, 0.1)
    pts = GridSpec(Ball.unit(1), 1 / 400).points()
    margin, *_ = margin_field(p, pts)
    # brute force: |z^2 - 0.1| and 2|z| cross where both are about 0.1
    assert margin.min() == pytest.approx(0.1, abs=0.01)
    cert = certify_transverse(p, Ball.unit(1))
    assert cert.margin <= margin.min() + 1e-12
    assert cert.margin >= 0.09


def test_certify_linear_map():
    cert = certify_transverse(z, Ball.unit(1), GridSpec(Ball.unit(1), 0.01))
    assert 0.98 <= cert.margin <= 1.0
    assert not cert.void


def test_certify_degenerate_square():
    cert = certify_transverse(z * z, Ball.unit(1))
    assert cert.margin < 1e-3


def test_full_gradient_reading_is_smaller():
    p = z + 0.2 * PolyMap.variable(1, 0, conj=True)
    full = certify_transverse(p, Ball.unit(1), use_full_gradient=True)
    holo = certify_transverse(p, Ball.unit(1), use_full_gradient=False)
    assert full.margin <= holo.margin
    assert full.margin == pytest.approx(0.8, abs=0.05)


def test_openness_shift_arithmetic():
    cert = certify_transverse(z, Ball.unit(1))
    base = TransversalityCertificate(cert.ball, cert.grid, 0.5, 0.0, True, 0.0)
    assert openness_shift(base, 0.1).margin == pytest.approx(0.4)
    shifted = TransversalityCertificate(cert.ball, cert.grid, 0.1, 0.0, True, 0.0)
    out = openness_shift(shifted, 0.2)
    assert out.margin == 0 and out.void


@pytest.mark.parametrize("seed", range(10))
def test_openness_under_recertification(seed):
    rng = np.random.default_rng(seed)
    p = z + 0.3 * random_polymap(rng, 1, 1, 3)
    ball = Ball.unit(1)
    cert = certify_transverse(p, ball)
    q = random_polymap(rng, 1, 1, 2)
    q = q * (0.3 * cert.margin / c1_bound(q, ball))
    eps = c1_bound(q, ball)
    again = certify_transverse(p + q, ball)
    assert again.margin >= cert.margin - eps - again.lipschitz_slack - cert.lipschitz_slack


def test_certificate_round_trip():
    cert = certify_transverse(z * z - PolyMap.constant(1, 0.2), Ball.unit(1))
    back = TransversalityCertificate.from_dict(cert.to_dict())
    assert back.to_dict() == cert.to_dict()
