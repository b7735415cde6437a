import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkit import (Ball, ConstantsProfile, PolyMap, build_bad_set, covering_budget, degree_bound,
                  evaluate_jet, margin_at, perturb_rank_m, perturb_rank_m_family, perturb_rank_one,
                  random_polymap)
from tkit.geometry import GridSpec
from tkit.rank_m import dimension_count_check, offset_is_transverse, bad_set_witness
from tkit.rank_one import build_auxiliary

ETA = ConstantsProfile().eta_of_delta(0.1)
z = PolyMap.variable(1, 0)
z1, z2 = PolyMap.variable(2, 0), PolyMap.variable(2, 1)


def shifted(h, w):
    return h - PolyMap.affine(h.n, np.asarray(w).reshape(h.n + 1, h.m))


@pytest.mark.parametrize("N,d,D", [(2, 2, 4), (2, 3, 6), (4, 3, 108)])
def test_degree_bound(N, d, D):
    assert degree_bound(N, d) == D


@pytest.mark.parametrize("N,d,D,lhs,rhs", [(2, 2, 4, 15, 9), (2, 3, 6, 28, 19), (3, 2, 12, 455, 325)])
def test_dimension_count_examples(N, d, D, lhs, rhs):
    assert math.comb(D + N, N) == lhs
    assert math.comb(d * D + N - 1, N - 1) == rhs
    assert dimension_count_check(N, d, D)


def test_degree_bound_domain():
    with pytest.raises(ValueError):
        degree_bound(1, 3)
    with pytest.raises(ValueError):
        degree_bound(3, 1)


def test_scalar_bad_set_is_auxiliary_image():
    rng = np.random.default_rng(0)
    h = random_polymap(rng, 2, 1, 3)
    S = build_bad_set(h)
    pts = GridSpec(Ball.unit(2), 0.25).points()
    w = S.evaluate(pts, np.zeros((len(pts), 0, 2)), np.zeros((len(pts), 0)))
    assert np.allclose(w, build_auxiliary(h)._eval_batch(pts), atol=1e-14)


def test_square_bad_set_matches_scalar_lift():
    S = build_bad_set(z * z)
    x = np.array([[0.3 + 0.1j]])
    w = S.evaluate(x, np.zeros((1, 0, 1)), np.zeros((1, 0)))
    assert np.allclose(w[0], [-x[0, 0] ** 2, 2 * x[0, 0]])


def test_diagonal_squares_bad_set_is_singular():
    h = PolyMap.stack([z1 * z1, z2 * z2])
    S = build_bad_set(h)
    rng = np.random.default_rng(1)
    zz, _, _, w = S.sample_uniform(rng, 500)
    lin = w.reshape(-1, 3, 2)[:, 1:, :].transpose(0, 2, 1)
    _, dz, _ = h.jets(zz)
    det = np.linalg.det(dz - lin)
    assert np.abs(det).max() <= 1e-10
    value_res, sigma = S.membership_residuals(w, zz)
    assert value_res.max() <= 1e-10 and sigma.max() <= 1e-10


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(1, 3), data=st.data())
def test_bad_set_membership(seed, n, data):
    m = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    h = random_polymap(rng, n, m, 3)
    S = build_bad_set(h)
    zz, _, _, w = S.sample_near(rng, 50, GridSpec(Ball.unit(n), 0.5))
    value_res, sigma = S.membership_residuals(w, zz)
    assert value_res.max() <= 1e-10 and sigma.max() <= 1e-10


def test_budget_formula():
    b = covering_budget(2, 3, 0.1, 0.001, C=1)
    assert b.D == 6
    assert b.M == pytest.approx(6e4)


def test_budget_vanishes_as_eta_shrinks():
    fr = [covering_budget(2, 3, 0.1, e).Z_volume_fraction for e in (1e-3, 1e-4, 1e-5)]
    assert fr[0] > fr[1] > fr[2]
    assert covering_budget(2, 3, 0.1, 1e-7).feasible


def test_budget_linear_in_degree_for_two_parameters():
    a = covering_budget(2, 3, 0.1, 0.001, C=1).M
    b = covering_budget(2, 6, 0.1, 0.001, C=1).M
    assert b == pytest.approx(2 * a)


def test_budget_domain():
    with pytest.raises(ValueError):
        covering_budget(2, 3, 0.1, 0.2)


def test_offset_transversality_examples():
    assert offset_is_transverse(z, np.zeros(2), 0.5)
    assert not offset_is_transverse(z * z, np.zeros(2), 0.01)


def test_witness_hand_computation():
    u = bad_set_witness(z * z, np.array([0.1]), np.array([1.0]), np.zeros(2))
    assert np.allclose(u, [-0.01, 0.2], atol=1e-15)
    hh = shifted(z * z, u)
    j = evaluate_jet(hh, 0.1)
    assert abs(j.value[0]) <= 1e-15 and abs(j.dz[0, 0]) <= 1e-15


def test_witness_is_zero_on_the_bad_set():
    h = PolyMap.stack([z1, z2 * z2])
    u = bad_set_witness(h, np.zeros(2), np.array([0, 1.0]), np.zeros(6))
    assert np.allclose(u, 0)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 100_000), n=st.integers(1, 3), data=st.data())
def test_witness_residuals_for_any_direction(seed, n, data):
    m = data.draw(st.integers(1, n))
    rng = np.random.default_rng(seed)
    h = random_polymap(rng, n, m, 3)
    w = 0.1 * (rng.standard_normal((n + 1) * m) + 1j * rng.standard_normal((n + 1) * m))
    x = 0.5 * (rng.standard_normal(n) + 1j * rng.standard_normal(n)) / math.sqrt(2 * n)
    v = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    v /= np.linalg.norm(v)
    u = bad_set_witness(h, x, v, w)
    j = evaluate_jet(shifted(h, w + u), x)
    assert np.linalg.norm(j.value) <= 1e-10
    assert np.linalg.norm(v.conj() @ j.dz) <= 1e-10
    # with the singular direction the correction is controlled by the margin
    u_star = bad_set_witness(h, x, None, w)
    assert np.linalg.norm(u_star) < 3 * margin_at(evaluate_jet(shifted(h, w), x)) + 1e-15


def test_distance_to_bad_set_forces_transversality():
    # m = 1: the bad set is the image of the auxiliary map, sampled densely
    rng = np.random.default_rng(5)
    hits = 0
    for trial in range(200):
        n = 1 + trial % 2
        h = 0.5 * random_polymap(rng, n, 1, 2)
        S = build_bad_set(h)
        pts = GridSpec(Ball.unit(n), 1 / 96 if n == 1 else 1 / 10).points()
        img = S.evaluate(pts, np.zeros((len(pts), 0, n)), np.zeros((len(pts), 0)))
        w = 0.3 * (rng.standard_normal(n + 1) + 1j * rng.standard_normal(n + 1)) / math.sqrt(n + 1)
        dist = np.linalg.norm(img - w, axis=1).min()
        alpha = dist / 3.5
        hits += offset_is_transverse(h, w, alpha)
    assert hits == 200


def test_scalar_case_agrees_with_rank_one():
    one = perturb_rank_one(z * z, 0.1, seed=0)
    many = perturb_rank_m(z * z, 0.1, seed=0)
    assert many.achieved_margin >= ETA
    ratio = one.achieved_margin / many.achieved_margin
    assert 0.5 <= ratio <= 2


def _newton_roots(f, starts):
    roots = []
    for x in starts:
        x = np.array(x, complex)
        for _ in range(60):
            val, dz, _ = f.jets(x[None, :])
            x = x - np.linalg.solve(dz[0], val[0])
        roots.append(x)
    return np.array(roots)


def test_diagonal_squares_split_into_four_points():
    h = PolyMap.stack([z1 * z1, z2 * z2])
    res = perturb_rank_m(h, 0.1, seed=0)
    assert res.achieved_margin >= ETA
    ft = res.perturbed(h)
    c = np.sqrt(res.blocks[0].astype(complex))
    starts = [(s1 * c[0], s2 * c[1]) for s1 in (1, -1) for s2 in (1, -1)]
    roots = _newton_roots(ft, starts)
    assert np.abs(ft._eval_batch(roots)).max() < 1e-12
    gaps = np.linalg.norm(roots[:, None] - roots[None, :], axis=2) + np.eye(4)
    assert gaps.min() > 1e-6
    _, dz, _ = ft.jets(roots)
    assert np.abs(np.linalg.det(dz)).min() > 0


def test_coordinates_are_already_transverse():
    res = perturb_rank_m(PolyMap.stack([z1, z2]), 0.1, seed=0)
    assert res.achieved_margin == pytest.approx(1, abs=0.15)


def test_rank_m_rejects_wide_targets():
    with pytest.raises(ValueError):
        perturb_rank_m(PolyMap.stack([z, z]), 0.1)


def test_constant_family_keeps_offset():
    h = PolyMap.stack([z1 * z1, z2 * z2])
    res = perturb_rank_m_family([h, h], 0.1, seed=0, ts=[0, 1])
    assert np.array_equal(res.results[0].w, res.results[-1].w)


@pytest.mark.parametrize("reverse", [False, True])
def test_family_continuity_both_directions(reverse):
    ts = [0.0, 0.5, 1.0]
    fs = [PolyMap.stack([z1 * z1 - PolyMap.constant(2, 0.05 * t), z2 * z2]) for t in ts]
    if reverse:
        fs, ts = fs[::-1], [1 - t for t in ts[::-1]]
    res = perturb_rank_m_family(fs, 0.1, seed=0, ts=ts)
    assert max(res.jumps) <= 0.1 / 4
    assert min(res.interpolated_margins) >= res.eta / 2
