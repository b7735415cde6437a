import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tkit import Ball, PolyMap
from tkit.flatmodel import (CHI1, ModelConfig, SectionField, boundary_winding, build_cover, certify_section,
                            cutoff, extract_zero_set, global_iteration, local_perturbation,
                            reference_ledger, reference_section, section_from_polynomial)

CFG = ModelConfig(n=1, k=100, region_radius=0.3)
u = PolyMap.variable(1, 0)


def test_cutoff_profile():
    q = np.array([0.0, 0.2, 0.25, 1.0, 1.5])
    chi, dchi = cutoff(q)
    assert np.allclose(chi, [1, 1, 1, 0, 0])
    assert np.allclose(dchi, 0)


@settings(max_examples=50, deadline=None)
@given(q=st.floats(0.0, 1.2))
def test_cutoff_derivative_and_range(q):
    chi, dchi = cutoff(np.array([q]))
    assert 0 <= chi[0] <= 1
    assert abs(dchi[0]) <= CHI1 + 1e-12
    h = 1e-6
    fd = (cutoff(np.array([q + h]))[0] - cutoff(np.array([q - h]))[0]) / (2 * h)
    assert dchi[0] == pytest.approx(fd[0], abs=1e-6)


def test_reference_peak_and_unit_distance():
    s = reference_section(CFG, 0)
    assert abs(s(np.array([[0.0]]))[0]) == pytest.approx(1)
    # |s| at g_k-distance one is exp(-1/4)
    assert abs(s(np.array([[1.0]]))[0]) == pytest.approx(math.exp(-0.25), rel=1e-12)
    assert math.exp(-0.25) == pytest.approx(0.7788007830714049)


def test_reference_center_outside_region():
    with pytest.raises(ValueError):
        reference_section(CFG, 1.0)


@pytest.mark.parametrize("seed", range(3))
def test_plain_derivatives_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((4, 1)) + 1j * rng.standard_normal((4, 1))
    coeffs = rng.standard_normal((4, 2)) + 1j * rng.standard_normal((4, 2))
    s = SectionField(100, centers, coeffs, CFG.cutoff_radius)
    Y = np.array([[0.4 - 0.7j], [1.9 + 0.2j]])
    val, du, dub = s.plain_derivatives(Y)
    h = 1e-6
    fx = (s(Y + h) - s(Y - h)) / (2 * h)
    fy = (s(Y + 1j * h) - s(Y - 1j * h)) / (2 * h)
    assert np.allclose(du[:, 0], (fx - 1j * fy) / 2, atol=1e-8)
    assert np.allclose(dub[:, 0], (fx + 1j * fy) / 2, atol=1e-8)


def test_section_round_trip():
    s = section_from_polynomial(CFG, np.array([0.2j]), u * u - PolyMap.constant(1, 0.1))
    back = SectionField.from_dict(s.to_dict())
    Y = np.array([[0.3], [1 - 1j]])
    assert np.allclose(back(Y), s(Y))


def test_ledger_lower_bound_on_unit_ball():
    led = reference_ledger(CFG, spacing=0.05)
    assert led["c0_unit_ball"] >= math.exp(-0.25) - 0.01
    assert led["decay_ratio_max"] <= 1 + 1e-9


@pytest.mark.parametrize("k", [25, 100, 400])
def test_color_count_is_k_independent(k):
    cover = build_cover(ModelConfig(k=k, region_radius=1.0))
    assert cover.modulus == 3 and cover.n_colors == 9
    # balls of one color are at least three lattice steps apart
    for col in range(cover.n_colors):
        pts = cover.centers[cover.color_members(col), 0]
        if len(pts) > 1:
            gaps = np.abs(pts[:, None] - pts[None, :]) + np.eye(len(pts)) * 1e9
            assert gaps.min() >= 3 * ModelConfig(k=k).lattice_spacing - 1e-9


def test_linear_vanishing_needs_no_perturbation():
    s = section_from_polynomial(CFG, np.zeros(1), u)
    tau, res = local_perturbation(s, 0, CFG, 0.1)
    assert res.achieved_margin >= res.eta
    assert np.allclose(tau.coeffs, 0)


def test_square_vanishing_gets_certified():
    s = section_from_polynomial(CFG, np.zeros(1), u * u)
    tau, res = local_perturbation(s, 0, CFG, 0.1, seed=0)
    assert res.achieved_margin >= res.eta > 0
    assert not np.allclose(tau.coeffs, 0)
    s2 = s.extended(tau.centers, tau.coeffs)
    again = certify_section(s2, Ball(np.zeros(1), CFG.c_radius), use_full_gradient=True)
    assert again.margin >= res.eta * 0.5


def test_single_zero_from_linear_function():
    s = section_from_polynomial(CFG, np.zeros(1), u - PolyMap.constant(1, 0.3))
    zeros = extract_zero_set(s, Ball.unit(1, 1.0))
    assert len(zeros) == 1
    assert zeros[0].point[0] == pytest.approx(0.3, abs=1e-10)
    assert zeros[0].ratio == pytest.approx(0, abs=1e-12)
    assert zeros[0].sign == 1 and zeros[0].symplectic
    assert boundary_winding(s, 1.0) == 1


def test_zero_count_matches_winding():
    p = (u - PolyMap.constant(1, 0.5)) * (u + PolyMap.constant(1, 0.4j)) * (u - PolyMap.constant(1, -0.6 + 0.1j))
    s = section_from_polynomial(CFG, np.zeros(1), p)
    zeros = extract_zero_set(s, Ball.unit(1, 1.2))
    assert len(zeros) == 3 == boundary_winding(s, 1.2)


def test_single_ball_global_step_is_local_step():
    cfg = ModelConfig(n=1, k=100, region_radius=0.01, initial="reference")
    assert len(build_cover(cfg).centers) == 1
    s, report = global_iteration(cfg, seed=0)
    assert report["balls"] == 1
    assert report["eta_star"] > 0


def test_small_global_run_is_deterministic():
    cfg = ModelConfig(n=1, k=25, region_radius=0.5)
    s1, r1 = global_iteration(cfg, seed=3)
    s2, r2 = global_iteration(cfg, seed=3)
    assert r1 == r2
    assert np.array_equal(s1.coeffs, s2.coeffs)
    assert r1["eta_star"] > 0
    assert r1["color_steps"] <= 9
    zeros = extract_zero_set(s1, cfg.region, certified_margin=r1["eta_star"])
    assert all(z.symplectic for z in zeros)
    assert len(zeros) == boundary_winding(s1, cfg.region.radius)


def test_uncertified_section_is_refused():
    s = section_from_polynomial(CFG, np.zeros(1), u)
    with pytest.raises(ValueError):
        extract_zero_set(s, Ball.unit(1, 1.0), certified_margin=0.0)
