"""Pointwise chain, Bochner margin, maximum-principle and gap criteria."""

from types import SimpleNamespace

import numpy as np
import pytest
import scipy.linalg

from solstab import geometry, spectral, stability
from solstab.geometry import CurvatureData, DiagonalTensorField
from solstab.stability import (
    anderson_chow_check, bochner_criterion, criteria_suite,
    expander_ricci_decay, rotsym_pointwise_inequality, steady_curvature_gap,
)

from conftest import assert_close


# -- pointwise chain ---------------------------------------------------------

def test_chain_nonnegative_on_curved_profiles(bryant_expander_coarse,
                                              cigar_norm):
    for p in (bryant_expander_coarse, cigar_norm):
        marg = rotsym_pointwise_inequality(p, samples=3000, seed=0)
        assert marg >= -1e-12, (p.kind, marg)


def test_chain_is_roundoff_on_flat_profile(gaussian_coarse):
    marg = rotsym_pointwise_inequality(gaussian_coarse, samples=2000)
    assert abs(marg) < 1e-8


def test_chain_seed_determinism(bryant_expander_coarse):
    a = rotsym_pointwise_inequality(bryant_expander_coarse, samples=500,
                                    seed=11)
    b = rotsym_pointwise_inequality(bryant_expander_coarse, samples=500,
                                    seed=11)
    assert a == b


def _fake(n, a, b, N=64):
    cur = CurvatureData(n, np.full(N, float(a)), np.full(N, float(b)))
    return SimpleNamespace(curvature=cur, n=n)


def test_chain_coefficients_saturate_in_three_dimensions():
    # pure-a data: the Cauchy-Schwarz steps are tight, so the sampled
    # minimum is nonnegative but approaches zero
    marg_a = rotsym_pointwise_inequality(_fake(3, 1.0, 0.0), samples=4000)
    assert -1e-12 <= marg_a < 0.05
    marg_b = rotsym_pointwise_inequality(_fake(3, 0.0, 1.0), samples=4000)
    assert -1e-12 <= marg_b < 0.05


def test_chain_b_coefficient_is_linear_for_n3():
    # (n-2)(n-3) kills the last term in dimension three, leaving the
    # margin exactly linear in b
    m1 = rotsym_pointwise_inequality(_fake(3, 0.0, 1.0), samples=2000,
                                     seed=4)
    m2 = rotsym_pointwise_inequality(_fake(3, 0.0, 2.0), samples=2000,
                                     seed=4)
    assert_close(m2, 2.0 * m1, rtol=1e-12, label="b linearity")


# -- Bochner criterion -------------------------------------------------------

def test_bochner_flat_expander(gaussian):
    rep = bochner_criterion(gaussian)
    assert rep.verdict == "pass"
    assert_close(rep.margin, 1.5, rtol=1e-6, label="flat margin")
    assert rep.guaranteed
    assert rep.measured["bottom_lichnerowicz"] > 0.0


def test_bochner_curved_expander(bryant_expander):
    rep = bochner_criterion(bryant_expander)
    assert rep.verdict == "pass"
    assert 1.0 < rep.margin < 1.5
    assert rep.measured["bottom_lichnerowicz"] > 1.5


def test_bochner_rejects_steady(bryant_steady):
    with pytest.raises(ValueError):
        bochner_criterion(bryant_steady)


# -- maximum-principle location ----------------------------------------------

def test_location_check_constant_field_passes(bryant_expander_coarse):
    wp = bryant_expander_coarse.restrict(0.5, 10.0)
    ones = np.ones(wp.grid.N)
    h = DiagonalTensorField(ones, ones)
    rep = anderson_chow_check(wp, h, 0.5,
                              float(np.quantile(wp.f, 0.8)))
    assert rep.guaranteed
    assert rep.verdict == "pass"


def test_location_check_interior_peak_fails(bryant_expander_coarse):
    from solstab import fields
    wp = bryant_expander_coarse.restrict(0.5, 10.0)
    mid = fields.Bump(2.0, 8.0)(wp.grid.r) + 1e-6
    h = DiagonalTensorField(mid, mid)
    rep = anderson_chow_check(wp, h, 0.5,
                              float(np.quantile(wp.f, 0.8)))
    assert rep.guaranteed
    assert rep.verdict == "fail"


def test_location_check_on_marched_discrete_solution(bryant_expander_coarse):
    # grow a genuine pointwise solution of (A - lam M) x = 0 node by node
    # from the inner wall; with lam below the spectrum it must take its
    # sublevel maximum at the boundary level
    res = spectral.bottom_lichnerowicz(
        spectral.SpectralProblem(bryant_expander_coarse))
    wp = res.window_profile
    lam = 0.5
    assert lam < res.lambda_min
    A, mdiag, _ = spectral._tensor_system(wp)
    Ad = A.toarray()
    N = wp.grid.N
    x = np.zeros((N, 2))
    x[1] = (1e-8, 1.3e-8)
    for i in range(1, N - 1):
        rows = Ad[2 * i:2 * i + 2]
        b_up = rows[:, 2 * (i + 1):2 * (i + 1) + 2]
        rhs = lam * mdiag[2 * i:2 * i + 2] * x[i] \
            - rows[:, 2 * (i - 1):2 * (i - 1) + 2] @ x[i - 1] \
            - rows[:, 2 * i:2 * i + 2] @ x[i]
        x[i + 1] = np.linalg.solve(b_up, rhs)
    h = DiagonalTensorField(x[:, 0], x[:, 1])
    rep = anderson_chow_check(wp, h, lam, float(np.quantile(wp.f, 0.75)))
    assert rep.guaranteed
    assert rep.verdict == "pass", rep.as_dict()


def test_location_check_is_probe_only_on_steadies(bryant_steady_coarse):
    res = spectral.bottom_lichnerowicz(
        spectral.SpectralProblem(bryant_steady_coarse))
    wp = res.window_profile
    rep = anderson_chow_check(wp, res.eigenfield, res.lambda_min,
                              float(np.quantile(wp.f, 0.75)))
    assert not rep.guaranteed
    assert rep.verdict in ("pass", "inconclusive")


def test_location_check_validation(bryant_expander_coarse, cigar_norm):
    wp = bryant_expander_coarse.restrict(0.5, 10.0)
    ones = np.ones(wp.grid.N)
    h = DiagonalTensorField(ones, ones)
    with pytest.raises(ValueError):
        anderson_chow_check(wp, h, 0.5, float(wp.f[0]))  # empty sublevel
    with pytest.raises(ValueError):
        anderson_chow_check(cigar_norm, cigar_norm.symmetry_field(),
                            0.5, 1.0)  # wrong dimension


# -- curvature gap and decay criteria ----------------------------------------

def test_cigar_gap_recovers_unit_decay_exponent(cigar_norm):
    rep = steady_curvature_gap(cigar_norm, 0.5)
    assert abs(rep.measured["decay_exponent"] - 1.0) < 0.02


def test_steady_gap_positive_on_polynomial_decay(bryant_steady):
    for alpha in (0.3, 0.6, 0.9):
        rep = steady_curvature_gap(bryant_steady, alpha)
        assert rep.verdict == "pass", (alpha, rep.as_dict())


def test_flat_steady_gap_is_inconclusive(flat_steady):
    rep = steady_curvature_gap(flat_steady, 0.5)
    assert rep.verdict == "inconclusive"


def test_gap_validation(bryant_steady, bryant_expander):
    with pytest.raises(ValueError):
        steady_curvature_gap(bryant_steady, 1.2)
    with pytest.raises(ValueError):
        steady_curvature_gap(bryant_expander, 0.5)
    with pytest.raises(ValueError):
        expander_ricci_decay(bryant_steady, 0.5)


def test_expander_scalar_decay(bryant_expander, gaussian):
    rep = expander_ricci_decay(bryant_expander, 0.5)
    assert rep.verdict == "pass"
    rep = expander_ricci_decay(gaussian, 0.5)
    assert rep.verdict == "inconclusive"


# -- suite and cross-module implications -------------------------------------

def test_suite_covers_expander_criteria(bryant_expander_coarse):
    reports = criteria_suite(bryant_expander_coarse, samples=2000)
    names = {r.criterion for r in reports}
    assert names == {"rotsym_pointwise", "bochner", "expander_ricci_decay",
                     "anderson_chow"}
    for r in reports:
        assert r.verdict in ("pass", "inconclusive"), r.as_dict()


def test_suite_flat_profile_notes_roundoff(gaussian_coarse):
    reports = criteria_suite(gaussian_coarse, samples=1000)
    rot = next(r for r in reports if r.criterion == "rotsym_pointwise")
    assert rot.verdict == "pass"


def test_suite_steady_criteria(flat_steady):
    reports = criteria_suite(flat_steady, samples=500)
    names = {r.criterion for r in reports}
    assert names == {"rotsym_pointwise", "steady_curvature_gap"}


def test_positive_criteria_imply_positive_bottom(gaussian, bryant_expander,
                                                 bryant_steady, cigar_norm):
    # any profile where a sufficient criterion fires must also have a
    # measured positive bottom on the same window
    for p in (gaussian, bryant_expander, bryant_steady, cigar_norm):
        marg = rotsym_pointwise_inequality(p, samples=2000, seed=1)
        hardy = spectral.hardy_lower_bound(p)
        if p.epsilon == 1:
            rep = bochner_criterion(p, cross_check=False)
            fired = rep.margin > 0.0
        else:
            fired = marg >= -1e-12 and hardy > 0.0
        assert fired, p.kind
        bottom = spectral.bottom_lichnerowicz(
            spectral.SpectralProblem(p)).lambda_min
        assert bottom > 0.0, (p.kind, bottom)
