"""Closed-form profiles, the shooting construction, and profile checks."""

import numpy as np
import pytest

from solstab import geometry, solitons
from solstab.solitons import (
    SolitonError, closed_form, identity_residuals, shoot_soliton,
)

from conftest import assert_close


# -- closed forms ------------------------------------------------------------

def test_cigar_raw_scales(cigar_raw):
    p = cigar_raw
    assert p.epsilon == 0
    assert p.n == 2
    assert_close(p.lambda_g, 4.0, rtol=1e-14, label="lambda_g")
    r = p.grid.r
    assert np.max(np.abs(p.metric.phi - np.tanh(r))) < 1e-14
    assert np.max(np.abs(p.f - 2.0 * np.log(np.cosh(r)))) < 1e-12


def test_cigar_normalized_has_unit_rate(cigar_norm):
    assert_close(cigar_norm.lambda_g, 1.0, rtol=1e-14, label="lambda_g")
    # R(0) = lambda_g at the soliton's tip
    assert abs(cigar_norm.curvature.R[0] - 1.0) < 1e-4


def test_gaussian_profile_is_flat_with_quadratic_potential(gaussian):
    p = gaussian
    assert p.epsilon == 1
    r = p.grid.r
    assert np.max(np.abs(p.metric.phi - r)) == 0.0
    c = 0.5 * p.n * np.log(4.0 * np.pi)
    assert np.max(np.abs(p.f - (r ** 2 / 4.0 + c))) < 1e-12
    assert_close(p.mu_g, -c, rtol=1e-13, label="mu_g")


def test_closed_form_rejects_unknown_kind():
    with pytest.raises(SolitonError):
        closed_form("paraboloid", 3)
    with pytest.raises(SolitonError):
        closed_form("cigar", 3)  # two-dimensional construction only


def test_closed_form_accepts_supplied_grid():
    g = geometry.make_grid(3, 9.0, 300)
    p = closed_form("gaussian_expander", 3, grid=g)
    assert p.grid is g


# -- identity residuals ------------------------------------------------------

def test_closed_form_identities_are_small(cigar_raw, gaussian):
    for p in (cigar_raw, gaussian):
        res = identity_residuals(p)
        for key, val in res.items():
            assert val < 1e-6, f"{p.kind} {key} = {val:.3e}"


def test_identity_residuals_refine_at_second_order_or_better():
    vals = {}
    for N in (1000, 2000):
        p = closed_form("cigar", 2, r_max=12.0, N=N)
        vals[N] = identity_residuals(p)
    for key in vals[1000]:
        if vals[1000][key] < 1e-12:
            continue
        assert vals[1000][key] / vals[2000][key] >= 3.5, key


# -- shooting ----------------------------------------------------------------

def test_shot_flat_start_reproduces_the_gaussian():
    # s = 1/2 launches the exactly flat expander; the integrator must
    # track phi = r, f' = r/2 to its own tolerance
    p = shoot_soliton(1, 3, 0.5, 12.0, N=400)
    r = p.grid.r
    assert np.max(np.abs(p.metric.phi - r)) < 1e-7
    assert np.max(np.abs(p.fp - 0.5 * r)) < 1e-7


def test_bryant_expander_construction(bryant_expander):
    p = bryant_expander
    assert p.epsilon == 1 and p.n == 3
    assert p.constraint_drift < 1e-7
    assert 0.76 < p.cone_angle < 0.80
    res = identity_residuals(p)
    assert res["res_trace"] < 1e-4
    assert res["res_hamilton"] < 1e-4


def test_bryant_steady_normalization(bryant_steady):
    p = bryant_steady
    assert p.epsilon == 0
    assert_close(p.lambda_g, 1.0, rtol=1e-12, label="lambda_g")
    # R(0) = lambda_g for a normalized steady
    assert abs(p.curvature.R[0] - 1.0) < 5e-3
    assert np.min(np.minimum(p.curvature.ric_r, p.curvature.ric_s)) > -1e-9


def test_shot_profile_rejects_bad_parameters():
    with pytest.raises(SolitonError):
        shoot_soliton(0, 3, -0.1, 10.0, N=200)
    with pytest.raises(SolitonError):
        shoot_soliton(2, 3, 0.5, 10.0, N=200)


# -- profile methods ---------------------------------------------------------

def test_symmetry_field_on_gaussian_is_the_metric(gaussian):
    h = gaussian.symmetry_field()
    assert np.max(np.abs(h.u - 1.0)) < 1e-13
    assert np.max(np.abs(h.v - 1.0)) < 1e-13


def test_restrict_preserves_data(bryant_expander):
    wp = bryant_expander.restrict(2.0, 10.0)
    assert wp.grid.r[0] >= 2.0 and wp.grid.r[-1] <= 10.0
    i0 = np.searchsorted(bryant_expander.grid.r, wp.grid.r[0])
    sl = slice(i0, i0 + wp.grid.N)
    assert np.array_equal(wp.f, bryant_expander.f[sl])
    # interior curvature recomputed on the window agrees with the parent
    assert np.max(np.abs(wp.curvature.a[4:-4]
                         - bryant_expander.curvature.a[sl][4:-4])) < 1e-9


def test_restrict_rejects_empty_window(bryant_expander):
    with pytest.raises(geometry.GridError):
        bryant_expander.restrict(7.0, 7.01)


# -- hypothesis and growth checks -------------------------------------------

def test_quadratic_growth_hypothesis_on_corpus(gaussian, bryant_expander,
                                               bryant_steady, cigar_norm):
    for p in (gaussian, bryant_expander, bryant_steady, cigar_norm):
        rep = solitons.check_hypothesis_H(p)
        assert rep["pass"], (p.kind, rep)
    # polynomial decay registers as a mildly negative log-log trend,
    # exponential decay as a steep one
    slope_poly = solitons.check_hypothesis_H(bryant_steady)["R_decay_slope"]
    slope_exp = solitons.check_hypothesis_H(cigar_norm)["R_decay_slope"]
    assert -2.0 < slope_poly < -0.5
    assert slope_exp < slope_poly


def test_hypothesis_flags_insufficient_tail():
    p = solitons.closed_form("cigar", 2, r_max=2.0, N=64, normalize=True)
    rep = solitons.check_hypothesis_H(p)
    assert rep.get("insufficient_tail")
    assert rep["pass"] is None


def test_potential_growth_exponents(gaussian, bryant_steady):
    rep = solitons.potential_growth_check(gaussian)
    assert rep["growing"]
    assert abs(rep["slope"] - rep["expected_slope"]) < 1e-6
    rep = solitons.potential_growth_check(bryant_steady)
    assert rep["growing"]
    # normalized steady: f grows linearly with unit rate
    assert abs(rep["slope"] - rep["expected_slope"]) < 0.05
