"""Eigensolves, Hardy bounds, identity residuals, decay checks."""

import numpy as np
import pytest
import scipy.linalg

from solstab import fields, geometry, solitons, spectral
from solstab.spectral import (
    SpectralError, SpectralProblem, bottom_lichnerowicz, bottom_scalar,
    default_window, hardy_check, hardy_lower_bound, hardy_weight,
    kernel_oracle, koiso_identity_residual,
)

from conftest import assert_close


# -- windows -----------------------------------------------------------------

def test_default_windows(bryant_expander):
    r = bryant_expander.grid.r
    lo, hi = default_window(bryant_expander, "scalar")
    assert lo == r[0]
    assert_close(hi, 0.8 * r[-1], rtol=1e-12, label="scalar hi")
    lo_t, hi_t = default_window(bryant_expander, "diagonal_tensor")
    assert lo_t >= max(0.02 * r[-1], 8 * bryant_expander.grid.h) - 1e-12
    assert hi_t == hi


# -- eigensolves -------------------------------------------------------------

def test_dense_and_iterative_paths_agree(bryant_expander_coarse):
    p = bryant_expander_coarse
    res_d = bottom_lichnerowicz(SpectralProblem(p, method="dense"))
    res_i = bottom_lichnerowicz(SpectralProblem(p, method="iterative"))
    assert_close(res_i.lambda_min, res_d.lambda_min, rtol=1e-7,
                 label="solver paths")
    assert res_i.residual < 1e-6
    assert res_d.residual < 1e-6


def test_bottom_matches_full_dense_pencil(bryant_expander_coarse):
    # independent oracle: solve the whole generalized eigenproblem with
    # a direct dense routine and compare the smallest eigenvalue
    res = bottom_lichnerowicz(SpectralProblem(bryant_expander_coarse))
    wp = res.window_profile
    A, mdiag, _ = spectral._tensor_system(wp)
    vals = scipy.linalg.eigh(A.toarray(), np.diag(mdiag),
                             eigvals_only=True)
    assert_close(res.lambda_min, float(vals[0]), rtol=1e-8,
                 label="dense pencil bottom")


def test_expander_tensor_bottom_value(bryant_expander):
    res = bottom_lichnerowicz(SpectralProblem(bryant_expander))
    assert_close(res.lambda_min, 1.7276, rtol=2e-3, label="tensor bottom")
    assert res.window_sensitivity < 0.01


def test_steady_tensor_bottom_value(bryant_steady):
    res = bottom_lichnerowicz(SpectralProblem(bryant_steady))
    assert 0.16 < res.lambda_min < 0.18
    # normalized steady: decaying eigenfield, positive bottom


def test_flat_scalar_bottom_is_half_dimension(gaussian):
    prob = SpectralProblem(gaussian, sector="scalar",
                           window=(gaussian.grid.r[0], 12.0))
    res = bottom_scalar(prob)
    assert_close(res.lambda_min, 1.5, rtol=5e-3, label="scalar bottom")
    assert res.window_sensitivity < 5e-3


def test_window_monotonicity(bryant_expander_coarse):
    # Dirichlet bottoms decrease when the window widens
    p = bryant_expander_coarse
    wide = bottom_lichnerowicz(SpectralProblem(p, window=(1.0, 10.0)))
    narrow = bottom_lichnerowicz(SpectralProblem(p, window=(1.5, 8.0)))
    assert wide.lambda_min <= narrow.lambda_min + 1e-10


def test_solver_failure_is_typed(bryant_expander_coarse):
    prob = SpectralProblem(bryant_expander_coarse, tolerance=1e-15,
                           maxit=2, method="iterative")
    with pytest.raises(SpectralError):
        bottom_lichnerowicz(prob)


def test_problem_validation(bryant_expander_coarse):
    with pytest.raises(ValueError):
        SpectralProblem(bryant_expander_coarse, sector="vector")
    with pytest.raises(ValueError):
        SpectralProblem(bryant_expander_coarse, method="magic")


def test_report_round_trip(bryant_expander_coarse):
    res = bottom_lichnerowicz(SpectralProblem(bryant_expander_coarse))
    rep = res.as_report()
    for key in ("sector", "lambda_min", "residual", "window",
                "window_sensitivity", "iterations"):
        assert key in rep
    assert rep["sector"] == "diagonal_tensor"


# -- Hardy bounds ------------------------------------------------------------

def test_hardy_lower_bound_flat_expander(gaussian):
    assert_close(hardy_lower_bound(gaussian), 1.5, rtol=1e-9,
                 label="flat expander bound")


def test_hardy_lower_bound_cigar(cigar_norm):
    # curvature dies in the tail, the potential term alpha(1-alpha)
    # survives and is maximized at alpha = 1/2
    assert_close(hardy_lower_bound(cigar_norm), 0.25, rtol=1e-2,
                 label="steady bound")


def test_hardy_lower_bound_curved_expander(bryant_expander):
    lb = hardy_lower_bound(bryant_expander)
    assert 1.5 < lb < 1.6


def test_hardy_margins_nonnegative(gaussian, cigar_norm, bryant_expander):
    for p, alpha in ((gaussian, 0.5), (cigar_norm, 0.5), (cigar_norm, 1.0),
                     (bryant_expander, 0.5)):
        margin = hardy_check(p, alpha=alpha, count=20, seed=3)
        assert margin >= -1e-8, (p.kind, alpha, margin)


def test_hardy_weight_validation(cigar_norm):
    with pytest.raises(ValueError):
        hardy_weight(cigar_norm, alpha=1.2)
    # hand-built steady with no lambda_g: weight has nothing to anchor to
    g0 = geometry.make_grid(3, 8.0, 64)
    z = np.zeros_like(g0.r)
    m0 = geometry.WarpedMetric(g0, np.ones_like(g0.r), g0.r.copy(),
                               origin_regular=True)
    bare = solitons.SolitonProfile(0, m0, z, z, np.ones_like(g0.r), z)
    with pytest.raises(ValueError):
        hardy_weight(bare)


# -- identity oracles --------------------------------------------------------

def test_kernel_oracle_flat_background(gaussian):
    assert kernel_oracle(gaussian) < 1e-10


def test_kernel_oracle_curved_background(bryant_expander):
    assert kernel_oracle(bryant_expander) < 1e-5


def test_koiso_identity_on_pure_trace_field(gaussian):
    # T = bump * g has no Codazzi part; the identity reduces to
    # 2|grad|^2 = 2|div_f|^2 + eps|T|^2 on a flat background
    lo, hi = default_window(gaussian, "diagonal_tensor")
    wp = gaussian.restrict(lo, hi)
    bump = fields.Bump(lo + 0.5, hi - 0.5, osc_k=0.8)
    vals = bump(wp.grid.r)
    T = geometry.DiagonalTensorField(vals, vals)
    res = koiso_identity_residual(gaussian, T=T)
    assert res < 1e-4
    with pytest.raises(ValueError):
        koiso_identity_residual(gaussian,
                                T=geometry.DiagonalTensorField(vals[:-5],
                                                               vals[:-5]))


def test_identity_residuals_on_seeded_fields(gaussian_coarse,
                                             bryant_expander_coarse):
    for p in (gaussian_coarse, bryant_expander_coarse):
        assert koiso_identity_residual(p, seed=1) < 5e-3
        assert spectral.conjugate_schrodinger(p, seed=1) < 5e-3
        assert spectral.donnelly_garofalo_residual(p, seed=1) < 5e-3


def test_identity_field_must_be_compact(gaussian_coarse):
    ones = np.ones(gaussian_coarse.grid.N)
    T = geometry.DiagonalTensorField(ones, ones)
    with pytest.raises(geometry.BoundarySupportError):
        koiso_identity_residual(gaussian_coarse, T=T,
                                window=(gaussian_coarse.grid.r[0],
                                        gaussian_coarse.grid.r[-1]))


# -- decay of eigenfields ----------------------------------------------------

def test_agmon_decay_expander(bryant_expander_coarse):
    res = bottom_lichnerowicz(SpectralProblem(bryant_expander_coarse))
    rep = spectral.agmon_decay_check(res, alpha=0.5)
    assert rep["verdict"] == "pass"
    assert rep["slope"] <= -0.5


def test_agmon_decay_steady(bryant_steady_coarse):
    res = bottom_lichnerowicz(SpectralProblem(bryant_steady_coarse))
    rep = spectral.agmon_decay_check(res)
    assert rep["verdict"] in ("pass", "inconclusive")
    if rep["verdict"] == "pass":
        assert rep["slope"] <= rep["required"]
