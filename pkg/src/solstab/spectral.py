"""Weighted spectral problems for rotationally symmetric solitons.

Assembles the drift Laplacian on scalars and the reduced Lichnerowicz
operator L = -Delta_f - 2 Rm* on diagonal tensor fields as symmetric
generalized eigenproblems with the e^f-weighted mass matrix, computes
bottoms of spectra, and evaluates the integral identities (Hardy,
conjugation, Koiso-type, Donnelly-Garofalo) that certify the assembly.
"""

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import fields, geometry

__all__ = [
    "SpectralError", "SpectralProblem", "SpectralResult", "default_window",
    "bottom_scalar", "bottom_lichnerowicz", "hardy_weight",
    "hardy_lower_bound", "hardy_check", "conjugate_schrodinger",
    "kernel_oracle", "koiso_identity_residual",
    "donnelly_garofalo_residual", "agmon_decay_check",
]

DENSE_CUTOFF = 400  # matrix dimension at or below which the dense path runs


class SpectralError(RuntimeError):
    """Eigensolver failed to meet its residual tolerance."""

    def __init__(self, msg, iterations=None):
        super().__init__(msg)
        self.iterations = iterations


class SpectralProblem:
    """Bundle of profile, sector, radial window and solver knobs.

    window is a pair of radii (r_lo, r_hi); None picks default_window.
    Scalar windows whose left end reaches the first grid node of an
    origin-regular profile get the regularity closure there (zero flux
    through r=0, where the area factor vanishes); every other end is a
    Dirichlet wall. method: auto | dense | iterative.
    """

    def __init__(self, profile, sector="diagonal_tensor", window=None,
                 tolerance=1e-8, maxit=160, method="auto"):
        if sector == "tensor":
            sector = "diagonal_tensor"
        if sector not in ("scalar", "diagonal_tensor"):
            raise ValueError(f"unknown sector {sector!r}")
        if method not in ("auto", "dense", "iterative"):
            raise ValueError(f"unknown method {method!r}")
        self.profile = profile
        self.sector = sector
        self.window = window
        self.tolerance = float(tolerance)
        self.maxit = int(maxit)
        self.method = method


class SpectralResult:
    def __init__(self, lambda_min, eigenfield, residual, window,
                 window_sensitivity, sector, iterations, window_profile):
        self.lambda_min = lambda_min
        self.eigenfield = eigenfield
        self.residual = residual
        self.window = window
        self.window_sensitivity = window_sensitivity
        self.sector = sector
        self.iterations = iterations
        self.window_profile = window_profile

    def as_report(self):
        return {
            "sector": self.sector,
            "lambda_min": float(self.lambda_min),
            "residual": float(self.residual),
            "window": [float(self.window[0]), float(self.window[1])],
            "window_sensitivity": float(self.window_sensitivity)
            if self.window_sensitivity is not None else None,
            "iterations": int(self.iterations),
        }


def default_window(p, sector):
    """Radial window keeping well clear of the outer truncation.

    The outer 20% of the computational domain is dropped on every sector.
    Tensor windows also stay off the origin, where the frame coupling
    rate phi'/(xi phi) blows up; the inner cut is fixed by r_max (not by
    the grid step) so refinement studies see one continuum problem.
    """
    r = p.grid.r
    r_max = r[-1]
    hi = 0.8 * r_max
    if sector == "scalar":
        return (r[0], hi)
    h = p.grid.h if p.grid.uniform else float(np.max(np.diff(r)))
    lo = max(0.02 * r_max, 8.0 * h)
    return (lo, hi)


# -- assembly ---------------------------------------------------------------

def _face_conductance(wp):
    g = wp.grid
    g.require_uniform("spectral assembly")
    m = wp.metric
    pcoef = np.exp(wp.f) * m.phi ** (g.n - 1) / m.xi
    pf = 0.5 * (pcoef[:-1] + pcoef[1:]) / g.h  # interior faces
    return pcoef, pf


def _scalar_system(wp, natural_left):
    g = wp.grid
    pcoef, pf = _face_conductance(wp)
    w = wp.measure.w
    N = g.N
    diag = np.zeros(N)
    diag[:-1] += pf
    diag[1:] += pf
    if not natural_left:
        diag[0] += pcoef[0] / g.h  # wall half a cell inside
    diag[-1] += pcoef[-1] / g.h
    A = sp.diags([-pf, diag, -pf], offsets=(-1, 0, 1), format="csr")
    return A, w.copy(), -0.5


def _tensor_system(wp):
    """Interleaved (u, v) blocks; Dirichlet at both window ends."""
    g = wp.grid
    n = g.n
    pcoef, pf = _face_conductance(wp)
    w = wp.measure.w
    N = g.N
    m = wp.metric
    c = wp.phip / (m.xi * m.phi)
    a = wp.curvature.a
    b = wp.curvature.b

    rows, cols, vals = [], [], []

    def add(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    # stiffness per component, v carries the (n-1) sector weight
    for comp, fac in ((0, 1.0), (1, float(n - 1))):
        for i in range(N - 1):
            k = fac * pf[i]
            add(2 * i + comp, 2 * i + comp, k)
            add(2 * (i + 1) + comp, 2 * (i + 1) + comp, k)
            add(2 * i + comp, 2 * (i + 1) + comp, -k)
            add(2 * (i + 1) + comp, 2 * i + comp, -k)
        add(comp, comp, fac * pcoef[0] / g.h)
        add(2 * (N - 1) + comp, 2 * (N - 1) + comp, fac * pcoef[-1] / g.h)

    # nodal frame coupling 2(n-1)c^2(u-v)^2 and curvature potential
    q = 2.0 * (n - 1) * c ** 2 * w
    puv = -2.0 * (n - 1) * a * w          # cross term of -2Rm(h,h)
    pvv = -2.0 * (n - 1) * (n - 2) * b * w
    for i in range(N):
        add(2 * i, 2 * i, q[i])
        add(2 * i + 1, 2 * i + 1, q[i] + pvv[i])
        add(2 * i, 2 * i + 1, -q[i] + puv[i])
        add(2 * i + 1, 2 * i, -q[i] + puv[i])

    A = sp.csr_matrix((vals, (rows, cols)), shape=(2 * N, 2 * N))
    mdiag = np.empty(2 * N)
    mdiag[0::2] = w
    mdiag[1::2] = (n - 1) * w

    # node-block lower bound on the curvature potential, in mass units
    nb = (n - 2) * b
    block_min = -nb - np.sqrt(nb ** 2 + 4.0 * (n - 1) * a ** 2)
    sigma0 = min(0.0, float(np.min(block_min))) - 0.5
    return A, mdiag, sigma0


def _lowest_pair(A, mdiag, sigma0, tol, maxit, method):
    dim = A.shape[0]
    dense = method == "dense" or (method == "auto" and dim <= DENSE_CUTOFF)
    if dense:
        lams, vecs = scipy.linalg.eigh(A.toarray(), np.diag(mdiag))
        lam = float(lams[0])
        x = vecs[:, 0]
        iters = 0
    else:
        x = 1.0 + 0.01 * np.sin(3.7 * np.arange(dim))
        x /= np.sqrt(x @ (mdiag * x))
        M = sp.diags(mdiag).tocsc()
        sigma = sigma0
        lu = spla.splu((A - sigma * M).tocsc())
        lam = np.inf
        refined = False
        iters = 0
        for it in range(maxit):
            y = lu.solve(mdiag * x)
            ny = np.sqrt(y @ (mdiag * y))
            if not np.isfinite(ny) or ny == 0.0:
                raise SpectralError("inverse iteration broke down", it)
            x = y / ny
            lam_new = float(x @ (A @ x))
            iters = it + 1
            settled = abs(lam_new - lam) <= 1e-7 * max(1.0, abs(lam_new))
            if refined and settled:
                # the eigenvalue settles before the vector does: accept
                # only once the defect is safely inside the tolerance
                r = A @ x - lam_new * (mdiag * x)
                if np.sqrt(r @ (r / mdiag)) \
                        <= 0.5 * tol * (1.0 + abs(lam_new)):
                    lam = lam_new
                    break
            if not refined and (settled or it >= maxit // 2):
                # re-factor just below the estimate to finish in a few steps
                sigma = lam_new - 1e-3 * max(1.0, abs(lam_new))
                try:
                    lu = spla.splu((A - sigma * M).tocsc())
                except RuntimeError:
                    sigma -= 0.1 * max(1.0, abs(lam_new))
                    lu = spla.splu((A - sigma * M).tocsc())
                refined = True
            lam = lam_new
    # hygiene: unit mass norm, dominant entry positive
    x = x / np.sqrt(x @ (mdiag * x))
    if x[np.argmax(np.abs(x))] < 0:
        x = -x
    r = A @ x - lam * (mdiag * x)
    resid = float(np.sqrt(r @ (r / mdiag)))
    if resid > tol * (1.0 + abs(lam)):
        raise SpectralError(
            f"eigensolver residual {resid:.3e} above tolerance after "
            f"{iters} iterations (lambda ~ {lam:.6g})", iters)
    return lam, x, resid, iters


def _solve_window(p, lo, hi, sector, tol, maxit, method):
    wp = p.restrict(lo, hi)
    if sector == "scalar":
        natural = (wp.metric.origin_regular and wp.grid.origin_offset
                   and wp.grid.r[0] <= p.grid.r[0] + 1e-12)
        A, mdiag, sigma0 = _scalar_system(wp, natural)
    else:
        A, mdiag, sigma0 = _tensor_system(wp)
    lam, x, resid, iters = _lowest_pair(A, mdiag, sigma0, tol, maxit, method)
    if sector == "scalar":
        field = x
    else:
        field = geometry.DiagonalTensorField(x[0::2].copy(), x[1::2].copy())
    return lam, field, resid, iters, wp


def _bottom(prob, sector):
    p = prob.profile
    lo, hi = prob.window if prob.window is not None \
        else default_window(p, sector)
    lam, field, resid, iters, wp = _solve_window(
        p, lo, hi, sector, prob.tolerance, prob.maxit, prob.method)
    lam2, _, _, _, _ = _solve_window(
        p, lo, lo + 0.8 * (hi - lo), sector, prob.tolerance, prob.maxit,
        prob.method)
    sens = abs(lam - lam2) / max(abs(lam), 1e-300)
    return SpectralResult(lam, field, resid, (lo, hi), sens, sector,
                          iters, wp)


def bottom_scalar(prob):
    """Bottom of -Delta_f over the window; Rayleigh minimization."""
    if prob.sector != "scalar":
        raise ValueError("bottom_scalar needs a scalar-sector problem")
    return _bottom(prob, "scalar")


def bottom_lichnerowicz(prob):
    """Bottom of L = -Delta_f - 2Rm* on diagonal tensor fields.

    A strictly positive value certifies strict stability restricted to
    the rotationally symmetric diagonal sector on the window.
    """
    if prob.sector != "diagonal_tensor":
        raise ValueError("bottom_lichnerowicz needs the tensor sector")
    return _bottom(prob, "diagonal_tensor")


# -- Hardy inequalities -----------------------------------------------------

def hardy_weight(p, alpha=0.5):
    """Pointwise weight W with int |grad psi|^2 dmu_f >= int W psi^2 dmu_f.

    Steady: W = alpha^2 R + lambda(g) alpha(1-alpha), alpha in (0,1],
    normalized profile. Expanding: W = R + n/2 (alpha ignored). Both come
    from the positive supersolution e^{-alpha f} (resp. e^{-f}).
    """
    R = p.curvature.R
    if p.epsilon == 0:
        if p.lambda_g is None:
            raise ValueError("steady Hardy weight needs a normalized "
                             "profile with lambda_g set")
        if not 0.0 < alpha <= 1.0:
            raise ValueError("steady Hardy weight needs alpha in (0, 1]")
        return alpha ** 2 * R + p.lambda_g * alpha * (1.0 - alpha)
    return R + 0.5 * p.n


def hardy_lower_bound(p, window=None, alphas=None):
    """inf over the window of the best available Hardy weight."""
    lo, hi = window if window is not None else default_window(p, "scalar")
    wp = p.restrict(lo, hi)
    if p.epsilon == 1:
        return float(np.min(hardy_weight(wp)))
    if alphas is None:
        alphas = np.linspace(0.05, 1.0, 39)
    best = -np.inf
    for al in alphas:
        best = max(best, float(np.min(hardy_weight(wp, al))))
    return best


def hardy_check(p, alpha=0.5, count=100, seed=0, window=None, test_fns=None):
    """Min margin of the Hardy inequality over seeded compact bumps.

    Margin = int |grad psi|^2 dmu_f - int W psi^2 dmu_f with psi scaled
    to unit H^1(dmu_f) norm and analytic derivatives, so a clean
    inequality fails only by quadrature error. Returns the minimum.
    """
    lo, hi = window if window is not None else (p.grid.r[0], p.grid.r[-1])
    r = p.grid.r
    xi = p.metric.xi
    w = p.measure.w
    W = hardy_weight(p, alpha)
    if test_fns is None:
        test_fns = [fields.random_bump(fields.rng_for(seed, "hardy", k),
                                       lo, hi) for k in range(count)]
    worst = np.inf
    for fn in test_fns:
        psi = fn(r)
        dpsi = fn.d(r)
        grad2 = (dpsi / xi) ** 2
        nrm = np.sum((psi ** 2 + grad2) * w)
        if nrm <= 0.0:
            margin = 0.0
        else:
            margin = float(np.sum((grad2 - W * psi ** 2) * w) / nrm)
        worst = min(worst, margin)
    return worst


# -- identity checks --------------------------------------------------------

def _seeded_tensor(wp, seed, tag):
    lo, hi = wp.grid.r[0], wp.grid.r[-1]
    rng = fields.rng_for(seed, tag)
    bu = fields.random_bump(rng, lo, hi)
    bv = fields.random_bump(rng, lo, hi)
    r = wp.grid.r
    return geometry.DiagonalTensorField(bu(r), bv(r))


def _support_check(arrs, what):
    scale = max(float(np.max(np.abs(a))) for a in arrs)
    for a in arrs:
        if abs(a[0]) > 1e-10 * scale or abs(a[-1]) > 1e-10 * scale:
            raise geometry.BoundarySupportError(
                f"{what} must be compactly supported inside the window")


def conjugate_schrodinger(p, h=None, seed=0, window=None):
    """Residual of e^{f/2} L(e^{-f/2} h) = -Delta h + V*h.

    The left side runs through the weighted operator, the right through
    the unweighted Laplacian plus the scalar potential
    V = (Delta f)/2 + |grad f|^2/4 (with finite-difference f-derivatives,
    so the routes share no drift data) and the same -2Rm* action.
    Residual in unweighted L^2(dmu), relative to ||h||_{L^2(dmu)}.
    """
    lo, hi = window if window is not None \
        else default_window(p, "diagonal_tensor")
    wp = p.restrict(lo, hi)
    m = wp.metric
    if h is None:
        h = _seeded_tensor(wp, seed, "conj")
    elif h.u.size != wp.grid.r.size:
        raise ValueError("h has %d nodes, window grid has %d"
                         % (h.u.size, wp.grid.r.size))
    _support_check([h.u, h.v], "conjugation test field")

    half = np.exp(-0.5 * wp.f)
    wfield = geometry.DiagonalTensorField(h.u * half, h.v * half)
    lw = geometry.tensor_laplacian_f(wfield, m, f=wp.f, fp=wp.fp)
    rmw = geometry.rm_action(wp.curvature, wfield)
    lhs_u = (-lw.u - 2.0 * rmw.u) / half
    lhs_v = (-lw.v - 2.0 * rmw.v) / half

    g = wp.grid
    fp_fd = geometry.deriv(wp.f, g, parity="even")
    lapf_fd = geometry.scalar_laplacian_f(wp.f, m, parity="even")
    V = 0.5 * lapf_fd + 0.25 * (fp_fd / m.xi) ** 2
    lap_h = geometry.tensor_laplacian_f(h, m)
    rmh = geometry.rm_action(wp.curvature, h)
    rhs_u = -lap_h.u + V * h.u - 2.0 * rmh.u
    rhs_v = -lap_h.v + V * h.v - 2.0 * rmh.v

    wun = geometry.WeightedMeasure(m, np.zeros_like(wp.f)).w
    sl = slice(2, -2)
    diff2 = ((lhs_u - rhs_u) ** 2
             + (g.n - 1) * (lhs_v - rhs_v) ** 2)[sl] * wun[sl]
    hnorm2 = (h.norm2(g.n) * wun).sum()
    return float(np.sqrt(diff2.sum() / max(hnorm2, 1e-300)))


def kernel_oracle(p, window=None):
    """Relative L^2_f residual of the assembled L on the symmetry field.

    L annihilates the Lie derivative of the metric along grad f, so
    feeding that field through the assembled matrix is the decisive
    correctness check for the tensor assembly. Boundary rows are
    excluded (the field does not vanish at the window walls). The
    residual is reported relative to the field's own L^2_f norm: with
    the e^{+f} weight an absolute norm would just measure the outer
    annulus mass.
    """
    lo, hi = window if window is not None \
        else default_window(p, "diagonal_tensor")
    wp = p.restrict(lo, hi)
    hk = wp.symmetry_field()
    A, mdiag, _ = _tensor_system(wp)
    x = np.empty(2 * wp.grid.N)
    x[0::2] = hk.u
    x[1::2] = hk.v
    y = A @ x
    n = wp.grid.n
    w = wp.measure.w
    eu = y[0::2] / w
    ev = y[1::2] / ((n - 1) * w)
    sl = slice(1, -1)  # Dirichlet closures live in the first/last rows
    res2 = float(np.sum(w[sl] * (eu[sl] ** 2 + (n - 1) * ev[sl] ** 2)))
    nrm2 = float(np.sum(w[sl] * (hk.u[sl] ** 2 + (n - 1) * hk.v[sl] ** 2)))
    return float(np.sqrt(res2 / max(nrm2, 1e-300)))


def koiso_identity_residual(p, T=None, seed=0, window=None):
    """Mismatch in 2||grad T||^2 = ||Cod T||^2 + 2||div_f T||^2
    + eps ||T||^2 + 2<Rm*T, T>, all in L^2(dmu_f), for compact T.

    The eps||T||^2 term is -2<(Ric - Hess f) T, T> folded through the
    soliton equation, so the same identity covers steadies (where the
    term drops) and expanders. T is scaled to unit H^1(dmu_f) norm
    first.
    """
    lo, hi = window if window is not None \
        else default_window(p, "diagonal_tensor")
    wp = p.restrict(lo, hi)
    if T is None:
        T = _seeded_tensor(wp, seed, "koiso")
    elif T.u.size != wp.grid.r.size:
        raise ValueError("T has %d nodes, window grid has %d"
                         % (T.u.size, wp.grid.r.size))
    _support_check([T.u, T.v], "identity test field")
    m = wp.metric
    w = wp.measure.w
    n = wp.grid.n

    gn = geometry.grad_norm_sq(T, m)
    nrm2 = T.norm2(n)
    scale = 1.0 / np.sqrt(np.sum((gn + nrm2) * w))
    T = geometry.DiagonalTensorField(T.u * scale, T.v * scale)

    gn = geometry.grad_norm_sq(T, m)
    cod = geometry.codazzi_norm_sq(T, m)
    dv = geometry.div_f(T, m, wp.f, fp=wp.fp)
    rmq = geometry.rm_quadratic(wp.curvature, T)
    lhs = 2.0 * np.sum(gn * w)
    rhs = np.sum((cod + 2.0 * dv ** 2 + p.epsilon * T.norm2(n)
                  + 2.0 * rmq) * w)
    return float(abs(lhs - rhs))


def donnelly_garofalo_residual(p, psi=None, seed=0, window=None):
    """|int (2 (grad f . grad psi) Delta_f psi + 2 Hess f(grad psi)^2
    - |grad psi|^2 Delta_f f) dmu_f| for compact psi; the divergence
    identity makes the continuum value zero."""
    lo, hi = window if window is not None \
        else (p.grid.r[0], p.grid.r[-1])
    r = p.grid.r
    m = p.metric
    if psi is None:
        rng = fields.rng_for(seed, "dg")
        psi = fields.random_bump(rng, lo, hi)
    vals = psi(r) if callable(psi) else np.asarray(psi, dtype=float)
    _support_check([vals], "identity test field")
    w = p.measure.w
    xi = m.xi

    dpsi = geometry.deriv(vals, p.grid)
    nrm = np.sqrt(np.sum((vals ** 2 + (dpsi / xi) ** 2) * w))
    vals = vals / nrm
    dpsi = dpsi / nrm
    lap_f_psi = geometry.scalar_laplacian_f(vals, m, f=p.f, fp=p.fp)
    lap_f_f = geometry.scalar_laplacian_f(p.f, m, f=p.f, fp=p.fp,
                                          parity="even")
    grad2 = (dpsi / xi) ** 2
    integrand = (2.0 * (p.fp / xi) * (dpsi / xi) * lap_f_psi
                 + 2.0 * (p.fpp / xi ** 2) * grad2
                 - grad2 * lap_f_f)
    return float(abs(np.sum(integrand * w)))


# -- Agmon decay ------------------------------------------------------------

def agmon_decay_check(result, alpha=0.5, ess_slack=0.01):
    """Log-linear decay check of an eigenfield against its potential.

    Fits log|h| against f over the outer half of the window. Expanding:
    passes when the slope is <= -alpha (alpha in [0,1)); the sup of
    e^{alpha f}|h| over that half is reported. Steady: the essential
    spectrum stands in via the Hardy lower bound, alpha_eps^2 =
    lambda_ess - lambda - ess_slack, and the required slope is
    -(1/2 + alpha_eps); profiles with no positive proxy are rejected.
    """
    wp = result.window_profile
    field = result.eigenfield
    if isinstance(field, geometry.DiagonalTensorField):
        amp = np.sqrt(field.norm2(wp.grid.n))
    else:
        amp = np.abs(np.asarray(field))
    f = wp.f
    N = amp.size
    sl = slice(N // 2, N - 2)
    amp_o = amp[sl]
    f_o = f[sl]
    peak = float(np.max(np.abs(amp))) or 1.0

    if wp.epsilon == 1:
        if not 0.0 <= alpha < 1.0:
            raise ValueError("expanding decay check needs alpha in [0, 1)")
        required = -alpha
        weight_exp = alpha
        label = {"alpha": float(alpha)}
    else:
        lam_g = wp.lambda_g
        lam_ess = hardy_lower_bound(wp, window=(wp.grid.r[0],
                                                wp.grid.r[-1]))
        if lam_g is None or lam_ess <= 0.0:
            raise ValueError("steady decay check needs a normalized "
                             "profile with a positive Hardy proxy")
        ae2 = lam_ess - result.lambda_min - ess_slack
        if ae2 <= 0.0:
            return {"verdict": "inconclusive", "slope": None,
                    "required": None, "lambda_ess_proxy": lam_ess,
                    "note": "eigenvalue at or above the essential-spectrum "
                            "proxy; no decay rate is implied"}
        a_eps = np.sqrt(ae2)
        required = -(0.5 + a_eps)
        weight_exp = 0.5 + a_eps
        label = {"alpha_eps": float(a_eps), "lambda_ess_proxy": lam_ess}

    mask = amp_o > 1e-290 * peak
    if mask.sum() < 4:
        return {"verdict": "pass", "slope": None, "required": required,
                "sup_weighted": 0.0,
                "note": "decay beyond machine range", **label}
    slope, _ = np.polyfit(f_o[mask], np.log(amp_o[mask]), 1)
    sup_w = float(np.max(np.exp(weight_exp * f_o[mask]) * amp_o[mask]))
    verdict = "pass" if slope <= required else "fail"
    return {"verdict": verdict, "slope": float(slope),
            "required": float(required), "sup_weighted": sup_w, **label}
