"""Warped-product geometry on radial grids.

Everything in this module works on the invariant sector of a rotationally
symmetric metric g = xi(r)^2 dr^2 + phi(r)^2 g_S: scalar fields psi(r),
radial one-forms w(r), and diagonal symmetric 2-tensors h = (u, v) written
in the orthonormal frame. Sign and normalization conventions live in
CONVENTIONS.md at the repository root; formulas here do not restate them.
"""

import numpy as np

__all__ = [
    "GridError", "MetricError", "BoundarySupportError",
    "WarpedGrid", "WarpedMetric", "CurvatureData", "DiagonalTensorField",
    "WeightedMeasure", "make_grid",
    "deriv", "deriv2",
    "curvature", "christoffels", "rm_action", "rm_quadratic",
    "div_f", "one_form_gradient", "one_form_laplacian_f",
    "grad_norm_sq", "codazzi_norm_sq",
    "tensor_laplacian_f", "scalar_laplacian_f", "quadratic_form",
    "tensor_inner", "integrate", "l2f_norm",
]


class GridError(ValueError):
    pass


class MetricError(ValueError):
    pass


class BoundarySupportError(ValueError):
    pass


class WarpedGrid:
    """Radial node set shared by all fields of one problem.

    Nodes are strictly increasing and nonnegative. Uniform cell-centered
    grids (nodes at r_lo + (i+1/2)h) are the common case; they keep every
    node off r = 0 while still supporting parity-mirrored stencils there.
    """

    def __init__(self, n, r):
        r = np.asarray(r, dtype=float)
        if r.ndim != 1 or r.size < 16:
            raise GridError("grid needs at least 16 nodes")
        if int(n) < 2:
            raise GridError("ambient dimension must be >= 2")
        sp = np.diff(r)
        if r[0] < 0.0 or np.any(sp <= 0.0):
            raise GridError("nodes must be nonnegative and strictly increasing")
        self.n = int(n)
        self.r = r
        self.N = r.size
        self.spacing = sp
        h = float(sp[0])
        self.uniform = bool(np.all(np.abs(sp - h) <= 1e-12 * h))
        self.h = h if self.uniform else None
        # cell-centered next to the origin: parity ghosts are exact mirrors
        self.origin_offset = self.uniform and abs(r[0] - 0.5 * h) <= 1e-9 * h
        self.has_origin_node = r[0] == 0.0

    def require_uniform(self, what):
        if not self.uniform:
            raise GridError("%s requires a uniform grid" % what)


def make_grid(n, r_max, N, r_min=0.0):
    """Uniform cell-centered grid of N nodes on (r_min, r_max)."""
    if not r_max > r_min >= 0.0:
        raise GridError("need r_max > r_min >= 0")
    h = (r_max - r_min) / N
    return WarpedGrid(n, r_min + (np.arange(N) + 0.5) * h)


class WarpedMetric:
    """g = xi^2 dr^2 + phi^2 g_S sampled on a WarpedGrid."""

    def __init__(self, grid, xi, phi, origin_regular=False):
        xi = np.asarray(xi, dtype=float)
        phi = np.asarray(phi, dtype=float)
        if xi.shape != grid.r.shape or phi.shape != grid.r.shape:
            raise GridError("metric factors must be sampled on the grid")
        if np.any(xi <= 0.0):
            raise MetricError("xi must be positive")
        pos = grid.r > 0.0
        if np.any(phi[pos] <= 0.0):
            raise MetricError("phi must be positive for r > 0")
        if origin_regular:
            if not (grid.origin_offset or grid.has_origin_node):
                raise MetricError("origin_regular needs a grid touching r = 0")
            if grid.has_origin_node and phi[0] != 0.0:
                raise MetricError("origin_regular needs phi(0) = 0")
            i = 1 if grid.has_origin_node else 0
            slope = phi[i] / (xi[i] * grid.r[i])
            if abs(slope - 1.0) > 0.05 + 2.0 * grid.r[i]:
                raise MetricError("phi'/xi does not approach 1 at the origin")
        self.grid = grid
        self.xi = xi
        self.phi = phi
        self.origin_regular = bool(origin_regular)

    def _parity_ok(self):
        # parity stencils only make sense when the grid reaches the origin
        return self.origin_regular and (self.grid.origin_offset
                                        or self.grid.has_origin_node)


class CurvatureData:
    """Sectional curvatures (a, b) with the Ricci/scalar assembly.

    ric_r, ric_s and R are built from (a, b) in the constructor, so the
    R = 2(n-1)a + (n-1)(n-2)b identity is exact by construction.
    """

    def __init__(self, n, a, b):
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        self.n = int(n)
        self.a = a
        self.b = b
        self.ric_r = (n - 1.0) * a
        self.ric_s = a + (n - 2.0) * b
        self.R = 2.0 * (n - 1.0) * a + (n - 1.0) * (n - 2.0) * b


class DiagonalTensorField:
    """h = diag(u, v, ..., v) in the orthonormal frame."""

    def __init__(self, u, v):
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.shape != v.shape:
            raise GridError("components must share one grid")
        self.u = u
        self.v = v

    def norm2(self, n):
        return self.u ** 2 + (n - 1.0) * self.v ** 2

    def trace(self, n):
        return self.u + (n - 1.0) * self.v


class WeightedMeasure:
    """Quadrature weights w_i = e^{f_i} xi_i phi_i^{n-1} dr_i for dmu_f."""

    def __init__(self, metric, f):
        g = metric.grid
        if g.uniform:
            cell = np.full(g.N, g.h)
        else:
            cell = np.empty(g.N)
            cell[1:-1] = 0.5 * (g.r[2:] - g.r[:-2])
            cell[0] = g.spacing[0]
            cell[-1] = g.spacing[-1]
        self.w = np.exp(np.asarray(f, dtype=float)) \
            * metric.xi * metric.phi ** (g.n - 1) * cell
        self.n = g.n


# ---------------------------------------------------------------------------
# finite differences

def _pad_left(y, grid, parity, k):
    # mirror k ghost nodes across r = 0; parity describes y itself
    s = 1.0 if parity == "even" else -1.0
    r = grid.r
    if grid.origin_offset:
        gr = -r[k - 1::-1]
        gy = s * y[k - 1::-1]
    elif grid.has_origin_node:
        gr = -r[k:0:-1]
        gy = s * y[k:0:-1]
    else:
        raise GridError("parity stencils need a grid touching r = 0")
    return np.concatenate([gy, y]), np.concatenate([gr, r])


def _lagrange3_d1(xm, x0, xp, xt):
    # first-derivative weights at xt of the parabola through xm, x0, xp
    wm = (2.0 * xt - x0 - xp) / ((xm - x0) * (xm - xp))
    w0 = (2.0 * xt - xm - xp) / ((x0 - xm) * (x0 - xp))
    wp = (2.0 * xt - xm - x0) / ((xp - xm) * (xp - x0))
    return wm, w0, wp


def _d1_order2(y, r):
    d = np.empty_like(y)
    h1 = r[1:-1] - r[:-2]
    h2 = r[2:] - r[1:-1]
    d[1:-1] = (-h2 / (h1 * (h1 + h2))) * y[:-2] \
        + ((h2 - h1) / (h1 * h2)) * y[1:-1] \
        + (h1 / (h2 * (h1 + h2))) * y[2:]
    wm, w0, wp = _lagrange3_d1(r[0], r[1], r[2], r[0])
    d[0] = wm * y[0] + w0 * y[1] + wp * y[2]
    wm, w0, wp = _lagrange3_d1(r[-3], r[-2], r[-1], r[-1])
    d[-1] = wm * y[-3] + w0 * y[-2] + wp * y[-1]
    return d


def _d2_order2(y, r):
    d = np.empty_like(y)
    h1 = r[1:-1] - r[:-2]
    h2 = r[2:] - r[1:-1]
    d[1:-1] = 2.0 * (y[:-2] / (h1 * (h1 + h2))
                     - y[1:-1] / (h1 * h2)
                     + y[2:] / (h2 * (h1 + h2)))
    d[0] = d[1]
    d[-1] = d[-2]
    return d


def _d1_order4(y, h):
    d = np.empty_like(y)
    d[2:-2] = (y[:-4] - 8.0 * y[1:-3] + 8.0 * y[3:-1] - y[4:]) / (12.0 * h)
    d[0] = (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2]
            + 16.0 * y[3] - 3.0 * y[4]) / (12.0 * h)
    d[1] = (-3.0 * y[0] - 10.0 * y[1] + 18.0 * y[2]
            - 6.0 * y[3] + y[4]) / (12.0 * h)
    d[-1] = (25.0 * y[-1] - 48.0 * y[-2] + 36.0 * y[-3]
             - 16.0 * y[-4] + 3.0 * y[-5]) / (12.0 * h)
    d[-2] = (3.0 * y[-1] + 10.0 * y[-2] - 18.0 * y[-3]
             + 6.0 * y[-4] - y[-5]) / (12.0 * h)
    return d


def _d2_order4(y, h):
    d = np.empty_like(y)
    d[2:-2] = (-y[:-4] + 16.0 * y[1:-3] - 30.0 * y[2:-2]
               + 16.0 * y[3:-1] - y[4:]) / (12.0 * h * h)
    c0 = np.array([45.0, -154.0, 214.0, -156.0, 61.0, -10.0]) / (12.0 * h * h)
    c1 = np.array([10.0, -15.0, -4.0, 14.0, -6.0, 1.0]) / (12.0 * h * h)
    d[0] = c0 @ y[:6]
    d[1] = c1 @ y[:6]
    d[-1] = c0 @ y[:-7:-1]
    d[-2] = c1 @ y[:-7:-1]
    return d


def deriv(y, grid, parity=None, order=2):
    """d/dr of a nodal field.

    parity ('even'/'odd', describing y about r = 0) activates mirrored
    ghost nodes at a regular origin; otherwise ends are one-sided. order 4
    needs a uniform grid and is meant for residual-style diagnostics.
    """
    y = np.asarray(y, dtype=float)
    k = 2 if order == 4 else 1
    use_parity = parity is not None and (grid.origin_offset
                                         or grid.has_origin_node)
    if use_parity:
        yy, rr = _pad_left(y, grid, parity, k)
    else:
        yy, rr = y, grid.r
    if order == 4:
        grid.require_uniform("order-4 stencil")
        d = _d1_order4(yy, grid.h)
    elif order == 2:
        d = _d1_order2(yy, rr)
    else:
        raise GridError("order must be 2 or 4")
    return d[k:] if use_parity else d


def deriv2(y, grid, parity=None, order=2):
    """d^2/dr^2 of a nodal field; see deriv for the parity contract."""
    y = np.asarray(y, dtype=float)
    k = 2 if order == 4 else 1
    use_parity = parity is not None and (grid.origin_offset
                                         or grid.has_origin_node)
    if use_parity:
        yy, rr = _pad_left(y, grid, parity, k)
    else:
        yy, rr = y, grid.r
    if order == 4:
        grid.require_uniform("order-4 stencil")
        d = _d2_order4(yy, grid.h)
    elif order == 2:
        d = _d2_order2(yy, rr)
    else:
        raise GridError("order must be 2 or 4")
    return d[k:] if use_parity else d


# ---------------------------------------------------------------------------
# curvature and Christoffel symbols

def _warp_slope(m, order):
    # w = phi'/xi, even about a regular origin
    par = "odd" if m._parity_ok() else None
    return deriv(m.phi, m.grid, parity=par, order=order) / m.xi


def curvature(m, order=2):
    """Sectional curvatures of the warped metric.

    a = -(phi'/xi)'/(xi phi), b = (1-(phi'/xi)^2)/phi^2. At an exact origin
    node both are filled by their even-symmetric limits (quadratic
    extrapolation); everywhere else the formulas apply directly.
    """
    g = m.grid
    w = _warp_slope(m, order)
    par = "even" if m._parity_ok() else None
    wp = deriv(w, g, parity=par, order=order)
    if g.has_origin_node:
        with np.errstate(divide="ignore", invalid="ignore"):
            a = -wp / (m.xi * m.phi)
            b = (1.0 - w ** 2) / m.phi ** 2
        a[0] = (4.0 * a[1] - a[2]) / 3.0
        b[0] = (4.0 * b[1] - b[2]) / 3.0
    else:
        a = -wp / (m.xi * m.phi)
        b = (1.0 - w ** 2) / m.phi ** 2
    return CurvatureData(g.n, a, b)


def christoffels(m, order=2):
    """Nonzero Christoffel symbols of g = xi^2 dr^2 + phi^2 g_S.

    Returns {'r_rr': xi'/xi, 'r_ss': -phi phi'/xi^2, 's_rs': phi'/phi}.
    'r_ss' multiplies the unit-sphere metric; the intrinsic sphere symbols
    are independent of r and not represented.
    """
    g = m.grid
    par_phi = "odd" if m._parity_ok() else None
    par_xi = "even" if m._parity_ok() else None
    phip = deriv(m.phi, g, parity=par_phi, order=order)
    xip = deriv(m.xi, g, parity=par_xi, order=order)
    with np.errstate(divide="ignore", invalid="ignore"):
        s_rs = phip / m.phi
    return {"r_rr": xip / m.xi,
            "r_ss": -m.phi * phip / m.xi ** 2,
            "s_rs": s_rs}


def _c_rate(m, order=2):
    # c = phi'/(xi phi): the sphere-direction connection rate in the
    # orthonormal frame; blows up like 1/r at a regular origin
    par = "odd" if m._parity_ok() else None
    return deriv(m.phi, m.grid, parity=par, order=order) / (m.xi * m.phi)


# ---------------------------------------------------------------------------
# tensor algebra on the diagonal sector

def rm_action(c, h):
    """(Rm* h) on the diagonal sector; Rm* g = Ric is exact here."""
    n = c.n
    return DiagonalTensorField((n - 1.0) * c.a * h.v,
                               c.a * h.u + (n - 2.0) * c.b * h.v)


def rm_quadratic(c, h):
    """Pointwise Rm(h,h) = <Rm* h, h> on the diagonal sector."""
    n = c.n
    return 2.0 * (n - 1.0) * c.a * h.u * h.v \
        + (n - 1.0) * (n - 2.0) * c.b * h.v ** 2


def tensor_inner(h1, h2, n):
    return h1.u * h2.u + (n - 1.0) * h1.v * h2.v


# Covariant derivative of h = diag(u, v, ..., v), derived once from the
# warped Christoffels (orthonormal frame, e_0 radial):
#   D_0 h_00 = u'/xi            D_0 h_AB = (v'/xi) delta_AB
#   D_A h_0B = c (u - v) delta_AB,   c = phi'/(xi phi)
# and every other component vanishes. Correctness is enforced by the
# adjointness and kernel oracles in the test suite, not by trust.

def grad_norm_sq(h, m, order=2):
    """Pointwise |grad h|^2 of a diagonal tensor field."""
    g = m.grid
    par = "even" if m._parity_ok() else None
    du = deriv(h.u, g, parity=par, order=order) / m.xi
    dv = deriv(h.v, g, parity=par, order=order) / m.xi
    c = _c_rate(m, order)
    n = g.n
    return du ** 2 + (n - 1.0) * dv ** 2 + 2.0 * (n - 1.0) * c ** 2 * (h.u - h.v) ** 2


def codazzi_norm_sq(h, m, order=2):
    """Pointwise |Cod h|^2, Cod(h)_{ijk} = D_i h_{jk} - D_j h_{ik}."""
    g = m.grid
    par = "even" if m._parity_ok() else None
    dv = deriv(h.v, g, parity=par, order=order) / m.xi
    c = _c_rate(m, order)
    return 2.0 * (g.n - 1.0) * (dv - c * (h.u - h.v)) ** 2


def div_f(h, m, f, fp=None, order=2):
    """Radial orthonormal component of div h + h(grad f).

    This is the formal adjoint of -grad with respect to dmu_f restricted to
    the diagonal sector; the other components vanish identically. fp
    overrides the finite-differenced f' when the caller has it exactly.
    """
    g = m.grid
    par = "even" if m._parity_ok() else None
    if fp is None:
        fp = deriv(f, g, parity=par, order=order)
    du = deriv(h.u, g, parity=par, order=order)
    c = _c_rate(m, order)
    return du / m.xi + (g.n - 1.0) * c * (h.u - h.v) + (fp / m.xi) * h.u


def one_form_gradient(w0, m, order=2):
    """Covariant derivative of the radial one-form w0 e^0 (a diagonal tensor)."""
    g = m.grid
    par = "odd" if m._parity_ok() else None
    dw = deriv(w0, g, parity=par, order=order) / m.xi
    return DiagonalTensorField(dw, _c_rate(m, order) * w0)


def one_form_laplacian_f(w0, m, f=None, fp=None, order=2):
    """Weighted rough Laplacian on the radial component of a one-form.

    Relative to the scalar operator the sphere directions contribute the
    zeroth-order term -(n-1)c^2 w0 (on flat space this reproduces
    Delta(r e_r) = 0 and Delta(e_r) = -(n-1)/r^2 e_r). w0 is parity-odd
    at a regular origin.
    """
    lap = scalar_laplacian_f(w0, m, f=f, fp=fp, order=order, parity="odd")
    c = _c_rate(m, order)
    return lap - (m.grid.n - 1) * c ** 2 * w0


def tensor_laplacian_f(h, m, f=None, fp=None, order=2):
    """Weighted (or plain, when f and fp are None) Laplacian on the sector.

    Componentwise: the scalar drift Laplacian plus the curvature-free
    frame coupling -2(n-1)c^2(u-v) / +2c^2(u-v) that the sphere directions
    generate; the coupling is what makes trace and Laplacian commute.
    """
    g = m.grid
    par_e = "even" if m._parity_ok() else None
    par_o = "odd" if m._parity_ok() else None
    if fp is None:
        fp = deriv(f, g, parity=par_e, order=order) if f is not None else 0.0
    phip = deriv(m.phi, g, parity=par_o, order=order)
    xip = deriv(m.xi, g, parity=par_e, order=order)
    drift = fp + (g.n - 1.0) * phip / m.phi - xip / m.xi
    c = _c_rate(m, order)
    xi2 = m.xi ** 2
    du = deriv(h.u, g, parity=par_e, order=order)
    dv = deriv(h.v, g, parity=par_e, order=order)
    d2u = deriv2(h.u, g, parity=par_e, order=order)
    d2v = deriv2(h.v, g, parity=par_e, order=order)
    mix = c ** 2 * (h.u - h.v)
    lap_u = (d2u + drift * du) / xi2 - 2.0 * (g.n - 1.0) * mix
    lap_v = (d2v + drift * dv) / xi2 + 2.0 * mix
    return DiagonalTensorField(lap_u, lap_v)


def scalar_laplacian_f(psi, m, f=None, fp=None, order=2, parity="even"):
    """Weighted Laplacian on scalars (plain Laplacian when f, fp omitted)."""
    g = m.grid
    par = parity if m._parity_ok() else None
    par_e = "even" if m._parity_ok() else None
    par_o = "odd" if m._parity_ok() else None
    if fp is None:
        fp = deriv(f, g, parity=par_e, order=order) if f is not None else 0.0
    phip = deriv(m.phi, g, parity=par_o, order=order)
    xip = deriv(m.xi, g, parity=par_e, order=order)
    drift = fp + (g.n - 1.0) * phip / m.phi - xip / m.xi
    dpsi = deriv(psi, g, parity=par, order=order)
    d2psi = deriv2(psi, g, parity=par, order=order)
    return (d2psi + drift * dpsi) / m.xi ** 2


# ---------------------------------------------------------------------------
# integrals

def integrate(vals, meas):
    return float(np.dot(np.asarray(vals, dtype=float), meas.w))


def l2f_norm(obj, meas):
    """Weighted L^2 norm of a scalar array or DiagonalTensorField."""
    if isinstance(obj, DiagonalTensorField):
        dens = obj.norm2(meas.n)
    else:
        dens = np.asarray(obj, dtype=float) ** 2
    return float(np.sqrt(np.dot(dens, meas.w)))


def quadratic_form(h, profile, order=2):
    """(int |grad h|^2 dmu_f, int 2 Rm(h,h) dmu_f) for compact h.

    profile is any object carrying .metric, .curvature and .measure on one
    grid (a SolitonProfile does). h must vanish at both window ends; the
    stability margin of the profile is (first - second)/|h|^2-type ratios.
    """
    m = profile.metric
    scale = 1.0 + max(np.max(np.abs(h.u)), np.max(np.abs(h.v)))
    for idx in (slice(0, 2), slice(-2, None)):
        if max(np.max(np.abs(h.u[idx])), np.max(np.abs(h.v[idx]))) > 1e-10 * scale:
            raise BoundarySupportError("h must be supported away from the ends")
    gsq = grad_norm_sq(h, m, order=order)
    rmq = rm_quadratic(profile.curvature, h)
    return integrate(gsq, profile.measure), 2.0 * integrate(rmq, profile.measure)
