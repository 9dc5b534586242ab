"""Radial stationary tumor: nutrient profile, proliferating fraction, velocity.

The nutrient solves the radial modified Helmholtz problem in closed Bessel
form.  The pair (p, v) is found by shooting on the radius R.  Integration
runs inward from r = R, where p = 1 and v = 0, because the p-equation is
contracting in that direction at both singular endpoints.  The unknowns are

    w = p - alpha(c),      M = r^(n-1) v,

with seeds w(R) = M(R) = 0, and the shooting residual is

    I(R) = int_0^R rho^(n-1) g(c, p) drho = -M(0),

which must vanish for v(0) = 0.  The residual is positive for small tumors
and negative for large ones.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import NoBracket, SingularStep
from .kinetics import (KineticParams, alpha_root, alpha_root_derivative,
                       discriminant_sqrt, eval_fg, eval_rates)
from .quadrature import bessel_ratio_scaled, cumulative_lower

_SEED_LEVELS = 20  # endpoint panels start at h * 2**-20
_ORIGIN_FIT = (0.005, 0.02)  # refit window near r = 0, as fractions of R


@dataclass(frozen=True)
class RadialGrid:
    R: float
    N: int

    @property
    def h(self) -> float:
        return self.R / self.N

    @property
    def r(self) -> np.ndarray:
        return np.linspace(0.0, self.R, self.N + 1)


@dataclass(frozen=True)
class SolverOptions:
    N: int = 4096
    shoot_tol: float = 1e-8
    rtol: float = 1e-10
    scan_range: tuple = (0.1, 50.0)
    scan_points: int = 60
    scan_N: int = 512


@dataclass(frozen=True)
class LocalExpansion:
    """Taylor data at r = 0: c = c_at0 + c2 r^2, p = p0 + p2 r^2, v = v1 r."""

    c_at0: float
    c2: float
    p0: float
    p2: float
    v1: float
    f_p0: float

    @property
    def c0_coeff(self) -> float:
        """Slope of p_s'(r) ~ c0 r at the origin."""
        return 2.0 * self.p2

    @property
    def theta(self) -> float:
        return self.f_p0 / self.v1


@dataclass(frozen=True)
class StationarySolution:
    params: KineticParams
    R_s: float
    grid: RadialGrid
    c: np.ndarray
    dc: np.ndarray
    p: np.ndarray
    dp: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    f: np.ndarray
    g: np.ndarray
    f_c: np.ndarray
    f_p: np.ndarray
    g_c: np.ndarray
    g_p: np.ndarray
    series: LocalExpansion
    residual: float
    _interp: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def r(self) -> np.ndarray:
        return self.grid.r

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def dc_R(self) -> float:
        return float(self.dc[-1])

    def interpolate(self, name: str, x):
        """Monotone cubic interpolation of a stored profile at off-node radii."""
        if name not in self._interp:
            self._interp[name] = PchipInterpolator(self.r, getattr(self, name))
        return self._interp[name](x)

    def sigma(self, sigma_R: float = 0.0) -> np.ndarray:
        """Integrate sigma' = -v from the boundary value sigma(R_s) = sigma_R."""
        low = cumulative_lower(-self.v, self.h)
        return sigma_R + low - low[-1]


def _bessel_profile(params: KineticParams, R: float, r, shift: int = 0):
    """(c, c') for c'' + (d-1)/r c' = lambda c on [0, R], c(R)=1, d = n + 2*shift."""
    s = math.sqrt(params.lambda_nutrient)
    nu = params.n / 2.0 + shift - 1.0
    r = np.asarray(r, dtype=float)
    scale = bessel_ratio_scaled(nu, np.array([s * R]))[0]
    decay = np.exp(s * (r - R))
    val = bessel_ratio_scaled(nu, s * r) / scale * decay
    der = s * s * r * bessel_ratio_scaled(nu + 1.0, s * r) / scale * decay
    return val, der


def solve_c(params: KineticParams, R: float, grid: RadialGrid | None = None):
    """Nutrient concentration and its derivative on ``grid`` (or on radii array)."""
    if R <= 0:
        raise ValueError("radius must be positive")
    r = grid.r if isinstance(grid, RadialGrid) else (
        np.linspace(0.0, R, 4097) if grid is None else np.asarray(grid, float))
    c, dc = _bessel_profile(params, R, r)
    return np.minimum(c, 1.0), dc


def _inner_theta(params: KineticParams, c0: float) -> float:
    """Stiffness ratio -f_p/v' of the p-equation at the origin (clipped)."""
    p0 = alpha_root(params, c0)
    fg = eval_fg(params, c0, p0)
    v1 = float(fg.g) / params.n
    if v1 >= 0:
        return 2.0
    return float(min(50.0, max(1.0, -float(fg.f_p) / v1)))


def _step_plan(params: KineticParams, R: float, N: int):
    """Endpoints of all RK4 steps, from R inward, and the node each step ends on."""
    h = R / N
    c0 = float(_bessel_profile(params, R, np.array([0.0]))[0][0])
    theta = _inner_theta(params, c0)
    starts, ends, node_of = [], [], []
    s = h * 2.0 ** -_SEED_LEVELS
    seed_r = R - s
    for _ in range(_SEED_LEVELS):
        starts.append(R - s)
        ends.append(R - 2.0 * s)
        node_of.append(-1)
        s *= 2.0
    node_of[-1] = N - 1
    for j in range(N - 1, 1, -1):
        m = max(1, int(math.ceil(theta / (j - 1))))
        a = j * h
        for q in range(m):
            starts.append(a - q * h / m)
            ends.append(a - (q + 1) * h / m)
            node_of.append(-1)
        ends[-1] = (j - 1) * h
        node_of[-1] = j - 1
    q = max(0.5, theta / (theta + 1.0))
    r = h
    floor = h * 1e-6
    while r > floor:
        starts.append(r)
        ends.append(r * q)
        node_of.append(-1)
        r *= q
    node_of[-1] = 0
    return seed_r, np.array(starts), np.array(ends), node_of


def _coefficients(params: KineticParams, R: float, x):
    """Per-point coefficient tuple used by the (w, M) right-hand side."""
    c, dc = _bessel_profile(params, R, x)
    c = np.clip(c, 0.0, 1.0)
    rates = eval_rates(params, c)
    sq = discriminant_sqrt(params, c)
    alpha = np.asarray(alpha_root(params, c), dtype=float)
    A = np.asarray(alpha_root_derivative(params, c), dtype=float) * dc
    rr = np.asarray(x, dtype=float) ** (params.n - 1)
    return rr, sq, rates.K_M, rates.K_D, alpha, A


def _shoot(params: KineticParams, R: float, N: int, keep: bool = False):
    """Integrate inward from R; return (residual, node data or None)."""
    h = R / N
    seed_r, a, b, node_of = _step_plan(params, R, N)
    mid = 0.5 * (a + b)
    pts = np.concatenate([a, mid, b, [R]])
    coef = [arr.tolist() for arr in _coefficients(params, R, pts)]
    ns = len(a)
    rr, sq, KM, KD, al, A = coef

    def rhs(i, w, M):
        if M >= 0.0:
            return None
        x = rr[i]
        return (-w * (sq[i] + KM[i] * w) * x / M - A[i],
                x * (KM[i] * (al[i] + w) - KD[i]))

    kB = params.k_B
    sqR = sq[3 * ns]
    AR = A[3 * ns]
    s0 = R - seed_r
    w = AR * kB * s0 / (kB + sqR)
    M = -(R ** (params.n - 1)) * kB * s0
    W = np.zeros(N + 1)
    Ms = np.zeros(N + 1)
    for i in range(ns):
        H = b[i] - a[i]
        k1 = rhs(i, w, M)
        if k1 is None:
            return -1.0, None
        k2 = rhs(ns + i, w + 0.5 * H * k1[0], M + 0.5 * H * k1[1])
        if k2 is None:
            return -1.0, None
        k3 = rhs(ns + i, w + 0.5 * H * k2[0], M + 0.5 * H * k2[1])
        if k3 is None:
            return -1.0, None
        k4 = rhs(2 * ns + i, w + H * k3[0], M + H * k3[1])
        if k4 is None:
            return -1.0, None
        w += H / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        M += H / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if not math.isfinite(w):
            raise SingularStep(f"non-finite state at r={b[i]:.6g} for R={R:.10g}")
        j = node_of[i]
        if j >= 0:
            if j > 0:
                p_here = al[2 * ns + i] + w
                if p_here < -1e-9 or p_here > 1.0 + 1e-9:
                    raise SingularStep(
                        f"proliferating fraction {p_here:.6g} left [0, 1] at r={b[i]:.6g}")
            W[j] = w
            Ms[j] = M
    W[0] = 0.0
    residual = -M
    if not keep:
        return residual, None
    return residual, (W, Ms)


def _bisect(params, lo, hi, N, rtol):
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        res, _ = _shoot(params, mid, N)
        if res > 0:
            lo = mid
        else:
            hi = mid
    return lo, hi


def find_radius(params: KineticParams, opts: SolverOptions = SolverOptions()) -> float:
    """Stationary radius by log-spaced bracket scan and bisection."""
    scale = 1.0 / math.sqrt(params.lambda_nutrient)
    radii = np.geomspace(opts.scan_range[0] * scale, opts.scan_range[1] * scale,
                         opts.scan_points)
    signs = [_shoot(params, R, opts.scan_N)[0] > 0 for R in radii]
    flips = [i for i in range(len(radii) - 1) if signs[i] and not signs[i + 1]]
    if not flips:
        raise NoBracket(
            f"shooting residual keeps one sign on [{radii[0]:.4g}, {radii[-1]:.4g}]")
    i = flips[0]
    lo, hi = _bisect(params, radii[i], radii[i + 1], opts.scan_N, 1e-7)
    guess = 0.5 * (lo + hi)
    if opts.N == opts.scan_N:
        return _bisect(params, lo, hi, opts.N, opts.rtol)[0]
    width = 1e-3
    for _ in range(12):
        lo, hi = guess * (1 - width), guess * (1 + width)
        if _shoot(params, lo, opts.N)[0] > 0 and not _shoot(params, hi, opts.N)[0] > 0:
            break
        width *= 3.0
    else:
        raise NoBracket(f"no sign change near R={guess:.10g} at N={opts.N}")
    # the lower end keeps a positive residual, so v_s < 0 holds on (0, R)
    return _bisect(params, lo, hi, opts.N, opts.rtol)[0]


def _local_expansion(params: KineticParams, c_at0: float) -> LocalExpansion:
    n = params.n
    p0 = float(alpha_root(params, c_at0))
    fg = eval_fg(params, c_at0, p0)
    v1 = float(fg.g) / n
    c2 = params.lambda_nutrient * c_at0 / (2.0 * n)
    p2 = float(fg.f_c) * c2 / (2.0 * v1 - float(fg.f_p))
    return LocalExpansion(c_at0=c_at0, c2=c2, p0=p0, p2=p2, v1=v1, f_p0=float(fg.f_p))


def refit_origin(r, y, R, anchor=None):
    """Replace y on r < 0.005 R by a quadratic in r/R fitted on [0.005 R, 0.02 R].

    Quantities of the form (shooting data)/r lose accuracy at the first few
    nodes; the local behaviour there is not even in r, because the
    proliferating fraction carries an r^theta component.  ``anchor`` fixes
    the value at r = 0.
    """
    lo, hi = _ORIGIN_FIT[0] * R, _ORIGIN_FIT[1] * R
    fit = (r >= lo) & (r <= hi)
    if fit.sum() < 6:
        fit = np.zeros(r.shape, dtype=bool)
        fit[1:7] = True
        lo = r[1]
    x = r[fit] / R
    y = np.array(y, dtype=float)
    if anchor is None:
        coef = np.polynomial.polynomial.polyfit(x, y[fit], 2)
    else:
        A = np.column_stack([x, x * x])
        coef = np.concatenate([[anchor], np.linalg.lstsq(A, y[fit] - anchor, rcond=None)[0]])
    near = r < lo
    y[near] = np.polynomial.polynomial.polyval(r[near] / R, coef)
    return y


def stationary_at_radius(params: KineticParams, R: float, N: int) -> StationarySolution:
    """Assemble all profiles from one inward shot at radius R."""
    res, data = _shoot(params, R, N, keep=True)
    if data is None:
        raise SingularStep(f"velocity changed sign inside the tumor at R={R:.10g}")
    W, Mb = data
    grid = RadialGrid(R, N)
    r = grid.r
    n = params.n
    c, dc = solve_c(params, R, grid)
    c[-1] = 1.0
    alpha = np.asarray(alpha_root(params, c), dtype=float)
    p = alpha + W
    p[-1] = 1.0
    fg = eval_fg(params, c, p)
    rr = r ** (n - 1)
    Mf = Mb + res
    v = np.zeros(N + 1)
    v[1:] = Mf[1:] / rr[1:]
    dp = np.zeros(N + 1)
    dp[1:-1] = fg.f[1:-1] * rr[1:-1] / Mb[1:-1]
    series = _local_expansion(params, float(c[0]))
    slope = np.empty(N + 1)
    slope[1:] = dp[1:] / r[1:]
    slope = refit_origin(r, slope, R, anchor=series.c0_coeff)
    dp[:-1] = (slope * r)[:-1]
    sqR = float(discriminant_sqrt(params, 1.0))
    AR = float(alpha_root_derivative(params, 1.0)) * dc[-1]
    dp[-1] = AR * sqR / (params.k_B + sqR)
    dv = np.empty(N + 1)
    dv[1:] = fg.g[1:] - (n - 1) * v[1:] / r[1:]
    dv[0] = fg.g[0] / n
    return StationarySolution(
        params=params, R_s=R, grid=grid, c=c, dc=dc, p=p, dp=dp, v=v, dv=dv,
        f=fg.f, g=fg.g, f_c=fg.f_c, f_p=fg.f_p, g_c=fg.g_c, g_p=fg.g_p,
        series=series, residual=float(res))


def solve_stationary(params: KineticParams,
                     opts: SolverOptions = SolverOptions()) -> StationarySolution:
    """Stationary radius and profiles; v_s(R_s) is the residual over R_s^(n-1)."""
    R = find_radius(params, opts)
    return stationary_at_radius(params, R, opts.N)


@dataclass
class ValidationReport:
    """Each entry: (name, passed, worst node index, worst value)."""

    entries: list
    c1: float
    c2: float

    @property
    def ok(self) -> bool:
        return all(e[1] for e in self.entries)

    def failed(self) -> list:
        return [e for e in self.entries if not e[1]]


def _entry(name, margin):
    """Record a check whose margin must be nonnegative at every node."""
    idx = int(np.argmin(margin))
    return (name, bool(margin[idx] >= 0), idx, float(margin[idx]))


def validate_stationary(sol: StationarySolution, tol: float = 1e-8) -> ValidationReport:
    """Check the qualitative profile inequalities node by node."""
    r, R = sol.r, sol.R_s
    inner = slice(0, -1)
    pos = slice(1, None)
    alpha = np.asarray(alpha_root(sol.params, sol.c), dtype=float)
    entries = [
        _entry("0<c_s", sol.c[inner]),
        _entry("c_s<1", 1.0 - sol.c[inner]),
        _entry("c_s'>0", sol.dc[pos]),
        _entry("0<p_s", sol.p[inner]),
        _entry("p_s<1", 1.0 - sol.p[inner]),
        _entry("p_s'>0", sol.dp[pos]),
        _entry("p_s>=alpha(c_s)", sol.p - alpha + tol),
        _entry("p_s(0)=alpha(c_s(0))", np.array([tol - abs(sol.p[0] - alpha[0])])),
        _entry("p_s(R_s)=alpha(1)", np.array([tol - abs(sol.p[-1] - alpha[-1])])),
        _entry("v_s(0)=0", np.array([tol - abs(sol.v[0])])),
        _entry("v_s(R_s)=0", np.array([tol * R - abs(sol.v[-1])])),
    ]
    mid = slice(1, -1)
    ratio = -sol.v[mid] / (r[mid] * (R - r[mid]))
    c2, c1 = float(ratio.min()), float(ratio.max())
    entries.append(("v_s<=-c2 r(R_s-r)", c2 > 0, int(np.argmin(ratio)) + 1, c2))
    return ValidationReport(entries=entries, c1=c1, c2=c2)
