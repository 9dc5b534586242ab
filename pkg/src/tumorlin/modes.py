"""Degree-k radial mode objects of the linearized free-boundary problem.

Every integral operator is written with the three power kernels of
:mod:`tumorlin.quadrature` (upper U_m, lower L_m, total T_m), with

    N_k = n + 2(k-1),   theta_k = k / N_k,   Q_k(r) = (r/R)^(k-1) p_s'(r).

For phi on the grid and G = g_p* phi, H = g_p* p_s' phi:

    L0 phi        = -v_s phi' + f_p* phi
    K_k phi       = p_s' [theta U_{k-1} G - (1-theta) L_{n+k-1} G] + (1-theta) Q_k T_{n+k-1} G
    Ltilde_k phi  = L0 phi + K_k phi
    L_k phi       = Ltilde_k phi - Q_k J_k(phi),        J_k(phi) = T_{n+k-1} G
    Lhat_plus_k   = -v_s phi' + a_k phi + theta U_{N_k} H + (1-theta) int_r^R H
    Lhat_k        = Lhat_plus_k phi - J(phi) e_k,       J(phi) = int_0^R H

The transport term uses the one-sided difference toward larger r, which is
the upwind side because v_s <= 0.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import OperatorMismatch
from .harmonics import eigenvalue_lambda
from .quadrature import (cumulative_upper, lower_power, simpson_weights,
                         total_power, trapezoid_weights, upper_power)
from .stationary import StationarySolution, _bessel_profile, refit_origin


class OperatorTag(str, enum.Enum):
    L0 = "L0"
    L_k = "L_k"
    Ltilde_k = "Ltilde_k"
    K_k = "K_k"
    Lhat_plus_k = "Lhat_plus_k"
    Lhat_k = "Lhat_k"


def theta_k(n: int, k: int) -> float:
    """k/(n+2(k-1)); the k = 0 value is 0 (its kernel term carries a factor k)."""
    return 0.0 if k == 0 else k / (n + 2.0 * (k - 1))


def solve_uk(sol: StationarySolution, k: int) -> np.ndarray:
    """u_k'' + (n+2k-1)/r u_k' = lambda u_k, u_k'(0) = 0, u_k(R_s) = 1."""
    if k < 0:
        raise ValueError("degree k must be nonnegative")
    u, _ = _bessel_profile(sol.params, sol.R_s, sol.r, shift=k)
    u[-1] = 1.0
    return u


def uk_properties(sol: StationarySolution, k_max: int = 12, tol: float = 1e-12) -> list:
    """Check the u_k bounds, with C = R_s max F', and monotonicity in k.

    Returns (name, passed, worst margin) triples; a negative margin is a violation.
    """
    r, R, n = sol.r, sol.R_s, sol.n
    C = R * sol.params.lambda_nutrient
    out = []
    prev = None
    for k in range(k_max + 1):
        u, du = _bessel_profile(sol.params, R, r, shift=k)
        u[-1] = 1.0
        checks = {
            f"u_{k}>0": u.min(),
            f"u_{k}<=1": (1.0 - u).min(),
            f"u_{k}>=1-C(R-r)/(n+2k)": (u - (1.0 - C * (R - r) / (n + 2 * k))).min(),
            f"u_{k}'>=0": du.min(),
            f"u_{k}'<=Cr/(n+2k)": (C * r / (n + 2 * k) - du).min(),
        }
        if prev is not None:
            checks[f"u_{k}>=u_{k - 1}"] = (u - prev).min()
        prev = u
        out += [(name, bool(m >= -tol), float(m)) for name, m in checks.items()]
    inner = slice(1, -1)
    lower = r[inner] * sol.dc[inner] / (R * sol.dc_R)
    u0 = solve_uk(sol, 0)
    margin = float((u0[inner] - lower).min())
    out.append(("u_0>r c_s'/(R_s c_s'(R_s))", margin > 0, margin))
    return out


def green_apply(sol: StationarySolution, k: int, f) -> np.ndarray:
    """Radial part w of the solution of Laplace(w Y_k) = f Y_k with w(R_s) = 0."""
    n, h, r, R = sol.n, sol.h, sol.r, sol.R_s
    f = np.asarray(f, dtype=float)
    Nk = n + 2 * (k - 1)
    if Nk == 0:
        return -cumulative_upper(lower_power(f, 1, h), h)
    m = n + k - 1
    wts = trapezoid_weights(sol.grid.N, h)
    head = (r / R) ** k * R * total_power(f, m, wts)[..., None]
    low = r * lower_power(f, m, h)
    if k == 0:
        up = cumulative_upper(r * f, h)
    else:
        up = r * upper_power(f, k - 1, h)
    return (head - low - up) / Nk


def _upwind_transport(sol, phi):
    """-v_s phi' with the right-neighbour difference; zero at r = R_s."""
    out = np.zeros_like(phi)
    out[..., :-1] = -sol.v[:-1] * (phi[..., 1:] - phi[..., :-1]) / sol.h
    return out


@dataclass(frozen=True)
class ModeData:
    k: int
    n: int
    gamma: float
    theta_k: float
    lambda_k: int
    u_k: np.ndarray
    v_k: np.ndarray
    c_k: np.ndarray
    a_k: np.ndarray
    e_k: np.ndarray
    Q_k: np.ndarray
    b_gamma: np.ndarray
    b_rest: np.ndarray
    alpha_gamma: float
    alpha_rest: float
    alpha_tilde_rest: float

    @property
    def N_k(self) -> int:
        return self.n + 2 * (self.k - 1)

    @property
    def b_k(self) -> np.ndarray:
        return self.gamma * self.b_gamma + self.b_rest

    @property
    def alpha_k(self) -> float:
        return self.gamma * self.alpha_gamma + self.alpha_rest

    @property
    def alpha_tilde_k(self) -> float:
        return self.gamma * self.alpha_gamma + self.alpha_tilde_rest

    @property
    def a_k_0(self) -> float:
        return float(self.a_k[0])

    @property
    def a_k_R(self) -> float:
        return float(self.a_k[-1])

    @property
    def mu_k(self) -> float:
        return max(self.a_k_0, self.a_k_R)

    def with_gamma(self, gamma: float) -> "ModeData":
        return ModeData(**{**self.__dict__, "gamma": float(gamma)})


def a_k_profile(sol: StationarySolution, k: int) -> np.ndarray:
    """k v_s/r + g* - f_c* c_s'/p_s' with its limits at both endpoints."""
    r = sol.r
    a = np.empty_like(r)
    mid = slice(1, -1)
    a[mid] = k * sol.v[mid] / r[mid] + sol.g[mid] - sol.f_c[mid] * sol.dc[mid] / sol.dp[mid]
    a[0] = (sol.n + k - 2) * sol.series.v1 + sol.f_p[0]
    a[-1] = sol.f_p[-1]
    return a


def assemble_mode(sol: StationarySolution, k: int, gamma: float) -> ModeData:
    """Build every radial object of degree k at surface tension gamma."""
    n, h, r, R = sol.n, sol.h, sol.r, sol.R_s
    N = sol.grid.N
    th = theta_k(n, k)
    lam = eigenvalue_lambda(n, k)
    Nk = n + 2 * (k - 1)
    dcR = sol.dc_R
    g11 = sol.params.k_B
    simpson = simpson_weights(N, h)

    u = solve_uk(sol, k)
    v_k = sol.g_p * sol.dp + dcR / R * sol.g_c * r * u
    X = r * sol.g_c * u

    if k == 0:
        Q = np.empty_like(r)
        Q[1:] = R * sol.dp[1:] / r[1:]
        Q[0] = R * sol.series.c0_coeff
    else:
        Q = (r / R) ** (k - 1) * sol.dp

    e = (1.0 - th) * (1.0 - (r / R) ** Nk)
    a = a_k_profile(sol, k)

    surf = (1.0 - lam / (n - 1.0)) * k
    alpha_gamma = surf / R ** 3
    alpha_rest = g11 - dcR * total_power(X, Nk, simpson) / R
    alpha_tilde_rest = g11 - total_power(v_k, Nk, simpson)

    b_gamma = -surf / R ** 3 * Q
    xw = trapezoid_weights(N, h)
    bracket = (th * cumulative_upper(X, h) - (1.0 - th) * lower_power(X, Nk, h)
               - th * total_power(X, Nk, xw))
    b_rest = (-dcR * (r / R) ** k * sol.f_c * u - dcR / R * Q * bracket)

    with np.errstate(divide="ignore", invalid="ignore"):
        f_over_r = np.where(r > 0, sol.f / np.where(r > 0, r, 1.0), 0.0)
    brace = ((g11 - sol.g) * sol.dp + (n + k - 2) * f_over_r
             + sol.f_c * (sol.dc - dcR / R * r * u)
             - sol.dp * (th * cumulative_upper(v_k, h)
                         + (1.0 - th) * total_power(v_k, Nk, xw)
                         - (1.0 - th) * lower_power(v_k, Nk, h)))
    if k == 0:
        c = np.empty_like(r)
        c[1:] = R / r[1:] * brace[1:]
        c = refit_origin(r, c, R)
    else:
        c = (r / R) ** (k - 1) * brace
        c[0] = 0.0

    return ModeData(k=k, n=n, gamma=float(gamma), theta_k=th, lambda_k=lam,
                    u_k=u, v_k=v_k, c_k=c, a_k=a, e_k=e, Q_k=Q,
                    b_gamma=b_gamma, b_rest=b_rest, alpha_gamma=alpha_gamma,
                    alpha_rest=float(alpha_rest), alpha_tilde_rest=float(alpha_tilde_rest))


class ModeOperators:
    """Cached operator application for one mode; phi may carry leading batch axes."""

    def __init__(self, sol: StationarySolution, mode: ModeData):
        self.sol = sol
        self.mode = mode
        self.w = trapezoid_weights(sol.grid.N, sol.h)
        self.weight_J = sol.g_p * sol.dp * self.w
        x = sol.r / sol.R_s
        self.weight_Jk = sol.g_p * x ** (sol.n + mode.k - 1) * self.w

    def transport(self, phi, dphi=None):
        if dphi is None:
            return _upwind_transport(self.sol, phi)
        return -self.sol.v * dphi

    def J(self, phi):
        return np.sum(phi * self.weight_J, axis=-1)

    def J_k(self, phi):
        return np.sum(phi * self.weight_Jk, axis=-1)

    def K(self, phi):
        sol, md = self.sol, self.mode
        th, k, n = md.theta_k, md.k, sol.n
        G = sol.g_p * phi
        out = -(1.0 - th) * sol.dp * lower_power(G, n + k - 1, sol.h)
        if th != 0.0:
            out = out + th * sol.dp * upper_power(G, k - 1, sol.h)
        return out + (1.0 - th) * md.Q_k * self.J_k(phi)[..., None]

    def L0(self, phi, dphi=None):
        return self.transport(phi, dphi) + self.sol.f_p * phi

    def Ltilde(self, phi, dphi=None):
        return self.L0(phi, dphi) + self.K(phi)

    def L(self, phi, dphi=None):
        return self.Ltilde(phi, dphi) - self.mode.Q_k * self.J_k(phi)[..., None]

    def Lhat_plus(self, phi, dphi=None):
        sol, md = self.sol, self.mode
        H = sol.g_p * sol.dp * phi
        out = self.transport(phi, dphi) + md.a_k * phi
        out = out + md.theta_k * upper_power(H, md.N_k, sol.h)
        return out + (1.0 - md.theta_k) * cumulative_upper(H, sol.h)

    def Lhat(self, phi, dphi=None):
        return self.Lhat_plus(phi, dphi) - self.J(phi)[..., None] * self.mode.e_k

    def apply(self, tag, phi, dphi=None):
        tag = OperatorTag(tag)
        phi = np.asarray(phi, dtype=float)
        if tag is OperatorTag.K_k:
            return self.K(phi)
        table = {OperatorTag.L0: self.L0, OperatorTag.L_k: self.L,
                 OperatorTag.Ltilde_k: self.Ltilde, OperatorTag.Lhat_plus_k: self.Lhat_plus,
                 OperatorTag.Lhat_k: self.Lhat}
        return table[tag](phi, dphi)


def apply_operator(sol: StationarySolution, mode: ModeData | None, tag, phi, dphi=None):
    """Apply the operator selected by ``tag``; L0 accepts ``mode=None``."""
    tag = OperatorTag(tag)
    if mode is None:
        if tag is not OperatorTag.L0:
            raise OperatorMismatch(f"operator {tag.value} needs a mode")
        phi = np.asarray(phi, dtype=float)
        return _upwind_transport(sol, phi) + sol.f_p * phi if dphi is None else (
            -sol.v * dphi + sol.f_p * phi)
    if mode.n != sol.n or mode.u_k.shape != sol.r.shape:
        raise OperatorMismatch("mode was assembled on a different stationary solution")
    return ModeOperators(sol, mode).apply(tag, phi, dphi)


def functional_J(sol: StationarySolution, phi) -> float:
    w = trapezoid_weights(sol.grid.N, sol.h)
    return np.sum(np.asarray(phi, float) * sol.g_p * sol.dp * w, axis=-1)


def functional_Jk(sol: StationarySolution, k: int, phi) -> float:
    w = trapezoid_weights(sol.grid.N, sol.h)
    x = sol.r / sol.R_s
    return np.sum(np.asarray(phi, float) * sol.g_p * x ** (sol.n + k - 1) * w, axis=-1)


def dp_derivative(sol: StationarySolution) -> np.ndarray:
    """p_s'' from (v_s p_s')' = f_c* c_s' + f_p* p_s', with one-sided limits at the ends."""
    d2 = np.empty_like(sol.r)
    mid = slice(1, -1)
    d2[mid] = (sol.f_c[mid] * sol.dc[mid]
               + (sol.f_p[mid] - sol.dv[mid]) * sol.dp[mid]) / sol.v[mid]
    d2[0] = sol.series.c0_coeff
    d2[-1] = 2.0 * d2[-2] - d2[-3]
    return d2


def translation_mode_residual(sol: StationarySolution, gamma: float):
    """Residuals of the k=1 translation family (phi, eta) = (-p_s', 1).

    Returns (sup|c_1|, |alpha_tilde_1|, sup-norm of the right-hand side of
    the untransformed k=1 system); the transport term uses the exact p_s''.
    """
    mode = assemble_mode(sol, 1, gamma)
    ops = ModeOperators(sol, mode)
    phi = -sol.dp
    dphi = -dp_derivative(sol)
    rhs_phi = ops.L(phi, dphi) + mode.b_k
    rhs_eta = mode.alpha_k + ops.J_k(phi)
    res_phi = float(np.max(np.abs(rhs_phi[1:-1])))
    return (float(np.max(np.abs(mode.c_k))), abs(mode.alpha_tilde_k),
            max(res_phi, abs(float(rhs_eta))))
