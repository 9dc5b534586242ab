"""Rate functions of the two-species tumor model.

All kinetics are the affine forms

    F(c) = lambda*c,   K_B = k_B c,  K_D = k_D (1-c),  K_P = k_P c,  K_Q = k_Q (1-c),

combined into the right-hand sides ``f(c, p)`` (proliferating fraction) and
``g(c, p)`` (velocity divergence).  Every function accepts scalars or numpy
arrays and broadcasts.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

_C_TOL = 1e-12


@dataclass(frozen=True)
class KineticParams:
    """Rate constants, ambient dimension and surface tension."""

    n: int = 3
    lambda_nutrient: float = 1.0
    k_B: float = 3.0
    k_D: float = 2.0
    k_P: float = 2.0
    k_Q: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"dimension n must be an integer >= 2, got {self.n}")
        for name in ("lambda_nutrient", "k_B", "k_D", "k_P", "k_Q", "gamma"):
            val = getattr(self, name)
            if not np.isfinite(val) or val <= 0:
                raise ValueError(f"{name} must be a positive finite number, got {val}")

    @property
    def in_stability_regime(self) -> bool:
        """True when every explicit inequality of the stability theorem holds."""
        return check_conditions(self).ok

    def with_gamma(self, gamma: float) -> "KineticParams":
        return KineticParams(self.n, self.lambda_nutrient, self.k_B, self.k_D,
                             self.k_P, self.k_Q, gamma)


@dataclass(frozen=True)
class RateBundle:
    F: np.ndarray
    K_B: np.ndarray
    K_D: np.ndarray
    K_P: np.ndarray
    K_Q: np.ndarray
    K_M: np.ndarray
    K_N: np.ndarray


@dataclass(frozen=True)
class FGBundle:
    f: np.ndarray
    g: np.ndarray
    f_c: np.ndarray
    f_p: np.ndarray
    g_c: np.ndarray
    g_p: np.ndarray


def _check_c(c):
    c = np.asarray(c, dtype=float)
    if np.any(c < -_C_TOL) or np.any(c > 1 + _C_TOL):
        bad = c[(c < -_C_TOL) | (c > 1 + _C_TOL)]
        raise DomainError(f"concentration outside [0, 1]: {bad.ravel()[:5]}")
    return c


def eval_rates(params: KineticParams, c) -> RateBundle:
    c = _check_c(c)
    K_B = params.k_B * c
    K_D = params.k_D * (1.0 - c)
    K_P = params.k_P * c
    K_Q = params.k_Q * (1.0 - c)
    return RateBundle(F=params.lambda_nutrient * c, K_B=K_B, K_D=K_D, K_P=K_P,
                      K_Q=K_Q, K_M=K_B + K_D, K_N=K_P + K_Q)


def rate_slopes(params: KineticParams):
    """Constant derivatives (K_P', K_D', K_M', K_N') of the affine rates."""
    return (params.k_P, -params.k_D, params.k_B - params.k_D, params.k_P - params.k_Q)


def eval_fg(params: KineticParams, c, p) -> FGBundle:
    rates = eval_rates(params, c)
    p = np.asarray(p, dtype=float)
    dKP, dKD, dKM, dKN = rate_slopes(params)
    K_M, K_N = rates.K_M, rates.K_N
    f = rates.K_P + (K_M - K_N) * p - K_M * p * p
    g = K_M * p - rates.K_D
    f_c = dKP + (dKM - dKN) * p - dKM * p * p
    f_p = K_M - K_N - 2.0 * K_M * p
    g_c = dKM * p - dKD
    g_p = K_M + 0.0 * p
    return FGBundle(f=f, g=g, f_c=f_c, f_p=f_p, g_c=g_c, g_p=g_p)


def discriminant_sqrt(params: KineticParams, c):
    """sqrt((K_M-K_N)^2 + 4 K_M K_P), the gap between the two roots of f(c, .)."""
    r = eval_rates(params, c)
    b = r.K_M - r.K_N
    return np.sqrt(b * b + 4.0 * r.K_M * r.K_P)


def alpha_root(params: KineticParams, c):
    """Larger root of K_M p^2 - (K_M - K_N) p - K_P = 0.

    Both algebraic forms of the root are evaluated and the one free of
    cancellation is selected per point.
    """
    r = eval_rates(params, c)
    b = r.K_M - r.K_N
    sq = np.sqrt(b * b + 4.0 * r.K_M * r.K_P)
    with np.errstate(divide="ignore", invalid="ignore"):
        direct = (b + sq) / (2.0 * r.K_M)
        conj = 2.0 * r.K_P / (sq - b)
    out = np.where(b >= 0, direct, conj)
    # b < 0 with K_P = 0 makes the conjugate 0/|2b|
    out = np.where((b < 0) & (r.K_P == 0), 0.0, out)
    return out if out.ndim else float(out)


def alpha_root_derivative(params: KineticParams, c):
    """d alpha / dc, from implicit differentiation of the root equation."""
    alpha = np.asarray(alpha_root(params, c), dtype=float)
    dKP, _, dKM, dKN = rate_slopes(params)
    sq = discriminant_sqrt(params, c)
    out = (dKP + (dKM - dKN) * alpha - dKM * alpha * alpha) / sq
    return out if np.ndim(out) else float(out)


@dataclass
class ConditionReport:
    """Outcome of each explicit inequality; ``failed`` names the violated ones."""

    checks: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(passed for _, passed in self.checks)

    @property
    def failed(self) -> list:
        return [name for name, passed in self.checks if not passed]

    def message(self) -> str:
        if self.ok:
            return "stability conditions hold: k_B>k_D>=2k_Q>0, k_B>k_P, k_B*k_Q<=k_D*k_P"
        return ("stability conditions (k_B>k_D>=2k_Q>0, k_B>k_P, k_B*k_Q<=k_D*k_P) violated: "
                + ", ".join(self.failed))


def check_conditions(params: KineticParams) -> ConditionReport:
    """Check the explicit rate inequalities.

    The structural requirements on smooth monotone rates (F(0)=0, F'>0,
    K_B'>0, K_D'<0, K_B(0)=0, K_D(1)=0, ...) hold by construction for the
    affine forms with positive constants, except K_B'+K_D' = k_B-k_D > 0,
    which coincides with the first inequality below.
    """
    kB, kD, kP, kQ = params.k_B, params.k_D, params.k_P, params.k_Q
    checks = [
        ("k_B>k_D", kB > kD),
        ("k_D>=2k_Q", kD >= 2.0 * kQ),
        ("k_Q>0", kQ > 0),
        ("k_B>k_P", kB > kP),
        ("k_B*k_Q<=k_D*k_P", kB * kQ <= kD * kP),
    ]
    return ConditionReport(checks=[(name, bool(ok)) for name, ok in checks])
