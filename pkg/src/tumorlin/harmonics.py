"""Spherical-harmonic bookkeeping and coefficient-space norms.

Coefficient fields map a mode index (k, l), 1 <= l <= d_k, to a radial array
(for functions of x) or to a scalar (for functions on the sphere).  For n = 3
the real basis is ordered by l = 2j-1 <-> cos(j phi), l = 2j <-> sin(j phi),
l = 2k+1 <-> m = 0; with this ordering Y_{1l} = sqrt(3/(4 pi)) (x, y, z)_l.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import comb, gammaln, lpmv


def eigenvalue_lambda(n: int, k: int) -> int:
    """Eigenvalue (n+k-2)k of minus the Laplacian on the unit sphere S^(n-1)."""
    return (n + k - 2) * k


def dimension_d(n: int, k: int) -> int:
    """Number of linearly independent degree-k harmonics on S^(n-1)."""
    if k == 0:
        return 1
    if k == 1:
        return n
    return int(comb(n + k - 1, k, exact=True) - comb(n + k - 3, k - 2, exact=True))


def sphere_area(n: int) -> float:
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass
class CoefficientField:
    n: int
    modes: dict = field(default_factory=dict)
    r: np.ndarray | None = None

    def __post_init__(self):
        for (k, l) in self.modes:
            if not 1 <= l <= dimension_d(self.n, k):
                raise ValueError(f"order l={l} outside 1..{dimension_d(self.n, k)} for k={k}")
        shapes = {np.shape(v) for v in self.modes.values()}
        if len(shapes) > 1:
            raise ValueError("all coefficient arrays must share one grid")

    @property
    def k_max(self) -> int:
        return max((k for k, _ in self.modes), default=0)

    def scaled(self, s: float) -> "CoefficientField":
        return CoefficientField(self.n, {key: s * np.asarray(v) for key, v in self.modes.items()},
                                self.r)


def _lp(x, weights, alpha):
    if math.isinf(alpha):
        return float(np.max(np.abs(x)))
    return float(np.sum(np.abs(x) ** alpha * weights) ** (1.0 / alpha))


def norm_X(fld: CoefficientField, alpha: float, beta: float, r=None) -> float:
    """l^beta over (k, l) of weighted L^alpha(r^(n-1) dr) norms of the coefficients.

    Scalar coefficients (sphere fields) give the Y_beta norm.
    """
    inner = []
    grid = fld.r if r is None else r
    for val in fld.modes.values():
        val = np.asarray(val, dtype=float)
        if val.ndim == 0:
            inner.append(abs(float(val)))
            continue
        if grid is None:
            grid = np.linspace(0.0, 1.0, val.size)
        if math.isinf(alpha):
            inner.append(float(np.max(np.abs(val))))
        else:
            w = np.zeros_like(grid)
            dr = np.diff(grid)
            w[:-1] += 0.5 * dr
            w[1:] += 0.5 * dr
            inner.append(_lp(val, w * grid ** (fld.n - 1), alpha))
    if not inner:
        return 0.0
    inner = np.array(inner)
    if math.isinf(beta):
        return float(inner.max())
    return float(np.sum(inner ** beta) ** (1.0 / beta))


def _order_to_m(k: int, l: int) -> int:
    if l == 2 * k + 1:
        return 0
    j = (l + 1) // 2
    return j if l % 2 == 1 else -j


def real_harmonic(n: int, k: int, l: int, theta, phi=None):
    """Orthonormal real harmonic Y_{kl}.

    For n = 2 the single angle is ``theta``; for n = 3 ``theta`` is the polar
    angle and ``phi`` the azimuth.
    """
    theta = np.asarray(theta, dtype=float)
    if n == 2:
        if k == 0:
            return np.full_like(theta, 1.0 / math.sqrt(2.0 * math.pi))
        trig = np.cos if l == 1 else np.sin
        return trig(k * theta) / math.sqrt(math.pi)
    if n != 3:
        raise ValueError(f"physical synthesis supports n in {{2, 3}}, got n={n}")
    m = _order_to_m(k, l)
    am = abs(m)
    lognorm = 0.5 * (math.log(2 * k + 1) - math.log(4 * math.pi)
                     + gammaln(k - am + 1) - gammaln(k + am + 1))
    # scipy includes the Condon-Shortley phase; the real basis omits it
    P = lpmv(am, k, np.cos(theta)) * (-1.0) ** am * math.exp(lognorm)
    if m == 0:
        return P
    phi = np.asarray(phi, dtype=float)
    ang = np.cos(am * phi) if m > 0 else np.sin(am * phi)
    return math.sqrt(2.0) * P * ang


def synthesize(fld: CoefficientField, points) -> np.ndarray:
    """Evaluate sum u_kl(r) Y_kl(omega) at points (r, theta) for n=2 or (r, theta, phi) for n=3."""
    if fld.n not in (2, 3):
        raise ValueError(f"physical synthesis supports n in {{2, 3}}, got n={fld.n}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    rr = pts[:, 0]
    ang = pts[:, 1:]
    out = np.zeros(len(pts))
    for (k, l), coef in fld.modes.items():
        coef = np.asarray(coef, dtype=float)
        if coef.ndim == 0:
            radial = np.full(len(pts), float(coef))
        else:
            grid = fld.r if fld.r is not None else np.linspace(0.0, 1.0, coef.size)
            radial = np.interp(rr, grid, coef)
        if fld.n == 2:
            Y = real_harmonic(2, k, l, ang[:, 0])
        else:
            Y = real_harmonic(3, k, l, ang[:, 0], ang[:, 1])
        out += radial * Y
    return out
