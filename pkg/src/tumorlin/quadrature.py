"""Quadrature and special-function helpers on uniform radial grids.

The power-kernel integrals

    upper_power(G)(r) = int_r^R (r/rho)^m G(rho) drho
    lower_power(G)(r) = int_0^r (rho/r)^m G(rho) drho
    total_power(G)    = int_0^R (rho/R)^m G(rho) drho

appear in every mode operator.  They are evaluated by the trapezoid rule in
O(N) with cumulative sums.  Ratios (i/j)^m overflow for large m, so the index
range is cut into geometric blocks inside which the ratio stays below 1e100,
and partial sums are carried across block boundaries.  All functions accept
arrays of shape (..., N+1) and act on the last axis.
"""
from __future__ import annotations

import math
from functools import lru_cache

import numpy as np
from scipy.special import ive

_LOG_BLOCK = 230.0  # about log(1e100)


def bessel_ratio_scaled(nu: float, x):
    """x^(-nu) I_nu(x) e^(-x), an entire function of x >= 0.

    A power series is used for x < 1 (exact limit at x = 0) and the
    exponentially scaled Bessel function elsewhere, so arguments up to and
    beyond 700 do not overflow.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = x < 1.0
    xs = x[small]
    term = np.full_like(xs, 1.0 / (2.0 ** nu * math.gamma(nu + 1.0)))
    acc = np.zeros_like(xs)
    q = 0.25 * xs * xs
    for m in range(40):
        acc += term
        term = term * q / ((m + 1.0) * (m + 1.0 + nu))
    out[small] = acc * np.exp(-xs)
    xl = x[~small]
    out[~small] = ive(nu, xl) * xl ** (-nu)
    return out


def trapezoid_weights(N: int, h: float) -> np.ndarray:
    w = np.full(N + 1, h)
    w[0] = w[-1] = 0.5 * h
    return w


def simpson_weights(N: int, h: float) -> np.ndarray:
    """Composite Simpson weights; for odd N the last three panels use the 3/8 rule."""
    w = np.zeros(N + 1)
    if N < 2:
        return trapezoid_weights(N, h)
    m = N if N % 2 == 0 else N - 3
    if m > 0:
        w[0:m + 1:2] += 2.0
        w[1:m:2] += 4.0
        w[0] -= 1.0
        w[m] -= 1.0
        w[:m + 1] *= h / 3.0
    if m != N:
        w[m:m + 4] += np.array([1.0, 3.0, 3.0, 1.0]) * 3.0 * h / 8.0
    return w


@lru_cache(maxsize=512)
def _blocks(N: int, m: float):
    """Index blocks [a, b) on 1..N with (b-1)/a bounded so ((b-1)/a)^m < 1e100."""
    if m <= 0 or m * math.log(N + 1.0) < _LOG_BLOCK:
        return ((1, N + 1),)
    span = math.exp(_LOG_BLOCK / m)
    out = []
    a = 1
    while a <= N:
        b = min(N + 1, max(a + 1, int(math.floor(a * span)) + 1))
        out.append((a, b))
        a = b
    return tuple(out)


def _reverse_cumsum(x):
    return np.flip(np.cumsum(np.flip(x, axis=-1), axis=-1), axis=-1)


@lru_cache(maxsize=512)
def _upper_factors(N: int, m: float):
    """Per block: (a/j)^m, (j/a)^m and the carry factor (j/a_next)^m."""
    out = []
    idx = np.arange(N + 1, dtype=float)
    blocks = _blocks(N, m)
    for bi, (a, b) in enumerate(blocks):
        j = idx[a:b]
        nxt = blocks[bi + 1][0] if bi + 1 < len(blocks) else None
        carry = (j / nxt) ** m if nxt is not None else None
        out.append((a, b, (a / j) ** m, (j / a) ** m, carry))
    return tuple(out)


@lru_cache(maxsize=512)
def _lower_factors(N: int, m: float):
    """Per block: (j/top)^m, (top/j)^m and the carry factor (prev_top/j)^m."""
    out = []
    idx = np.arange(N + 1, dtype=float)
    prev = None
    for a, b in _blocks(N, m):
        j = idx[a:b]
        top = float(b - 1)
        carry = (prev / j) ** m if prev is not None else None
        out.append((a, b, (j / top) ** m, (top / j) ** m, carry))
        prev = top
    return tuple(out)


def upper_sum(G, m: float):
    """S_i = sum_{j>=i} (i/j)^m G_j for i >= 1 on a uniform grid (S_0 = 0 for m > 0)."""
    G = np.asarray(G, dtype=float)
    N = G.shape[-1] - 1
    S = np.zeros_like(G)
    carry = None
    for a, b, down, up, cf in reversed(_upper_factors(N, m)):
        blk = up * _reverse_cumsum(down * G[..., a:b])
        if carry is not None:
            blk = blk + cf * carry[..., None]
        S[..., a:b] = blk
        carry = blk[..., 0]
    if m == 0:
        S[..., 0] = S[..., 1] + G[..., 0]
    return S


def lower_sum(G, m: float):
    """S_i = sum_{j<=i} (j/i)^m G_j for i >= 1 (the j = 0 term counts only when m = 0)."""
    G = np.asarray(G, dtype=float)
    N = G.shape[-1] - 1
    S = np.zeros_like(G)
    carry = None
    for a, b, down, up, cf in _lower_factors(N, m):
        blk = up * np.cumsum(down * G[..., a:b], axis=-1)
        if carry is None:
            if m == 0:
                blk = blk + G[..., :1]
        else:
            blk = blk + cf * carry[..., None]
        S[..., a:b] = blk
        carry = blk[..., -1]
    if m == 0:
        S[..., 0] = G[..., 0]
    return S


@lru_cache(maxsize=512)
def _node_power(N: int, m: float):
    return (np.arange(N + 1, dtype=float) / N) ** m


def upper_power(G, m: float, h: float):
    """Trapezoid value of int_r^R (r/rho)^m G(rho) drho at every node."""
    G = np.asarray(G, dtype=float)
    N = G.shape[-1] - 1
    S = upper_sum(G, m)
    out = h * (S - 0.5 * G - 0.5 * _node_power(N, m) * G[..., -1:])
    if m > 0:
        out[..., 0] = 0.0
    return out


def lower_power(G, m: float, h: float):
    """Trapezoid value of int_0^r (rho/r)^m G(rho) drho at every node (0 at r = 0)."""
    G = np.asarray(G, dtype=float)
    S = lower_sum(G, m)
    out = h * (S - 0.5 * G)
    if m == 0:
        out = out - 0.5 * h * G[..., :1]
    out[..., 0] = 0.0
    return out


def total_power(G, m: float, weights: np.ndarray):
    """int_0^R (rho/R)^m G(rho) drho with the given quadrature weights on the last axis."""
    G = np.asarray(G, dtype=float)
    N = G.shape[-1] - 1
    return np.sum(G * (_node_power(N, m) * weights), axis=-1)


def cumulative_lower(G, h: float):
    """Trapezoid int_0^r G at every node."""
    G = np.asarray(G, dtype=float)
    out = np.zeros_like(G)
    out[..., 1:] = np.cumsum(0.5 * h * (G[..., 1:] + G[..., :-1]), axis=-1)
    return out


def cumulative_upper(G, h: float):
    """Trapezoid int_r^R G at every node."""
    low = cumulative_lower(G, h)
    return low[..., -1:] - low
