"""Time integration of the mode flows, resolvent and Volterra solvers, decay fits.

Transport is discretized with first-order upwind differences (v_s <= 0, so
the right neighbour is upwind) and advanced with the two-stage SSP
Runge-Kutta scheme.  Both endpoints are fixed points of the characteristics
and need no boundary condition.  The flows accept a batch of initial data
with shape (B, N+1) and integrate all members in one pass.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import Blowup, CFLViolation, ConditionViolated, SpectralViolation
from .modes import ModeData, ModeOperators, OperatorTag
from .quadrature import cumulative_lower, trapezoid_weights
from .stationary import StationarySolution

CFL_MAX = 0.9
BLOWUP_FACTOR = 1e12


@dataclass
class ModeTrajectory:
    """Sampled norms of one flow; arrays have shape (S,) or (S, B) for batches."""

    k: int
    t: np.ndarray
    sup: np.ndarray
    l1: np.ndarray
    l2: np.ndarray
    eta: np.ndarray
    Jk: np.ndarray
    J: np.ndarray
    dt: float
    stride: int
    alpha: float = 2.0
    fields: np.ndarray | None = None
    tilde_fields: np.ndarray | None = None
    final_phi: np.ndarray | None = None
    final_eta: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def norm(self, choice: str) -> np.ndarray:
        table = {"sup": self.sup, "l1": self.l1, "l2": self.l2, "lalpha": self.l2,
                 "eta": np.abs(self.eta), "Jk": np.abs(self.Jk), "J": np.abs(self.J)}
        if choice not in table:
            raise ValueError(f"unknown norm {choice!r}; choose from {sorted(table)}")
        return table[choice]

    def rows(self, member: int = 0):
        """(t, sup, l1, l2, eta, Jk) per sample for one batch member."""
        def pick(a):
            return a if a.ndim == 1 else a[:, member]
        cols = [self.t] + [pick(a) for a in (self.sup, self.l1, self.l2, self.eta, self.Jk)]
        return np.column_stack(cols)


class _Norms:
    def __init__(self, sol: StationarySolution, alpha: float):
        self.w = trapezoid_weights(sol.grid.N, sol.h) * sol.r ** (sol.n - 1)
        self.alpha = alpha

    def __call__(self, phi):
        a = np.abs(phi)
        sup = a.max(axis=-1)
        l1 = np.sum(a * self.w, axis=-1)
        if math.isinf(self.alpha):
            la = sup
        else:
            la = np.sum(a ** self.alpha * self.w, axis=-1) ** (1.0 / self.alpha)
        return sup, l1, la


def stable_dt(sol: StationarySolution, cfl: float = 0.5) -> float:
    return cfl * sol.h / float(np.max(np.abs(sol.v)))


def _choose_dt(sol, dt, cfl, T, stiff_rate):
    limit = CFL_MAX * sol.h / float(np.max(np.abs(sol.v)))
    if cfl > CFL_MAX:
        raise CFLViolation(f"CFL number {cfl} exceeds {CFL_MAX}")
    if dt is None:
        dt = stable_dt(sol, cfl)
    elif dt > limit * (1 + 1e-12):
        raise CFLViolation(f"dt={dt:.3e} exceeds the transport limit {limit:.3e}")
    if stiff_rate > 0 and dt * stiff_rate > 1.0:
        dt = 1.0 / stiff_rate
    steps = max(1, int(math.ceil(T / dt - 1e-9)))
    return T / steps, steps


def coupled_dt(sol: StationarySolution, mode: ModeData, gamma: float, T: float,
               dt: float | None = None, cfl: float = 0.5, system: str = "tilde"):
    """The (dt, steps) pair evolve_coupled would use."""
    md = mode.with_gamma(gamma)
    rate = abs(md.alpha_tilde_k if system == "tilde" else md.alpha_k)
    return _choose_dt(sol, dt, cfl, T, _stiff_rate(ModeOperators(sol, md), sol, rate))


def _stride_steps(steps, dt, stride):
    if stride is None:
        return max(1, steps // 200)
    if isinstance(stride, (int, np.integer)):
        return max(1, int(stride))
    return max(1, int(round(stride / dt)))


def _integrate(rhs, state, steps, dt, stride, observe, keep_fields=False):
    """Generic SSP-RK2 loop; ``observe(state)`` returns a dict of sample values."""
    records = [observe(state)]
    times = [0.0]
    fields = [state[0].copy()] if keep_fields else None
    ref = max(float(np.max(np.abs(state[0]))), float(np.max(np.abs(state[1]))), 1e-300)
    for i in range(1, steps + 1):
        d0 = rhs(state)
        s1 = tuple(x + dt * d for x, d in zip(state, d0))
        d1 = rhs(s1)
        state = tuple(0.5 * x + 0.5 * (y + dt * d) for x, y, d in zip(state, s1, d1))
        if i % stride == 0 or i == steps:
            size = max(float(np.max(np.abs(state[0]))), float(np.max(np.abs(state[1]))))
            if not math.isfinite(size) or size > BLOWUP_FACTOR * ref:
                raise Blowup(f"solution grew beyond {BLOWUP_FACTOR:g} x initial at t={i * dt:.4g}")
            records.append(observe(state))
            times.append(i * dt)
            if keep_fields:
                fields.append(state[0].copy())
    out = {key: np.array([r[key] for r in records]) for key in records[0]}
    out["t"] = np.array(times)
    if keep_fields:
        out["fields"] = np.array(fields)
    return out, state


def _stiff_rate(ops: ModeOperators | None, sol, extra=0.0):
    a = np.abs(sol.f_p).max()
    if ops is not None:
        a = max(a, np.abs(ops.mode.a_k).max())
    integral = float(np.sum(sol.g_p * np.abs(sol.dp) * trapezoid_weights(sol.grid.N, sol.h)))
    return a + 2.0 * integral + abs(extra)


def evolve_semigroup(sol: StationarySolution, mode: ModeData | None, tag, phi0, T: float,
                     dt: float | None = None, *, cfl: float = 0.5, stride=None,
                     alpha: float = 2.0, keep_fields: bool = False) -> ModeTrajectory:
    """Integrate d(phi)/dt = Op(phi) for the operator selected by ``tag``."""
    tag = OperatorTag(tag)
    phi0 = np.asarray(phi0, dtype=float)
    if mode is None:
        if tag is not OperatorTag.L0:
            raise ValueError(f"operator {tag.value} needs a mode")
        from .modes import assemble_mode
        mode = assemble_mode(sol, 0, sol.params.gamma)
    ops = ModeOperators(sol, mode)
    dt, steps = _choose_dt(sol, dt, cfl, T, _stiff_rate(ops, sol))
    sk = _stride_steps(steps, dt, stride)
    norms = _Norms(sol, alpha)
    op = {OperatorTag.L0: ops.L0, OperatorTag.L_k: ops.L, OperatorTag.Ltilde_k: ops.Ltilde,
          OperatorTag.K_k: ops.K, OperatorTag.Lhat_plus_k: ops.Lhat_plus,
          OperatorTag.Lhat_k: ops.Lhat}[tag]
    zero = np.zeros(phi0.shape[:-1])

    def rhs(state):
        return op(state[0]), zero

    def observe(state):
        sup, l1, la = norms(state[0])
        return {"sup": sup, "l1": l1, "l2": la, "eta": zero.copy(),
                "Jk": ops.J_k(state[0]), "J": ops.J(state[0])}

    rec, state = _integrate(rhs, (phi0.copy(), zero), steps, dt, sk, observe, keep_fields)
    return ModeTrajectory(k=mode.k, t=rec["t"], sup=rec["sup"], l1=rec["l1"], l2=rec["l2"],
                          eta=rec["eta"], Jk=rec["Jk"], J=rec["J"], dt=dt, stride=sk,
                          alpha=alpha, fields=rec.get("fields"), final_phi=state[0])


def evolve_coupled(sol: StationarySolution, mode: ModeData, gamma: float, phi0, eta0,
                   T: float, dt: float | None = None, *, system: str = "tilde",
                   cfl: float = 0.5, stride=None, alpha: float = 2.0,
                   keep_fields: bool = False) -> ModeTrajectory:
    """Integrate the coupled (phi_k, eta_k) system; samples refer to the plain phi_k.

    ``system="tilde"`` advances phi~ = phi + Q_k eta with the Ltilde_k / c_k /
    alpha~_k form, ``system="plain"`` the L_k / b_k / alpha_k form.  Initial
    data are always given in the plain variable.
    """
    if system not in ("tilde", "plain"):
        raise ValueError("system must be 'tilde' or 'plain'")
    mode = mode.with_gamma(gamma)
    ops = ModeOperators(sol, mode)
    phi0 = np.asarray(phi0, dtype=float)
    eta0 = np.broadcast_to(np.asarray(eta0, dtype=float), phi0.shape[:-1]).copy()
    Q = mode.Q_k
    dt, steps = coupled_dt(sol, mode, gamma, T, dt, cfl, system)
    sk = _stride_steps(steps, dt, stride)
    norms = _Norms(sol, alpha)

    if system == "tilde":
        coupling, a_eta = mode.c_k, mode.alpha_tilde_k

        def rhs(state):
            phi, eta = state
            return (ops.Ltilde(phi) + coupling * eta[..., None],
                    a_eta * eta + ops.J_k(phi))

        def plain(state):
            return state[0] - Q * state[1][..., None]

        state0 = (phi0 + Q * eta0[..., None], eta0)
    else:
        coupling, a_eta = mode.b_k, mode.alpha_k

        def rhs(state):
            phi, eta = state
            return (ops.L(phi) + coupling * eta[..., None],
                    a_eta * eta + ops.J_k(phi))

        def plain(state):
            return state[0]

        state0 = (phi0.copy(), eta0)

    def observe(state):
        phi = plain(state)
        sup, l1, la = norms(phi)
        return {"sup": sup, "l1": l1, "l2": la, "eta": state[1].copy(),
                "Jk": ops.J_k(phi), "J": ops.J(phi)}

    fields = [] if keep_fields else None

    def observe_keep(state):
        if keep_fields:
            fields.append(state[0].copy())
        return observe(state)

    rec, state = _integrate(rhs, state0, steps, dt, sk, observe_keep)
    tilde_fields = np.array(fields) if keep_fields else None
    plain_fields = None
    if keep_fields:
        plain_fields = (tilde_fields - Q * rec["eta"][..., None] if system == "tilde"
                        else tilde_fields)
    return ModeTrajectory(k=mode.k, t=rec["t"], sup=rec["sup"], l1=rec["l1"], l2=rec["l2"],
                          eta=rec["eta"], Jk=rec["Jk"], J=rec["J"], dt=dt, stride=sk,
                          alpha=alpha, fields=plain_fields,
                          tilde_fields=tilde_fields if system == "tilde" else None,
                          final_phi=plain(state), final_eta=state[1].copy(),
                          extra={"system": system, "gamma": float(gamma)})


_GAUSS_POINTS = 16


def resolvent_L0(sol: StationarySolution, a, lam: float, h) -> np.ndarray:
    """Bounded solution of lam*phi + v_s phi' - a phi = h on [0, R_s].

    Inward exponential-fitting recursion: on each panel the exact solution
    of phi' = beta (phi - s), beta = (lam - a)/|v_s|, s = h/(lam - a), is used
    with s linear in r.  The exponent T(r) = int beta is integrated in closed
    form with (lam - a)/w linear on the panel, where |v_s| = r (R_s - r) w,
    and int e^(-T) over each panel by Gauss-Legendre.  The outermost panel
    uses the local power law (R_s - r)^alpha_1 of the weight.
    """
    a = np.asarray(a, dtype=float)
    h = np.asarray(h, dtype=float)
    bound = max(float(a[0]), float(a[-1]))
    if lam <= bound:
        raise SpectralViolation(f"lambda={lam} must exceed max(a(0), a(R_s))={bound}")
    r, R, N, dr = sol.r, sol.R_s, sol.grid.N, sol.h
    gap = lam - a
    s = h / gap
    w = np.empty_like(r)
    w[1:-1] = -sol.v[1:-1] / (r[1:-1] * (R - r[1:-1]))
    w[0] = -sol.series.v1 / R
    w[-1] = sol.dv[-1] / R
    q = gap / w
    slope = np.diff(q) / dr
    ri = r[1:-2, None]
    qi, bi = q[1:-2, None], slope[1:-1, None]
    nodes, weights = np.polynomial.legendre.leggauss(_GAUSS_POINTS)
    rho = ri + 0.5 * dr * (nodes + 1.0)
    rho = np.concatenate([rho, r[2:-1, None]], axis=1)
    # the linear parts of the two partial fractions cancel
    T = ((qi - bi * ri) * np.log(rho / ri)
         + (qi + bi * (R - ri)) * np.log((R - ri) / (R - rho))) / R
    Q = np.zeros(N)
    Q[1:-1] = T[:, -1]
    I = np.zeros(N)
    I[1:-1] = 0.5 * dr * (np.exp(-T[:, :-1]) @ weights)
    E = np.exp(-Q)
    phi = np.empty(h.shape)
    phi[..., -1] = s[..., -1]
    alpha_out = gap[-1] / sol.dv[-1]
    phi[..., -2] = s[..., -2] + (s[..., -1] - s[..., -2]) / (1.0 + alpha_out)
    tilt = (I - E * dr) / dr
    for i in range(N - 2, 0, -1):
        ds = s[..., i + 1] - s[..., i]
        phi[..., i] = E[i] * phi[..., i + 1] + s[..., i] * (1.0 - E[i]) + ds * tilt[i]
    phi[..., 0] = s[..., 0]
    return phi


@dataclass
class VolterraProblem:
    K: np.ndarray
    Psi_tilde: np.ndarray
    dt: float
    sigma: float | None = None
    positive: bool = False
    monotone: bool = False


def solve_volterra(problem: VolterraProblem, slack: float = 1e-6) -> np.ndarray:
    """Trapezoid solve of Psi(t) + int_0^t Psi(s) K(t-s) ds = Psi~(t) on a uniform grid.

    When the problem is flagged as positive and monotone (e^{sigma t} K
    nonincreasing), the a-priori bound |Psi - Psi~| <= K(0) int e^{-sigma(t-s)}|Psi~|
    is asserted sample-wise.
    """
    K = np.asarray(problem.K, dtype=float)
    F = np.asarray(problem.Psi_tilde, dtype=float)
    dt = problem.dt
    M = len(F)
    diag = 1.0 + 0.5 * dt * K[0]
    if diag == 0:
        raise ZeroDivisionError("singular Volterra diagonal 1 + dt K(0)/2 = 0")
    Psi = np.empty(M)
    Psi[0] = F[0] / (1.0 + 0.0 * K[0])
    for i in range(1, M):
        acc = 0.5 * Psi[0] * K[i]
        if i > 1:
            acc += np.dot(Psi[1:i], K[i - 1:0:-1])
        Psi[i] = (F[i] - dt * acc) / diag
    if problem.positive and problem.monotone and problem.sigma is not None:
        bound = volterra_bound(K[0], problem.sigma, F, dt)
        worst = float(np.max(np.abs(Psi - F) - bound))
        if worst > slack * max(1.0, float(np.max(np.abs(F)))):
            raise ConditionViolated(f"Volterra a-priori bound exceeded by {worst:.3e}")
    return Psi


def volterra_bound(K0: float, sigma: float, F, dt: float) -> np.ndarray:
    """K(0) int_0^t e^{-sigma(t-s)} |F(s)| ds by the trapezoid recursion."""
    F = np.abs(np.asarray(F, dtype=float))
    out = np.zeros_like(F)
    decay = math.exp(-sigma * dt)
    for i in range(1, len(F)):
        out[i] = out[i - 1] * decay + 0.5 * dt * (F[i - 1] * decay + F[i])
    return K0 * out


def kappa0(sol: StationarySolution) -> float:
    """-max(f_p* + g* + int_0^r g_p* p_s')."""
    expr = sol.f_p + sol.g + cumulative_lower(sol.g_p * sol.dp, sol.h)
    return -float(np.max(expr))


def j_decay_check(sol: StationarySolution, mode: ModeData, psi0, T: float,
                  dt: float | None = None, *, cfl: float = 0.5,
                  return_trajectory: bool = False):
    """Evolve psi under Lhat_plus_k and compare J(psi) with J(psi0) exp(-kappa0 t).

    Returns (kappa0, worst relative excess of J(psi(t)) e^{kappa0 t}/J(psi0) over 1),
    followed by the sampled trajectory when ``return_trajectory`` is set.
    """
    k0 = kappa0(sol)
    if k0 <= 0:
        raise ConditionViolated(f"max of f_p*+g*+int g_p* p_s' is {-k0:.4g} >= 0")
    psi0 = np.asarray(psi0, dtype=float)
    traj = evolve_semigroup(sol, mode, OperatorTag.Lhat_plus_k, psi0, T, dt, cfl=cfl, stride=1)
    J0 = traj.J[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(np.abs(J0) > 0, J0, 1.0)
        excess = traj.J * np.exp(k0 * traj.t)[(...,) + (None,) * (traj.J.ndim - 1)] / scale - 1.0
    excess = np.where(np.abs(J0) > 0, excess, np.abs(traj.J))
    if return_trajectory:
        return k0, float(np.max(excess)), traj
    return k0, float(np.max(excess))


def fit_decay(traj: ModeTrajectory, norm_choice: str = "sup", window=None, member=None,
              values=None):
    """Least-squares slope of log(norm) over ``window``; returns (rate, r2).

    A norm that vanishes anywhere on the window gives (-inf, 1.0).
    """
    t = traj.t
    y = traj.norm(norm_choice) if values is None else np.asarray(values)
    if member is not None and y.ndim > 1:
        y = y[:, member]
    lo, hi = window if window is not None else (0.5 * t[-1], t[-1])
    sel = (t >= lo - 1e-12) & (t <= hi + 1e-12)
    if sel.sum() < 4:
        raise ValueError(f"window [{lo}, {hi}] holds fewer than 4 samples")
    return fit_log_slope(t[sel], y[sel])


def fit_log_slope(t, y):
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if y.ndim > 1:
        out = [fit_log_slope(t, y[:, j]) for j in range(y.shape[1])]
        return np.array([o[0] for o in out]), np.array([o[1] for o in out])
    if np.any(y <= 0):
        return -math.inf, 1.0
    ly = np.log(y)
    A = np.vstack([t, np.ones_like(t)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((ly - pred) ** 2))
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot <= 1e-300 else 1.0 - ss_res / ss_tot
    if ss_tot <= 1e-24 * max(1.0, float(np.sum(ly ** 2))):
        r2 = 1.0
    return float(coef[0]), float(r2)
