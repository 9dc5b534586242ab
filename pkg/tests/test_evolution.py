import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tumorlin import (Blowup, CFLViolation, OperatorTag, SpectralViolation, VolterraProblem,
                      assemble_mode, evolve_coupled, evolve_semigroup, fit_decay, j_decay_check,
                      kappa0, resolvent_L0, solve_volterra)
from tumorlin.evolution import ModeTrajectory, fit_log_slope, stable_dt, volterra_bound
from tumorlin.stability import smooth_random_fields, survey_initial_data


def synthetic(t, y):
    z = np.zeros_like(t)
    return ModeTrajectory(k=0, t=t, sup=y, l1=y, l2=y, eta=y, Jk=z, J=z, dt=t[1] - t[0], stride=1)


def test_fit_exact_exponential():
    t = np.linspace(0, 10, 201)
    rate, r2 = fit_decay(synthetic(t, np.exp(-2 * t)))
    assert rate == pytest.approx(-2.0, abs=1e-9)
    assert r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_polynomial_prefactor():
    t = np.linspace(0, 40, 801)
    rate, _ = fit_decay(synthetic(t, (1 + t) ** 2 * np.exp(-t)), window=(20, 40))
    assert abs(rate + 1.0) <= 0.1


def test_fit_constant_and_vanishing():
    t = np.linspace(0, 1, 11)
    assert fit_decay(synthetic(t, np.full(11, 3.0)))[0] == pytest.approx(0.0, abs=1e-12)
    assert fit_decay(synthetic(t, np.zeros(11)))[0] == -math.inf
    with pytest.raises(ValueError):
        fit_decay(synthetic(t, np.ones(11)), window=(0.0, 0.2))


def test_fit_batch_columns():
    t = np.linspace(0, 5, 51)
    y = np.exp(np.outer(t, [-1.0, -3.0]))
    rates, r2 = fit_log_slope(t, y)
    assert np.allclose(rates, [-1.0, -3.0]) and np.allclose(r2, 1.0)


@pytest.mark.parametrize("tag", [OperatorTag.L0, OperatorTag.Ltilde_k, OperatorTag.Lhat_k])
def test_zero_data_stays_zero(coarse_sol, tag):
    md = assemble_mode(coarse_sol, 2, 10.0)
    traj = evolve_semigroup(coarse_sol, md, tag, np.zeros_like(coarse_sol.r), 1.0)
    assert np.all(traj.sup == 0)
    cpl = evolve_coupled(coarse_sol, md, 10.0, np.zeros_like(coarse_sol.r), 0.0, 1.0)
    assert np.all(cpl.sup == 0) and np.all(cpl.eta == 0)


def test_cfl_enforced(coarse_sol):
    with pytest.raises(CFLViolation):
        evolve_semigroup(coarse_sol, None, "L0", coarse_sol.r, 1.0, cfl=0.95)
    with pytest.raises(CFLViolation):
        evolve_semigroup(coarse_sol, None, "L0", coarse_sol.r, 1.0, dt=stable_dt(coarse_sol, 1.0))


def test_blowup_detected(coarse_sol):
    from dataclasses import replace
    md = replace(assemble_mode(coarse_sol, 2, 1.0), a_k=np.full_like(coarse_sol.r, 30.0))
    with pytest.raises(Blowup):
        evolve_semigroup(coarse_sol, md, OperatorTag.Lhat_plus_k, np.ones_like(coarse_sol.r), 2.0)


def test_L0_rate_bounded_by_endpoint_growth(coarse_sol):
    s = coarse_sol
    nu0 = max(s.f_p[0], s.f_p[-1])
    phi0 = smooth_random_fields(np.random.default_rng(0), s, 3, nonnegative=True) + 0.1
    traj = evolve_semigroup(s, None, "L0", phi0, 20.0)
    rates, _ = fit_log_slope(*[traj.t[traj.t >= 10], traj.sup[traj.t >= 10]])
    assert np.all(rates <= nu0 + 0.05 * abs(nu0))


@pytest.mark.parametrize("tag", [OperatorTag.L0, OperatorTag.Lhat_plus_k])
@pytest.mark.parametrize("k", [0, 3])
def test_positivity_and_comparison(coarse_sol, tag, k):
    s = coarse_sol
    md = assemble_mode(s, k, 10.0)
    rng = np.random.default_rng(k)
    phi = smooth_random_fields(rng, s, 4, nonnegative=True)
    chi = phi + smooth_random_fields(rng, s, 4, nonnegative=True)
    both = np.concatenate([phi, chi])
    traj = evolve_semigroup(s, md, tag, both, 3.0, stride=1, keep_fields=True)
    f = traj.fields
    assert f.min() >= -1e-10
    assert np.all(f[:, :4] <= f[:, 4:] + 1e-10)


def test_l1_gronwall_per_step(coarse_sol):
    s = coarse_sol
    md = assemble_mode(s, 2, 10.0)
    phi = smooth_random_fields(np.random.default_rng(3), s, 2, nonnegative=True)
    traj = evolve_semigroup(s, md, OperatorTag.Lhat_plus_k, phi, 3.0, stride=1)
    bound = np.max(md.a_k + s.g_p * s.dp * s.R_s)
    growth = traj.l1[1:] / traj.l1[:-1]
    assert np.all(growth <= np.exp(bound * traj.dt) * (1 + 1e-3))


def test_batch_equals_single(coarse_sol):
    s = coarse_sol
    md = assemble_mode(s, 2, 20.0)
    phi0, eta0 = survey_initial_data(s, 2, 2, 0)
    batch = evolve_coupled(s, md, 20.0, phi0, eta0, 1.0)
    one = evolve_coupled(s, md, 20.0, phi0[1], eta0[1], 1.0)
    assert np.allclose(batch.sup[:, 1], one.sup, rtol=1e-12)
    assert np.allclose(batch.eta[:, 1], one.eta, rtol=1e-12)


@pytest.mark.parametrize("k", [0, 2, 5])
def test_tilde_and_plain_systems_agree(bench_sol, k):
    s = bench_sol
    md = assemble_mode(s, k, 50.0)
    phi0, eta0 = survey_initial_data(s, k, 2, 0)
    a = evolve_coupled(s, md, 50.0, phi0, eta0, 2.0, system="tilde", stride=10 ** 7)
    b = evolve_coupled(s, md, 50.0, phi0, eta0, 2.0, system="plain", stride=10 ** 7, dt=a.dt)
    assert np.max(np.abs(a.final_phi - b.final_phi)) <= 1e-6 * np.max(np.abs(b.final_phi))
    assert np.max(np.abs(a.final_eta - b.final_eta)) <= 1e-6 * np.max(np.abs(b.final_eta))


@pytest.mark.parametrize("k", [0, 2])
def test_tilde_plain_gap_shrinks_with_grid(k):
    from tumorlin import KineticParams, SolverOptions, solve_stationary
    gaps = []
    for N in (512, 1024):
        s = solve_stationary(KineticParams(), SolverOptions(N=N))
        md = assemble_mode(s, k, 50.0)
        phi0, eta0 = survey_initial_data(s, k, 1, 0)
        a = evolve_coupled(s, md, 50.0, phi0, eta0, 1.0, system="tilde", stride=10 ** 7)
        b = evolve_coupled(s, md, 50.0, phi0, eta0, 1.0, system="plain", stride=10 ** 7, dt=a.dt)
        gaps.append(np.max(np.abs(a.final_phi - b.final_phi)) / np.max(np.abs(b.final_phi)))
    assert gaps[1] <= 0.6 * gaps[0]


def test_resolvent_zero_source(coarse_sol):
    s = coarse_sol
    out = resolvent_L0(s, s.f_p, abs(s.f_p[-1]) + 1, np.zeros_like(s.r))
    assert np.all(out == 0)


def test_resolvent_rejects_spectrum(coarse_sol):
    with pytest.raises(SpectralViolation):
        resolvent_L0(coarse_sol, coarse_sol.f_p, max(coarse_sol.f_p[0], coarse_sol.f_p[-1]),
                     coarse_sol.r)


@pytest.mark.parametrize("seed", range(3))
def test_resolvent_residual_and_endpoints(bench_sol, seed):
    s = bench_sol
    lam = abs(s.f_p[-1]) + 1
    h = smooth_random_fields(np.random.default_rng(seed), s, 1)[0]
    phi = resolvent_L0(s, s.f_p, lam, h)
    d = (phi[2:] - phi[:-2]) / (2 * s.h)
    res = lam * phi[1:-1] + s.v[1:-1] * d - s.f_p[1:-1] * phi[1:-1] - h[1:-1]
    assert np.max(np.abs(res)) <= 1e-4 * np.max(np.abs(h))
    for i in (0, -1):
        assert phi[i] == pytest.approx(h[i] / (lam - s.f_p[i]), rel=1e-6)


def test_resolvent_batch(coarse_sol):
    s = coarse_sol
    h = smooth_random_fields(np.random.default_rng(1), s, 2)
    lam = abs(s.f_p[-1]) + 1
    assert np.allclose(resolvent_L0(s, s.f_p, lam, h)[1], resolvent_L0(s, s.f_p, lam, h[1]))


def test_volterra_unit_kernel():
    dt = 1e-3
    t = np.arange(0, 5 + dt / 2, dt)
    psi = solve_volterra(VolterraProblem(K=np.ones_like(t), Psi_tilde=np.ones_like(t), dt=dt))
    assert np.max(np.abs(psi - np.exp(-t))) <= 1e-4


def test_volterra_zero_kernel():
    F = np.sin(np.linspace(0, 3, 50))
    assert np.allclose(solve_volterra(VolterraProblem(K=np.zeros(50), Psi_tilde=F, dt=0.1)), F)


def test_volterra_a_priori_bound():
    dt = 1e-2
    t = np.arange(0, 8 + dt / 2, dt)
    prob = VolterraProblem(K=np.exp(-t), Psi_tilde=np.ones_like(t), dt=dt, sigma=1.0,
                           positive=True, monotone=True)
    psi = solve_volterra(prob)
    assert np.all(np.abs(psi - 1) <= 1 - np.exp(-t) + 1e-6)
    assert np.allclose(volterra_bound(1.0, 1.0, np.ones_like(t), dt), 1 - np.exp(-t), atol=1e-4)


def test_volterra_singular_diagonal():
    with pytest.raises(ZeroDivisionError):
        solve_volterra(VolterraProblem(K=np.full(5, -2.0), Psi_tilde=np.ones(5), dt=1.0))


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.1, 3.0), b=st.floats(-2.0, 2.0))
def test_volterra_exponential_kernel_closed_form(a, b):
    # K = a e^{b t}, F = 1 gives Psi' = (b - a) Psi - b with Psi(0) = 1
    dt = 1e-3
    t = np.arange(0, 2 + dt / 2, dt)
    psi = solve_volterra(VolterraProblem(K=a * np.exp(b * t), Psi_tilde=np.ones_like(t), dt=dt))
    s = b - a
    exact = (b - a * np.exp(s * t)) / s if abs(s) > 1e-9 else 1 - a * t
    assert np.max(np.abs(psi - exact)) <= 1e-4 * max(1.0, np.max(np.abs(exact)))


def test_kappa_positive(bench_sol):
    assert kappa0(bench_sol) > 0


def test_j_decay_zero_data(coarse_sol):
    md = assemble_mode(coarse_sol, 2, 1.0)
    k0, viol = j_decay_check(coarse_sol, md, np.zeros_like(coarse_sol.r), 1.0)
    assert k0 > 0 and viol <= 0


@pytest.mark.parametrize("k", [0, 2])
def test_j_decay_nonnegative_data(coarse_sol, k):
    md = assemble_mode(coarse_sol, k, 1.0)
    psi0 = smooth_random_fields(np.random.default_rng(k), coarse_sol, 2, nonnegative=True)
    k0, viol, traj = j_decay_check(coarse_sol, md, psi0, 5.0, return_trajectory=True)
    assert viol <= 1e-3
    assert traj.J.shape == (len(traj.t), 2)


def test_trajectory_rows(coarse_sol):
    md = assemble_mode(coarse_sol, 2, 5.0)
    traj = evolve_coupled(coarse_sol, md, 5.0, coarse_sol.dp, 1.0, 1.0)
    rows = traj.rows()
    assert rows.shape == (len(traj.t), 6)
    assert np.all(np.diff(traj.t) > 0)
    with pytest.raises(ValueError):
        traj.norm("bogus")
