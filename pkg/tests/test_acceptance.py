"""The eleven benchmark acceptance criteria, each reported as one pass/fail line."""
import math
import time
from contextlib import contextmanager

import numpy as np
import pytest

from tumorlin import (KineticParams, OperatorTag, SolverOptions, VolterraProblem, alpha_root,
                      assemble_mode, evolve_coupled, evolve_semigroup, find_gamma_star,
                      j_decay_check, kappa0, resolvent_L0, solve_stationary, solve_uk,
                      solve_volterra, theorem81_report, validate_stationary)
from tumorlin.evolution import fit_log_slope
from tumorlin.modes import uk_properties
from tumorlin.stability import deterministic_fields, mu_alpha_star, smooth_random_fields

BENCH = KineticParams(n=3, lambda_nutrient=1.0, k_B=3.0, k_D=2.0, k_P=2.0, k_Q=1.0)
GAMMAS = (5.0, 50.0, 500.0)
J_DEGREES = (0, 1, 2, 5)
STAR_KS = range(2, 9)


class Checks:
    def __init__(self):
        self.items = []

    def add(self, name, ok, value):
        self.items.append((name, bool(ok), value))

    @property
    def ok(self):
        return all(ok for _, ok, _ in self.items)


@contextmanager
def criterion(log, number, title):
    checks = Checks()
    start = time.perf_counter()
    try:
        yield checks
    finally:
        elapsed = time.perf_counter() - start
        failed = [f"{n}={v:.4g}" if isinstance(v, float) else f"{n}={v}"
                  for n, ok, v in checks.items if not ok]
        status = "PASS" if checks.ok and checks.items else "FAIL"
        detail = "; ".join(failed) if failed else f"{len(checks.items)} checks"
        line = f"criterion {number}: {status} {title} ({elapsed:.1f} s) {detail}"
        log.append(line)
        print(line, flush=True)
    assert checks.ok, line


def rel_change(a, b):
    return abs(a - b) / max(abs(a), 1e-300)


@pytest.fixture(scope="module")
def fine_sol():
    return solve_stationary(BENCH, SolverOptions(N=8192))


def translation_checks(sol, checks):
    for g in GAMMAS:
        md1, md2 = assemble_mode(sol, 1, g), assemble_mode(sol, 2, g)
        checks.add(f"|alpha~_1({g:g})|", abs(md1.alpha_tilde_k) <= 1e-7, abs(md1.alpha_tilde_k))
        ratio = np.max(np.abs(md1.c_k)) / np.max(np.abs(md2.c_k))
        checks.add(f"sup|c_1|/sup|c_2|({g:g})", ratio <= 1e-5, float(ratio))
    md = assemble_mode(sol, 1, 50.0)
    phi0 = -sol.dp
    traj = evolve_coupled(sol, md, 50.0, phi0, 1.0, 10.0, keep_fields=True)
    drift = max(float(np.max(np.abs(traj.fields - phi0))) / float(np.max(np.abs(phi0))),
                float(np.max(np.abs(traj.eta - 1.0))))
    checks.add("translation drift", drift <= 1e-4, drift)
    return drift


def j_decay_rates(sol, checks):
    k0 = kappa0(sol)
    checks.add("kappa0>0", k0 > 0, k0)
    rng = np.random.default_rng(6)
    psi0 = np.concatenate([smooth_random_fields(rng, sol, 2, nonnegative=True),
                           np.ones((1, sol.r.size))])
    rates = {}
    for k in J_DEGREES:
        _, excess, traj = j_decay_check(sol, assemble_mode(sol, k, 50.0), psi0, 20.0,
                                        return_trajectory=True)
        checks.add(f"J excess k={k}", excess <= 1e-3, excess)
        sel = traj.t >= 10.0
        rates[k] = float(np.max(fit_log_slope(traj.t[sel], traj.J[sel])[0]))
    return k0, rates


def alpha_ratio_bound(sol):
    ratios = [assemble_mode(sol, k, g).alpha_tilde_k / (k ** 3 * g)
              for k in range(2, 21) for g in (10.0, 100.0)]
    return -max(ratios)


@pytest.fixture(scope="module")
def star_bench(bench_sol):
    start = time.perf_counter()
    est = find_gamma_star(bench_sol, STAR_KS, lambda_target=0.01, T=10.0)
    return est, time.perf_counter() - start


def star_checks(sol, est, elapsed, checks):
    checks.add("gamma_hat finite", math.isfinite(est.gamma_hat), est.gamma_hat)
    checks.add("margin>0", est.margin > 0, est.margin)
    checks.add("runtime<=600s", elapsed <= 600, elapsed)
    c = alpha_ratio_bound(sol)
    checks.add("alpha~_k/(k^3 gamma)<=-c<0", c > 0, -c)


def test_criterion_1_stationary(acceptance_log):
    with criterion(acceptance_log, 1, "stationary solve") as chk:
        start = time.perf_counter()
        sol = solve_stationary(BENCH, SolverOptions(N=4096))
        rep = validate_stationary(sol)
        elapsed = time.perf_counter() - start
        chk.add("|v_s(R_s)|/R_s", abs(sol.v[-1]) <= 1e-8 * sol.R_s, abs(sol.v[-1]) / sol.R_s)
        for name, ok, _, value in rep.entries:
            chk.add(name, ok, value)
        e0 = abs(sol.p[0] - alpha_root(BENCH, sol.c[0]))
        chk.add("p_s(0)-alpha(c_s(0))", e0 <= 1e-6, e0)
        chk.add("p_s(R_s)-1", abs(sol.p[-1] - 1.0) <= 1e-6, abs(sol.p[-1] - 1.0))
        chk.add("runtime<=10s", elapsed <= 10, elapsed)


def test_criterion_2_uk_identities(acceptance_log, bench_sol):
    with criterion(acceptance_log, 2, "u_k identities") as chk:
        start = time.perf_counter()
        s = bench_sol
        u1 = solve_uk(s, 1)
        ref = s.R_s * s.dc[1:] / (s.r[1:] * s.dc_R)
        err = float(np.max(np.abs(u1[1:] - ref)))
        chk.add("u_1 identity", err <= 1e-6, err)
        for name, ok, margin in uk_properties(s, 12):
            chk.add(name, ok, margin)
        elapsed = time.perf_counter() - start
        chk.add("runtime<=5s", elapsed <= 5, elapsed)


def test_criterion_3_translation(acceptance_log, bench_sol):
    with criterion(acceptance_log, 3, "translation mode exactness") as chk:
        translation_checks(bench_sol, chk)


def test_criterion_4_resolvent(acceptance_log, bench_sol):
    with criterion(acceptance_log, 4, "resolvent") as chk:
        s = bench_sol
        lam = abs(s.f_p[-1]) + 1.0
        hs = smooth_random_fields(np.random.default_rng(4), s, 10)
        phis = resolvent_L0(s, s.f_p, lam, hs)
        for j, (h, phi) in enumerate(zip(hs, phis)):
            d = (phi[2:] - phi[:-2]) / (2 * s.h)
            res = lam * phi[1:-1] + s.v[1:-1] * d - s.f_p[1:-1] * phi[1:-1] - h[1:-1]
            worst = float(np.max(np.abs(res)) / np.max(np.abs(h)))
            chk.add(f"residual h{j}", worst <= 1e-4, worst)
            for i, end in ((0, "0"), (-1, "R_s")):
                law = h[i] / (lam - s.f_p[i])
                e = abs(phi[i] - law) / max(abs(law), 1e-300)
                chk.add(f"endpoint {end} h{j}", e <= 1e-6, e)


def test_criterion_5_positivity(acceptance_log, bench_sol):
    with criterion(acceptance_log, 5, "semigroup positivity and bounds") as chk:
        start = time.perf_counter()
        s = bench_sol
        phi0 = smooth_random_fields(np.random.default_rng(5), s, 20, nonnegative=True)
        nu0 = max(s.f_p[0], s.f_p[-1])
        lam2 = float(np.max(s.g + s.f_p))
        traj = evolve_semigroup(s, None, "L0", phi0, 10.0, cfl=0.8, stride=25, keep_fields=True)
        chk.add("L0 min", traj.fields.min() >= -1e-10, float(traj.fields.min()))
        sel = traj.t >= 5.0
        rate = float(np.max(fit_log_slope(traj.t[sel], traj.sup[sel])[0]))
        chk.add("L0 sup-rate", rate <= nu0 + 0.05 * abs(nu0), rate)
        step = float(np.max(traj.l1[1:] / traj.l1[:-1] / np.exp(lam2 * np.diff(traj.t)[:, None])))
        chk.add("L1 Gronwall per sample", step <= 1 + 1e-3, step)
        del traj
        md = assemble_mode(s, 2, 50.0)
        hat = evolve_semigroup(s, md, OperatorTag.Lhat_plus_k, phi0, 5.0, cfl=0.8, stride=25,
                               keep_fields=True)
        chk.add("Lhat_plus min", hat.fields.min() >= -1e-10, float(hat.fields.min()))
        elapsed = time.perf_counter() - start
        chk.add("runtime<=60s", elapsed <= 60, elapsed)


def test_criterion_6_j_decay(acceptance_log, bench_sol):
    with criterion(acceptance_log, 6, "J-functional decay") as chk:
        j_decay_rates(bench_sol, chk)


def test_criterion_7_volterra(acceptance_log, bench_sol):
    with criterion(acceptance_log, 7, "Volterra relation") as chk:
        dt = 1e-3
        t = np.arange(0.0, 5.0 + dt / 2, dt)
        psi = solve_volterra(VolterraProblem(K=np.ones_like(t), Psi_tilde=np.ones_like(t), dt=dt))
        err = float(np.max(np.abs(psi - np.exp(-t))))
        chk.add("K=1 analytic", err <= 1e-4, err)
        s = bench_sol
        md = assemble_mode(s, 1, 50.0)
        psi0 = smooth_random_fields(np.random.default_rng(7), s, 1)[0]
        full = evolve_semigroup(s, md, OperatorTag.Lhat_k, psi0, 5.0, stride=1)
        plus = evolve_semigroup(s, md, OperatorTag.Lhat_plus_k, np.stack([psi0, md.e_k]), 5.0,
                                dt=full.dt, stride=1)
        Psi, Psi_t, K = full.J, plus.J[:, 0], plus.J[:, 1]
        h = full.dt
        conv = np.zeros_like(Psi)
        for i in range(1, len(Psi)):
            prod = Psi[:i + 1] * K[i::-1]
            conv[i] = h * (prod.sum() - 0.5 * (prod[0] + prod[-1]))
        res = float(np.max(np.abs(Psi + conv - Psi_t)) / np.max(np.abs(Psi_t)))
        chk.add("simulated triple residual", res <= 1e-3, res)


def test_criterion_8_large_k(acceptance_log, bench_sol):
    with criterion(acceptance_log, 8, "large-k L^alpha rates") as chk:
        start = time.perf_counter()
        s = bench_sol
        phi0 = np.concatenate([smooth_random_fields(np.random.default_rng(8), s, 3),
                               deterministic_fields(s)])
        traj = evolve_semigroup(s, assemble_mode(s, 12, 50.0), OperatorTag.Ltilde_k, phi0, 12.0,
                                alpha=2.0)
        sel = traj.t >= 6.0
        for a, values in ((1.0, traj.l1), (2.0, traj.l2)):
            mu = mu_alpha_star(s, a)
            rate = float(np.max(fit_log_slope(traj.t[sel], values[sel])[0]))
            chk.add(f"L^{a:g} rate", rate <= mu + 0.1 * abs(mu), rate)
        elapsed = time.perf_counter() - start
        chk.add("runtime<=120s", elapsed <= 120, elapsed)


def test_criterion_9_threshold(acceptance_log, bench_sol, star_bench):
    with criterion(acceptance_log, 9, "surface-tension threshold") as chk:
        est, elapsed = star_bench
        star_checks(bench_sol, est, elapsed, chk)


def test_criterion_10_composite(acceptance_log, bench_sol, star_bench):
    with criterion(acceptance_log, 10, "multi-mode convergence") as chk:
        est, _ = star_bench
        gamma = max(50.0, 2.0 * est.gamma_hat)
        start = time.perf_counter()
        rep = theorem81_report(bench_sol, gamma, alpha=2.0, beta=2.0, k_max=6, T=30.0, seed=10,
                               cfl=0.9)
        elapsed = time.perf_counter() - start
        chk.add("global rate<=-0.01", rep.rate <= -0.01, rep.rate)
        chk.add("reduction>=1e3", rep.reduction >= 1e3, rep.reduction)
        finite = all(math.isfinite(c) for c in rep.translation_limits.values())
        chk.add("translation limit finite", finite and len(rep.translation_limits) == 3,
                len(rep.translation_limits))
        chk.add("runtime<=300s", elapsed <= 300, elapsed)


def test_criterion_11_refinement(acceptance_log, bench_sol, fine_sol, star_bench):
    with criterion(acceptance_log, 11, "refinement stability at N=8192") as chk:
        translation_checks(fine_sol, chk)
        coarse = Checks()
        k0_c, rates_c = j_decay_rates(bench_sol, coarse)
        k0_f, rates_f = j_decay_rates(fine_sol, chk)
        chk.add("kappa0 change", rel_change(k0_c, k0_f) < 0.05, rel_change(k0_c, k0_f))
        for k in J_DEGREES:
            d = rel_change(rates_c[k], rates_f[k])
            chk.add(f"J rate change k={k}", d < 0.05, d)
        start = time.perf_counter()
        est_f = find_gamma_star(fine_sol, STAR_KS, lambda_target=0.01, T=10.0)
        star_checks(fine_sol, est_f, time.perf_counter() - start, chk)
        est_c, _ = star_bench
        d = rel_change(est_c.gamma_hat, est_f.gamma_hat)
        chk.add("gamma_hat change", d < 0.05, d)
        for k in STAR_KS:
            d = rel_change(est_c.rates[k], est_f.rates[k])
            chk.add(f"threshold rate change k={k}", d < 0.05, d)
