"""Acceptance suite: twelve criteria, one PASS/FAIL line each.

Runs at desk scale (n = 2, unit square, N = 128, p = 2 unless a check says
otherwise).  Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.
"""
import math
import time

import numpy as np
import pytest

from fracneumann.cli import main as cli_main
from fracneumann.domain import build_domain, constant, mode, random_bandlimited, sorted_modes, to_nodal
from fracneumann.experiments import (cube_cover, energy_scaling_fit, fitted_constants, locate_transition,
                                     lq_scaling, measure_decay, run_sweep, uniform_bound_report)
from fracneumann.extension import Bump, PerturbedExtension, dirichlet_energy, dtn_residual, extend, trace_inequality_gap
from fracneumann.fileio import parse_csv
from fracneumann.keller_segel import KSParams, keller_segel_reconstruct
from fracneumann.linear import resolvent_kernel, solve_linear
from fracneumann.operators import frac_apply, heat_kernel, poisson_kernel, semigroup_route_frac_half
from fracneumann.semilinear import (SemilinearConfig, SolutionReport, energy, euler_lagrange_residual,
                                    grad_energy, h_eps_inner, perturbed_restart_scan, solve)

N = 128
P = 2.0
SWEEP_EPS = np.logspace(-3, -1, 9)


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion even under output capture, then assert."""
    def report(number, title, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} | {detail}")
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def domain():
    return build_domain(2, 1.0, N)


@pytest.fixture(scope="module")
def sweep():
    t0 = time.perf_counter()
    records = run_sweep(SWEEP_EPS, SemilinearConfig(p=P, grid=(N, N)))
    return records, time.perf_counter() - t0


def _rel(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def test_criterion_01_eigen_calculus_exactness(domain, verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for eps in (0.01, 1.0, 10.0):
        for k in sorted_modes(domain, 50)[1:]:
            u = mode(domain, k)
            expect = math.sqrt(eps * domain.eigenvalues[k]) * u.coeffs
            worst = max(worst, _rel(frac_apply(u, eps).coeffs, expect))
    const = float(np.max(np.abs(frac_apply(constant(domain, 3.0), 0.5).coeffs)))
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and const == 0.0 and elapsed < 1.0
    verdict(1, "eigen-calculus exactness", ok,
            f"max rel err {worst:.2e}, constant image {const:.1e}, {elapsed:.2f}s")


def test_criterion_02_dual_route_equivalence(domain, verdict):
    rng = np.random.default_rng(20)
    t0 = time.perf_counter()
    worst = 0.0
    for eps in (0.01, 0.3, 1.0, 10.0):
        for _ in range(5):
            u = random_bandlimited(domain, 24, rng)
            worst = max(worst, _rel(semigroup_route_frac_half(u, eps).coeffs, frac_apply(u, eps).coeffs))
    elapsed = time.perf_counter() - t0
    verdict(2, "spectral vs subordination route", worst < 1e-6 and elapsed < 10.0,
            f"max rel L2 err {worst:.2e} over 20 fields, {elapsed:.2f}s")


def test_criterion_03_kernel_normalization(domain, verdict):
    X = np.stack([m.ravel() for m in domain.mesh], axis=-1)
    x0 = np.array([[0.3, 0.7]])
    mass_err, sym_err = 0.0, 0.0
    for t in (0.05, 0.2, 1.0):
        for kern in (heat_kernel, poisson_kernel):
            mass_err = max(mass_err, abs(float(kern(domain, t, x0, X).sum()) * domain.cell_volume - 1))
            a = float(np.ravel(kern(domain, t, [0.1, 0.8], [0.6, 0.3]))[0])
            b = float(np.ravel(kern(domain, t, [0.6, 0.3], [0.1, 0.8]))[0])
            sym_err = max(sym_err, abs(a - b) / abs(a))
    ts = np.logspace(-3, -2, 10)
    diag = np.array([heat_kernel(domain, t, [0.5, 0.5], [0.5, 0.5]) for t in ts]).ravel()
    slope = float(np.polyfit(np.log(ts), np.log(diag), 1)[0])
    ok = mass_err < 1e-8 and sym_err < 1e-12 and abs(slope + 1.0) < 0.1
    verdict(3, "kernel normalization and symmetry", ok,
            f"mass err {mass_err:.2e}, asym {sym_err:.1e}, diagonal slope {slope:.4f}")


def test_criterion_04_extension_identities(domain, verdict):
    rng = np.random.default_rng(4)
    u = random_bandlimited(domain, 10, rng)
    eps = 0.05
    v = extend(u, eps, [0.0])
    closed = float(np.sum(np.sqrt(eps * domain.eigenvalues) * u.coeffs ** 2))
    energy_err = abs(dirichlet_energy(v) - closed) / closed
    ratio = dtn_residual(u, eps, 5e-4) / dtn_residual(u, eps, 1e-3)
    exact_gap = trace_inequality_gap(v)
    gaps = []
    for _ in range(10):
        w = random_bandlimited(domain, 6, rng)
        t = rng.uniform(-1, 1)
        gaps.append(trace_inequality_gap(PerturbedExtension(v, ((t, Bump(rng.uniform(0.1, 2)), w),))))
    ok = energy_err < 1e-10 and abs(ratio - 0.5) < 0.05 and abs(exact_gap) < 1e-10 and min(gaps) >= -1e-12
    verdict(4, "extension identities", ok,
            f"energy err {energy_err:.1e}, DtN ratio {ratio:.4f}, exact gap {exact_gap:.1e}, "
            f"min perturbed gap {min(gaps):.2e}")


def test_criterion_05_linear_resolvent(domain, verdict):
    eps = 0.1
    worst_mode = 0.0
    for k in sorted_modes(domain, 50):
        sol = solve_linear(mode(domain, k), eps)
        worst_mode = max(worst_mode, abs(sol.u.coeffs[k] * (1 + math.sqrt(eps * domain.eigenvalues[k])) - 1))
    f = random_bandlimited(domain, 6, np.random.default_rng(5), decay=1.0)
    u_spec = to_nodal(solve_linear(f, eps).u).values.ravel()
    X = np.stack([m.ravel() for m in domain.mesh], axis=-1)
    fz = to_nodal(f).values.ravel() * domain.cell_volume
    picks = np.random.default_rng(6).choice(X.shape[0], 6, replace=False)
    u_kern = np.array([resolvent_kernel(domain, eps, X[i][None, :], X) @ fz for i in picks]).ravel()
    kern_err = _rel(u_kern, u_spec[picks])
    one_err = float(np.max(np.abs(to_nodal(solve_linear(constant(domain, 1.0), eps).u).values - 1)))
    ok = worst_mode < 1e-14 and kern_err < 1e-4 and one_err < 1e-10
    verdict(5, "linear resolvent", ok,
            f"per-mode err {worst_mode:.1e}, kernel vs spectral {kern_err:.2e}, resolvent of 1 {one_err:.1e}")


def test_criterion_06_semilinear_criticality(domain, sweep, verdict):
    records, _ = sweep
    reports = [r for r in records if r.ok]
    extra = [solve(SemilinearConfig(eps=e, p=P, grid=(N, N))) for e in (0.02, 0.2, 5.0)]
    bad = [r.eps for r in reports if not (r.residual < 1e-8 and r.nehari_defect < 1e-8 and r.inf > 0)]
    bad += [r.eps for r in extra if r.accepted and not (r.residual < 1e-8 and r.relative_nehari_defect < 1e-8 and r.inf > 0)]
    accepted = len(reports) + sum(r.accepted for r in extra)
    one = constant(domain, 1.0)
    res_one = euler_lagrange_residual(one, 0.01, P).norm()
    e_one = abs(energy(one, 0.01, P) - (0.5 - 1 / (P + 1)))
    rng = np.random.default_rng(66)
    orders = []
    for _ in range(20):
        u = random_bandlimited(domain, 5, rng) + constant(domain, 1.0)
        w = random_bandlimited(domain, 5, rng)
        delta = 10 ** rng.uniform(-2, -1.3)
        g = h_eps_inner(grad_energy(u, 0.05, P), w, 0.05)
        errs = [abs((energy(u + w * h, 0.05, P) - energy(u - w * h, 0.05, P)) / (2 * h) - g)
                for h in (delta, delta / 2)]
        orders.append(math.log2(errs[0] / errs[1]))
    ok = not bad and accepted >= len(reports) and res_one < 1e-12 and e_one < 1e-14 and min(orders) > 1.8
    verdict(6, "semilinear criticality", ok,
            f"{accepted} accepted solves, violations {bad}, u=1 residual {res_one:.1e}, "
            f"energy err {e_one:.1e}, FD orders {min(orders):.2f}..{max(orders):.2f}")


def test_criterion_07_energy_scaling(sweep, verdict):
    records, elapsed = sweep
    level = (0.5 - 1 / (P + 1)) * 1.0
    all_good = all(r.ok and not r.is_constant and r.inf > 0 for r in records)
    fit = energy_scaling_fit(records)
    below = all(r.energy < level for r in records)
    ok = all_good and abs(fit.slope - 1.0) < 0.15 and below and elapsed < 600
    verdict(7, "small-eps existence and energy scaling", ok,
            f"{len(records)} nonconstant positive: {all_good}, slope {fit.slope:.4f}, "
            f"max I/level {max(r.energy for r in records) / level:.3f}, {elapsed:.1f}s")


def test_criterion_08_mass_and_measure(sweep, verdict):
    records, _ = sweep
    band = lq_scaling(records, P + 1)
    etas = sorted(records[0].measures)
    fits = [measure_decay(records, eta) for eta in etas]
    monotone = all(np.all(np.diff([r.measures[eta] for r in records]) > 0) for eta in etas)
    ok = band["width"] < 10 and all(abs(f.slope - 1.0) < 0.3 for f in fits) and monotone
    verdict(8, "mass band and measure decay", ok,
            f"int u^3/eps in [{band['min']:.3f}, {band['max']:.3f}] (width {band['width']:.3f}), "
            f"measure slopes {[round(f.slope, 3) for f in fits]}, decreasing as eps falls: {monotone}")


def test_criterion_09_spike_geometry(sweep, verdict):
    records, _ = sweep
    eta = min(records[0].measures)
    counts = [cube_cover(to_nodal(r.u), r.eps, eta) for r in records]
    m = counts[-1]
    bound = uniform_bound_report(records)
    sups = [r.sup for r in records]
    ok = max(counts) <= m and min(sups) >= 1.0 and bound["drift_ratio"] < 5
    verdict(9, "spike geometry and uniform bound", ok,
            f"cube counts {counts} (m = {m}), sup in [{min(sups):.3f}, {max(sups):.3f}], "
            f"drift ratio {bound['drift_ratio']:.3f}")


def test_criterion_10_large_eps_dichotomy(sweep, domain, verdict):
    records, _ = sweep
    t0 = time.perf_counter()
    base = SemilinearConfig(p=P, grid=(N, N))

    def all_constant(eps):
        runs = perturbed_restart_scan(SemilinearConfig(eps=eps, p=P, grid=(N, N)), 10)
        return all(isinstance(r, SolutionReport) and r.accepted
                   and float(np.max(np.abs(to_nodal(r.u).values - 1))) < 1e-6 for r in runs)

    large = all_constant(100.0)
    small = perturbed_restart_scan(SemilinearConfig(eps=0.01, p=P, grid=(N, N)), 10)
    nonconstant = sum(isinstance(r, SolutionReport) and r.accepted and not r.is_constant for r in small)
    consts = fitted_constants(records, P, domain.first_eigenvalue)
    eps_star = consts["eps_star"]
    lo, hi = locate_transition(base, 0.05, 0.5, m_starts=4, steps=5)
    beyond = all_constant(2 * eps_star)
    elapsed = time.perf_counter() - t0
    ok = large and nonconstant >= 1 and hi <= eps_star and beyond and elapsed < 300
    verdict(10, "large-eps dichotomy", ok,
            f"eps=100 all constant: {large}, eps=0.01 nonconstant starts {nonconstant}/10, "
            f"transition in [{lo:.4f}, {hi:.4f}] vs eps* {eps_star:.3f}, 2eps* all constant: {beyond}, "
            f"{elapsed:.1f}s")


def test_criterion_11_keller_segel(verdict):
    ks = KSParams(D1=1.0, D2=0.1, chi=2.0, a=1.0, b=2.0, mean=3.0)
    rep = solve(SemilinearConfig(eps=ks.eps, p=ks.p, grid=(N, N)))
    st = keller_segel_reconstruct(rep, ks)
    d = rep.u.domain
    crep = solve(SemilinearConfig(eps=ks.eps, p=ks.p, grid=(N, N)), initial=constant(d, 1.0))
    cst = keller_segel_reconstruct(crep, ks)
    rho_err = float(np.max(np.abs(cst.rho.values - ks.mean)))
    c_err = float(np.max(np.abs(cst.c.values - ks.b * ks.mean / ks.a)))
    ok = (rep.accepted and st.flux_residual < 1e-12 and st.chemical_residual < 1e-6
          and rho_err < 1e-10 and c_err < 1e-10)
    verdict(11, "Keller-Segel reconstruction", ok,
            f"mapping {ks.mapping}, flux {st.flux_residual:.1e}, chemical {st.chemical_residual:.1e}, "
            f"constant case errors ({rho_err:.1e}, {c_err:.1e})")


def test_criterion_12_determinism(tmp_path, verdict):
    a, b = tmp_path / "first", tmp_path / "rerun"
    status = cli_main(["sweep", "--eps", "1e-3:1e-1:log:9", "--out", str(a)])
    status2 = cli_main(["sweep", "--manifest", str(a / "manifest.json"), "--out", str(b)])
    same = (a / "sweep.csv").read_bytes() == (b / "sweep.csv").read_bytes()
    rows_a, rows_b = parse_csv(a / "sweep.csv"), parse_csv(b / "sweep.csv")
    ok = status == 0 and status2 == 0 and same and rows_a == rows_b and len(rows_a) == 9
    verdict(12, "manifest rerun determinism", ok,
            f"exit codes {status}/{status2}, {len(rows_a)} rows, CSV bytes identical: {same}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
