"""Quick self-checks grouped by component, run from the command line.

Each suite returns a list of :class:`Check` entries.  The grids are small so a
suite finishes in seconds; the full-size versions live in the test suite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import (build_domain, constant, mode, random_bandlimited,
                     sorted_modes, to_nodal)
from .extension import dirichlet_energy, dtn_residual, extend, trace_inequality_gap
from .linear import solve_linear, solve_linear_by_quadrature
from .operators import frac_apply, heat_kernel, poisson_kernel, semigroup_route_frac_half
from .semilinear import (SemilinearConfig, energy, euler_lagrange_residual, grad_energy,
                         h_eps_inner, solve)

__all__ = ["Check", "SUITES", "run_suite"]


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    limit: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.limit)

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'}  {self.name}: {self.value:.3e} (limit {self.limit:.1e})"


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def operators_suite(tol: float = 1e-6, seed: int = 0) -> list:
    d = build_domain(2, 1.0, 32)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in sorted_modes(d, 50):
        u = mode(d, k)
        lam = d.eigenvalues[k]
        worst = max(worst, _rel(frac_apply(u, 0.3).coeffs, math.sqrt(0.3 * lam) * u.coeffs)
                    if lam > 0 else float(np.abs(frac_apply(u, 0.3).coeffs).max()))
    route = 0.0
    for eps in (0.01, 0.3, 1.0, 10.0):
        u = random_bandlimited(d, 8, rng)
        route = max(route, _rel(semigroup_route_frac_half(u, eps).coeffs, frac_apply(u, eps).coeffs))
    # the grid must resolve P_y for the smallest y, or the midpoint sum aliases
    fine = build_domain(2, 1.0, 128)
    X = np.stack([m.ravel() for m in fine.mesh], axis=-1)
    x0 = np.array([[0.3, 0.7]])
    mass = 0.0
    for t in (0.05, 0.2, 1.0):
        W = heat_kernel(fine, t, x0, X).sum() * fine.cell_volume
        P = poisson_kernel(fine, t, x0, X).sum() * fine.cell_volume
        mass = max(mass, abs(W - 1), abs(P - 1))
    return [Check("eigenmode exactness", worst, 1e-12),
            Check("spectral vs semigroup route", route, tol),
            Check("kernel unit mass", mass, 1e-8)]


def extension_suite(tol: float = 1e-6, seed: int = 0) -> list:
    d = build_domain(2, 1.0, 32)
    u = random_bandlimited(d, 6, np.random.default_rng(seed))
    eps = 0.05
    v = extend(u, eps, [0.0])
    lam = d.eigenvalues
    closed = float(np.sum(np.sqrt(eps * lam) * u.coeffs ** 2))
    r1, r2 = dtn_residual(u, eps, 1e-3), dtn_residual(u, eps, 5e-4)
    return [Check("Dirichlet energy identity", abs(dirichlet_energy(v) - closed) / closed, 1e-10),
            Check("DtN first-order ratio deviation", abs(r2 / r1 - 0.5), 0.05),
            Check("exact extension gap", abs(trace_inequality_gap(v)), 1e-10)]


def linear_suite(tol: float = 1e-6, seed: int = 0) -> list:
    d = build_domain(2, 1.0, 32)
    f = random_bandlimited(d, 8, np.random.default_rng(seed))
    eps = 0.1
    sol = solve_linear(f, eps)
    quad = solve_linear_by_quadrature(f, eps)
    one = to_nodal(solve_linear(constant(d, 1.0), eps).u).values
    return [Check("resolvent residual", sol.residual, 1e-12),
            Check("Laplace-transform route", _rel(quad.coeffs, sol.u.coeffs), tol),
            Check("resolvent of 1", float(np.abs(one - 1).max()), 1e-10)]


def semilinear_suite(tol: float = 1e-6, seed: int = 0) -> list:
    d = build_domain(2, 1.0, 32)
    p, eps = 2.0, 0.05
    one = constant(d, 1.0)
    E1 = energy(one, eps, p)
    target = (0.5 - 1 / (p + 1)) * d.volume
    rng = np.random.default_rng(seed)
    u = random_bandlimited(d, 4, rng) + constant(d, 1.0)
    w = random_bandlimited(d, 4, rng)
    g = h_eps_inner(grad_energy(u, eps, p), w, eps)
    errs = []
    for delta in (1e-2, 5e-3):
        fd = (energy(u + w * delta, eps, p) - energy(u - w * delta, eps, p)) / (2 * delta)
        errs.append(abs(fd - g))
    order = math.log2(errs[0] / errs[1]) if errs[1] > 0 else 2.0
    rep = solve(SemilinearConfig(eps=eps, p=p, grid=(32, 32)))
    return [Check("constant solution residual", euler_lagrange_residual(one, eps, p).norm(), 1e-12),
            Check("constant solution energy", abs(E1 - target), 1e-12),
            Check("gradient finite-difference order deficit", max(0.0, 1.8 - order), 0.0),
            Check("solve residual", rep.residual, 1e-8),
            Check("solve relative Nehari defect", rep.relative_nehari_defect, 1e-8),
            Check("solve positivity (-inf u)", -rep.inf, -1e-300)]


SUITES = {
    "operators": operators_suite,
    "extension": extension_suite,
    "linear": linear_suite,
    "semilinear": semilinear_suite,
}


def run_suite(name: str, tol: float = 1e-6, seed: int = 0) -> list:
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](tol=tol, seed=seed)
