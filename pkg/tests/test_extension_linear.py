import math

import numpy as np
import pytest

from fracneumann.domain import build_domain, constant, mode, random_bandlimited, to_nodal
from fracneumann.extension import (Bump, PerturbedExtension, cylinder_energy, dirichlet_energy,
                                   dtn_residual, extend, extend_by_subordination,
                                   slab_quadrature_energy, trace_embedding_ratio,
                                   trace_inequality_gap)
from fracneumann.linear import (extend_linear_solution, kernel_solve, resolvent_kernel,
                                solve_linear, solve_linear_by_quadrature)
from fracneumann.operators import frac_apply, quarter_norm_sq


@pytest.fixture
def field():
    d = build_domain(2, (1.0, 0.8), 32)
    return random_bandlimited(d, 6, np.random.default_rng(11))


def test_extension_solves_the_cylinder_equation(field):
    # eps Delta_x v + v_yy = 0 checked by finite differences in y on the closed form
    eps, y, h = 0.05, 0.3, 1e-3
    v = extend(field, eps, [y - h, y, y + h])
    vyy = (v.slabs[0] - 2 * v.slabs[1] + v.slabs[2]) / h ** 2
    lap = -to_nodal(frac_apply(v.at(y), eps, 1.0)).values
    assert np.max(np.abs(vyy + lap)) < 1e-4 * np.max(np.abs(lap))
    assert np.allclose(v.slabs[1].mean(), field.mean, atol=1e-13)


def test_extension_by_subordination(field):
    for y in (0.05, 0.4, 2.0):
        a = extend_by_subordination(field, 0.1, y).coeffs
        b = extend(field, 0.1, [y]).at(y).coeffs
        assert np.allclose(a, b, atol=1e-11)


def test_dirichlet_energy_closed_form_and_quadrature(field):
    eps = 0.01
    v = extend(field, eps, [0.0])
    closed = float(np.sum(np.sqrt(eps * field.domain.eigenvalues) * field.coeffs ** 2))
    assert dirichlet_energy(v) == pytest.approx(closed, rel=1e-13)
    assert slab_quadrature_energy(field, eps) == pytest.approx(closed, rel=1e-3)


def test_dtn_residual_first_order(field):
    r = [dtn_residual(field, 0.1, h) for h in (1e-3, 5e-4, 2.5e-4)]
    assert r[1] / r[0] == pytest.approx(0.5, abs=0.05)
    assert r[2] / r[1] == pytest.approx(0.5, abs=0.05)
    with pytest.raises(ValueError):
        dtn_residual(field, 0.1, 0.0)


def test_trace_gap_zero_for_extension_positive_otherwise(field):
    eps = 0.2
    v = extend(field, eps, [0.0])
    assert trace_inequality_gap(v) == pytest.approx(0.0, abs=1e-10)
    rng = np.random.default_rng(2)
    gaps = []
    for t in (-0.3, -0.1, 0.1, 0.3):
        w = random_bandlimited(field.domain, 5, rng)
        pv = PerturbedExtension(v, ((t, Bump(0.7), w), (0.5 * t, Bump(0.3), field)))
        gaps.append(trace_inequality_gap(pv))
    assert min(gaps) > 0


def test_perturbation_energy_matches_direct_quadrature(field):
    # independent evaluation of int int eps|grad_x V|^2 + V_y^2 with V = v + t psi(y) w
    eps, t, Y = 0.1, 0.4, 0.6
    d = field.domain
    w = mode(d, (1, 2))
    v = extend(field, eps, [0.0])
    pv = PerturbedExtension(v, ((t, Bump(Y), w),))
    y = np.linspace(0, 6, 6001)
    lam = d.eigenvalues
    mu = np.sqrt(eps * lam)
    b = Bump(Y)
    total = np.zeros_like(y)
    coeff = np.exp(-np.multiply.outer(y, mu)) * field.coeffs
    dcoeff = -mu * coeff
    coeff = coeff + t * b(y)[:, None, None] * w.coeffs
    dcoeff = dcoeff + t * b.derivative(y)[:, None, None] * w.coeffs
    total = np.sum(eps * lam * coeff ** 2 + dcoeff ** 2, axis=(1, 2))
    ref = np.trapezoid(total, y)
    assert cylinder_energy(pv) == pytest.approx(ref, rel=1e-5)


def test_trace_embedding_ratio_bounded_below():
    d = build_domain(2, 1.0, 64)
    rng = np.random.default_rng(0)
    for eps in (1e-3, 1e-2, 1e-1, 1.0, 10.0):
        r = trace_embedding_ratio(random_bandlimited(d, 10, rng), eps)
        assert 0.1 < r < 100


def test_resolvent_identity_per_mode():
    d = build_domain(2, (1.0, 2.0), 16)
    for k in [(0, 0), (1, 0), (3, 7)]:
        sol = solve_linear(mode(d, k), 0.3)
        assert sol.u.coeffs[k] == pytest.approx(1 / (1 + math.sqrt(0.3 * d.eigenvalues[k])), rel=1e-15)
        assert sol.residual < 1e-14


def test_resolvent_of_one_is_one():
    d = build_domain(2, 1.0, 32)
    sol = solve_linear(constant(d, 1.0), 0.7)
    assert np.max(np.abs(to_nodal(sol.u).values - 1)) < 1e-14


def test_quadrature_route_matches_division(field):
    for eps in (1e-3, 0.1, 10.0):
        a = solve_linear_by_quadrature(field, eps).coeffs
        b = solve_linear(field, eps).u.coeffs
        assert np.linalg.norm(a - b) < 1e-12 * np.linalg.norm(b)


def test_kernel_route_matches_spectral():
    d = build_domain(2, 1.0, 16)
    f = random_bandlimited(d, 4, np.random.default_rng(5))
    u_kernel = kernel_solve(to_nodal(f), 0.1)
    u_spec = to_nodal(solve_linear(f, 0.1).u)
    assert np.linalg.norm(u_kernel.values - u_spec.values) < 1e-10 * np.linalg.norm(u_spec.values)


def test_resolvent_kernel_unit_mass_and_symmetry():
    d = build_domain(2, 1.0, 64)
    X = np.stack([m.ravel() for m in d.mesh], axis=-1)
    K = resolvent_kernel(d, 0.05, np.array([[0.3, 0.6]]), X)
    assert K.sum() * d.cell_volume == pytest.approx(1.0, abs=1e-12)
    a = resolvent_kernel(d, 0.05, [0.1, 0.2], [0.4, 0.9])
    b = resolvent_kernel(d, 0.05, [0.4, 0.9], [0.1, 0.2])
    assert a == pytest.approx(b, rel=1e-13)


def test_extended_linear_solution_trace_and_energy(field):
    sol = solve_linear(field, 0.2)
    v = extend_linear_solution(sol, [0.0, 1.0])
    assert np.allclose(v.slabs[0], to_nodal(sol.u).values)
    # weak form: energy + ||u||^2 = <f, u>
    lhs = dirichlet_energy(v) + float(np.sum(sol.u.coeffs ** 2))
    assert lhs == pytest.approx(sol.u.dot(field), rel=1e-12)
    assert quarter_norm_sq(sol.u, 0.2) == pytest.approx(dirichlet_energy(v), rel=1e-14)


def test_linear_rejects_bad_eps(field):
    with pytest.raises(ValueError):
        solve_linear(field, -1.0)
