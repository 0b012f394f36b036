import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fracneumann.domain import (NodalField, build_domain, constant, mode, random_bandlimited, to_nodal,
                                to_spectral)
from fracneumann.operators import (QuadratureError, QuadratureSpec, _box_moments, frac_apply,
                                   gagliardo_seminorm_sq,
                                   h_eps_norm_sq, heat_apply, heat_kernel, poincare_defect,
                                   poisson_apply, poisson_kernel, quarter_norm_sq,
                                   semigroup_route_frac_half)


def images_heat_1d(t, x, z, L, M=8):
    """Neumann heat kernel on (0, L) by the method of images."""
    m = np.arange(-M, M + 1)[:, None]
    g = lambda r: np.exp(-r ** 2 / (4 * t)) / math.sqrt(4 * math.pi * t)
    return np.sum(g(x - z + 2 * m * L) + g(x + z + 2 * m * L), axis=0)


def test_frac_apply_scales_modes_and_kills_constants():
    d = build_domain(2, (1.0, 2.0), 16)
    u = mode(d, (3, 1), 2.0)
    for s in (0.25, 0.5, 1.0):
        out = frac_apply(u, 0.3, s).coeffs[3, 1]
        assert out == pytest.approx(2.0 * (0.3 * d.eigenvalues[3, 1]) ** s, rel=1e-14)
    assert np.all(frac_apply(constant(d, 4.0), 0.3).coeffs == 0)
    with pytest.raises(ValueError):
        frac_apply(u, 0.0)
    with pytest.raises(ValueError):
        frac_apply(u, 1.0, 1.5)


def test_first_power_matches_finite_difference_laplacian():
    # -Delta_N on a smooth mode against the 5-point stencil with mirrored ghosts
    d = build_domain(2, 1.0, 128)
    u = mode(d, (2, 3))
    v = to_nodal(u).values
    h = d.spacing[0]
    pad = np.pad(v, 1, mode="symmetric")
    lap = (pad[2:, 1:-1] + pad[:-2, 1:-1] + pad[1:-1, 2:] + pad[1:-1, :-2] - 4 * v) / h ** 2
    ref = to_nodal(frac_apply(u, 1.0, 1.0)).values
    assert np.max(np.abs(-lap - ref)) / np.max(np.abs(ref)) < 1e-3


@pytest.mark.parametrize("eps", [0.01, 0.3, 1.0, 10.0])
def test_semigroup_route_matches_spectral(eps):
    d = build_domain(2, 1.0, 64)
    u = random_bandlimited(d, 20, np.random.default_rng(5))
    a = semigroup_route_frac_half(u, eps, tol=1e-8).coeffs
    b = frac_apply(u, eps).coeffs
    assert np.linalg.norm(a - b) / np.linalg.norm(b) < 1e-8


def test_coarse_quadrature_is_flagged():
    d = build_domain(2, 1.0, 16)
    u = random_bandlimited(d, 8, np.random.default_rng(0))
    with pytest.raises(QuadratureError):
        semigroup_route_frac_half(u, 1.0, QuadratureSpec(nodes=31), tol=1e-10)


def test_quadrature_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(kind="gauss")
    with pytest.raises(ValueError):
        QuadratureSpec(t_min=1.0, t_max=0.5)


def test_heat_kernel_matches_images():
    d = build_domain(2, (1.0, 0.6), 32)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (20, 2)) * d.lengths
    z = rng.uniform(0, 1, (20, 2)) * d.lengths
    for t in (1e-3, 0.05, 0.5):
        ref = images_heat_1d(t, x[:, 0], z[:, 0], 1.0) * images_heat_1d(t, x[:, 1], z[:, 1], 0.6)
        got = heat_kernel(d, t, x, z)
        assert np.allclose(got, ref, rtol=1e-10, atol=1e-12)


def test_heat_kernel_explicit_cutoff_checked():
    d = build_domain(2, 1.0, 16)
    with pytest.raises(QuadratureError):
        heat_kernel(d, 1e-4, [0.5, 0.5], [0.5, 0.5], cutoff=5)


def test_poisson_routes_agree_and_match_images():
    d = build_domain(2, 1.0, 32)
    x = np.array([[0.2, 0.3], [0.5, 0.5], [0.05, 0.9]])
    z = np.array([[0.25, 0.35], [0.1, 0.8], [0.05, 0.95]])
    # images of the free-space kernel y / (2 pi (y^2 + r^2)^{3/2}), truncated at M
    M = 300
    m = np.arange(-M, M + 1)
    for y in (0.05, 0.2):
        direct = poisson_kernel(d, y, x, z)
        sub = poisson_kernel(d, y, x, z, route="subordinated")
        assert np.allclose(direct, sub, rtol=1e-10)
        ref = []
        for xi, zi in zip(x, z):
            dx = np.concatenate([xi[0] - zi[0] + 2 * m, xi[0] + zi[0] + 2 * m])
            dy = np.concatenate([xi[1] - zi[1] + 2 * m, xi[1] + zi[1] + 2 * m])
            r2 = dx[:, None] ** 2 + dy[None, :] ** 2
            ref.append(np.sum(y / (2 * math.pi * (y * y + r2) ** 1.5)))
        # the image tail beyond M is about y / (2 pi) * 2 pi / (4 M) per quadrant pair
        assert np.allclose(direct, ref, rtol=0, atol=5 * y / M)


def test_kernel_symmetry_and_unit_mass():
    d = build_domain(2, (1.0, 1.5), 128)
    X = np.stack([m.ravel() for m in d.mesh], axis=-1)
    x0 = np.array([[0.1, 1.2]])
    for t in (0.05, 0.2, 1.0):
        for K in (heat_kernel, poisson_kernel):
            vals = K(d, t, x0, X)
            # the midpoint sum aliases mode 2N, worth about e^{-y pi 2N / L} ~ 2e-12 here
            assert vals.sum() * d.cell_volume == pytest.approx(1.0, abs=1e-10)
            assert np.all(vals > 0)
        a = heat_kernel(d, t, [0.2, 0.3], [0.7, 1.1])
        b = heat_kernel(d, t, [0.7, 1.1], [0.2, 0.3])
        assert a == pytest.approx(b, rel=1e-13)


def test_semigroups_act_diagonally():
    d = build_domain(2, 1.0, 16)
    u = mode(d, (1, 2))
    lam = d.eigenvalues[1, 2]
    assert heat_apply(u, 0.1).coeffs[1, 2] == pytest.approx(math.exp(-0.1 * lam))
    assert poisson_apply(u, 0.1).coeffs[1, 2] == pytest.approx(math.exp(-0.1 * math.sqrt(lam)))


def test_norms():
    d = build_domain(2, 1.0, 16)
    u = mode(d, (1, 0), 3.0) + constant(d, 2.0)
    assert quarter_norm_sq(u, 0.04) == pytest.approx(9 * math.sqrt(0.04) * math.pi)
    assert h_eps_norm_sq(u, 0.04) == pytest.approx(9 + 4 + 9 * 0.2 * math.pi)


def brute_far_part(u: NodalField):
    d = u.domain
    X = np.stack([m.ravel() for m in d.mesh], axis=-1)
    v = u.values.ravel()
    idx = np.stack(np.meshgrid(*[np.arange(N) for N in d.grid], indexing="ij"), -1).reshape(-1, 2)
    total = 0.0
    for i in range(len(v)):
        off = np.abs(idx - idx[i])
        far = np.any(off > 1, axis=1)
        r = np.linalg.norm(X[far] - X[i], axis=1)
        total += np.sum((v[far] - v[i]) ** 2 / r ** 3)
    return total * d.cell_volume ** 2


def test_gagliardo_fft_far_field_matches_pair_sum():
    d = build_domain(2, 1.0, 10)
    u = to_nodal(random_bandlimited(d, 3, np.random.default_rng(4)))
    # removing the local model leaves exactly the far-offset pair sum
    mom = _box_moments(tuple(d.spacing), 1.5, 100)
    c = to_spectral(u).coeffs
    k2 = [d.wavenumbers(0)[:, None] ** 2, d.wavenumbers(1)[None, :] ** 2]
    local = sum(mom[a] * float(np.sum(k2[a] * c ** 2)) for a in range(2))
    assert gagliardo_seminorm_sq(u) - local == pytest.approx(brute_far_part(u), rel=1e-10)


def test_gagliardo_invariances_and_refinement():
    vals = []
    for N in (32, 64, 128):
        d = build_domain(2, 1.0, N)
        u = to_nodal(mode(d, (1, 1)))
        vals.append(gagliardo_seminorm_sq(u))
        assert gagliardo_seminorm_sq(NodalField(d, u.values + 3.0)) == pytest.approx(vals[-1], rel=1e-9)
        assert gagliardo_seminorm_sq(NodalField(d, 2 * u.values)) == pytest.approx(4 * vals[-1], rel=1e-12)
    assert gagliardo_seminorm_sq(to_nodal(constant(d, 1.0))) == pytest.approx(0.0, abs=1e-9)
    # successive differences shrink under refinement
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.floats(0.2, 5.0), st.floats(0.2, 5.0))
def test_poincare_defect_nonnegative(seed, lx, ly):
    d = build_domain(2, (lx, ly), 12)
    u = random_bandlimited(d, 12, np.random.default_rng(seed))
    assert poincare_defect(u) >= -1e-12 * max(1.0, np.sum(u.coeffs ** 2))


def test_poincare_defect_vanishes_on_first_mode():
    d = build_domain(2, (2.0, 1.0), 12)
    u = mode(d, (1, 0), 3.0) + constant(d, 5.0)
    assert poincare_defect(u) == pytest.approx(0.0, abs=1e-12)
