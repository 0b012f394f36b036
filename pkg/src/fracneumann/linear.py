"""The linear problem (-eps Delta_N)^{1/2} u + u = f.

Spectrally the resolvent is the division u_k = f_k / ((eps lambda_k)^{1/2} + 1).
The same operator is the Laplace transform of the Poisson semigroup,

    u = int_0^inf e^{-t} e^{-t eps^{1/2} (-Delta_N)^{1/2}} f dt,

whose kernel L(x, z) = int_0^inf e^{-t} P_{eps^{1/2} t}(x, z) dt is evaluated
here for pointwise checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import NodalField, RectDomain, SpectralField, to_spectral
from .extension import ExtensionField, extend
from .operators import DEFAULT_QUAD, QuadratureSpec, _product_series, frac_apply

__all__ = [
    "LinearSolution",
    "solve_linear",
    "solve_linear_by_quadrature",
    "extend_linear_solution",
    "resolvent_kernel",
    "kernel_solve",
]


@dataclass(frozen=True, eq=False)
class LinearSolution:
    f: SpectralField
    eps: float
    u: SpectralField
    residual: float


def _resolvent_symbol(domain, eps):
    return np.sqrt(eps * domain.eigenvalues) + 1.0


def solve_linear(f: SpectralField, eps: float) -> LinearSolution:
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    u = SpectralField(f.domain, f.coeffs / _resolvent_symbol(f.domain, eps))
    res = (frac_apply(u, eps, 0.5) + u - f).norm()
    return LinearSolution(f, float(eps), u, res)


def _laplace_weights(mu: np.ndarray, quad: QuadratureSpec) -> np.ndarray:
    """int_0^inf e^{-t} e^{-t mu} dt by the log-trapezoid rule, elementwise in mu."""
    t, w = quad.rule()
    flat = mu.ravel()
    vals = np.exp(-np.outer(1.0 + flat, t)) @ w
    # below t_min the integrand is ~1
    vals = vals + t[0] * (1 - 0.5 * (1.0 + flat) * t[0])
    return vals.reshape(mu.shape)


def solve_linear_by_quadrature(f: SpectralField, eps: float,
                               quad: QuadratureSpec = DEFAULT_QUAD) -> SpectralField:
    """Resolvent as the integral of e^{-t} times the Poisson semigroup at height sqrt(eps) t."""
    mu = np.sqrt(eps * f.domain.eigenvalues)
    vals, inverse = np.unique(mu, return_inverse=True)
    weights = _laplace_weights(vals, quad)[inverse].reshape(mu.shape)
    return SpectralField(f.domain, weights * f.coeffs)


def extend_linear_solution(sol: LinearSolution, y_levels) -> ExtensionField:
    """v(x, y) = sum e^{-y (eps lambda_k)^{1/2}} f_k / ((eps lambda_k)^{1/2} + 1) phi_k(x)."""
    return extend(sol.u, sol.eps, y_levels)


def _kernel_weights(domain, eps, quad, cutoffs):
    lam = np.zeros(cutoffs)
    for axis, K in enumerate(cutoffs):
        sh = [1] * domain.n
        sh[axis] = K
        lam = lam + ((np.pi * np.arange(K) / domain.lengths[axis]) ** 2).reshape(sh)
    mu = np.sqrt(eps * lam)
    vals, inverse = np.unique(mu, return_inverse=True)
    return _laplace_weights(vals, quad)[inverse].reshape(mu.shape)


def resolvent_kernel(domain: RectDomain, eps: float, x, z,
                     quad: QuadratureSpec = DEFAULT_QUAD, cutoffs=None) -> np.ndarray:
    """L(x, z) = int_0^inf e^{-t} P_{sqrt(eps) t}(x, z) dt, restricted to the retained modes.

    The t integral is taken mode by mode with the log-trapezoid rule.  The
    series runs over ``cutoffs`` modes per axis (default: the domain's
    cutoffs); including modes beyond the grid's Nyquist range would alias
    when the kernel is integrated against grid data.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    x, z = np.broadcast_arrays(x, z)
    shape = x.shape[:-1]
    x = x.reshape(-1, domain.n)
    z = z.reshape(-1, domain.n)
    cutoffs = domain.cutoffs if cutoffs is None else tuple(cutoffs)
    weights = _kernel_weights(domain, eps, quad, cutoffs)
    return _product_series(domain, weights, x, z).reshape(shape)


def kernel_solve(f: NodalField, eps: float, quad: QuadratureSpec = DEFAULT_QUAD,
                 chunk: int = 64) -> NodalField:
    """u(x_i) = sum_j L(x_i, z_j) f(z_j) |cell| over all grid nodes.

    Costs O(N^2 K) for N nodes and K modes, so it is meant for small grids.
    """
    domain = f.domain
    X = np.stack([m.ravel() for m in domain.mesh], axis=-1)
    weights = _kernel_weights(domain, eps, quad, domain.cutoffs)
    fz = f.values.ravel() * domain.cell_volume
    out = np.empty(X.shape[0])
    m = X.shape[0]
    for start in range(0, m, chunk):
        rows = X[start:start + chunk]
        xs = np.repeat(rows, m, axis=0)
        zs = np.tile(X, (rows.shape[0], 1))
        block = _product_series(domain, weights, xs, zs).reshape(rows.shape[0], m)
        out[start:start + chunk] = block @ fz
    return NodalField(domain, out.reshape(domain.grid))


def lp_norm(f: NodalField, p: float) -> float:
    if math.isinf(p):
        return float(np.max(np.abs(f.values)))
    return (float(np.sum(np.abs(f.values) ** p)) * f.domain.cell_volume) ** (1 / p)


def spectral_from_nodal(f: NodalField) -> SpectralField:
    return to_spectral(f)
