"""Harmonic extension to the cylinder Omega x (0, inf).

The extension solves ``eps Delta_x v + v_yy = 0`` with lateral Neumann data
and trace ``u``; mode by mode it is ``v_k(y) = e^{-y (eps lambda_k)^{1/2}} u_k``.
The constant mode does not decay, so the mean of every slab equals u_Omega.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .domain import SpectralField, to_nodal
from .operators import DEFAULT_QUAD, QuadratureSpec, frac_apply, heat_apply, quarter_norm_sq

__all__ = [
    "ExtensionField",
    "Bump",
    "PerturbedExtension",
    "extend",
    "extend_by_subordination",
    "dirichlet_energy",
    "slab_quadrature_energy",
    "dtn_residual",
    "trace_inequality_gap",
    "cylinder_norm_sq",
    "trace_embedding_ratio",
]

_SQRT_PI = math.sqrt(math.pi)


@dataclass(frozen=True, eq=False)
class ExtensionField:
    """Extension of ``base`` sampled at ``y_levels`` (nodal slabs, one per level)."""

    base: SpectralField
    eps: float
    y_levels: np.ndarray
    slabs: np.ndarray
    mean: float

    def decay(self, y: float) -> np.ndarray:
        return np.exp(-y * np.sqrt(self.eps * self.base.domain.eigenvalues))

    def at(self, y: float) -> SpectralField:
        """Closed-form slab v(., y) in spectral form."""
        return SpectralField(self.base.domain, self.decay(y) * self.base.coeffs)

    @property
    def trace(self) -> SpectralField:
        return self.base


def extend(u: SpectralField, eps: float, y_levels) -> ExtensionField:
    """v(x, y) = u_Omega + sum_{k != 0} e^{-y (eps lambda_k)^{1/2}} u_k phi_k(x)."""
    if not eps > 0:
        raise ValueError("epsilon must be positive")
    y = np.sort(np.atleast_1d(np.asarray(y_levels, dtype=float)))
    if np.any(y < 0):
        raise ValueError("heights must be nonnegative")
    mu = np.sqrt(eps * u.domain.eigenvalues)
    slabs = np.stack([to_nodal(SpectralField(u.domain, np.exp(-yj * mu) * u.coeffs)).values
                      for yj in y])
    return ExtensionField(u, float(eps), y, slabs, u.mean)


def extend_by_subordination(u: SpectralField, eps: float, y: float,
                            quad: QuadratureSpec = DEFAULT_QUAD) -> SpectralField:
    """v(., y) = sqrt(eps) y / (2 sqrt(pi)) int e^{-eps y^2 / 4t} e^{t Delta_N} u t^{-3/2} dt."""
    if y == 0:
        return u
    t, w = quad.rule()
    pref = math.sqrt(eps) * y / (2 * _SQRT_PI)
    acc = np.zeros_like(u.coeffs)
    for tj, wj in zip(t, w):
        g = math.exp(-eps * y * y / (4 * tj))
        if g == 0.0:
            continue
        acc += wj * g * tj ** -1.5 * heat_apply(u, tj).coeffs
    # for t > t_max only the mean survives the heat flow
    tail = np.zeros_like(acc)
    tail.flat[0] = 2 / math.sqrt(t[-1]) * u.coeffs.flat[0]
    return SpectralField(u.domain, pref * (acc + tail))


def dirichlet_energy(v: ExtensionField) -> float:
    """int int eps |grad_x v|^2 + v_y^2 = sum (eps lambda_k)^{1/2} u_k^2 (closed form)."""
    mu = np.sqrt(v.eps * v.base.domain.eigenvalues)
    return float(np.sum(mu * v.base.coeffs ** 2))


def slab_quadrature_energy(u: SpectralField, eps: float, y_max: float | None = None,
                           levels: int = 400, y_first: float | None = None) -> float:
    """Dirichlet energy of the extension by quadrature over a truncated cylinder.

    Slabs are spectral in x; v_y comes from second-order finite differences on
    a geometrically graded y grid and the y integral is a trapezoid rule.
    """
    lam = u.domain.eigenvalues
    lam1 = u.domain.first_eigenvalue
    mu_max = math.sqrt(eps * float(lam[u.coeffs != 0].max())) if np.any(u.coeffs != 0) else 0.0
    if y_max is None:
        y_max = 8 / math.sqrt(eps * lam1)
    if y_first is None:
        y_first = 1e-3 / max(mu_max, 1.0)
    y = np.concatenate([[0.0], np.geomspace(y_first, y_max, levels - 1)])
    mu = np.sqrt(eps * lam)
    V = np.exp(-np.multiply.outer(y, mu)) * u.coeffs
    Vy = np.gradient(V, y, axis=0, edge_order=2)
    density = (np.sum(eps * lam * V ** 2, axis=tuple(range(1, V.ndim)))
               + np.sum(Vy ** 2, axis=tuple(range(1, V.ndim))))
    return float(np.trapezoid(density, y))


def dtn_residual(u: SpectralField, eps: float, h: float) -> float:
    """|| -(v(., h) - v(., 0)) / h - (-eps Delta_N)^{1/2} u ||_{L2}."""
    if not h > 0:
        raise ValueError("step must be positive")
    mu = np.sqrt(eps * u.domain.eigenvalues)
    quotient = -np.expm1(-h * mu) / h * u.coeffs
    return float(np.linalg.norm(quotient - frac_apply(u, eps, 0.5).coeffs))


@dataclass(frozen=True)
class Bump:
    """Zero-trace profile psi(y) = (4 y (Y - y) / Y^2)^2 on [0, Y], zero above."""

    height: float = 1.0

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        Y = self.height
        s = 4 * y * (Y - y) / Y ** 2
        return np.where((y >= 0) & (y <= Y), s * s, 0.0)

    def derivative(self, y):
        y = np.asarray(y, dtype=float)
        Y = self.height
        s = 4 * y * (Y - y) / Y ** 2
        ds = 4 * (Y - 2 * y) / Y ** 2
        return np.where((y >= 0) & (y <= Y), 2 * s * ds, 0.0)


@dataclass(frozen=True, eq=False)
class PerturbedExtension:
    """Exact extension plus sum_j t_j psi_j(y) w_j(x) with zero-trace profiles psi_j."""

    extension: ExtensionField
    terms: tuple = field(default_factory=tuple)  # (amplitude, Bump, SpectralField)

    @property
    def trace(self) -> SpectralField:
        return self.extension.base


def _perturbation_energies(v: PerturbedExtension, nodes: int = 400):
    """(cross term with the extension, energy of the perturbation) via Gauss-Legendre."""
    ext = v.extension
    eps = ext.eps
    lam = ext.base.domain.eigenvalues
    mu = np.sqrt(eps * lam)
    x, wts = np.polynomial.legendre.leggauss(nodes)
    cross = 0.0
    pert = 0.0
    for i, (amp_i, bump_i, w_i) in enumerate(v.terms):
        Y = bump_i.height
        y = 0.5 * Y * (x + 1)
        wy = 0.5 * Y * wts
        psi, dpsi = bump_i(y), bump_i.derivative(y)
        # cross = sum_k u_k w_k int (eps lambda e^{-y mu} psi - mu e^{-y mu} psi') dy
        E = np.exp(-np.multiply.outer(y, mu))
        kern = (eps * lam * np.tensordot(wy * psi, E, axes=1)
                - mu * np.tensordot(wy * dpsi, E, axes=1))
        cross += amp_i * float(np.sum(kern * ext.base.coeffs * w_i.coeffs))
        for j, (amp_j, bump_j, w_j) in enumerate(v.terms[i:], start=i):
            factor = 1.0 if j == i else 2.0
            Yj = max(Y, bump_j.height)
            yj = 0.5 * Yj * (x + 1)
            wj = 0.5 * Yj * wts
            pp = float(np.sum(wj * bump_i(yj) * bump_j(yj)))
            dd = float(np.sum(wj * bump_i.derivative(yj) * bump_j.derivative(yj)))
            pert += factor * amp_i * amp_j * float(
                np.sum((eps * lam * pp + dd) * w_i.coeffs * w_j.coeffs))
    return cross, pert


def cylinder_energy(v) -> float:
    """int int eps |grad_x v|^2 + v_y^2 for an extension, possibly perturbed."""
    if isinstance(v, ExtensionField):
        return dirichlet_energy(v)
    cross, pert = _perturbation_energies(v)
    return dirichlet_energy(v.extension) + 2 * cross + pert


def trace_inequality_gap(v, eps: float | None = None) -> float:
    """Dirichlet energy minus ||(-eps Delta_N)^{1/4} trace||^2; zero for exact extensions."""
    eps = (v.eps if isinstance(v, ExtensionField) else v.extension.eps) if eps is None else eps
    return cylinder_energy(v) - quarter_norm_sq(v.trace, eps)


def cylinder_norm_sq(v) -> float:
    """||v||_eps^2 = Dirichlet energy + ||trace||_{L2}^2."""
    return cylinder_energy(v) + float(np.sum(v.trace.coeffs ** 2))


def trace_embedding_ratio(u: SpectralField, eps: float) -> float:
    """||E u||_eps / (C(eps) ||u||_{L^{2n/(n-1)}}) with C(eps) = min(1, eps^{1/2})^{1/2}.

    Bounded below by 1/C_0 uniformly in eps for the trace embedding to hold.
    """
    n = u.domain.n
    if n < 2:
        raise ValueError("trace embedding exponent needs n >= 2")
    q = 2 * n / (n - 1)
    vals = to_nodal(u).values
    lq = (float(np.sum(np.abs(vals) ** q)) * u.domain.cell_volume) ** (1 / q)
    C = math.sqrt(min(1.0, math.sqrt(eps)))
    v = extend(u, eps, [0.0])
    return math.sqrt(cylinder_norm_sq(v)) / (C * lq)
