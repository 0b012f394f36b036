"""Steady states of a chemotaxis system with a fractional chemical equation.

The stationary system

    D1 Delta rho - chi div(rho grad log c) = 0,
    D2 (-Delta_N)^{1/2} c + a c - b rho = 0,     mean(rho) = rho_bar,

has zero flux when rho = lam c^{chi/D1}.  Writing c = beta u turns the
chemical equation into (D2/a)(-Delta_N)^{1/2} u + u = u^p with p = chi/D1,
provided lam = (a/b) beta^{1-p}.  Since (-eps Delta_N)^{1/2} equals
sqrt(eps) (-Delta_N)^{1/2}, this is the semilinear problem with
sqrt(eps) = D2/a.  The mean constraint then fixes beta.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .domain import NodalField, RectDomain, SpectralField, to_nodal
from .operators import frac_apply
from .semilinear import Nonlinearity, SolutionReport

__all__ = ["KSParams", "KSState", "keller_segel_reconstruct", "spectral_gradient", "MAPPINGS"]

MAPPINGS = ("squared", "linear")


@dataclass(frozen=True)
class KSParams:
    """Coefficients D1, D2, chi, a, b and the prescribed mean of rho.

    ``mapping`` selects how eps follows from D2/a: ``"squared"`` uses
    eps = (D2/a)^2, which makes the chemical equation hold exactly, and
    ``"linear"`` uses eps = D2/a.
    """

    D1: float
    D2: float
    chi: float
    a: float
    b: float
    mean: float
    mapping: str = "squared"

    def __post_init__(self):
        for name in ("D1", "D2", "chi", "a", "b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.mean > 0:
            raise ValueError("the prescribed mean of rho must be positive")
        if self.mapping not in MAPPINGS:
            raise ValueError(f"mapping must be one of {MAPPINGS}")

    @property
    def p(self) -> float:
        return self.chi / self.D1

    @property
    def eps(self) -> float:
        r = self.D2 / self.a
        return r * r if self.mapping == "squared" else r

    def check_exponent(self, n: int):
        upper = (n + 1) / (n - 1) if n > 1 else math.inf
        if not 1 < self.p < upper:
            raise ValueError(f"chi/D1 = {self.p} outside (1, {upper})")


@dataclass(frozen=True, eq=False)
class KSState:
    rho: NodalField
    c: NodalField
    lam: float
    beta: float
    chemical_residual: float
    flux_residual: float
    rho_coeffs: SpectralField
    c_coeffs: SpectralField


def spectral_gradient(u: SpectralField) -> list:
    """Exact gradient of the cosine series of ``u`` at the grid nodes, one array per axis."""
    d = u.domain
    if not isinstance(d, RectDomain):
        raise TypeError("spectral gradients need a box domain")
    cos_mats, sin_mats = [], []
    for axis in range(d.n):
        L = d.lengths[axis]
        x = d.nodes(axis)
        K = d.cutoffs[axis]
        k = np.arange(K)[:, None]
        norm = np.where(k == 0, math.sqrt(1.0 / L), math.sqrt(2.0 / L))
        cos_mats.append(norm * np.cos(np.pi * k * x[None, :] / L))
        sin_mats.append(-norm * (np.pi * k / L) * np.sin(np.pi * k * x[None, :] / L))
    grads = []
    for axis in range(d.n):
        out = u.coeffs
        # contract each spectral axis with its basis; the result keeps axis order
        for j in range(d.n):
            M = sin_mats[j] if j == axis else cos_mats[j]
            out = np.tensordot(out, M, axes=([0], [0]))
        grads.append(out)
    return grads


def keller_segel_reconstruct(report: SolutionReport, ks: KSParams, oversample: int = 2,
                             check_eps: bool = True) -> KSState:
    """Build (rho, c) from a solution ``u`` of the semilinear problem.

    ``chemical_residual`` is the L2 norm of D2 (-Delta_N)^{1/2} c + a c - b rho
    in the retained modes.  ``flux_residual`` is the largest value of
    |D1 grad rho - chi rho grad log c| at the nodes divided by the largest
    |D1 grad rho|, so that it measures round-off rather than the size of c.
    """
    u = report.u
    d = u.domain
    ks.check_exponent(d.n)
    if not math.isclose(report.p, ks.p, rel_tol=1e-12):
        raise ValueError(f"solution exponent {report.p} does not match chi/D1 = {ks.p}")
    if check_eps and not math.isclose(report.eps, ks.eps, rel_tol=1e-12):
        raise ValueError(f"solution eps {report.eps} does not match the {ks.mapping} "
                         f"mapping eps = {ks.eps}")
    p = ks.p
    nl = Nonlinearity(d, p, oversample)
    g = nl.g(u)
    g_mean = g.mean
    if not g_mean > 0:
        raise ValueError("the mean constraint cannot be met: u_+^p has zero mean")
    beta = ks.b * ks.mean / (ks.a * g_mean)
    lam = (ks.a / ks.b) * beta ** (1 - p)

    c_coeffs = u * beta
    rho_coeffs = g * (lam * beta ** p)
    chem = (frac_apply(c_coeffs, 1.0, 0.5) * ks.D2 + c_coeffs * ks.a - rho_coeffs * ks.b)
    chemical_residual = chem.norm()

    c_nodal = to_nodal(c_coeffs)
    cv = c_nodal.values
    if np.any(cv <= 0):
        raise ValueError("c must be positive for the flux identity")
    rho_nodal = NodalField(d, lam * cv ** p)
    grads = spectral_gradient(c_coeffs)
    flux = 0.0
    scale = 0.0
    for gc in grads:
        drho = lam * p * cv ** (p - 1) * gc
        term = ks.D1 * drho - ks.chi * rho_nodal.values * gc / cv
        flux = max(flux, float(np.max(np.abs(term))))
        scale = max(scale, float(np.max(np.abs(ks.D1 * drho))))
    flux_residual = flux / scale if scale > 0 else flux
    return KSState(rho=rho_nodal, c=c_nodal, lam=lam, beta=beta,
                   chemical_residual=chemical_residual, flux_residual=flux_residual,
                   rho_coeffs=rho_coeffs, c_coeffs=c_coeffs)


def linear_mapping_mismatch(report: SolutionReport, ks: KSParams, beta: float) -> float:
    """Predicted chemical residual a beta |D2/a - sqrt(eps)| ||(-Delta_N)^{1/2} u|| when eps != (D2/a)^2."""
    r = ks.D2 / ks.a
    return ks.a * beta * abs(r - math.sqrt(report.eps)) * frac_apply(report.u, 1.0, 0.5).norm()
