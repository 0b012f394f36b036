"""Box domains, their Neumann eigenbasis and the nodal <-> spectral transforms.

On a box ``prod_i (0, L_i)`` the Neumann eigenfunctions are tensor products of
cosines,

    phi_k(x) = prod_i c(k_i) cos(pi k_i x_i / L_i),   c(0) = L^-1/2, c(k) = (2/L)^1/2,

with eigenvalues ``lambda_k = pi^2 sum_i k_i^2 / L_i^2``.  Grid nodes are cell
midpoints ``x_j = L (j + 1/2) / N`` so that the type-II DCT with orthonormal
scaling is exactly the (quadrature) projection onto this basis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import fft

__all__ = [
    "RectDomain",
    "EigenBasisDomain",
    "NodalField",
    "SpectralField",
    "build_domain",
    "to_spectral",
    "to_nodal",
    "quad_integral",
    "mode",
    "sorted_modes",
    "constant",
    "random_bandlimited",
]


@dataclass(frozen=True, eq=False)
class RectDomain:
    """Separable box with a midpoint grid and a truncated cosine eigenbasis."""

    lengths: tuple[float, ...]
    grid: tuple[int, ...]
    cutoffs: tuple[int, ...]

    @property
    def n(self) -> int:
        return len(self.lengths)

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / N for L, N in zip(self.lengths, self.grid))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.cutoffs

    @cached_property
    def _scale(self) -> float:
        # converts orthonormal DCT-II output to L2(Omega) coefficients
        return float(np.prod([math.sqrt(L / N) for L, N in zip(self.lengths, self.grid)]))

    def wavenumbers(self, axis: int) -> np.ndarray:
        """pi k / L_axis for the retained modes along ``axis``."""
        return np.pi * np.arange(self.cutoffs[axis]) / self.lengths[axis]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        lam = np.zeros(self.cutoffs)
        for axis in range(self.n):
            shape = [1] * self.n
            shape[axis] = self.cutoffs[axis]
            lam = lam + (self.wavenumbers(axis) ** 2).reshape(shape)
        lam.setflags(write=False)
        return lam

    @cached_property
    def first_eigenvalue(self) -> float:
        """Smallest nonzero eigenvalue among the retained modes."""
        lam = self.eigenvalues
        return float(lam[lam > 0].min())

    def nodes(self, axis: int) -> np.ndarray:
        L, N = self.lengths[axis], self.grid[axis]
        return L * (np.arange(N) + 0.5) / N

    @cached_property
    def mesh(self) -> tuple[np.ndarray, ...]:
        return tuple(np.meshgrid(*[self.nodes(i) for i in range(self.n)], indexing="ij"))

    def refine(self, factor: int) -> "RectDomain":
        """Same box and modes, grid multiplied by ``factor`` (for dealiasing)."""
        if factor == 1:
            return self
        return RectDomain(self.lengths, tuple(N * factor for N in self.grid), self.cutoffs)

    def eigenfunction(self, k: Sequence[int], points: np.ndarray) -> np.ndarray:
        """Evaluate phi_k at ``points`` of shape (..., n)."""
        points = np.asarray(points, dtype=float)
        out = np.ones(points.shape[:-1])
        for axis, ki in enumerate(k):
            L = self.lengths[axis]
            c = math.sqrt((1.0 if ki == 0 else 2.0) / L)
            out = out * c * np.cos(np.pi * ki * points[..., axis] / L)
        return out

    def axis_basis(self, axis: int, x: np.ndarray, count: int | None = None) -> np.ndarray:
        """1D normalized cosines along ``axis`` evaluated at ``x``: shape (count, len(x))."""
        L = self.lengths[axis]
        count = self.cutoffs[axis] if count is None else count
        k = np.arange(count)[:, None]
        c = np.where(k == 0, math.sqrt(1.0 / L), math.sqrt(2.0 / L))
        return c * np.cos(np.pi * k * np.atleast_1d(x)[None, :] / L)

    # transforms on raw arrays; leading axes beyond the last n are batch axes
    def analyze(self, values: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.n, 0))
        coeffs = fft.dctn(values, type=2, norm="ortho", axes=axes) * self._scale
        keep = (Ellipsis,) + tuple(slice(0, K) for K in self.cutoffs)
        return np.ascontiguousarray(coeffs[keep])

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        axes = tuple(range(-self.n, 0))
        if tuple(self.cutoffs) != tuple(self.grid):
            padded = np.zeros(coeffs.shape[:coeffs.ndim - self.n] + tuple(self.grid))
            padded[(Ellipsis,) + tuple(slice(0, K) for K in self.cutoffs)] = coeffs
        else:
            padded = coeffs
        return fft.idctn(padded, type=2, norm="ortho", axes=axes) / self._scale

    def describe(self) -> dict:
        return {"kind": "box", "lengths": list(self.lengths), "grid": list(self.grid),
                "cutoffs": list(self.cutoffs)}


@dataclass(frozen=True, eq=False)
class EigenBasisDomain:
    """Domain given only by sampled eigenpairs (lambda_k, phi_k) on a grid.

    ``modes`` has shape ``(count, *grid)``; quadrature uses the uniform weight
    ``volume / prod(grid)``.  Nodes outside the physical domain may carry zero
    values in every mode.
    """

    eigenvalues: np.ndarray
    modes: np.ndarray
    volume: float
    lengths: tuple[float, ...] = field(default=())

    @property
    def grid(self) -> tuple[int, ...]:
        return tuple(self.modes.shape[1:])

    @property
    def n(self) -> int:
        return len(self.grid)

    @property
    def cutoffs(self) -> tuple[int, ...]:
        return (self.modes.shape[0],)

    @property
    def spectral_shape(self) -> tuple[int, ...]:
        return self.cutoffs

    @property
    def cell_volume(self) -> float:
        return self.volume / float(np.prod(self.grid))

    @cached_property
    def first_eigenvalue(self) -> float:
        lam = self.eigenvalues
        return float(lam[lam > 1e-12 * max(1.0, lam.max())].min())

    def refine(self, factor: int) -> "EigenBasisDomain":
        if factor != 1:
            raise ValueError("imported eigenbases cannot be resampled; use oversample=1")
        return self

    def analyze(self, values: np.ndarray) -> np.ndarray:
        flat = self.modes.reshape(self.modes.shape[0], -1)
        batch = values.shape[:values.ndim - self.n]
        return (values.reshape(batch + (-1,)) @ flat.T) * self.cell_volume

    def synthesize(self, coeffs: np.ndarray) -> np.ndarray:
        flat = self.modes.reshape(self.modes.shape[0], -1)
        return (coeffs @ flat).reshape(coeffs.shape[:-1] + self.grid)

    def describe(self) -> dict:
        return {"kind": "imported", "grid": list(self.grid), "count": int(self.modes.shape[0]),
                "volume": self.volume}


@dataclass(frozen=True, eq=False)
class NodalField:
    """Grid samples of a function on ``domain``."""

    domain: RectDomain | EigenBasisDomain
    values: np.ndarray

    def __post_init__(self):
        if tuple(np.shape(self.values)) != tuple(self.domain.grid):
            raise ValueError(
                f"nodal values have shape {np.shape(self.values)}, grid is {self.domain.grid}")

    def __add__(self, other):
        return NodalField(self.domain, self.values + _raw(other, NodalField))

    def __sub__(self, other):
        return NodalField(self.domain, self.values - _raw(other, NodalField))

    def __mul__(self, other):
        return NodalField(self.domain, self.values * _raw(other, NodalField))

    __rmul__ = __mul__

    def __neg__(self):
        return NodalField(self.domain, -self.values)

    def norm(self) -> float:
        """Quadrature L2 norm."""
        return math.sqrt(float(np.sum(self.values ** 2)) * self.domain.cell_volume)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients ``u_k = <u, phi_k>`` on the retained eigenbasis."""

    domain: RectDomain | EigenBasisDomain
    coeffs: np.ndarray

    def __post_init__(self):
        if tuple(np.shape(self.coeffs)) != tuple(self.domain.spectral_shape):
            raise ValueError(
                f"coefficients have shape {np.shape(self.coeffs)}, "
                f"expected {self.domain.spectral_shape}")

    def __add__(self, other):
        return SpectralField(self.domain, self.coeffs + _raw(other, SpectralField))

    def __sub__(self, other):
        return SpectralField(self.domain, self.coeffs - _raw(other, SpectralField))

    def __mul__(self, other):
        return SpectralField(self.domain, self.coeffs * _raw(other, SpectralField))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return SpectralField(self.domain, self.coeffs / _raw(other, SpectralField))

    def __neg__(self):
        return SpectralField(self.domain, -self.coeffs)

    @property
    def mean(self) -> float:
        """Integral average u_Omega = u_0 / sqrt(|Omega|)."""
        return float(self.coeffs.flat[0]) / math.sqrt(self.domain.volume)

    def zero_mean(self) -> "SpectralField":
        c = self.coeffs.copy()
        c.flat[0] = 0.0
        return SpectralField(self.domain, c)

    def norm(self) -> float:
        """L2 norm via Parseval."""
        return float(np.sqrt(np.sum(self.coeffs ** 2)))

    def dot(self, other: "SpectralField") -> float:
        return float(np.sum(self.coeffs * other.coeffs))


def _raw(other, cls):
    if isinstance(other, cls):
        return other.coeffs if cls is SpectralField else other.values
    return other


def build_domain(n: int = 2, lengths: Sequence[float] | float = 1.0,
                 grid_sizes: Sequence[int] | int = 128,
                 cutoffs: Sequence[int] | int | None = None) -> RectDomain:
    """Build a box domain ``prod (0, L_i)`` with an N_i-point midpoint grid per axis."""
    if n < 1:
        raise ValueError("dimension must be >= 1")

    def _expand(value, name):
        if np.isscalar(value):
            return (value,) * n
        value = tuple(value)
        if len(value) != n:
            raise ValueError(f"{name} has {len(value)} entries for dimension {n}")
        return value

    lengths = tuple(float(L) for L in _expand(lengths, "lengths"))
    grid = tuple(int(N) for N in _expand(grid_sizes, "grid_sizes"))
    cutoffs = grid if cutoffs is None else tuple(int(K) for K in _expand(cutoffs, "cutoffs"))
    if any(not (L > 0 and math.isfinite(L)) for L in lengths):
        raise ValueError(f"side lengths must be positive, got {lengths}")
    if any(N < 2 for N in grid):
        raise ValueError(f"grid sizes must be >= 2, got {grid}")
    if any(K < 1 or K > N for K, N in zip(cutoffs, grid)):
        raise ValueError(f"cutoffs must satisfy 1 <= K <= N, got {cutoffs} for grid {grid}")
    return RectDomain(lengths, grid, cutoffs)


def to_spectral(f: NodalField) -> SpectralField:
    return SpectralField(f.domain, f.domain.analyze(f.values))


def to_nodal(u: SpectralField) -> NodalField:
    return NodalField(u.domain, u.domain.synthesize(u.coeffs))


def quad_integral(f: NodalField, q: float = 1.0) -> float:
    """Midpoint-rule integral of ``f**q``.

    Integer ``q`` uses the signed power; non-integer ``q`` integrates the
    positive part ``max(f, 0)**q``.
    """
    if not q > 0:
        raise ValueError("exponent must be positive")
    v = f.values
    if float(q).is_integer():
        integrand = v ** int(q)
    else:
        integrand = np.maximum(v, 0.0) ** q
    return float(np.sum(integrand)) * f.domain.cell_volume


def mode(domain, k: Sequence[int] | int, amplitude: float = 1.0) -> SpectralField:
    """The eigenfunction phi_k as a spectral field."""
    c = np.zeros(domain.spectral_shape)
    c[tuple(np.atleast_1d(k))] = amplitude
    return SpectralField(domain, c)


def constant(domain, value: float) -> SpectralField:
    return mode(domain, (0,) * len(domain.spectral_shape), value * math.sqrt(domain.volume))


def sorted_modes(domain: RectDomain, count: int) -> list[tuple[int, ...]]:
    """The ``count`` retained multi-indices with smallest eigenvalue (ties by index)."""
    lam = domain.eigenvalues
    order = np.lexsort((np.arange(lam.size), lam.ravel()))[:count]
    return [tuple(int(i) for i in np.unravel_index(j, lam.shape)) for j in order]


def random_bandlimited(domain, band: int | Sequence[int], rng: np.random.Generator,
                       decay: float = 0.0) -> SpectralField:
    """Random field with normal coefficients on modes ``k_i < band``.

    ``decay`` damps coefficient k by ``(1 + lambda_k)**(-decay)`` for smoother draws.
    """
    shape = domain.spectral_shape
    band = (band,) * len(shape) if np.isscalar(band) else tuple(band)
    c = np.zeros(shape)
    sl = tuple(slice(0, min(b, s)) for b, s in zip(band, shape))
    c[sl] = rng.standard_normal(c[sl].shape)
    if decay:
        c = c * (1.0 + domain.eigenvalues) ** (-decay)
    return SpectralField(domain, c)
