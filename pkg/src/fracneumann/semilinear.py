"""Least-energy solutions of (-eps Delta_N)^{1/2} u + u = u_+^p.

The energy

    I(u) = 1/2 ||u||_eps^2 - 1/(p+1) int u_+^{p+1}

is minimized over the Nehari set {||u||_eps^2 = int u_+^{p+1}} by a projected
gradient descent in the H_eps metric, started from a scaled tent.  A Newton
iteration on the Euler-Lagrange residual then polishes the critical point.
For a pure power the Nehari minimum is the mountain-pass level.

The nonlinearity is evaluated on a grid refined by ``oversample`` and projected
back onto the retained modes; energy, residual and Jacobian all use this same
discrete map, so the discrete gradient is exact.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .domain import NodalField, RectDomain, SpectralField, build_domain, to_nodal, to_spectral
from .operators import h_eps_norm_sq

__all__ = [
    "SemilinearConfig",
    "SolutionReport",
    "SolverError",
    "Nonlinearity",
    "energy",
    "euler_lagrange_residual",
    "grad_energy",
    "nehari_scale",
    "nehari_defect",
    "tent_initializer",
    "path_level",
    "solve",
    "perturbed_restart_scan",
]

log = logging.getLogger(__name__)

DENSE_JACOBIAN_LIMIT = 4096


class SolverError(RuntimeError):
    """Descent or Newton failure; ``report`` carries the partial diagnostics."""

    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


@dataclass
class SemilinearConfig:
    eps: float = 0.01
    p: float = 2.0
    lengths: tuple = (1.0, 1.0)
    grid: tuple = (128, 128)
    cutoffs: tuple | None = None
    step: float = 0.5
    descent_tol: float = 1e-10
    newton_tol: float = 1e-10
    max_descent: int = 5000
    max_newton: int = 40
    oversample: int = 2
    center: tuple | None = None
    seed: int = 0
    perturbation: float = 0.0
    perturbation_band: int = 4
    constancy_tol: float = 1e-6

    def __post_init__(self):
        self.lengths = tuple(float(x) for x in self.lengths)
        n = len(self.lengths)
        self.grid = tuple(int(x) for x in (self.grid if len(self.grid) == n else (self.grid[0],) * n))
        if self.cutoffs is not None:
            self.cutoffs = tuple(int(x) for x in self.cutoffs)
        if self.center is not None:
            self.center = tuple(float(x) for x in self.center)
        if not self.eps > 0:
            raise ValueError(f"epsilon must be positive, got {self.eps}")
        upper = (n + 1) / (n - 1) if n > 1 else math.inf
        if not 1 < self.p < upper:
            raise ValueError(f"exponent p={self.p} outside the subcritical range (1, {upper})")
        if not 0 < self.step <= 1:
            raise ValueError("descent step must lie in (0, 1]")
        if self.oversample < 1:
            raise ValueError("oversample must be >= 1")

    @property
    def n(self) -> int:
        return len(self.lengths)

    def build_domain(self) -> RectDomain:
        return build_domain(self.n, self.lengths, self.grid, self.cutoffs)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key, value in d.items():
            if isinstance(value, tuple):
                d[key] = list(value)
        return d


@dataclass
class SolutionReport:
    u: SpectralField
    eps: float
    p: float
    energy: float
    residual: float
    nehari_defect: float
    norm_sq: float
    sup: float
    inf: float
    is_constant: bool
    descent_iterations: int
    newton_iterations: int
    wall_time: float
    path_level: float = math.nan
    residual_history: list = field(default_factory=list)
    newton_tol: float = 1e-10
    message: str = ""

    @property
    def relative_nehari_defect(self) -> float:
        return self.nehari_defect / self.norm_sq if self.norm_sq > 0 else math.inf

    @property
    def accepted(self) -> bool:
        return (self.residual < self.newton_tol and self.relative_nehari_defect < 1e-8
                and self.inf > 0)

    def summary(self) -> dict:
        return {
            "eps": self.eps, "p": self.p, "energy": self.energy, "residual": self.residual,
            "nehari_defect": self.nehari_defect,
            "relative_nehari_defect": self.relative_nehari_defect, "norm_sq": self.norm_sq,
            "sup": self.sup, "inf": self.inf, "is_constant": self.is_constant,
            "descent_iterations": self.descent_iterations,
            "newton_iterations": self.newton_iterations, "wall_time": self.wall_time,
            "path_level": self.path_level, "accepted": self.accepted, "message": self.message,
        }


class Nonlinearity:
    """g(t) = t_+^p evaluated on an oversampled grid and projected to modes."""

    def __init__(self, domain, p: float, oversample: int = 2):
        self.domain = domain
        self.p = float(p)
        self.fine = domain.refine(oversample)

    def sample(self, u: SpectralField) -> np.ndarray:
        return self.fine.synthesize(u.coeffs)

    def project(self, values: np.ndarray) -> np.ndarray:
        return self.fine.analyze(values)

    def g(self, u: SpectralField, fine_values: np.ndarray | None = None) -> SpectralField:
        v = self.sample(u) if fine_values is None else fine_values
        return SpectralField(u.domain, self.project(np.maximum(v, 0.0) ** self.p))

    def power_integral(self, u: SpectralField, fine_values: np.ndarray | None = None) -> float:
        """int u_+^{p+1} on the fine grid."""
        v = self.sample(u) if fine_values is None else fine_values
        return float(np.sum(np.maximum(v, 0.0) ** (self.p + 1))) * self.fine.cell_volume

    def jacobian_weight(self, fine_values: np.ndarray) -> np.ndarray:
        return self.p * np.maximum(fine_values, 0.0) ** (self.p - 1)


def _nl(u, p, oversample):
    return Nonlinearity(u.domain, p, oversample)


def _symbol(domain, eps):
    return 1.0 + np.sqrt(eps * domain.eigenvalues)


def energy(u: SpectralField, eps: float, p: float, oversample: int = 2) -> float:
    """I_eps(u) = 1/2 ||u||_eps^2 - 1/(p+1) int u_+^{p+1}."""
    return 0.5 * h_eps_norm_sq(u, eps) - _nl(u, p, oversample).power_integral(u) / (p + 1)


def euler_lagrange_residual(u: SpectralField, eps: float, p: float,
                            oversample: int = 2) -> SpectralField:
    """R(u) = (-eps Delta_N)^{1/2} u + u - P[u_+^p]; also the L2 gradient of I."""
    return SpectralField(u.domain, _symbol(u.domain, eps) * u.coeffs
                         - _nl(u, p, oversample).g(u).coeffs)


def grad_energy(u: SpectralField, eps: float, p: float, oversample: int = 2) -> SpectralField:
    """Gradient of I in the H_eps inner product: u - K[g(u)], K = (1 + (-eps Delta)^{1/2})^{-1}."""
    g = _nl(u, p, oversample).g(u)
    return SpectralField(u.domain, u.coeffs - g.coeffs / _symbol(u.domain, eps))


def h_eps_inner(u: SpectralField, w: SpectralField, eps: float) -> float:
    return float(np.sum(_symbol(u.domain, eps) * u.coeffs * w.coeffs))


def nehari_scale(u: SpectralField, eps: float, p: float, oversample: int = 2) -> float:
    """t* with ||t* u||_eps^2 = int (t* u)_+^{p+1}."""
    mass = _nl(u, p, oversample).power_integral(u)
    if not mass > 0:
        raise ValueError("u_+ vanishes identically; cannot project onto the Nehari set")
    return (h_eps_norm_sq(u, eps) / mass) ** (1.0 / (p - 1))


def nehari_defect(u: SpectralField, eps: float, p: float, oversample: int = 2) -> float:
    return abs(h_eps_norm_sq(u, eps) - _nl(u, p, oversample).power_integral(u))


def path_level(u: SpectralField, eps: float, p: float, oversample: int = 2) -> float:
    """max_{t >= 0} I(t u): the mountain-pass height along the ray through u."""
    a = h_eps_norm_sq(u, eps)
    b = _nl(u, p, oversample).power_integral(u)
    if not b > 0:
        return math.inf
    t2 = (a / b) ** (2.0 / (p - 1))
    return (0.5 - 1.0 / (p + 1)) * a * t2


def default_center(domain) -> tuple:
    """The corner x = 0, where a single boundary spike carries the least energy."""
    return (0.0,) * domain.n


def tent_initializer(domain: RectDomain, eps: float, center=None) -> SpectralField:
    """eps^{-n/2} (1 - eps^{-1/2} |x - center|)_+ sampled on the grid and projected.

    Parts of the tent outside the box are simply not sampled.
    """
    center = default_center(domain) if center is None else tuple(center)
    r2 = sum((X - c) ** 2 for X, c in zip(domain.mesh, center))
    values = eps ** (-domain.n / 2) * np.maximum(1.0 - np.sqrt(r2 / eps), 0.0)
    if not np.any(values > 0):
        raise ValueError("tent support contains no grid node; refine the grid or increase eps")
    return to_spectral(NodalField(domain, values))


class _Problem:
    """Cached discrete maps for one (domain, eps, p)."""

    def __init__(self, domain, eps, p, oversample):
        self.domain = domain
        self.eps = eps
        self.p = p
        self.nl = Nonlinearity(domain, p, oversample)
        self.sym = _symbol(domain, eps)

    def field(self, c):
        return SpectralField(self.domain, c)

    def norm_sq(self, c):
        return float(np.sum(self.sym * c * c))

    def residual(self, c, fine=None):
        u = self.field(c)
        fine = self.nl.sample(u) if fine is None else fine
        return self.sym * c - self.nl.g(u, fine).coeffs

    def project_nehari(self, c):
        u = self.field(c)
        mass = self.nl.power_integral(u)
        if not mass > 0:
            return None
        return c * (self.norm_sq(c) / mass) ** (1.0 / (self.p - 1))

    def nehari_energy(self, c):
        return (0.5 - 1.0 / (self.p + 1)) * self.norm_sq(c)

    def jacobian_operator(self, c):
        u = self.field(c)
        weight = self.nl.jacobian_weight(self.nl.sample(u))
        shape = self.domain.spectral_shape
        size = int(np.prod(shape))

        def matvec(w):
            w = np.asarray(w).reshape(shape)
            fw = self.nl.sample(self.field(w))
            return (self.sym * w - self.nl.project(weight * fw)).ravel()

        return LinearOperator((size, size), matvec=matvec, dtype=float), weight

    def dense_jacobian(self, c, chunk=256):
        """Assemble J column blocks with batched transforms."""
        shape = self.domain.spectral_shape
        size = int(np.prod(shape))
        weight = self.nl.jacobian_weight(self.nl.sample(self.field(c)))
        J = np.diag(self.sym.ravel()).astype(float)
        for start in range(0, size, chunk):
            stop = min(size, start + chunk)
            block = np.zeros((stop - start, size))
            block[np.arange(stop - start), np.arange(start, stop)] = 1.0
            fine = self.nl.fine.synthesize(block.reshape((stop - start,) + shape))
            J[:, start:stop] -= self.nl.project(weight * fine).reshape(stop - start, size).T
        return J


def _descent(prob: _Problem, c, step, tol, max_iter):
    c = prob.project_nehari(c)
    if c is None:
        raise SolverError("initial guess has no positive part")
    E = prob.nehari_energy(c)
    history = [E]
    it = 0
    for it in range(1, max_iter + 1):
        u = prob.field(c)
        grad = c - prob.nl.g(u).coeffs / prob.sym
        tau = step
        while True:
            cand = prob.project_nehari(c - tau * grad)
            if cand is not None:
                Ec = prob.nehari_energy(cand)
                if Ec <= E:
                    break
            tau *= 0.5
            if tau < 1e-12:
                cand = None
                break
        if cand is None:
            if prob.nl.power_integral(prob.field(c)) <= 0:
                raise SolverError("descent stagnated at u_+ = 0")
            break
        drop = E - Ec
        c, E = cand, Ec
        history.append(E)
        if drop <= tol * max(abs(E), 1e-300):
            break
    return c, it, history


def _newton(prob: _Problem, c, tol, max_iter):
    size = int(np.prod(prob.domain.spectral_shape))
    R = prob.residual(c)
    rnorm = float(np.linalg.norm(R))
    history = [rnorm]
    it = 0
    precond = LinearOperator((size, size), matvec=lambda r: (np.asarray(r).reshape(prob.sym.shape) / prob.sym).ravel(),
                             dtype=float)
    while rnorm >= tol and it < max_iter:
        it += 1
        if size <= DENSE_JACOBIAN_LIMIT:
            delta = np.linalg.solve(prob.dense_jacobian(c), -R.ravel())
        else:
            op, _ = prob.jacobian_operator(c)
            delta, info = gmres(op, -R.ravel(), rtol=min(1e-3, 0.1 * rnorm) if rnorm > 1e-6 else 1e-12,
                                atol=0.0, restart=60, maxiter=20, M=precond)
        delta = delta.reshape(c.shape)
        lam = 1.0
        while True:
            trial = c + lam * delta
            Rt = prob.residual(trial)
            rt = float(np.linalg.norm(Rt))
            if rt < rnorm:
                break
            lam *= 0.5
            if lam < 1e-6:
                raise SolverError(f"Newton stalled at residual {rnorm:.3e}")
        c, R, rnorm = trial, Rt, rt
        history.append(rnorm)
    return c, it, history


def _report(prob: _Problem, c, n_desc, n_newton, t0, history, newton_tol, constancy_tol, ray):
    u = prob.field(c)
    nodal = to_nodal(u).values
    fine = prob.nl.sample(u)
    norm_sq = prob.norm_sq(c)
    mass = prob.nl.power_integral(u, fine)
    sup = float(max(nodal.max(), fine.max()))
    inf = float(min(nodal.min(), fine.min()))
    mean = u.mean
    is_const = float(np.max(np.abs(nodal - mean))) < constancy_tol * max(1.0, sup)
    E = 0.5 * norm_sq - mass / (prob.p + 1)
    return SolutionReport(
        u=u, eps=prob.eps, p=prob.p, energy=E,
        residual=float(np.linalg.norm(prob.residual(c, fine))),
        nehari_defect=abs(norm_sq - mass), norm_sq=norm_sq, sup=sup, inf=inf,
        is_constant=bool(is_const), descent_iterations=n_desc, newton_iterations=n_newton,
        wall_time=time.perf_counter() - t0, path_level=ray, residual_history=history,
        newton_tol=newton_tol)


def solve(config: SemilinearConfig, domain=None, initial: SpectralField | None = None) -> SolutionReport:
    """Nehari descent from the tent (or ``initial``), then Newton on R(u) = 0."""
    t0 = time.perf_counter()
    domain = config.build_domain() if domain is None else domain
    prob = _Problem(domain, config.eps, config.p, config.oversample)
    if initial is None:
        initial = tent_initializer(domain, config.eps, config.center)
        if config.perturbation:
            initial = initial + _perturbation(domain, initial, config)
    ray = path_level(initial, config.eps, config.p, config.oversample)
    c, n_desc, _ = _descent(prob, initial.coeffs.copy(), config.step, config.descent_tol,
                            config.max_descent)
    try:
        c, n_newton, hist = _newton(prob, c, config.newton_tol, config.max_newton)
    except SolverError as err:
        err.report = _report(prob, c, n_desc, -1, t0, [], config.newton_tol,
                             config.constancy_tol, ray)
        raise
    report = _report(prob, c, n_desc, n_newton, t0, hist, config.newton_tol,
                     config.constancy_tol, ray)
    if report.residual >= config.newton_tol:
        report.message = f"Newton stopped at residual {report.residual:.3e}"
    elif report.inf <= 0:
        report.message = "converged to a critical point with nonpositive minimum"
    log.info("eps=%g p=%g energy=%.6e residual=%.2e const=%s (%d descent, %d Newton, %.2fs)",
             config.eps, config.p, report.energy, report.residual, report.is_constant,
             n_desc, n_newton, report.wall_time)
    return report


def _perturbation(domain, base: SpectralField, config: SemilinearConfig) -> SpectralField:
    rng = np.random.default_rng(config.seed)
    shape = domain.spectral_shape
    c = np.zeros(shape)
    sl = tuple(slice(0, min(config.perturbation_band, s)) for s in shape)
    c[sl] = rng.standard_normal(c[sl].shape)
    c *= config.perturbation * base.norm() / max(np.linalg.norm(c), 1e-300)
    return SpectralField(domain, c)


def perturbed_restart_scan(config: SemilinearConfig, m_starts: int, domain=None,
                           perturbation: float = 0.5) -> list:
    """Solve from the tent plus ``m_starts`` seeded band-limited perturbations.

    Start ``i`` uses seed ``config.seed + i``; start 0 is the unperturbed tent.
    Failed starts appear as :class:`SolverError` instances in the list.
    """
    if m_starts < 1:
        raise ValueError("need at least one start")
    domain = config.build_domain() if domain is None else domain
    out = []
    for i in range(m_starts):
        cfg = SemilinearConfig(**{**config.to_dict(), "seed": config.seed + i,
                                  "perturbation": 0.0 if i == 0 else perturbation})
        try:
            out.append(solve(cfg, domain))
        except SolverError as err:
            log.warning("start %d failed: %s", i, err)
            out.append(err)
    return out
