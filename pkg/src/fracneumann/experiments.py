"""Sweeps over eps and the diagnostics computed on each solution.

A sweep solves the semilinear problem once per eps and condenses every
solution into a :class:`SweepRecord`.  The fitting helpers then turn a list
of records into slopes and two-sided bands; they never assert a specific
constant because the bounds they probe hold only up to unknown constants.
"""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .domain import NodalField, SpectralField, to_nodal
from .semilinear import SemilinearConfig, SolutionReport, SolverError, perturbed_restart_scan, solve

__all__ = [
    "SweepRecord",
    "FitResult",
    "THREADS_ENV",
    "resolved_grid",
    "run_sweep",
    "record_from_report",
    "energy_scaling_fit",
    "lq_scaling",
    "measure_decay",
    "cube_cover",
    "harnack_ratio",
    "moser_chain",
    "uniform_bound_report",
    "epsilon_star_estimate",
    "locate_transition",
    "level_thresholds",
    "fitted_constants",
]

log = logging.getLogger(__name__)

THREADS_ENV = "FRACNEUMANN_THREADS"

#: grid cells per sqrt(eps) below which the sweep refines the grid
CELLS_PER_SPIKE = 8


@dataclass
class SweepRecord:
    eps: float
    energy: float
    mass_p1: float
    lq: dict
    sup: float
    inf: float
    measures: dict
    cubes: int
    harnack: list
    is_constant: bool
    residual: float
    seed: int
    grid: tuple = ()
    nehari_defect: float = math.nan
    failed: str = ""
    u: SpectralField | None = field(default=None, repr=False, compare=False)

    @property
    def ok(self) -> bool:
        return not self.failed


# ---------------------------------------------------------------- sweep

def resolved_grid(eps: float, grid, lengths, cells: int = CELLS_PER_SPIKE, multiple: int = 32):
    """Raise each grid size so that sqrt(eps) spans at least ``cells`` cells."""
    out = []
    for N, L in zip(grid, lengths):
        need = math.ceil(cells * L / math.sqrt(eps))
        if need > N:
            N = multiple * math.ceil(need / multiple)
        out.append(int(N))
    return tuple(out)


def _level_sets(values: np.ndarray, cell: float, etas) -> dict:
    return {float(eta): float(np.count_nonzero(values > eta) * cell) for eta in etas}


def record_from_report(report: SolutionReport, seed: int = 0, q_list=(1.0, 2.0),
                       etas=(), harnack_radii=(0.5, 1.0, 2.0)) -> SweepRecord:
    """Condense a solution into the per-eps metrics."""
    u = report.u
    d = u.domain
    nodal = to_nodal(u)
    vals = nodal.values
    pos = np.maximum(vals, 0.0)
    cell = d.cell_volume
    lq = {float(q): float(np.sum(pos ** q) * cell) for q in q_list}
    mass = float(np.sum(pos ** (report.p + 1)) * cell)
    l = math.sqrt(report.eps)
    try:
        cubes = cube_cover(nodal, report.eps, etas[0]) if etas else -1
    except ValueError:
        cubes = -1
    peak = tuple(np.asarray(m).ravel()[int(np.argmax(vals))] for m in d.mesh)
    harnack = harnack_ratio(nodal, report.eps, report.p, [peak], [r * l for r in harnack_radii])
    return SweepRecord(
        eps=report.eps, energy=report.energy, mass_p1=mass, lq=lq, sup=report.sup,
        inf=report.inf, measures=_level_sets(vals, cell, etas), cubes=cubes,
        harnack=harnack, is_constant=report.is_constant, residual=report.residual,
        seed=seed, grid=tuple(d.grid), nehari_defect=report.relative_nehari_defect, u=u)


def _failed_record(eps, seed, grid, message) -> SweepRecord:
    nan = math.nan
    return SweepRecord(eps=eps, energy=nan, mass_p1=nan, lq={}, sup=nan, inf=nan,
                       measures={}, cubes=-1, harnack=[], is_constant=False, residual=nan,
                       seed=seed, grid=tuple(grid), failed=message)


def _thread_count(threads):
    if threads is not None:
        return max(1, int(threads))
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def level_thresholds(records, factors=(0.25, 0.5)) -> tuple:
    """eta values as fractions of the smallest sup over the nonconstant records."""
    sups = [r.sup for r in records if r.ok and not r.is_constant]
    if not sups:
        return tuple(factors)
    return tuple(f * min(sups) for f in factors)


def run_sweep(eps_list, base_config: SemilinearConfig | None = None, q_list=(1.0, 2.0),
              eta_factors=(0.25, 0.5), etas=None, threads: int | None = None,
              refine: bool = True) -> list:
    """Solve once per eps and return the records sorted by eps.

    The grid of ``base_config`` is refined per eps so that sqrt(eps) covers at
    least eight grid cells.  Level-set thresholds default to ``eta_factors``
    times the smallest sup over the sweep, so the metrics are computed after
    all solves finish.  Solver failures become records with ``failed`` set.
    """
    base = SemilinearConfig() if base_config is None else base_config
    eps_list = sorted(float(e) for e in eps_list)
    if not eps_list or any(not e > 0 for e in eps_list):
        raise ValueError("eps list must be nonempty and positive")

    def one(eps):
        grid = resolved_grid(eps, base.grid, base.lengths) if refine else base.grid
        cfg = replace(base, eps=eps, grid=grid)
        try:
            return solve(cfg)
        except SolverError as err:
            log.warning("eps=%g failed: %s", eps, err)
            return err

    n_threads = _thread_count(threads)
    if n_threads == 1:
        results = [one(e) for e in eps_list]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(one, eps_list))

    reports = [r for r in results if isinstance(r, SolutionReport)]
    if etas is None:
        sups = [r.sup for r in reports if not r.is_constant]
        etas = tuple(f * min(sups) for f in eta_factors) if sups else tuple(eta_factors)
    records = []
    for eps, res in zip(eps_list, results):
        if isinstance(res, SolutionReport):
            records.append(record_from_report(res, base.seed, q_list + (base.p + 1,), etas))
        else:
            grid = resolved_grid(eps, base.grid, base.lengths) if refine else base.grid
            records.append(_failed_record(eps, base.seed, grid, str(res)))
    return records


# ---------------------------------------------------------------- fits

@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    residual: float
    count: int


def _loglog_fit(x, y) -> FitResult:
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.vstack([lx, np.ones_like(lx)]).T
    coef, *_ = np.linalg.lstsq(A, ly, rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - ly) ** 2)))
    return FitResult(float(coef[0]), float(coef[1]), resid, len(lx))


def _nonconstant(records):
    return [r for r in records if r.ok and not r.is_constant]


def energy_scaling_fit(records) -> FitResult:
    """Least-squares slope of log I_eps against log eps over the nonconstant records."""
    recs = _nonconstant(records)
    if len(recs) < 4:
        raise ValueError(f"need at least 4 nonconstant records, got {len(recs)}")
    return _loglog_fit([r.eps for r in recs], [r.energy for r in recs])


def _drift(eps, ratios):
    """Flag a monotone trend whose total change exceeds 10x per decade of eps."""
    if len(ratios) < 2:
        return False
    d = np.diff(np.log(ratios))
    monotone = bool(np.all(d > 0) or np.all(d < 0))
    decades = max(math.log10(max(eps) / min(eps)), 1e-12)
    return monotone and abs(math.log10(ratios[-1] / ratios[0])) / decades > 1.0


def lq_scaling(records, q: float, n: int = 2) -> dict:
    """Band of int u^q / eps^{n/2} (q >= 1) or int u^q / eps^{nq/2} (0 < q < 1).

    Returns ``min``, ``max``, ``width`` (max/min) and the ``drift`` flag.
    """
    if not q > 0:
        raise ValueError("q must be positive")
    recs = _nonconstant(records)
    eps, ratios = [], []
    for r in recs:
        if float(q) in r.lq:
            val = r.lq[float(q)]
        elif r.u is not None:
            u = to_nodal(r.u).values
            val = float(np.sum(np.maximum(u, 0) ** q) * r.u.domain.cell_volume)
        else:
            continue
        power = n / 2 if q >= 1 else n * q / 2
        eps.append(r.eps)
        ratios.append(val / r.eps ** power)
    if not ratios:
        raise ValueError("no nonconstant records")
    lo, hi = min(ratios), max(ratios)
    return {"min": lo, "max": hi, "width": hi / lo, "drift": _drift(eps, ratios)}


def measure_decay(records, eta: float) -> FitResult:
    """Slope of log |{u > eta}| against log eps over the nonconstant records."""
    recs = _nonconstant(records)
    eps, meas = [], []
    empty = []
    for r in recs:
        m = r.measures.get(float(eta))
        if m is None and r.u is not None:
            nodal = to_nodal(r.u)
            m = float(np.count_nonzero(nodal.values > eta) * r.u.domain.cell_volume)
        if m is None:
            continue
        if m <= 0:
            empty.append(r.eps)
            continue
        eps.append(r.eps)
        meas.append(m)
    if empty:
        raise ValueError(f"empty level set {{u > {eta}}} at eps = {empty}")
    if len(eps) < 2:
        raise ValueError("need at least two nonconstant records")
    return _loglog_fit(eps, meas)


# ---------------------------------------------------------------- geometry

def cube_cover(u: NodalField, eps: float, eta: float, min_cells: float = 2.0) -> int:
    """Number of cubes of side sqrt(eps) centered on the lattice sqrt(eps) Z^n meeting {u > eta}.

    A grid node belongs to the cube whose center is nearest.  Refuses when
    sqrt(eps) spans fewer than ``min_cells`` grid cells along some axis.
    """
    l = math.sqrt(eps)
    d = u.domain
    if any(l < min_cells * h for h in d.spacing):
        raise ValueError(f"sqrt(eps)={l:.3g} is below {min_cells} grid spacings "
                         f"({max(d.spacing):.3g}); refine the grid")
    mask = u.values > eta
    if not mask.any():
        return 0
    idx = [np.rint(m[mask] / l).astype(np.int64) for m in d.mesh]
    return int(np.unique(np.stack(idx, axis=-1), axis=0).shape[0])


def harnack_ratio(u: NodalField, eps: float, p: float, centers, radii) -> list:
    """sup/inf of u over B(x0, R) for every center and radius.

    Each entry is a dict with the center, radius, ratio and the controlling
    parameter R (||c||_inf / eps)^{1/2}, with c = 1 - u^{p-1}.
    """
    d = u.domain
    vals = u.values
    c_inf = float(np.max(np.abs(1.0 - np.maximum(vals, 0.0) ** (p - 1))))
    out = []
    for x0 in centers:
        r2 = sum((m - c) ** 2 for m, c in zip(d.mesh, x0))
        for R in np.atleast_1d(radii):
            ball = vals[r2 <= R * R]
            if ball.size == 0:
                raise ValueError(f"ball B({tuple(x0)}, {R}) contains no grid node")
            lo = float(ball.min())
            ratio = float(ball.max()) / lo if lo > 0 else math.inf
            out.append({"center": tuple(float(c) for c in x0), "radius": float(R),
                        "ratio": ratio, "control": float(R) * math.sqrt(c_inf / eps)})
    return out


def moser_chain(u: NodalField, eps: float, p: float, j_max: int = 6) -> dict:
    """Exponent chain with p - 1 + 2 s_0 = nu and p - 1 + 2 s_{j+1} = nu s_j.

    Integrals are accumulated in log form to avoid overflow.  Returned keys:
    ``s`` (exponents), ``log_integrals`` (log int u^{p-1+2s_j}),
    ``log_norms`` (log ||u||_{s_j nu}), ``chain_constants`` (the smallest K_j
    with ||u||_{s_j nu}^{2 s_j} <= K_j s_j eps^{-1/2} int u^{p-1+2 s_j}),
    ``scaled_integrals`` (int u^{p-1+2s_j} / eps^{n/2}) and ``truncated``.
    """
    if j_max > 8:
        raise ValueError("j_max must be at most 8")
    d = u.domain
    n = d.n
    if n < 2:
        raise ValueError("the chain needs n >= 2")
    nu = 2 * n / (n - 1)
    vals = np.maximum(u.values, 0.0).ravel()
    if not np.any(vals > 0):
        raise ValueError("u must be positive somewhere")
    logv = np.log(vals[vals > 0])
    logcell = math.log(d.cell_volume)

    def log_int(q):
        a = q * logv
        top = a.max()
        return float(top + math.log(np.sum(np.exp(a - top))) + logcell)

    s = [(nu - p + 1) / 2]
    for _ in range(j_max):
        s.append((nu * s[-1] - p + 1) / 2)
    log_I, log_N, K, scaled = [], [], [], []
    truncated = False
    for sj in s:
        li = log_int(p - 1 + 2 * sj)
        ln = log_int(sj * nu) / (sj * nu)
        if not (math.isfinite(li) and math.isfinite(ln)):
            truncated = True
            break
        log_I.append(li)
        log_N.append(ln)
        # log of ||u||^{2 s_j} / (s_j eps^{-1/2} int u^{p-1+2 s_j})
        K.append(math.exp(2 * sj * ln - math.log(sj) - 0.5 * math.log(1 / eps) - li))
        scaled.append(math.exp(li - (n / 2) * math.log(eps)) if li < 700 else math.inf)
    return {"nu": nu, "s": s[:len(log_I)], "log_integrals": log_I, "log_norms": log_N,
            "chain_constants": K, "scaled_integrals": scaled, "truncated": truncated,
            "sup_proxy": math.exp(log_N[-1]) if log_N else math.nan}


def uniform_bound_report(records, drift_limit: float = 5.0) -> dict:
    """Largest sup over the records and the ratio sup(eps_min) / sup(eps_max)."""
    recs = sorted((r for r in records if r.ok), key=lambda r: r.eps)
    if len(recs) < 4:
        raise ValueError("need at least 4 records")
    sups = [r.sup for r in recs]
    drift = sups[0] / sups[-1]
    return {"max_sup": max(sups), "min_sup": min(sups), "drift_ratio": drift,
            "drift": bool(drift >= drift_limit or drift <= 1 / drift_limit)}


# ---------------------------------------------------------------- threshold

def epsilon_star_estimate(p: float, c_sup: float, c1: float, c2: float) -> float:
    """eps* = [((p C_sup^{p-1} - 1) / (C1 C2))_+]^2; beyond eps* only u = 1 survives."""
    if not (c1 > 0 and c2 > 0):
        raise ValueError("C1 and C2 must be positive")
    num = p * c_sup ** (p - 1) - 1
    if num <= 0:
        log.warning("p C_sup^{p-1} <= 1 gives eps* = 0; the constants look suspicious")
        return 0.0
    return (num / (c1 * c2)) ** 2


def _any_nonconstant(config, eps, m_starts, perturbation):
    cfg = replace(config, eps=eps)
    results = perturbed_restart_scan(cfg, m_starts, perturbation=perturbation)
    return any(isinstance(r, SolutionReport) and r.accepted and not r.is_constant
               for r in results)


def locate_transition(config: SemilinearConfig, lo: float, hi: float, m_starts: int = 4,
                      steps: int = 5, perturbation: float = 0.5) -> tuple:
    """Bisect in log eps for the largest eps with a nonconstant solution.

    ``lo`` must yield a nonconstant start and ``hi`` only constants.  Returns
    the bracket (lo, hi) after ``steps`` halvings.
    """
    if not _any_nonconstant(config, lo, m_starts, perturbation):
        raise ValueError(f"no nonconstant solution found at eps={lo}")
    if _any_nonconstant(config, hi, m_starts, perturbation):
        raise ValueError(f"nonconstant solution found at eps={hi}")
    for _ in range(steps):
        mid = math.sqrt(lo * hi)
        if _any_nonconstant(config, mid, m_starts, perturbation):
            lo = mid
        else:
            hi = mid
    return lo, hi


def fitted_constants(records, p: float, first_eigenvalue: float, q_list=(1.0, 2.0)) -> dict:
    """Constants frozen into a run manifest.

    C1 C2 is taken as lambda_1^{1/2}, the sharp spectral constant in the
    fractional Poincare inequality for zero-mean functions with C1 = 1.
    """
    from .extension import trace_embedding_ratio

    out = {}
    recs = _nonconstant(records)
    if len(recs) >= 4:
        fit = energy_scaling_fit(records)
        out["energy_fit"] = {"slope": fit.slope, "intercept": fit.intercept,
                             "residual": fit.residual}
    if recs:
        n = recs[0].u.domain.n if recs[0].u is not None else 2
        bands = {}
        for q in tuple(q_list) + (p + 1,):
            bands[f"q={q:g}"] = lq_scaling(records, q, n)
        out["lq_bands"] = bands
        ratios = [trace_embedding_ratio(r.u, r.eps) for r in recs if r.u is not None]
        if ratios:
            out["trace_embedding_band"] = {"min": min(ratios), "max": max(ratios)}
    ok = [r for r in records if r.ok]
    c_sup = max(r.sup for r in ok) if ok else 1.0
    c1, c2 = 1.0, math.sqrt(first_eigenvalue)
    out.update({"C_sup": c_sup, "C1": c1, "C2": c2,
                "eps_star": epsilon_star_estimate(p, c_sup, c1, c2)})
    return out
