"""Text formats: sweep CSV, run manifest, key = value config and eigenpair import."""
from __future__ import annotations

import configparser
import csv
import json
import math
import os
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .domain import EigenBasisDomain

__all__ = [
    "CSV_COLUMNS",
    "CsvRow",
    "csv_row",
    "emit_csv",
    "parse_csv",
    "emit_manifest",
    "load_manifest",
    "read_config",
    "parse_eps_grid",
    "EigenImportError",
    "read_eigen_import",
    "write_eigen_import",
    "validate_eigen_import",
]

CSV_COLUMNS = ("epsilon", "energy", "mass_p1", "sup", "inf", "measure_eta1", "cubes",
               "is_constant", "residual")


@dataclass(frozen=True)
class CsvRow:
    epsilon: float
    energy: float
    mass_p1: float
    sup: float
    inf: float
    measure_eta1: float
    cubes: int
    is_constant: bool
    residual: float


def csv_row(record) -> CsvRow:
    """Flatten a sweep record; ``measure_eta1`` is the measure at the smallest eta."""
    measure = record.measures[min(record.measures)] if record.measures else math.nan
    return CsvRow(record.eps, record.energy, record.mass_p1, record.sup, record.inf,
                  measure, int(record.cubes), bool(record.is_constant), record.residual)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return "%.17g" % value


def emit_csv(rows, path) -> Path:
    """Write rows (CsvRow or sweep records) with 17 significant digits."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [r if isinstance(r, CsvRow) else csv_row(r) for r in rows]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])
    return path


def parse_csv(path) -> list[CsvRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected CSV header {header}")
        rows = []
        for line in reader:
            if not line:
                continue
            vals = dict(zip(CSV_COLUMNS, line))
            kwargs = {}
            for f in fields(CsvRow):
                raw = vals[f.name]
                if f.name == "cubes":
                    kwargs[f.name] = int(raw)
                elif f.name == "is_constant":
                    if raw not in ("true", "false"):
                        raise ValueError(f"{path}: bad boolean {raw!r}")
                    kwargs[f.name] = raw == "true"
                else:
                    kwargs[f.name] = float(raw)
            rows.append(CsvRow(**kwargs))
    return rows


def emit_manifest(manifest: dict, path) -> Path:
    """JSON with the caller's key order preserved and floats written round-trip exact."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_plain(manifest), indent=2, allow_nan=True)
    path.write_text(text + "\n")
    return path


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, os.PathLike):
        return os.fspath(obj)
    return obj


# ---------------------------------------------------------------- config

def read_config(path) -> dict:
    """Read ``key = value`` lines (``#`` comments, optional ``[section]`` headers ignored).

    Values are returned as strings; keys are lower-cased with dashes mapped
    to underscores so they line up with command-line option names.
    """
    text = Path(path).read_text()
    parser = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",))
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as err:
        raise ValueError(f"{path}: malformed config: {err}") from err
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key.strip().lower().replace("-", "_")] = value.strip()
    return out


def parse_eps_grid(spec: str) -> list[float]:
    """``a:b:log:n`` or ``a:b:lin:n``, or a comma-separated list of values."""
    spec = spec.strip()
    if ":" not in spec:
        vals = [float(s) for s in spec.split(",") if s.strip()]
    else:
        parts = spec.split(":")
        if len(parts) != 4 or parts[2] not in ("log", "lin"):
            raise ValueError(f"bad eps grid {spec!r}; expected a:b:log:n or a:b:lin:n")
        a, b, n = float(parts[0]), float(parts[1]), int(parts[3])
        if n < 1:
            raise ValueError("eps grid needs at least one point")
        if parts[2] == "log":
            if a <= 0 or b <= 0:
                raise ValueError("log grids need positive endpoints")
            vals = list(np.logspace(math.log10(a), math.log10(b), n))
        else:
            vals = list(np.linspace(a, b, n))
    if not vals or any(not v > 0 for v in vals):
        raise ValueError("eps values must be positive")
    return [float(v) for v in vals]


# ---------------------------------------------------------------- eigenpairs

class EigenImportError(ValueError):
    pass


def write_eigen_import(path, eigenvalues, modes, volume: float) -> Path:
    """Header ``n N_1 ... N_n count volume`` then one row per mode: lambda and nodal values."""
    modes = np.asarray(modes, dtype=float)
    lam = np.asarray(eigenvalues, dtype=float)
    grid = modes.shape[1:]
    path = Path(path)
    with open(path, "w") as fh:
        fh.write(" ".join([str(len(grid))] + [str(N) for N in grid]
                          + [str(modes.shape[0]), "%.17g" % volume]) + "\n")
        for l, m in zip(lam, modes):
            fh.write(" ".join("%.17g" % v for v in np.concatenate([[l], m.ravel()])) + "\n")
    return path


def validate_eigen_import(domain: EigenBasisDomain, const_tol: float = 1e-8,
                          ortho_tol: float = 1e-6) -> None:
    lam = domain.eigenvalues
    if np.any(np.diff(lam) < 0):
        i = int(np.argmax(np.diff(lam) < 0))
        raise EigenImportError(f"eigenvalues not nondecreasing at mode {i + 1}: "
                               f"{lam[i + 1]} < {lam[i]}")
    first = domain.modes[0]
    target = 1 / math.sqrt(domain.volume)
    dev = float(np.max(np.abs(np.abs(first) - target)))
    if dev > const_tol:
        raise EigenImportError(f"first mode is not the constant 1/sqrt(|Omega|) "
                               f"(max deviation {dev:.3e})")
    flat = domain.modes.reshape(domain.modes.shape[0], -1)
    gram = flat @ flat.T * domain.cell_volume
    err = np.abs(gram - np.eye(gram.shape[0]))
    worst = float(err.max())
    if worst > ortho_tol:
        i, j = np.unravel_index(int(np.argmax(err)), err.shape)
        raise EigenImportError(f"modes not orthonormal: <phi_{i}, phi_{j}> off by {worst:.3e}")


def read_eigen_import(path, validate: bool = True) -> EigenBasisDomain:
    """Parse and (by default) validate an eigenpair file."""
    try:
        with open(path) as fh:
            header = fh.readline().split()
            if len(header) < 4:
                raise EigenImportError("header must be: n N_1 ... N_n count volume")
            n = int(header[0])
            if len(header) != n + 3:
                raise EigenImportError(f"header has {len(header)} fields, expected {n + 3}")
            grid = tuple(int(x) for x in header[1:1 + n])
            count = int(header[1 + n])
            volume = float(header[2 + n])
            data = np.loadtxt(fh, ndmin=2)
    except (OSError, ValueError) as err:
        if isinstance(err, EigenImportError):
            raise
        raise EigenImportError(f"{path}: {err}") from err
    size = int(np.prod(grid))
    if data.shape != (count, size + 1):
        raise EigenImportError(f"expected {count} rows of {size + 1} values, got {data.shape}")
    if not volume > 0:
        raise EigenImportError("volume must be positive")
    domain = EigenBasisDomain(eigenvalues=data[:, 0].copy(),
                              modes=data[:, 1:].reshape((count,) + grid).copy(), volume=volume)
    if validate:
        validate_eigen_import(domain)
    return domain
