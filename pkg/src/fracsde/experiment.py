"""Monte Carlo error studies with common random numbers.

Every study draws one finest Brownian lattice and drives all compared
solutions with it (or with exact coarsenings of it), so differences between
solutions isolate discretization or model error from sampling noise.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import brownian
from .errors import DomainError
from .model import FsdeProblem
from .solver import PathEnsemble, em_solve


@dataclass(frozen=True)
class ConvergenceRow:
    param: float
    error: float
    order: Optional[float] = None
    order_span: Optional[tuple] = None  # the two parameter values the order connects


@dataclass(frozen=True)
class ConvergenceTable:
    study_kind: str  # "dt", "eps" or "mu"
    rows: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def params(self) -> list:
        return [r.param for r in self.rows]

    @property
    def errors(self) -> list:
        return [r.error for r in self.rows]

    @property
    def orders(self) -> list:
        return [r.order for r in self.rows if r.order_span is not None]

    @property
    def mean_order(self) -> Optional[float]:
        vals = [o for o in self.orders if o is not None]
        return float(np.mean(vals)) if vals else None


@dataclass(frozen=True)
class ComparisonCurves:
    """Per-time RMS errors on the coarse grid against a fine reference."""

    times: np.ndarray
    Ex: np.ndarray  # original problem
    Ey: np.ndarray  # homogenized problem
    metadata: dict = field(default_factory=dict)


def _steps(T: float, dt: float) -> int:
    n = round(T / dt)
    if n < 1 or abs(n * dt - T) > 1e-9 * T:
        raise DomainError(f"horizon {T!r} is not an integer multiple of dt = {dt!r}")
    return int(n)


def _nesting(coarse: PathEnsemble, fine: PathEnsemble) -> int:
    if fine.n_steps % coarse.n_steps:
        raise DomainError(f"grids with {coarse.n_steps} and {fine.n_steps} steps are not nested")
    r = fine.n_steps // coarse.n_steps
    if abs(coarse.dt - r * fine.dt) > 1e-12 * coarse.dt:
        raise DomainError(f"grids dt = {coarse.dt!r} and {fine.dt!r} are not nested")
    return r


def rms_error_curve(A: PathEnsemble, B: PathEnsemble):
    """(times, RMS over paths of |A - B|) on the coarser of the two grids."""
    if A.n_paths != B.n_paths or A.state_dim != B.state_dim:
        raise DomainError("ensembles differ in path count or state dimension")
    if A.lattice_fingerprint[:2] != B.lattice_fingerprint[:2]:
        raise DomainError("ensembles were not driven by the same Brownian stream")
    coarse, fine = (A, B) if A.n_steps <= B.n_steps else (B, A)
    r = _nesting(coarse, fine)
    diff = coarse.states - fine.states[:, ::r]
    sq = np.sum(diff * diff, axis=-1)               # (paths, times)
    per_time = np.ascontiguousarray(sq.T).sum(axis=1)  # pairwise along paths
    return coarse.times, np.sqrt(per_time / coarse.n_paths)


def mean_square_error(A: PathEnsemble, B: PathEnsemble) -> float:
    """max over shared grid times of the path-RMS distance between A and B."""
    return float(np.max(rms_error_curve(A, B)[1]))


def _log2_order(e_from: float, e_to: float) -> Optional[float]:
    if e_from > 0 and e_to > 0:
        return math.log2(e_from / e_to)
    return None


def _check_ratio(values, ratio: float, what: str):
    v = [float(x) for x in values]
    if len(v) < 2:
        raise DomainError(f"{what} needs at least two entries")
    for a, b in zip(v, v[1:]):
        if not (a > 0 and abs(b / a - ratio) <= 1e-9 * ratio):
            raise DomainError(f"{what} must be a sequence with ratio {ratio:g}, got {v}")
    return v


def _provenance(problem: FsdeProblem, lattice, **extra) -> dict:
    meta = {
        "model": problem.label,
        "alpha": problem.alpha,
        "T": problem.horizon_T,
        "n_paths": lattice.n_paths,
        "seed": lattice.seed,
        "generator": lattice.generator,
        "finest_steps": lattice.n_steps,
        "finest_dt": lattice.dt,
    }
    meta.update(extra)
    return meta


def dt_study(problem: FsdeProblem, dt_list, n_paths: int, seed: int, *, threads: int = 1) -> ConvergenceTable:
    """Self-convergence in dt: e(dt) compares the dt and dt/2 solutions.

    All solutions are driven by coarsenings of one lattice at dt_list[-1]/2.
    The order between consecutive rows is log2(e_k / e_{k+1}).
    """
    dts = _check_ratio(dt_list, 0.5, "dt_list")
    T = problem.horizon_T
    n_fine = 2 * _steps(T, dts[-1])
    finest = brownian.generate(seed, n_paths, n_fine, T / n_fine, problem.noise_dim, threads=threads)
    levels = [em_solve(problem, brownian.coarsen(finest, n_fine // _steps(T, dt)), threads=threads)
              for dt in dts]
    levels.append(em_solve(problem, finest, threads=threads))
    errors = [mean_square_error(levels[k], levels[k + 1]) for k in range(len(dts))]
    rows = [ConvergenceRow(dts[0], errors[0])]
    for k in range(1, len(dts)):
        rows.append(ConvergenceRow(dts[k], errors[k], _log2_order(errors[k - 1], errors[k]),
                                   (dts[k - 1], dts[k])))
    meta = _provenance(problem, finest, epsilon=problem.epsilon, dt_list=dts)
    return ConvergenceTable("dt", tuple(rows), meta)


def eps_study(problem_factory: Callable[[float], FsdeProblem], eps_list, dt: float, n_paths: int,
              seed: int, *, threads: int = 1) -> ConvergenceTable:
    """Sensitivity to the scale parameter: e(eps) compares eps and 2*eps.

    Both solutions use the same lattice at step ``dt``.  The order between
    rows k, k+1 is log2(e_{k+1} / e_k).
    """
    eps = _check_ratio(eps_list, 2.0, "eps_list")
    base = problem_factory(eps[0])
    T = base.horizon_T
    n = _steps(T, dt)
    lattice = brownian.generate(seed, n_paths, n, T / n, base.noise_dim, threads=threads)
    sols = {}

    def solve(e):
        if e not in sols:
            sols[e] = em_solve(problem_factory(e), lattice, threads=threads)
        return sols[e]

    errors = [mean_square_error(solve(e), solve(2.0 * e)) for e in eps]
    rows = [ConvergenceRow(eps[0], errors[0])]
    for k in range(1, len(eps)):
        rows.append(ConvergenceRow(eps[k], errors[k], _log2_order(errors[k], errors[k - 1]),
                                   (eps[k - 1], eps[k])))
    meta = _provenance(base, lattice, dt=T / n, eps_list=eps)
    return ConvergenceTable("eps", tuple(rows), meta)


def homogenization_comparison(problem: FsdeProblem, homogenized: FsdeProblem, dt_coarse: float,
                              dt_ref: float, n_paths: int, seed: int, *, threads: int = 1) -> ComparisonCurves:
    """Errors of the original and the homogenized problem on a coarse grid.

    The reference is the original problem on the fine grid; all three runs
    share one lattice.
    """
    if homogenized.alpha != problem.alpha or homogenized.horizon_T != problem.horizon_T \
            or not np.array_equal(homogenized.x0, problem.x0):
        raise DomainError("problem and homogenized problem must share alpha, x0 and T")
    T = problem.horizon_T
    n_ref, n_coarse = _steps(T, dt_ref), _steps(T, dt_coarse)
    if n_ref % n_coarse:
        raise DomainError(f"dt_ref = {dt_ref!r} does not nest in dt_coarse = {dt_coarse!r}")
    fine = brownian.generate(seed, n_paths, n_ref, T / n_ref, problem.noise_dim, threads=threads)
    coarse = brownian.coarsen(fine, n_ref // n_coarse)
    ref = em_solve(problem, fine, threads=threads)
    times, Ex = rms_error_curve(em_solve(problem, coarse, threads=threads), ref)
    _, Ey = rms_error_curve(em_solve(homogenized, coarse, threads=threads), ref)
    meta = _provenance(problem, fine, epsilon=problem.epsilon, homogenized=homogenized.label,
                       dt_coarse=T / n_coarse, dt_ref=T / n_ref)
    return ComparisonCurves(times, Ex, Ey, meta)


def mu_study(problem_factory: Callable[[float], FsdeProblem], homogenized: FsdeProblem, eps_list,
             dt_ref: float, n_paths: int, seed: int, *, threads: int = 1) -> ConvergenceTable:
    """Homogenization error E(eps) and the fitted index mu.

    ``eps_list`` may be any strictly monotone positive sequence (doubling
    or halving is typical).  mu between consecutive rows is
    -d log E**2 / d log(1/eps).  Zero errors
    leave mu undefined (``None``).  Before the scan, the discretization
    error at the largest eps (dt_ref against 2*dt_ref) is compared with
    E(largest eps); ``metadata["discretization_ok"]`` records the outcome
    and a warning is issued when it fails.
    """
    v = [float(e) for e in eps_list]
    d = np.diff(v)
    if len(v) < 2 or min(v) <= 0 or not (np.all(d > 0) or np.all(d < 0)):
        raise DomainError(f"eps_list must be positive and strictly monotone, got {v}")
    T = homogenized.horizon_T
    n = _steps(T, dt_ref)
    lattice = brownian.generate(seed, n_paths, n, T / n, homogenized.noise_dim, threads=threads)
    hom = em_solve(homogenized, lattice, threads=threads)
    errors = [mean_square_error(em_solve(problem_factory(e), lattice, threads=threads), hom) for e in v]

    e_max = max(v)
    disc = math.nan
    if n % 2 == 0:
        worst = problem_factory(e_max)
        disc = mean_square_error(em_solve(worst, lattice, threads=threads),
                                 em_solve(worst, brownian.coarsen(lattice, 2), threads=threads))
    gap = errors[v.index(e_max)]
    ok = bool(disc < gap)
    if not ok:
        warnings.warn(
            f"discretization error {disc:.3g} at dt_ref is not below the homogenization gap {gap:.3g}",
            RuntimeWarning, stacklevel=2,
        )
    rows = [ConvergenceRow(v[0], errors[0])]
    for k in range(1, len(v)):
        mu = None
        if errors[k] > 0 and errors[k - 1] > 0:
            slope = (math.log(errors[k] ** 2) - math.log(errors[k - 1] ** 2)) / (
                math.log(1.0 / v[k]) - math.log(1.0 / v[k - 1]))
            mu = -slope
        rows.append(ConvergenceRow(v[k], errors[k], mu, (v[k - 1], v[k])))
    meta = _provenance(homogenized, lattice, eps_list=v, dt_ref=T / n,
                       discretization_error=disc, discretization_ok=ok)
    return ConvergenceTable("mu", tuple(rows), meta)


# ------------------------------------------------------------------ CSV I/O

def _fmt(v) -> str:
    return "" if v is None else f"{v:.17g}"


def _header(fh, header_comments, metadata):
    for line in header_comments:
        fh.write(f"# {line}\n")
    if metadata is not None:
        fh.write(f"# metadata: {json.dumps(metadata, sort_keys=True)}\n")


def write_table_csv(table: ConvergenceTable, path, header_comments=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _header(fh, header_comments, {"study_kind": table.study_kind, **table.metadata})
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["param", "error", "order"])
        for row in table.rows:
            writer.writerow([_fmt(row.param), _fmt(row.error), _fmt(row.order)])


def write_curves_csv(curves: ComparisonCurves, path, header_comments=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        _header(fh, header_comments, curves.metadata)
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "Ex", "Ey"])
        for t, ex, ey in zip(curves.times, curves.Ex, curves.Ey):
            writer.writerow([_fmt(t), _fmt(ex), _fmt(ey)])


def read_table_csv(path, expected_hash: Optional[str] = None) -> ConvergenceTable:
    """Load a table written by :func:`write_table_csv`.

    With ``expected_hash`` the file's ``config_hash`` comment must match.
    """
    meta, found_hash, rows = {}, None, []
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# metadata:"):
            meta = json.loads(line.split(":", 1)[1])
        elif line.startswith("# config_hash:"):
            found_hash = line.split(":", 1)[1].strip()
        elif not line.startswith("#"):
            body.append(line)
    if expected_hash is not None and found_hash != expected_hash:
        raise DomainError(f"{path}: config hash {found_hash!r} does not match {expected_hash!r}")
    reader = csv.DictReader(body)
    prev = None
    for rec in reader:
        p = float(rec["param"])
        order = float(rec["order"]) if rec["order"] else None
        span = (prev, p) if prev is not None else None
        rows.append(ConvergenceRow(p, float(rec["error"]), order, span))
        prev = p
    kind = meta.pop("study_kind", "dt")
    return ConvergenceTable(kind, tuple(rows), meta)
