"""Fractional Euler-Maruyama over a path ensemble, plus a Picard oracle.

For each path the scheme is

    x_n = x0 + dt**a / Gamma(a+1) * sum_{i<n} [(n-i)**a - (n-i-1)**a] f(t_i/eps, x_i)
             + dt**(a-1) / Gamma(a) * sum_{i<n} (n-i)**(a-1) g(t_i/eps, x_i) dB_i

The drift carries the exactly integrated kernel, the diffusion the
left-endpoint kernel value; this asymmetric pair is the scheme whose strong
error scales like dt**(2a-1) + (dt/eps)**2.  Coefficients are evaluated once
per (path, step) and kept, so step n is two length-n weighted sums.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import history_sum
from .brownian import BrownianLattice
from .errors import BlowUpError, ConvergenceError, DomainError
from .frackernel import build_weights, gamma_fn
from .model import FsdeProblem


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Solved trajectories, ``states[path, time_index, component]``."""

    problem_label: str
    alpha: float
    epsilon: float
    dt: float
    states: np.ndarray
    lattice_fingerprint: tuple

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt

    @property
    def seed(self) -> int:
        return self.lattice_fingerprint[0]


def _check_compatible(problem: FsdeProblem, lattice: BrownianLattice) -> None:
    if lattice.noise_dim != problem.noise_dim:
        raise DomainError(
            f"lattice noise dimension {lattice.noise_dim} != problem noise dimension {problem.noise_dim}"
        )
    T = problem.horizon_T
    if abs(lattice.dt * lattice.n_steps - T) > 4 * math.ulp(T):
        raise DomainError(
            f"lattice spans {lattice.dt * lattice.n_steps!r}, problem horizon is {T!r}"
        )


def _scheme_constants(alpha: float, dt: float) -> tuple[float, float]:
    return dt**alpha / gamma_fn(alpha + 1.0), dt ** (alpha - 1.0) / gamma_fn(alpha)


def _coefficients(problem, tau, x, dB):
    f = np.asarray(problem.drift(tau, x), dtype=np.float64).reshape(x.shape)
    g = np.asarray(problem.diffusion(tau, x), dtype=np.float64).reshape(x.shape + (problem.noise_dim,))
    return f, (g * dB[:, None, :]).sum(axis=-1)


def _solve_block(problem, lattice, rows, table, memoize):
    inc = lattice.increments[rows[0] : rows[-1] + 1]
    n_paths, n_steps = inc.shape[0], lattice.n_steps
    d = problem.state_dim
    dt = lattice.dt
    c_drift, c_diff = _scheme_constants(problem.alpha, dt)
    x = np.empty((n_paths, n_steps + 1, d))
    x[:, 0] = problem.x0
    hist_f = np.empty((n_paths, n_steps, d))
    hist_g = np.empty((n_paths, n_steps, d))
    sum_f = np.empty((n_paths, d))
    sum_g = np.empty((n_paths, d))
    for n in range(n_steps):
        if memoize:
            hist_f[:, n], hist_g[:, n] = _coefficients(problem, problem.fast_time(n * dt), x[:, n], inc[:, n])
        else:
            for i in range(n + 1):
                hist_f[:, i], hist_g[:, i] = _coefficients(problem, problem.fast_time(i * dt), x[:, i], inc[:, i])
        history_sum(table.drift_w, hist_f, n + 1, sum_f)
        history_sum(table.diff_w, hist_g, n + 1, sum_g)
        x[:, n + 1] = problem.x0 + c_drift * sum_f + c_diff * sum_g
        finite = np.isfinite(x[:, n + 1]).all(axis=1)
        if not finite.all():
            p = int(np.argmin(finite))
            raise BlowUpError(rows[0] + p, n + 1, x[p, n].copy())
    return x


def em_solve(problem: FsdeProblem, lattice: BrownianLattice, *, threads: int = 1,
             memoize: bool = True) -> PathEnsemble:
    """Run the fractional Euler-Maruyama scheme on every path of ``lattice``.

    Paths are split into ``threads`` contiguous blocks solved concurrently;
    each path's arithmetic is independent of the split.  ``memoize=False``
    re-evaluates the whole coefficient history at every step (reference
    implementation for tests, quadratic in coefficient calls).
    """
    _check_compatible(problem, lattice)
    table = build_weights(problem.alpha, lattice.n_steps)
    workers = max(1, min(int(threads), lattice.n_paths))
    blocks = np.array_split(np.arange(lattice.n_paths), workers)
    if workers == 1:
        parts = [_solve_block(problem, lattice, blocks[0], table, memoize)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda rows: _solve_block(problem, lattice, rows, table, memoize), blocks))
    states = parts[0] if len(parts) == 1 else np.concatenate(parts, axis=0)
    states.setflags(write=False)
    return PathEnsemble(
        problem_label=problem.label,
        alpha=problem.alpha,
        epsilon=problem.epsilon,
        dt=lattice.dt,
        states=states,
        lattice_fingerprint=lattice.fingerprint(),
    )


def picard_solve(problem: FsdeProblem, lattice: BrownianLattice, path_index: int,
                 max_iters: int = 1000, tol: float = 1e-12):
    """Picard iteration of the discrete Volterra map on one frozen path.

    Starting from the constant trajectory x0, the whole trajectory is
    replaced by x0 + (kernel sums of f and g dB evaluated on the previous
    iterate) until the sup-norm update falls below ``tol``.  The sums are
    lower-triangular Toeplitz matrix products, independent of the stepping
    kernel in :func:`em_solve`.  Returns ``(trajectory, iterations)``.
    """
    if not tol > 0:
        raise DomainError("tol must be > 0")
    _check_compatible(problem, lattice)
    if not 0 <= path_index < lattice.n_paths:
        raise DomainError(f"path {path_index} not in lattice of {lattice.n_paths} paths")
    N, d, dt = lattice.n_steps, problem.state_dim, lattice.dt
    table = build_weights(problem.alpha, N)
    lag = np.subtract.outer(np.arange(1, N + 1), np.arange(N)) - 1  # lag[n-1, i] = n - i - 1
    lower = lag >= 0
    W_f = np.where(lower, table.drift_w[np.clip(lag, 0, None)], 0.0)
    W_g = np.where(lower, table.diff_w[np.clip(lag, 0, None)], 0.0)
    c_drift, c_diff = _scheme_constants(problem.alpha, dt)
    tau = problem.fast_time(np.arange(N) * dt)
    dB = lattice.increments[path_index]
    x = np.broadcast_to(problem.x0, (N + 1, d)).copy()
    residual = math.inf
    for k in range(1, int(max_iters) + 1):
        f = np.asarray(problem.drift(tau, x[:-1]), dtype=np.float64).reshape(N, d)
        g = np.asarray(problem.diffusion(tau, x[:-1]), dtype=np.float64).reshape(N, d, problem.noise_dim)
        gdb = np.einsum("ijm,im->ij", g, dB)
        new = np.empty_like(x)
        new[0] = problem.x0
        new[1:] = problem.x0 + c_drift * (W_f @ f) + c_diff * (W_g @ gdb)
        residual = float(np.max(np.abs(new - x)))
        x = new
        if not np.isfinite(residual):
            break
        if residual < tol:
            return x, k
    raise ConvergenceError(
        f"Picard iteration did not reach tol={tol} in {max_iters} iterations", residual
    )


def empirical_moment(ensemble: PathEnsemble, p: float = 2.0) -> np.ndarray:
    """Sample mean of |x(t_n)|**p over paths, one value per time index."""
    if not p >= 2:
        raise DomainError(f"moment order p must be >= 2, got {p!r}")
    norms = np.linalg.norm(ensemble.states, axis=-1)
    return np.mean(norms**p, axis=0)


def write_ensemble_csv(ensemble: PathEnsemble, path, header_comments=()) -> None:
    """Write ``path,t,x_1..x_n`` rows, path-major, 17 significant digits."""
    times = ensemble.times
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "t"] + [f"x_{k + 1}" for k in range(ensemble.state_dim)])
        for p in range(ensemble.n_paths):
            for n, t in enumerate(times):
                writer.writerow([p, f"{t:.17g}"] + [f"{v:.17g}" for v in ensemble.states[p, n]])
