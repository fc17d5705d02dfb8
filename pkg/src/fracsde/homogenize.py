"""Time averaging of oscillatory coefficients and averaging-residual profiles.

Averages are Cesaro means (1/T1) int_0^T1 coef(s, x) ds computed with a
composite trapezoid rule on a fixed panel width.  The horizon doubles until
the running mean stays within ``tol`` of its final value over the whole
last doubling, at every probe node; the certified
values are then cached on the probe lattice and interpolated with cubic
splines.

Profiles measure how fast the residual coef - mean disappears:

* weak drift      |T1**-a int_0^T1 (T1-s)**(a-1) r(s, x) ds|**2 / (1+|x|**2)
* weak diffusion  T1**(1-2a) int_0^T1 (T1-s)**(2a-2) |r(s, x)|**2 ds / (1+|x|**2)
* strong          (1/T1) int_0^T1 |r(s, x)|**2 ds / (1+|x|**2)

The singular kernels are never sampled.  The kernel is integrated
against the piecewise-linear interpolant of the residual, panel by panel
(closed form on the panel touching the singularity, 16-point Gauss-Legendre
on the smooth remaining panels, where it is accurate to rounding).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import CubicSpline, RegularGridInterpolator

from ._kernels import running_mean_extrema
from .errors import AveragingDivergenceError, DomainError, EvaluationError
from .frackernel import check_alpha
from .model import NO_FAST_TIME, FsdeProblem, StateBox

_CHUNK = 1 << 20  # coefficient evaluations per vectorized call
_GROWTH_RATIO = 1.5
_GROWTH_RUN = 4


@dataclass(frozen=True)
class AveragingConfig:
    """Stopping rule and probe lattice for :func:`build_homogenized_problem`.

    ``tol = 4e-7`` keeps the certified means within 1e-6 of their limit for
    coefficients whose Cesaro mean converges like 1/T1.
    """

    T1_start: float = 10.0
    tol: float = 4e-7
    n_quad: int = 32
    x_probe_box: StateBox = field(default_factory=lambda: StateBox((-2.0,), (2.0,)))
    probe_points: int = 21
    max_doublings: int = 20
    use_closed_form: bool = True

    def __post_init__(self):
        if not (self.T1_start > 0 and math.isfinite(self.T1_start)):
            raise DomainError(f"T1_start must be finite and > 0, got {self.T1_start!r}")
        if not self.tol > 0:
            raise DomainError(f"averaging tol must be > 0, got {self.tol!r}")
        if int(self.n_quad) < 2:
            raise DomainError("n_quad must be >= 2")
        if int(self.probe_points) < 4:
            raise DomainError("probe_points must be >= 4 for cubic interpolation")
        if int(self.max_doublings) < 1:
            raise DomainError("max_doublings must be >= 1")


def _eval(coef, tau, x, what="coefficient"):
    vals = np.asarray(coef(tau, x), dtype=np.float64)
    if not np.all(np.isfinite(vals)):
        bad = np.argwhere(~np.isfinite(vals.reshape(vals.shape[: x.ndim - 1] + (-1,))).any(axis=-1))[0]
        t_bad = np.broadcast_to(tau, x.shape[:-1])[tuple(bad)]
        point = (float(t_bad), x[tuple(bad)].tolist())
        raise EvaluationError(f"{what} is not finite at (tau, x) = {point}", point=point)
    return vals


def _panel_sum(coef, nodes, shift, a, h, count):
    """h * trapezoid sum of coef(s, x) - shift over s = a, a+h, .., a+count*h."""
    K = nodes.shape[0]
    step = max(1, _CHUNK // max(K, 1))
    total = np.zeros(shift.shape)
    for start in range(0, count + 1, step):
        j = np.arange(start, min(count + 1, start + step))
        s = a + h * j.astype(np.float64)
        tau = np.broadcast_to(s[:, None], (j.size, K))
        x = np.broadcast_to(nodes, (j.size,) + nodes.shape)
        vals = _eval(coef, tau, x) - shift
        w = np.ones(j.size)
        w[j == 0] = 0.5
        w[j == count] = 0.5
        total += np.tensordot(w, vals, axes=(0, 0))
    return h * total


def _segment_extend(coef, nodes, shift, a, h, count, integral_a):
    """Extend the running trapezoid integral from a to a + count*h.

    Returns ``(integral at the end, min, max)`` where min/max are taken
    over the running means shift + I(t)/t at every panel time t in
    (a, a + count*h].
    """
    K = nodes.shape[0]
    step = max(1, _CHUNK // max(K, 1))
    cells = shift.size
    carry = np.array(integral_a, dtype=np.float64).reshape(cells)
    flat_shift = np.ascontiguousarray(shift, dtype=np.float64).reshape(cells)
    prev = np.zeros(cells)
    lo = np.full(cells, np.inf)
    hi = np.full(cells, -np.inf)
    for start in range(0, count + 1, step):
        j = np.arange(start, min(count + 1, start + step))
        s = a + h * j.astype(np.float64)
        tau = np.broadcast_to(s[:, None], (j.size, K))
        x = np.broadcast_to(nodes, (j.size,) + nodes.shape)
        vals = (_eval(coef, tau, x) - shift).reshape(j.size, cells)
        running_mean_extrema(np.ascontiguousarray(vals), prev, carry, flat_shift, a, h, start, lo, hi)
    return carry.reshape(shift.shape), lo.reshape(shift.shape), hi.reshape(shift.shape)


def average_coefficient(coef: Callable, x, T1: float, n_quad: int) -> np.ndarray:
    """(1/T1) int_0^T1 coef(s, x) ds by an ``n_quad``-panel trapezoid rule.

    The integrand is shifted by coef(0, x) first, so a time-independent
    coefficient is returned exactly.
    """
    if not T1 > 0:
        raise DomainError(f"T1 must be > 0, got {T1!r}")
    if int(n_quad) < 2:
        raise DomainError("n_quad must be >= 2")
    nodes = np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :]
    c0 = _eval(coef, np.zeros(1), nodes)
    avg = c0 + _panel_sum(coef, nodes, c0, 0.0, T1 / int(n_quad), int(n_quad)) / T1
    return avg[0]


@dataclass(frozen=True)
class CesaroCertificate:
    horizon: float
    gap: float
    tol: float
    doublings: int
    gap_history: tuple


def certified_means(coef: Callable, nodes: np.ndarray, cfg: AveragingConfig):
    """Double the horizon from ``cfg.T1_start`` until the mean settles at all nodes.

    After extending the horizon from T to 2T the gap is the largest
    distance between the final mean avg(2T) and the running mean avg(t) at
    any panel time t in [T, 2T].  This bounds |avg(T) - avg(2T)| and, unlike
    that endpoint difference alone, cannot be fooled by an oscillation that
    happens to be near a zero at both endpoints.  The run stops once the
    gap is below ``cfg.tol``.

    Returns ``(avg(2T), certificate)``.  Raises
    :class:`AveragingDivergenceError` when ``max_doublings`` is exhausted, or
    earlier once the gap has grown by 1.5x or more over four successive
    doublings (a mean that grows with T1 can never settle).
    """
    nodes = np.asarray(nodes, dtype=np.float64)
    h = cfg.T1_start / int(cfg.n_quad)
    c0 = _eval(coef, np.zeros(nodes.shape[0]), nodes)
    T = cfg.T1_start
    panels = int(cfg.n_quad)
    integral = _panel_sum(coef, nodes, c0, 0.0, h, panels)
    mean = c0 + integral / T
    gaps = []
    for k in range(1, int(cfg.max_doublings) + 1):
        integral, lo, hi = _segment_extend(coef, nodes, c0, T, h, panels, integral)
        T, panels = 2.0 * T, 2 * panels
        new_mean = c0 + integral / T
        lo, hi = np.minimum(lo, mean), np.maximum(hi, mean)
        gap = float(max(np.max(hi - new_mean), np.max(new_mean - lo)))
        gaps.append(gap)
        mean = new_mean
        if gap < cfg.tol:
            return mean, CesaroCertificate(T, gap, cfg.tol, k, tuple(gaps))
        if len(gaps) > _GROWTH_RUN and all(
            gaps[-i] >= _GROWTH_RATIO * gaps[-i - 1] for i in range(1, _GROWTH_RUN + 1)
        ):
            raise AveragingDivergenceError(
                f"time average does not settle: gap {gap:.3g} keeps growing at horizon {T:g}",
                gap=gap, horizon=T,
            )
    raise AveragingDivergenceError(
        f"time average not certified after {cfg.max_doublings} doublings: "
        f"gap {gaps[-1]:.3g} >= tol {cfg.tol:g} at horizon {T:g}",
        gap=gaps[-1], horizon=T,
    )


class AveragedCoefficient:
    """Certified time average of ``base``, usable as an autonomous coefficient.

    Calls ``avg(tau, x)`` ignore ``tau``.  Inside the probe box values come
    from cubic interpolation of the certified node values (or from the
    closed form when one is given); outside it the mean is recomputed
    directly at the certified horizon.
    """

    def __init__(self, base: Callable, cfg: AveragingConfig, closed_form: Optional[Callable] = None):
        self.base = base
        self.cfg = cfg
        box = cfg.x_probe_box
        self.nodes = box.grid(int(cfg.probe_points))
        self.node_values, self.certificate = certified_means(base, self.nodes, cfg)
        self.node_values.setflags(write=False)
        self.closed_form = closed_form if cfg.use_closed_form else None
        self._lower = np.array(box.lower)
        self._upper = np.array(box.upper)
        self._out_shape = self.node_values.shape[1:]
        axes = [np.linspace(lo, hi, int(cfg.probe_points)) for lo, hi in zip(box.lower, box.upper)]
        flat = self.node_values.reshape(self.node_values.shape[0], -1)
        if box.dim == 1:
            self._interp = CubicSpline(axes[0], flat, axis=0)
        else:
            grid_vals = flat.reshape(tuple(a.size for a in axes) + (flat.shape[1],))
            self._interp = RegularGridInterpolator(axes, grid_vals, method="cubic")

    @property
    def avg_horizon_T1(self) -> float:
        return self.certificate.horizon

    @property
    def quadrature_steps(self) -> int:
        return int(self.cfg.n_quad) * 2**self.certificate.doublings

    def value(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.closed_form is not None:
            return np.asarray(self.closed_form(x), dtype=np.float64)
        return self.interpolated(x)

    def interpolated(self, x) -> np.ndarray:
        """Spline/direct value, bypassing any closed form."""
        x = np.asarray(x, dtype=np.float64)
        batch = x.shape[:-1]
        pts = x.reshape(-1, x.shape[-1])
        out = np.empty((pts.shape[0], int(np.prod(self._out_shape, dtype=int))))
        inside = np.all((pts >= self._lower) & (pts <= self._upper), axis=1)
        if inside.any():
            out[inside] = self._interp(pts[inside] if pts.shape[1] > 1 else pts[inside, 0])
        if not inside.all():
            out[~inside] = self._direct(pts[~inside]).reshape(-1, out.shape[1])
        return out.reshape(batch + self._out_shape)

    def _direct(self, pts):
        h = self.cfg.T1_start / int(self.cfg.n_quad)
        c0 = _eval(self.base, np.zeros(pts.shape[0]), pts)
        return c0 + _panel_sum(self.base, pts, c0, 0.0, h, self.quadrature_steps) / self.avg_horizon_T1

    def __call__(self, tau, x):
        return self.value(x)

    def closed_form_deviation(self) -> Optional[float]:
        """Max |closed form - certified node value| over the probe lattice."""
        if self.closed_form is None:
            return None
        ref = np.asarray(self.closed_form(self.nodes), dtype=np.float64).reshape(self.node_values.shape)
        return float(np.max(np.abs(ref - self.node_values)))


def build_homogenized_problem(problem: FsdeProblem, averaging: AveragingConfig | None = None) -> FsdeProblem:
    """Autonomous problem driven by certified averages of the coefficients."""
    cfg = averaging or AveragingConfig()
    if cfg.x_probe_box.dim != problem.state_dim:
        raise DomainError(
            f"probe box dimension {cfg.x_probe_box.dim} != state dimension {problem.state_dim}"
        )
    drift = AveragedCoefficient(problem.drift, cfg, problem.drift_mean)
    diffusion = AveragedCoefficient(problem.diffusion, cfg, problem.diffusion_mean)
    return FsdeProblem(
        problem.alpha, NO_FAST_TIME, problem.horizon_T, problem.x0, drift, diffusion,
        noise_dim=problem.noise_dim, label=f"{problem.label}-averaged",
        drift_mean=drift.value, diffusion_mean=diffusion.value,
    )


def balanced_step(alpha, epsilon: float) -> float:
    """Step size eps**(2/(3-2a)) at which dt**(2a-1) and (dt/eps)**2 balance."""
    a = check_alpha(alpha)
    if a == 1.0:
        raise DomainError("balanced_step needs a fractional order 1/2 < alpha < 1")
    if not (epsilon > 0 and math.isfinite(epsilon)):
        raise DomainError(f"epsilon must be finite and > 0, got {epsilon!r}")
    return float(epsilon) ** (2.0 / (3.0 - 2.0 * a))


# ---------------------------------------------------------------- profiles

_GL_T, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_T = 0.5 * (_GL_T + 1.0)
_GL_W = 0.5 * _GL_W


def kernel_panel_weights(beta: float, M: int):
    """Weights of u**beta against a linear function on unit panels [k, k+1].

    Returns ``(A, B)`` of length M with
    A[k] = int_0^1 (k+t)**beta (1-t) dt  (weight of the value at u = k) and
    B[k] = int_0^1 (k+t)**beta t dt      (weight of the value at u = k+1).
    """
    if not beta > -1:
        raise DomainError(f"kernel exponent {beta} is not integrable at the endpoint")
    k = np.arange(M, dtype=np.float64)
    vals = (k[:, None] + _GL_T[None, :]) ** beta
    A = vals @ (_GL_W * (1.0 - _GL_T))
    B = vals @ (_GL_W * _GL_T)
    A[0] = 1.0 / ((beta + 1.0) * (beta + 2.0))
    B[0] = 1.0 / (beta + 2.0)
    return A, B


def product_integral(samples: np.ndarray, T1: float, beta: float) -> np.ndarray:
    """int_0^T1 (T1-s)**beta p(s) ds, p the linear interpolant of ``samples``.

    ``samples[j]`` is the value at s = j*T1/M along axis 0 (M + 1 points);
    trailing axes are carried through.
    """
    M = samples.shape[0] - 1
    A, B = kernel_panel_weights(beta, M)
    # panel j spans u = T1 - s in [M-j-1, M-j] (index units)
    left = B[::-1]   # weight of samples[j] for j = 0..M-1
    right = A[::-1]  # weight of samples[j+1]
    h = T1 / M
    total = np.tensordot(left, samples[:-1], axes=(0, 0)) + np.tensordot(right, samples[1:], axes=(0, 0))
    return h ** (beta + 1.0) * total


@dataclass(frozen=True, eq=False)
class AveragingProfile:
    """Residual functional per T1 (max over the x grid) and per grid cell."""

    functional: str          # "weak" or "strong"
    kind: str                # "drift" or "diffusion"
    alpha: float
    t1_grid: np.ndarray
    x_grid: np.ndarray
    values: np.ndarray       # (len(t1_grid),)
    pointwise: np.ndarray    # (len(t1_grid), len(x_grid))


def _mean_at(avg, x):
    if hasattr(avg, "value"):
        return np.asarray(avg.value(x), dtype=np.float64)
    return np.asarray(avg(x), dtype=np.float64)


def _grids(t1_grid, x_grid):
    t1 = np.asarray(t1_grid, dtype=np.float64).reshape(-1)
    if t1.size == 0 or not np.all(t1 > 0) or np.any(np.diff(t1) <= 0):
        raise DomainError("t1_grid must be non-empty, positive and strictly increasing")
    xg = np.asarray(x_grid, dtype=np.float64)
    xg = xg.reshape(-1, 1) if xg.ndim < 2 else xg
    if xg.shape[0] == 0:
        raise DomainError("x_grid must be non-empty")
    return t1, xg


def _residual_samples(coef, mean, xg, T1, n_quad):
    M = max(2, int(math.ceil(T1 * n_quad)))
    s = np.linspace(0.0, T1, M + 1)
    tau = np.broadcast_to(s[:, None], (M + 1, xg.shape[0]))
    x = np.broadcast_to(xg, (M + 1,) + xg.shape)
    r = _eval(coef, tau, x) - mean[None]
    return r.reshape(M + 1, xg.shape[0], -1)


def _profile(functional, coef, avg, alpha, kind, t1_grid, x_grid, n_quad):
    a = check_alpha(alpha)
    if kind not in ("drift", "diffusion"):
        raise DomainError(f"kind must be 'drift' or 'diffusion', got {kind!r}")
    if not n_quad > 0:
        raise DomainError("n_quad must be > 0")
    t1, xg = _grids(t1_grid, x_grid)
    mean = _mean_at(avg, xg)
    weight = 1.0 + np.sum(xg**2, axis=1)
    point = np.empty((t1.size, xg.shape[0]))
    for i, T1 in enumerate(t1):
        r = _residual_samples(coef, mean, xg, T1, n_quad)
        sq = np.sum(r**2, axis=-1)
        if functional == "strong":
            M = r.shape[0] - 1
            trap = (sq.sum(axis=0) - 0.5 * (sq[0] + sq[-1])) * (T1 / M)
            point[i] = trap / T1 / weight
        elif kind == "drift":
            I = product_integral(r, T1, a - 1.0)
            point[i] = np.sum((T1**-a * I) ** 2, axis=-1) / weight
        else:
            I = product_integral(sq, T1, 2.0 * (a - 1.0))
            point[i] = T1 ** (1.0 - 2.0 * a) * I / weight
    np.maximum(point, 0.0, out=point)
    return AveragingProfile(functional, kind, a, t1, xg, point.max(axis=1), point)


def weak_profile(coef, avg, alpha, kind, t1_grid, x_grid, n_quad: float = 32) -> AveragingProfile:
    """Kernel-weighted residual profile; ``n_quad`` is panels per unit of T1."""
    return _profile("weak", coef, avg, alpha, kind, t1_grid, x_grid, n_quad)


def strong_profile(coef, avg, t1_grid, x_grid, n_quad: float = 32, kind: str = "drift",
                   alpha=1.0) -> AveragingProfile:
    """Unweighted mean-square residual (1/T1) int_0^T1 |r|**2 ds / (1+|x|**2)."""
    return _profile("strong", coef, avg, alpha, kind, t1_grid, x_grid, n_quad)


PROFILE_COLUMNS = ("T1", "weak_drift", "weak_diffusion", "strong_drift", "strong_diffusion")


def write_profile_csv(path, weak_drift, weak_diffusion, strong_drift, strong_diffusion,
                      header_comments=()) -> None:
    t1 = weak_drift.t1_grid
    for prof in (weak_diffusion, strong_drift, strong_diffusion):
        if not np.array_equal(prof.t1_grid, t1):
            raise DomainError("profiles must share one T1 grid")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_comments:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(PROFILE_COLUMNS)
        for i, T1 in enumerate(t1):
            row = (T1, weak_drift.values[i], weak_diffusion.values[i],
                   strong_drift.values[i], strong_diffusion.values[i])
            writer.writerow([f"{v:.17g}" for v in row])
