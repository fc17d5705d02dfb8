"""Problem definitions: FSDE data, the built-in models and assumption probes.

Coefficient contract
--------------------
A coefficient is a callable ``coef(tau, x)`` where ``tau`` is the already
rescaled fast time (t / epsilon) and ``x`` has shape ``(..., n)``.  ``tau`` is
either a scalar or an array of shape ``x.shape[:-1]``.  Drift returns
``(..., n)``; diffusion returns ``(..., n, m)``.  Coefficients must be pure
and elementwise over the batch axes, so evaluating a batch gives the same
bits as evaluating its members one at a time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, EvaluationError
from .frackernel import check_alpha

CoefficientFn = Callable[[object, np.ndarray], np.ndarray]

NO_FAST_TIME = math.inf
LAMBDA = 0.5


@dataclass(frozen=True)
class FsdeProblem:
    """One Caputo FSDE  D^alpha x = f(t/eps, x) dt + g(t/eps, x) dB on [0, T].

    ``epsilon = NO_FAST_TIME`` (infinity) marks an autonomous/homogenized
    problem whose coefficients receive ``t`` itself as fast time.
    ``drift_mean`` / ``diffusion_mean`` optionally hold closed-form time
    averages used as overrides by the homogenizer.
    """

    alpha: float
    epsilon: float
    horizon_T: float
    x0: np.ndarray
    drift: CoefficientFn
    diffusion: CoefficientFn
    noise_dim: int = 1
    label: str = ""
    drift_mean: Optional[Callable] = field(default=None, compare=False)
    diffusion_mean: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "alpha", check_alpha(self.alpha))
        x0 = np.array(self.x0, dtype=np.float64).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, "x0", x0)
        eps = float(self.epsilon)
        if not eps > 0.0:
            raise DomainError(f"epsilon must be > 0, got {self.epsilon!r}")
        object.__setattr__(self, "epsilon", eps)
        T = float(self.horizon_T)
        if not (T > 0.0 and math.isfinite(T)):
            raise DomainError(f"horizon_T must be finite and > 0, got {self.horizon_T!r}")
        object.__setattr__(self, "horizon_T", T)
        if x0.size < 1 or int(self.noise_dim) < 1:
            raise DomainError("state and noise dimensions must be >= 1")
        object.__setattr__(self, "noise_dim", int(self.noise_dim))

    @property
    def state_dim(self) -> int:
        return self.x0.size

    @property
    def autonomous(self) -> bool:
        return math.isinf(self.epsilon)

    def fast_time(self, t):
        """Rescaled time passed to the coefficients."""
        if math.isinf(self.epsilon):
            return t
        return t / self.epsilon


def _tau(tau):
    return np.asarray(tau, dtype=np.float64)[..., None]


# multiplicative linear system: f = tau x, g = x
def _ex1_drift(tau, x):
    return _tau(tau) * x


def _identity_diffusion(tau, x):
    return np.array(x, dtype=np.float64)[..., None]


# oscillating-coefficient system: f = 2 cos^2(tau) sin x, g = (e^-tau + 1) x
def _ex42_drift(tau, x):
    return 2.0 * np.cos(_tau(tau)) ** 2 * np.sin(x)


def _ex42_diffusion(tau, x):
    return ((np.exp(-_tau(tau)) + 1.0) * x)[..., None]


def _ex2_drift(tau, x):
    return _ex42_drift(tau, x) - LAMBDA * x


def _sin_mean(y):
    return np.sin(np.asarray(y, dtype=np.float64))


def _ex2_drift_mean(y):
    y = np.asarray(y, dtype=np.float64)
    return np.sin(y) - LAMBDA * y


def _identity_mean(y):
    return np.array(y, dtype=np.float64)[..., None]


def _ex42_hom_drift(tau, y):
    return _sin_mean(y)


def _ex2_hom_drift(tau, y):
    return _ex2_drift_mean(y)


def make_example1(alpha, epsilon, T) -> FsdeProblem:
    """Scalar problem with drift tau*x, diffusion x and x0 = 0.1."""
    return FsdeProblem(alpha, epsilon, T, [0.1], _ex1_drift, _identity_diffusion, label="example1")


def make_example2(alpha, epsilon, T) -> FsdeProblem:
    """Reduced stochastic fractional diffusion model, lambda = 1/2, x0 = 1/2."""
    return FsdeProblem(
        alpha, epsilon, T, [0.5], _ex2_drift, _ex42_diffusion, label="example2",
        drift_mean=_ex2_drift_mean, diffusion_mean=_identity_mean,
    )


def make_example2_homogenized(alpha, T) -> FsdeProblem:
    return FsdeProblem(
        alpha, NO_FAST_TIME, T, [0.5], _ex2_hom_drift, _identity_diffusion,
        label="example2-homogenized", drift_mean=_ex2_drift_mean, diffusion_mean=_identity_mean,
    )


def make_example42(alpha, epsilon, T) -> FsdeProblem:
    return FsdeProblem(
        alpha, epsilon, T, [0.5], _ex42_drift, _ex42_diffusion, label="example42",
        drift_mean=_sin_mean, diffusion_mean=_identity_mean,
    )


def make_example42_homogenized(alpha, T) -> FsdeProblem:
    return FsdeProblem(
        alpha, NO_FAST_TIME, T, [0.5], _ex42_hom_drift, _identity_diffusion,
        label="example42-homogenized", drift_mean=_sin_mean, diffusion_mean=_identity_mean,
    )


REGISTRY = {
    "example1": make_example1,
    "example2": make_example2,
    "example2-homogenized": lambda alpha, epsilon, T: make_example2_homogenized(alpha, T),
    "example42": make_example42,
    "example42-homogenized": lambda alpha, epsilon, T: make_example42_homogenized(alpha, T),
}

HOMOGENIZED_COUNTERPART = {
    "example2": "example2-homogenized",
    "example42": "example42-homogenized",
}


def make_problem(label: str, alpha, epsilon, T) -> FsdeProblem:
    try:
        factory = REGISTRY[label]
    except KeyError:
        raise DomainError(
            f"unknown model {label!r}; registered labels: {', '.join(REGISTRY)}"
        ) from None
    return factory(alpha, epsilon, T)


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned sampling box: state bounds plus a fast-time range."""

    lower: tuple
    upper: tuple
    t_lower: float = 0.0
    t_upper: float = 1.0

    def __post_init__(self):
        lo = tuple(float(v) for v in np.atleast_1d(self.lower))
        hi = tuple(float(v) for v in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or not all(h > l for l, h in zip(lo, hi)):
            raise DomainError(f"degenerate state box {lo} .. {hi}")
        if not self.t_upper > self.t_lower:
            raise DomainError("degenerate time range in state box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def grid(self, points_per_dim: int) -> np.ndarray:
        axes = [np.linspace(l, h, points_per_dim) for l, h in zip(self.lower, self.upper)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=-1)


@dataclass(frozen=True)
class LipschitzProbeReport:
    est_state_lipschitz: float
    est_time_lipschitz: float
    est_growth_bound: float
    sample_box: StateBox
    n_samples: int


def _checked(values, what, t, x):
    values = np.asarray(values, dtype=np.float64)
    bad = ~np.isfinite(values)
    if bad.any():
        idx = np.argwhere(bad.reshape(bad.shape[0], -1).any(axis=1))[0, 0]
        point = (float(np.atleast_1d(t)[idx]), np.atleast_2d(x)[idx].tolist())
        raise EvaluationError(f"{what} is not finite at (tau, x) = {point}", point=point)
    return values


def probe_assumptions(problem: FsdeProblem, box: StateBox, n_samples: int, seed: int) -> LipschitzProbeReport:
    """Monte Carlo lower bounds on the Lipschitz and growth constants.

    Sample i uses the i-th row of a single sequential stream, so adding
    samples under the same seed only extends the sampled set and the
    estimates can never decrease.
    """
    if n_samples < 2:
        raise DomainError("n_samples must be >= 2")
    n = problem.state_dim
    if box.dim != n:
        raise DomainError(f"box dimension {box.dim} does not match state dimension {n}")
    u = np.random.default_rng(seed).random((int(n_samples), 2 + 2 * n))
    lo, hi = np.array(box.lower), np.array(box.upper)
    span_t = box.t_upper - box.t_lower
    t = box.t_lower + span_t * u[:, 0]
    s = box.t_lower + span_t * u[:, 1]
    x = lo + (hi - lo) * u[:, 2 : 2 + n]
    y = lo + (hi - lo) * u[:, 2 + n :]

    def both(tau, pts):
        f = _checked(problem.drift(tau, pts), "drift", tau, pts)
        g = _checked(problem.diffusion(tau, pts), "diffusion", tau, pts)
        return f.reshape(len(pts), -1), g.reshape(len(pts), -1)

    ft_x, gt_x = both(t, x)
    ft_y, gt_y = both(t, y)
    fs_x, gs_x = both(s, x)
    f0, g0 = both(t, np.zeros_like(x))

    dx = np.linalg.norm(x - y, axis=1)
    dt = np.abs(t - s)
    ok_x, ok_t = dx > 0, dt > 0
    state = np.maximum(np.linalg.norm(ft_x - ft_y, axis=1), np.linalg.norm(gt_x - gt_y, axis=1))
    time = np.maximum(np.linalg.norm(ft_x - fs_x, axis=1), np.linalg.norm(gt_x - gs_x, axis=1))
    growth = np.maximum(np.linalg.norm(f0, axis=1), np.linalg.norm(g0, axis=1))
    return LipschitzProbeReport(
        est_state_lipschitz=float(np.max(state[ok_x] / dx[ok_x], initial=0.0)),
        est_time_lipschitz=float(np.max(time[ok_t] / dt[ok_t], initial=0.0)),
        est_growth_bound=float(growth.max()),
        sample_box=box,
        n_samples=int(n_samples),
    )
