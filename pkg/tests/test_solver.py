import math

import numpy as np
import pytest

from fracsde import brownian, model, solver
from fracsde.errors import BlowUpError, ConvergenceError, DomainError
from fracsde.model import NO_FAST_TIME, FsdeProblem
from oracles import ML


def _zero_diffusion(tau, x):
    return np.zeros(np.shape(x) + (1,))


def _linear(alpha=0.9, T=1.0, x0=1.0):
    return FsdeProblem(alpha, NO_FAST_TIME, T, [x0], lambda t, x: -0.5 * x, _zero_diffusion, label="linear")


def test_zero_coefficients_keep_initial_value():
    p = FsdeProblem(0.8, 1.0, 1.0, [0.3, -0.2], lambda t, x: np.zeros_like(x),
                    lambda t, x: np.zeros(np.shape(x) + (1,)))
    ens = solver.em_solve(p, brownian.generate(1, 3, 20, 0.05))
    assert np.all(ens.states == np.array([0.3, -0.2]))


def test_one_step_expansion():
    p = model.make_example42(0.8, 0.5, 0.01)
    lat = brownian.generate(2, 4, 1, 0.01)
    ens = solver.em_solve(p, lat)
    dt, a, x0 = 0.01, 0.8, 0.5
    f0 = 2 * math.sin(x0)
    g0 = 2 * x0
    expect = x0 + dt**a / math.gamma(a + 1) * f0 + dt ** (a - 1) / math.gamma(a) * g0 * lat.increments[:, 0, 0]
    np.testing.assert_allclose(ens.states[:, 1, 0], expect, rtol=1e-14)


def test_linear_problem_matches_mittag_leffler():
    ens = solver.em_solve(_linear(), brownian.generate(0, 1, 4096, 1 / 4096))
    ref = ML[(0.9, -0.5)]
    assert abs(ens.states[0, -1, 0] - ref) / ref < 1e-2


def test_ensemble_fields():
    p = model.make_example1(0.9, 1.0, 0.5)
    lat = brownian.generate(3, 6, 10, 0.05)
    ens = solver.em_solve(p, lat)
    assert (ens.n_paths, ens.n_steps, ens.state_dim) == (6, 10, 1)
    assert ens.lattice_fingerprint == lat.fingerprint()
    np.testing.assert_allclose(ens.times[-1], 0.5)
    assert np.all(ens.states[:, 0] == p.x0)
    assert np.all(np.isfinite(ens.states))


def test_memoized_and_naive_agree_bitwise():
    p = model.make_example2(0.75, 0.1, 1.0)
    lat = brownian.generate(5, 8, 40, 1 / 40)
    assert np.array_equal(solver.em_solve(p, lat).states, solver.em_solve(p, lat, memoize=False).states)


@pytest.mark.parametrize("threads", [2, 3, 16])
def test_thread_count_does_not_change_bits(threads):
    p = model.make_example42(0.9, 0.05, 1.0)
    lat = brownian.generate(6, 17, 64, 1 / 64)
    assert np.array_equal(solver.em_solve(p, lat).states, solver.em_solve(p, lat, threads=threads).states)


def test_path_result_independent_of_ensemble():
    p = model.make_example1(0.9, 1.0, 1.0)
    lat = brownian.generate(6, 9, 30, 1 / 30)
    full = solver.em_solve(p, lat).states
    alone = solver.em_solve(p, lat.select([4])).states
    assert np.array_equal(alone[0], full[4])


def test_order_one_is_classical_euler_maruyama():
    p = model.make_example1(1.0, 1.0, 1.0)
    lat = brownian.generate(1, 5, 1000, 1e-3)
    ens = solver.em_solve(p, lat)
    x = np.full(5, 0.1)
    for n in range(1000):
        x = x + (n * 1e-3) * x * 1e-3 + x * lat.increments[:, n, 0]
        ulps = np.abs(x - ens.states[:, n + 1, 0]) / np.spacing(np.abs(x))
        assert np.all(ulps <= 8 * (n + 1))


def test_blow_up_reports_path_and_step():
    p = FsdeProblem(1.0, NO_FAST_TIME, 1.0, [2.0], lambda t, x: 1e300 * x**3, _zero_diffusion)
    with pytest.raises(BlowUpError) as info, np.errstate(over="ignore", invalid="ignore"):
        solver.em_solve(p, brownian.generate(0, 2, 10, 0.1))
    assert info.value.path == 0 and info.value.step >= 1
    assert np.all(np.isfinite(info.value.last_state))


def test_dimension_and_horizon_checks():
    p = model.make_example1(0.9, 1.0, 1.0)
    with pytest.raises(DomainError):
        solver.em_solve(p, brownian.generate(0, 2, 10, 0.1, m=2))
    with pytest.raises(DomainError):
        solver.em_solve(p, brownian.generate(0, 2, 10, 0.05))


def test_picard_trivial_problem_one_iteration():
    p = FsdeProblem(0.9, 1.0, 1.0, [0.7], lambda t, x: np.zeros_like(x), _zero_diffusion)
    traj, iters = solver.picard_solve(p, brownian.generate(0, 1, 16, 1 / 16), 0)
    assert iters == 1 and np.all(traj == 0.7)


def test_picard_linear_matches_em():
    p = _linear()
    lat = brownian.generate(0, 1, 256, 1 / 256)
    traj, _ = solver.picard_solve(p, lat, 0, tol=1e-12)
    em = solver.em_solve(p, lat).states[0]
    assert np.max(np.abs(traj - em)) < 1e-12 + 10 * 1e-12


def test_picard_example1_matches_em():
    p = model.make_example1(0.9, 1.0, 1.0)
    lat = brownian.generate(17, 3, 200, 1 / 200)
    em = solver.em_solve(p, lat).states
    for i in range(3):
        traj, _ = solver.picard_solve(p, lat, i, tol=1e-12)
        assert np.max(np.abs(traj - em[i])) < 1e-10


def test_picard_errors():
    p = model.make_example1(0.9, 1.0, 1.0)
    lat = brownian.generate(1, 2, 50, 0.02)
    with pytest.raises(ConvergenceError) as info:
        solver.picard_solve(p, lat, 0, max_iters=2, tol=1e-14)
    assert info.value.residual > 0
    with pytest.raises(DomainError):
        solver.picard_solve(p, lat, 2)
    with pytest.raises(DomainError):
        solver.picard_solve(p, lat, 0, tol=0.0)


def _ensemble(states):
    states = np.asarray(states, dtype=float)
    return solver.PathEnsemble("x", 0.9, 1.0, 0.1, states, (0, "g", 1))


def test_empirical_moment_trivial_cases():
    const = _ensemble(np.full((3, 4, 1), -1.5))
    np.testing.assert_allclose(solver.empirical_moment(const, 3.0), 1.5**3)
    two = _ensemble([[[0.0]], [[2.0]]])
    assert solver.empirical_moment(two, 2)[0] == 2.0
    with pytest.raises(DomainError):
        solver.empirical_moment(two, 1.5)


def test_second_moment_bounded_example1():
    p = model.make_example1(0.9, 1.0, 0.1)
    ens = solver.em_solve(p, brownian.generate(1, 2000, 640, 0.1 / 640))
    m2 = solver.empirical_moment(ens, 2)
    assert np.all(np.isfinite(m2)) and m2.max() < 10 * 0.1**2


def test_ensemble_csv(tmp_path):
    p = model.make_example1(0.9, 1.0, 0.1)
    ens = solver.em_solve(p, brownian.generate(7, 4, 80, 0.1 / 80))
    path = tmp_path / "e.csv"
    solver.write_ensemble_csv(ens, path, ["config_hash: abc"])
    raw = path.read_bytes()
    assert b"\r" not in raw
    lines = raw.decode().splitlines()
    assert lines[0] == "# config_hash: abc" and lines[1] == "path,t,x_1"
    assert len(lines) == 2 + 4 * 81
    p_, t_, x_ = lines[2 + 81].split(",")
    assert p_ == "1" and float(t_) == 0.0 and float(x_) == ens.states[1, 0, 0]
    last = lines[-1].split(",")
    assert float(last[2]) == ens.states[3, 80, 0]
