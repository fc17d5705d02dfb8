import math

import numpy as np
import pytest

from fracsde import homogenize as H
from fracsde import model
from fracsde.errors import AveragingDivergenceError, DomainError, EvaluationError
from fracsde.model import NO_FAST_TIME, FsdeProblem, StateBox
from oracles import BALANCED_0_75_1E_2, BALANCED_0_9_1E_4

EX42 = model.make_example42(0.9, 0.1, 1.0)
PROBES = np.linspace(-2.0, 2.0, 21)[:, None]


@pytest.fixture(scope="module")
def ex42_numeric():
    return H.build_homogenized_problem(EX42, H.AveragingConfig(use_closed_form=False))


def _sin_mean(x):
    return np.sin(x)


def _identity_mean(x):
    return np.asarray(x)[..., None]


def test_average_frozen_drift():
    val = H.average_coefficient(EX42.drift, [1.0], 200 * math.pi, 40000)
    assert abs(val[0] - math.sin(1.0)) < 1e-6


def test_average_constant_is_exact():
    def const(tau, x):
        return np.full(np.shape(x), 0.1)

    assert H.average_coefficient(const, [0.3], 7.3, 3)[0] == 0.1


def test_average_decaying_diffusion():
    val = H.average_coefficient(EX42.diffusion, [0.5], 100.0, 10000)
    assert val.shape == (1, 1)
    assert abs(val[0, 0] - 0.5 * (1 + (1 - math.exp(-100)) / 100)) < 1e-6


def test_average_argument_checks():
    with pytest.raises(DomainError):
        H.average_coefficient(EX42.drift, [1.0], 0.0, 10)
    with pytest.raises(DomainError):
        H.average_coefficient(EX42.drift, [1.0], 1.0, 1)
    with pytest.raises(EvaluationError), np.errstate(invalid="ignore"):
        H.average_coefficient(lambda t, x: np.log(np.asarray(t) - 1.0 + 0 * x[..., 0])[..., None],
                              [1.0], 4.0, 8)


def test_numeric_averages_match_closed_forms(ex42_numeric):
    f = ex42_numeric.drift.value(PROBES)
    g = ex42_numeric.diffusion.value(PROBES)
    assert np.max(np.abs(f[:, 0] - np.sin(PROBES[:, 0]))) < 1e-6
    assert np.max(np.abs(g[:, 0, 0] - PROBES[:, 0])) < 1e-6
    assert ex42_numeric.autonomous and ex42_numeric.alpha == EX42.alpha
    assert np.array_equal(ex42_numeric.x0, EX42.x0)


def test_certificate_recorded(ex42_numeric):
    cert = ex42_numeric.drift.certificate
    assert cert.gap < cert.tol and cert.horizon == 10.0 * 2**cert.doublings
    assert ex42_numeric.drift.avg_horizon_T1 == cert.horizon
    assert ex42_numeric.drift.quadrature_steps == 32 * 2**cert.doublings


def test_interpolation_between_probe_nodes(ex42_numeric):
    x = np.linspace(-2, 2, 401)[:, None]
    assert np.max(np.abs(ex42_numeric.drift.value(x)[:, 0] - np.sin(x[:, 0]))) < 1e-4


def test_closed_form_override_and_deviation():
    hom = H.build_homogenized_problem(EX42, H.AveragingConfig(tol=1e-3))
    x = np.array([[0.3], [5.0]])
    assert np.array_equal(hom.drift(0.0, x), np.sin(x))
    assert hom.drift.closed_form_deviation() < 1e-2


def test_autonomous_problem_unchanged():
    p = model.make_example42_homogenized(0.9, 1.0)
    hom = H.build_homogenized_problem(p, H.AveragingConfig(use_closed_form=False))
    assert np.array_equal(hom.drift.node_values[:, 0], np.sin(PROBES[:, 0]))
    assert np.array_equal(hom.diffusion.node_values[:, 0, 0], PROBES[:, 0])


def test_outside_box_uses_direct_average():
    def drift(tau, x):
        return np.cos(np.asarray(tau))[..., None] * 0.0 + x**2

    p = FsdeProblem(0.9, 1.0, 1.0, [0.0], drift, model._identity_diffusion)
    hom = H.build_homogenized_problem(p, H.AveragingConfig(use_closed_form=False))
    assert np.allclose(hom.drift(0.0, np.array([[3.0], [-1.1]]))[:, 0], [9.0, 1.21], rtol=1e-12)


def test_divergent_average_is_detected():
    with pytest.raises(AveragingDivergenceError) as info:
        H.build_homogenized_problem(model.make_example1(0.9, 1.0, 1.0))
    assert info.value.gap > 0 and info.value.horizon > 0


def test_doubling_cap_is_enforced():
    cfg = H.AveragingConfig(tol=1e-12, max_doublings=3)
    with pytest.raises(AveragingDivergenceError, match="3 doublings"):
        H.build_homogenized_problem(EX42, cfg)


def test_config_validation():
    for kw in (dict(T1_start=0.0), dict(tol=0.0), dict(n_quad=1), dict(probe_points=3), dict(max_doublings=0)):
        with pytest.raises(DomainError):
            H.AveragingConfig(**kw)
    with pytest.raises(DomainError):
        H.build_homogenized_problem(EX42, H.AveragingConfig(x_probe_box=StateBox((0, 0), (1, 1))))


@pytest.mark.parametrize("alpha", [0.55, 0.75, 0.9, 1.0])
@pytest.mark.parametrize("T1", [0.37, 25.0])
def test_product_integration_reproduces_kernel_mass(alpha, T1):
    for beta in (alpha - 1.0, 2 * (alpha - 1.0)):
        exact = T1 ** (beta + 1) / (beta + 1)
        assert abs(H.product_integral(np.ones(513), T1, beta) - exact) <= 1e-13 * exact


def test_product_integration_exact_on_linear():
    T1, beta = 3.0, -0.4
    s = np.linspace(0, T1, 65)
    # int_0^T (T-s)^b s ds = T^(b+2) / ((b+1)(b+2))
    exact = T1 ** (beta + 2) / ((beta + 1) * (beta + 2))
    assert abs(H.product_integral(s, T1, beta) - exact) < 1e-13 * exact


def test_kernel_rejects_non_integrable():
    with pytest.raises(DomainError):
        H.kernel_panel_weights(-1.0, 4)


def test_zero_residual_profiles_vanish():
    x = PROBES[::5]
    hom = model.make_example42_homogenized(0.9, 1.0)
    for kind, coef, mean in (("drift", hom.drift, _sin_mean), ("diffusion", hom.diffusion, _identity_mean)):
        assert np.all(H.weak_profile(coef, mean, 0.9, kind, [10, 100], x).values == 0)
        assert np.all(H.strong_profile(coef, mean, [10, 100], x, kind=kind).values == 0)


def test_weak_drift_profile_below_analytic_bound():
    a = 0.9
    prof = H.weak_profile(EX42.drift, _sin_mean, a, "drift", [10, 100, 1000], PROBES)
    bound = [2 / T**(2 * a) + 2 / (a * a * T**(2 * a)) + 1 / T**2 for T in (10, 100, 1000)]
    assert np.all(prof.values < bound)
    assert np.all(np.diff(prof.values) < 0)
    assert np.all(prof.values >= 0) and np.all(np.diff(prof.t1_grid) > 0)


def test_weak_diffusion_profile_decay_exponent():
    t1 = np.array([10, 30, 100, 300, 1000.0])
    prof = H.weak_profile(EX42.diffusion, _identity_mean, 0.9, "diffusion", t1, PROBES)
    assert np.all(np.diff(prof.values) < 0)
    slope = np.polyfit(np.log(t1), np.log(prof.values), 1)[0]
    assert -slope >= 1 - 0.1
    assert np.all(prof.values < 1 / t1 + 1 / t1 ** (2 * 0.9 - 1))


def test_strong_drift_profile_plateau():
    x = np.array([[math.pi / 2]])
    prof = H.strong_profile(EX42.drift, _sin_mean, [100, 1000, 4000], x)
    limit = 0.5 / (1 + (math.pi / 2) ** 2)
    assert abs(prof.values[-1] - limit) < 0.01 * limit


def test_strong_diffusion_profile_decays_like_inverse_horizon():
    x = np.array([[1.5]])
    prof = H.strong_profile(EX42.diffusion, _identity_mean, [100, 1000], x, kind="diffusion")
    expected = 1 / (2 * np.array([100, 1000])) * 1.5**2 / (1 + 1.5**2)
    np.testing.assert_allclose(prof.values, expected, rtol=1e-2)


def test_weak_below_strong_for_built_in_drift():
    t1 = [10, 50, 200, 1000]
    weak = H.weak_profile(EX42.drift, _sin_mean, 0.9, "drift", t1, PROBES)
    strong = H.strong_profile(EX42.drift, _sin_mean, t1, PROBES)
    assert np.all(weak.pointwise <= strong.pointwise)


def test_headline_contrast_at_half_pi():
    x = np.array([[math.pi / 2]])
    weak = H.weak_profile(EX42.drift, _sin_mean, 0.9, "drift", [10, 1000], x).values
    strong = H.strong_profile(EX42.drift, _sin_mean, [10, 1000], x).values
    assert weak[1] < weak[0] / 4 and strong[1] > strong[0] / 2


def test_profile_argument_checks():
    with pytest.raises(DomainError):
        H.weak_profile(EX42.drift, _sin_mean, 0.9, "drift", [], PROBES)
    with pytest.raises(DomainError):
        H.weak_profile(EX42.drift, _sin_mean, 0.9, "drift", [10, 5], PROBES)
    with pytest.raises(DomainError):
        H.weak_profile(EX42.drift, _sin_mean, 0.9, "other", [10], PROBES)


def test_balanced_step_values():
    assert H.balanced_step(0.9, 1e-4) == pytest.approx(BALANCED_0_9_1E_4, rel=1e-14)
    assert H.balanced_step(0.75, 0.01) == pytest.approx(BALANCED_0_75_1E_2, rel=1e-14)
    assert H.balanced_step(0.5 + 1e-12, 0.3) == pytest.approx(0.3, rel=1e-10)
    with pytest.raises(DomainError):
        H.balanced_step(1.0, 0.1)
    with pytest.raises(DomainError):
        H.balanced_step(0.9, 0.0)


def test_profile_csv(tmp_path):
    t1 = [10.0, 100.0]
    x = PROBES[::10]
    prof = [
        H.weak_profile(EX42.drift, _sin_mean, 0.9, "drift", t1, x),
        H.weak_profile(EX42.diffusion, _identity_mean, 0.9, "diffusion", t1, x),
        H.strong_profile(EX42.drift, _sin_mean, t1, x),
        H.strong_profile(EX42.diffusion, _identity_mean, t1, x, kind="diffusion"),
    ]
    path = tmp_path / "p.csv"
    H.write_profile_csv(path, *prof)
    lines = path.read_text().splitlines()
    assert lines[0] == "T1,weak_drift,weak_diffusion,strong_drift,strong_diffusion"
    assert [float(v) for v in lines[2].split(",")] == [100.0] + [p.values[1] for p in prof]
