import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.integrate import quad_vec

from fcltlab import config
from fcltlab.chain_model import (
    build_birth_death,
    build_cycle,
    build_from_rates,
    build_random_reversible,
    build_two_state,
    center,
)
from fcltlab.errors import NotCentered, NotReversible
from fcltlab.spectral import (
    abel_norm_curve,
    decompose,
    default_lambda_grid,
    energy_identity_residual,
    fractional_power_apply,
    frep_residual,
    laplace_resolvent,
    operator_norm_bounds,
    pi_inner,
    pi_norm,
    potential_apply,
    resolvent_apply,
    resolvent_identity_residual,
    semigroup_apply,
    sigma2_fractional_formula,
    sigma2_lambda,
    sigma2_range_formula,
    spectral_gap,
    sqrt_lambda_bound_check,
    transition_matrix,
    tv_convergence_curve,
    yosida_potential_residual,
)


def test_decompose_three_state(three_state):
    spec = decompose(three_state)
    assert_allclose(spec.eigenvalues, [0.0, -1.0, -3.0], atol=1e-12)
    assert spec.eigenvalues[0] == 0.0
    # pi-orthonormal eigenvectors
    gram = spec.eigenvectors.T @ (three_state.pi[:, None] * spec.eigenvectors)
    assert_allclose(gram, np.eye(3), atol=1e-12)
    assert_allclose(spec.eigenvectors[:, 0], np.ones(3), atol=1e-12)
    assert spec.s_min == pytest.approx(1.0)


def test_decompose_reconstructs_generator(random_model):
    spec = decompose(random_model)
    E = spec.eigenvectors
    rebuilt = E @ np.diag(spec.eigenvalues) @ E.T @ np.diag(random_model.pi)
    assert_allclose(rebuilt, random_model.Q, atol=1e-9 * np.abs(random_model.Q).max())


def test_decompose_signs_are_deterministic(random_model):
    a = decompose(random_model).eigenvectors
    b = decompose(random_model).eigenvectors
    assert_allclose(a, b, rtol=0, atol=0)


def test_decompose_rejects_non_reversible(cycle3):
    with pytest.raises(NotReversible):
        decompose(cycle3)


def test_spectral_gap_of_cycle(cycle3):
    # eigenvalues e^{2 pi i k / 3} - 1 have real part -3/2
    assert spectral_gap(cycle3) == pytest.approx(1.5)


def test_sigma2_two_state_both_formulas(two_state, parity):
    spec = decompose(two_state)
    assert abs(sigma2_range_formula(two_state, parity).sigma2 - 1.0) <= 1e-12
    assert abs(sigma2_fractional_formula(spec, parity).sigma2 - 1.0) <= 1e-12


def test_sigma2_three_state_both_formulas(three_state, tilt):
    spec = decompose(three_state)
    range_value = sigma2_range_formula(three_state, tilt).sigma2
    fractional_value = sigma2_fractional_formula(spec, tilt).sigma2
    assert range_value == pytest.approx(4 / 3, rel=1e-10)
    assert abs(range_value - fractional_value) <= 1e-12


def test_sigma2_formulas_agree_on_random_model(random_model, random_f):
    spec = decompose(random_model)
    a = sigma2_range_formula(random_model, random_f, lambda_grid=[]).sigma2
    b = sigma2_fractional_formula(spec, random_f, lambda_grid=[]).sigma2
    assert abs(a - b) <= 1e-9 * max(1.0, a)


def test_sigma2_range_formula_non_reversible(cycle3):
    f = center([1.0, -1.0, 0.0], cycle3)
    report = sigma2_range_formula(cycle3, f)
    assert report.sigma2 > 0
    assert report.formula_used == "range-inverse"
    assert report.monotone


def test_sigma2_needs_centered_observable(three_state):
    with pytest.raises(NotCentered):
        sigma2_range_formula(three_state, np.array([1.0, 1.0, 1.0]))


def test_sigma2_of_zero_observable(three_state):
    assert sigma2_range_formula(three_state, np.zeros(3), lambda_grid=[]).sigma2 == 0.0


def test_sigma2_lambda_closed_form_two_state(two_state, parity):
    for lam in (1e-3, 0.5, 2.0, 40.0):
        assert sigma2_lambda(two_state, parity, lam) == pytest.approx(4.0 / (lam + 2.0) ** 2, rel=1e-12)


def test_sigma2_lambda_curve_monotone_and_converges(random_model, random_f):
    report = sigma2_range_formula(random_model, random_f)
    assert report.monotone
    s_min = spectral_gap(random_model)
    gap = report.sigma2 - sigma2_lambda(random_model, random_f, 1e-8 * s_min)
    assert 0 <= gap <= 1e-6 * report.sigma2


def test_variance_report_to_dict(two_state, parity):
    d = sigma2_range_formula(two_state, parity, lambda_grid=[1.0]).to_dict()
    assert set(d) == {"sigma2", "curve", "formula"}
    assert d["curve"][0][0] == 1.0


def test_frep_residual(random_model, random_f):
    for lam in default_lambda_grid(spectral_gap(random_model)):
        assert frep_residual(random_model, lam, random_f) <= 1e-10


def test_resolvent_of_constant(three_state):
    for lam in (1e-6, 1e-2, 1.0, 100.0):
        x = resolvent_apply(three_state, lam, np.ones(3))
        assert_allclose(lam * x, np.ones(3), rtol=1e-12)


def test_resolvent_rejects_nonpositive_lambda(three_state, tilt):
    with pytest.raises(ValueError):
        resolvent_apply(three_state, 0.0, tilt)


@pytest.mark.parametrize("lam,mu", [(0.1, 2.0), (3.0, 0.01), (1e-4, 1e-1)])
def test_resolvent_identity(random_model, lam, mu):
    f = np.random.default_rng(5).standard_normal(random_model.m)
    residual = resolvent_identity_residual(random_model, lam, mu, f)
    scale = max(1.0, pi_norm(resolvent_apply(random_model, lam, f), random_model))
    assert residual <= 1e-9 * scale


def test_operator_norms_reversible(random_model):
    spec = decompose(random_model)
    for lam in (1e-3, 0.1, 1.0, 10.0):
        damped, drift = operator_norm_bounds(random_model, lam, spec)
        assert damped <= 1 + 1e-10
        assert drift <= 1 + 1e-10


def test_operator_norms_power_matches_spectral(three_state):
    spectral = operator_norm_bounds(three_state, 0.7, method="spectral")
    power = operator_norm_bounds(three_state, 0.7, method="power")
    assert_allclose(power, spectral, rtol=1e-6)


def test_operator_norm_damped_on_cycle(cycle3):
    damped, _ = operator_norm_bounds(cycle3, 0.5)
    assert damped == pytest.approx(1.0, abs=1e-8)


def test_fractional_power_calculus(random_model, random_f):
    spec = decompose(random_model)
    half = fractional_power_apply(spec, 0.5, random_f)
    full = fractional_power_apply(spec, 0.5, half)
    assert_allclose(full, -random_model.Q @ random_f.values, atol=1e-9 * max(1.0, np.abs(random_model.Q).max()))
    back = fractional_power_apply(spec, -0.5, half)
    assert_allclose(back, random_f.values, atol=1e-9)


def test_negative_power_needs_centered(three_state):
    spec = decompose(three_state)
    with pytest.raises(NotCentered):
        fractional_power_apply(spec, -0.5, np.ones(3))


def test_potential_apply(three_state, tilt):
    g = potential_apply(three_state, tilt)
    assert_allclose(g, tilt.values, atol=1e-12)  # decay rate 1
    assert abs(three_state.pi @ g) <= 1e-12


def test_sqrt_lambda_bound(random_model, random_f):
    spec = decompose(random_model)
    for lam in default_lambda_grid(spec.s_min * 100, steps=12):
        lhs, rhs = sqrt_lambda_bound_check(spec, random_f, lam)
        assert lhs <= rhs + 1e-12


def test_sqrt_lambda_bound_is_attained(three_state, tilt):
    spec = decompose(three_state)
    lhs, rhs = sqrt_lambda_bound_check(spec, tilt, 1.0)
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_energy_identity(random_model, random_f):
    spec = decompose(random_model)
    for lam in (1e-3, 1.0, 50.0):
        assert energy_identity_residual(spec, random_f, lam) <= 1e-9 * max(1.0, pi_norm(random_f.values, random_model) ** 2)


def test_yosida_decay(random_model, random_f):
    s_min = spectral_gap(random_model)
    lambdas = s_min * 10.0 ** -np.arange(7)
    report = yosida_potential_residual(random_model, random_f, lambdas)
    assert report.monotone
    assert report.residuals[-1] <= 1e-5 * report.potential_norm


def test_yosida_needs_decreasing_sequence(three_state, tilt):
    with pytest.raises(ValueError):
        yosida_potential_residual(three_state, tilt, [0.1, 1.0])


def test_abel_dichotomy(three_state, tilt):
    lambdas = [1.0, 1e-2, 1e-4, 1e-6]
    constant = abel_norm_curve(three_state, np.ones(3), lambdas)
    assert_allclose(constant, 1.0, atol=1e-10)
    centered = abel_norm_curve(three_state, tilt, lambdas)
    assert centered[-1] < 1e-5
    assert all(b < a for a, b in zip(centered, centered[1:]))


def test_semigroup_methods_agree(random_model, random_f):
    for t in (0.01, 0.5, 3.0):
        spectral = semigroup_apply(random_model, t, random_f, method="spectral")
        uniform = semigroup_apply(random_model, t, random_f, method="uniformization")
        assert_allclose(spectral, uniform, atol=1e-10)


def test_transition_matrix_is_stochastic(cycle3):
    P = transition_matrix(cycle3, 0.8)
    assert np.all(P >= 0)
    assert_allclose(P.sum(axis=1), 1.0, atol=1e-12)


def test_tv_two_state_closed_form(two_state):
    curve = tv_convergence_curve(two_state, [0.0, 1.0, 2.0])
    assert abs(curve[0, 1] - np.exp(-2.0) / 2) <= 1e-10
    assert abs(curve[0, 2] - np.exp(-4.0) / 2) <= 1e-10
    assert curve[0, 0] == pytest.approx(0.5)


def test_tv_curve_nonincreasing_non_reversible(cycle3):
    curve = tv_convergence_curve(cycle3, np.linspace(0, 4, 9))
    assert np.all(np.diff(curve, axis=1) <= 1e-10)


def test_laplace_resolvent(random_model, random_f):
    s_min = spectral_gap(random_model)
    expected = resolvent_apply(random_model, s_min, random_f)
    got = laplace_resolvent(random_model, s_min, random_f, horizon=1.0 / s_min)
    assert pi_norm(got - expected, random_model) <= 1e-6 * max(1.0, pi_norm(expected, random_model))


def test_laplace_resolvent_non_reversible(cycle3):
    f = np.array([1.0, -1.0, 0.0])
    expected = resolvent_apply(cycle3, 1.0, f)
    assert_allclose(laplace_resolvent(cycle3, 1.0, f, horizon=2.0), expected, atol=1e-6)


def test_pi_inner_symmetric_generator(random_model):
    rng = np.random.default_rng(1)
    f, g = rng.standard_normal((2, random_model.m))
    assert pi_inner(random_model.Q @ f, g, random_model) == pytest.approx(
        pi_inner(f, random_model.Q @ g, random_model), rel=1e-10, abs=1e-10)


def test_two_state_asymmetric_sigma2():
    model = build_two_state(1.0, 3.0)
    f = center([1.0, 0.0], model)
    # sigma^2 = 2 ||f||^2 / (a + b)
    expected = 2 * pi_norm(f.values, model) ** 2 / 4.0
    assert sigma2_range_formula(model, f, lambda_grid=[]).sigma2 == pytest.approx(expected, rel=1e-12)


def test_random_models_sweep():
    for seed in range(5):
        model = build_random_reversible(30, seed=seed)
        f = center(np.random.default_rng(seed).standard_normal(30), model)
        spec = decompose(model)
        a = sigma2_range_formula(model, f, lambda_grid=[]).sigma2
        b = sigma2_fractional_formula(spec, f, lambda_grid=[]).sigma2
        assert abs(a - b) <= 1e-9 * max(1.0, a)


@pytest.mark.parametrize("model", [
    build_from_rates([[-1.0, 1.0], [1.0, -1.0]]),
    build_birth_death(np.ones(4), np.ones(4)),
    build_birth_death(np.ones(9), np.ones(9)),
    build_cycle(4),
    build_cycle(5),
], ids=["rates-two-state", "birth-death-5", "birth-death-10", "cycle-4", "cycle-5"])
def test_resolvent_identity_far_below_gap(model):
    f = center(np.linspace(-1.0, 1.0, model.m), model)
    s_min = spectral_gap(model)
    lam = 1e-8 * s_min
    r_norm = pi_norm(resolvent_apply(model, lam, f), model)
    residual = resolvent_identity_residual(model, lam, s_min, f)
    assert residual / max(1.0, r_norm) <= config.TOL_IDENTITY


def test_resolvent_keeps_centered_output_centered(random_model, random_f):
    x = resolvent_apply(random_model, 1e-9, resolvent_apply(random_model, 1.0, random_f))
    assert abs(random_model.pi @ x) <= 1e-12 * max(1.0, pi_norm(x, random_model))


def test_resolvent_constant_mode_is_exact(random_model):
    for lam in (1.0, 1e-4, 1e-10):
        assert_allclose(resolvent_apply(random_model, lam, np.ones(random_model.m)),
                        np.full(random_model.m, 1.0 / lam), rtol=1e-12)


def test_laplace_integral_alone_matches_resolvent(random_model, random_f):
    # horizon long enough that the tail e^{-lambda T} R T_T f is below tolerance
    s_min = spectral_gap(random_model)
    f = random_f.values
    body, _ = quad_vec(lambda s: np.exp(-s_min * s) * semigroup_apply(random_model, s, f),
                       0.0, config.LAPLACE_HORIZON / s_min, epsabs=1e-12, epsrel=1e-10)
    expected = resolvent_apply(random_model, s_min, f)
    assert pi_norm(body - expected, random_model) <= config.TOL_LAPLACE * max(1.0, pi_norm(expected, random_model))
