import math

import numpy as np
import pytest

from horizon_lab.kim_omberg import (
    KimOmbergParams,
    RegimeError,
    analytic_c,
    analytic_pole,
    conditional_wealth,
    discriminant,
    ou_moments,
    primal_value,
    solve_riccati,
    value_e,
)

# kappa=0 with these values gives the tangent solution c(s) = tan(s+pi/4)-1,
# pole at pi/4, b identically zero, and a(K) in closed form; the E(pi/8)
# value below was frozen from two independent routes (closed-form float
# evaluation and a fixed-step RK4 rerun) that agree to 2e-15.
CANON = KimOmbergParams(kappa=0.0, theta=0.05, beta=1.0, mu0=0.5, p=0.5)
CANON_POLE = math.pi / 4.0
E_CANON_PI8 = 1.332975883016419

# positive-discriminant companion: same p, strong reversion, small beta
STABLE = KimOmbergParams(kappa=1.0, theta=0.05, beta=0.1, mu0=0.5, p=0.5)


def _canon_c(s):
    return math.tan(s + math.pi / 4.0) - 1.0


def _canon_a(s):
    return 0.5 * (math.log(math.cos(math.pi / 4.0) / math.cos(s + math.pi / 4.0)) - s)


def test_param_validation():
    with pytest.raises(ValueError):
        KimOmbergParams(kappa=0.0, theta=0.0, beta=0.0, mu0=0.1, p=0.5)
    with pytest.raises(ValueError):
        KimOmbergParams(kappa=0.0, theta=0.0, beta=1.0, mu0=0.1, p=1.0)
    with pytest.raises(ValueError):
        KimOmbergParams(kappa=0.0, theta=0.0, beta=1.0, mu0=0.1, p=0.0)
    with pytest.raises(ValueError):
        KimOmbergParams(kappa=-0.5, theta=0.0, beta=1.0, mu0=0.1, p=0.5)
    with pytest.raises(ValueError):
        KimOmbergParams(kappa=0.0, theta=math.nan, beta=1.0, mu0=0.1, p=0.5)


def test_discriminant_examples():
    assert discriminant(CANON) == -4.0
    assert abs(discriminant(STABLE) - 3.16) < 1e-12


def test_analytic_pole_canonical():
    assert abs(analytic_pole(CANON) - CANON_POLE) < 1e-12
    with pytest.raises(RegimeError):
        analytic_pole(STABLE)


def test_analytic_c_closed_form():
    for s in (0.0, 0.1, 0.3, 0.5, 0.7, 0.78):
        assert abs(analytic_c(CANON, s) - _canon_c(s)) <= 1e-10 * max(
            1.0, abs(_canon_c(s))
        )
    assert analytic_c(CANON, CANON_POLE) == math.inf
    assert analytic_c(CANON, 2.0) == math.inf
    with pytest.raises(ValueError):
        analytic_c(CANON, -0.1)
    with pytest.raises(RegimeError):
        analytic_c(STABLE, 0.5)


def test_numeric_matches_analytic_c():
    sol = solve_riccati(CANON, 0.95 * CANON_POLE)
    assert sol.method == "numeric"
    assert np.all(np.diff(sol.s_grid) > 0.0)
    for s in np.linspace(0.0, 0.95 * CANON_POLE, 40):
        _, b, c = sol.eval_abc(s)
        want = _canon_c(s)
        assert abs(float(c) - want) <= 1e-8 * max(1.0, abs(want))
        assert abs(float(b)) < 1e-12  # kappa=0 keeps b at its zero start


def test_numeric_matches_analytic_a():
    sol = solve_riccati(CANON, 0.9 * CANON_POLE)
    for s in (0.2, 0.5, 0.9 * CANON_POLE):
        a, _, _ = sol.eval_abc(s)
        assert abs(float(a) - _canon_a(s)) <= 1e-8 * max(1.0, abs(_canon_a(s)))


def test_explosion_time_detection():
    sol = solve_riccati(CANON, 1.0)
    assert sol.explosion_time is not None
    assert abs(sol.explosion_time - CANON_POLE) < 1e-6
    assert sol.s_grid[-1] < sol.explosion_time


def test_no_explosion_converges_to_riccati_root():
    sol = solve_riccati(STABLE, 20.0)
    assert sol.explosion_time is None
    # smaller root of q2*c^2 + q1*c + q0 with q0=2, q1=-1.8, q2=0.01
    root = (1.8 - math.sqrt(3.16)) / 0.02
    _, _, c = sol.eval_abc(20.0)
    assert abs(float(c) - root) < 1e-8


def test_solver_input_validation():
    with pytest.raises(ValueError):
        solve_riccati(CANON, 0.0)
    with pytest.raises(ValueError):
        solve_riccati(CANON, 0.5, tol=0.0)
    sol = solve_riccati(CANON, 0.5)
    with pytest.raises(ValueError):
        sol.eval_abc(0.7)
    with pytest.raises(ValueError):
        sol.eval_abc(-0.1)


def test_value_e_at_zero_is_one():
    assert value_e(CANON, 0.0) == 1.0


def test_value_e_frozen_point():
    got = value_e(CANON, math.pi / 8.0)
    assert abs(got - E_CANON_PI8) <= 1e-8 * E_CANON_PI8
    # same number straight from the closed forms
    closed = math.exp(
        _canon_a(math.pi / 8.0) + 0.5 * _canon_c(math.pi / 8.0) * 0.5 ** 2
    )
    assert abs(closed - E_CANON_PI8) <= 1e-12 * E_CANON_PI8


def test_value_e_monotone_and_explodes():
    e3 = value_e(CANON, 0.3)
    e6 = value_e(CANON, 0.6)
    e75 = value_e(CANON, 0.75)
    assert 1.0 < e3 < e6 < e75 < math.inf
    assert value_e(CANON, CANON_POLE) == math.inf
    assert value_e(CANON, 1.0) == math.inf
    with pytest.raises(ValueError):
        value_e(CANON, -0.5)


def test_value_e_tolerance_refinement():
    truth = E_CANON_PI8
    coarse = value_e(CANON, math.pi / 8.0, tol=1e-6)
    fine = value_e(CANON, math.pi / 8.0, tol=1e-12)
    assert abs(coarse - truth) <= 1e-4 * truth
    assert abs(fine - truth) <= 1e-9 * truth


def test_primal_value_scaling():
    u1 = primal_value(CANON, 1.0, math.pi / 8.0)
    e = value_e(CANON, math.pi / 8.0)
    assert abs(u1 - e ** 0.5 / 0.5) < 1e-12
    # u(x) = x^p * u(1) for power utility
    u4 = primal_value(CANON, 4.0, math.pi / 8.0)
    assert abs(u4 - 2.0 * u1) < 1e-12
    assert primal_value(CANON, 1.0, 1.0) == math.inf
    with pytest.raises(ValueError):
        primal_value(CANON, 0.0, 0.5)


def test_ou_moments():
    m = ou_moments(CANON, 0.7)
    assert m["mean"] == 0.5
    assert abs(m["var"] - 0.7) < 1e-15

    m0 = ou_moments(STABLE, 0.0)
    assert m0["mean"] == 0.5 and m0["var"] == 0.0

    t = 0.3
    m = ou_moments(STABLE, t)
    want_mean = math.exp(-t) * 0.5 + 0.05 * (1.0 - math.exp(-t))
    want_var = 0.1 ** 2 * (1.0 - math.exp(-2.0 * t)) / 2.0
    assert abs(m["mean"] - want_mean) < 1e-15
    assert abs(m["var"] - want_var) < 1e-17

    m_inf = ou_moments(STABLE, 200.0)
    assert abs(m_inf["mean"] - 0.05) < 1e-12
    assert abs(m_inf["var"] - 0.1 ** 2 / 2.0) < 1e-12

    with pytest.raises(ValueError):
        ou_moments(CANON, -1.0)


def test_conditional_wealth_terminal_identity():
    # at t=T the affine exponent vanishes, leaving (y*z)^(1/(p-1))
    y, T = 0.8, 0.5
    z = np.array([0.5, 1.0, 2.3])
    got = conditional_wealth(CANON, y, T, T, z, np.array([0.1, 0.5, -0.2]))
    want = (y * z) ** (1.0 / (CANON.p - 1.0))
    assert np.allclose(got, want, rtol=1e-10)
    s = conditional_wealth(CANON, y, T, T, 2.0, 0.3)
    assert isinstance(s, float)
    assert abs(s - (y * 2.0) ** -2.0) < 1e-9


def test_conditional_wealth_decreasing_in_y():
    lo = conditional_wealth(CANON, 0.5, 0.2, 0.5, 1.0, 0.5)
    hi = conditional_wealth(CANON, 2.0, 0.2, 0.5, 1.0, 0.5)
    assert lo > hi > 0.0


def test_conditional_wealth_validation():
    with pytest.raises(RegimeError):
        conditional_wealth(CANON, 1.0, 0.0, 1.0, 1.0, 0.5)
    with pytest.raises(ValueError):
        conditional_wealth(CANON, 0.0, 0.0, 0.5, 1.0, 0.5)
    with pytest.raises(ValueError):
        conditional_wealth(CANON, 1.0, 0.6, 0.5, 1.0, 0.5)
    with pytest.raises(ValueError):
        conditional_wealth(CANON, 1.0, 0.0, 0.5, -1.0, 0.5)
