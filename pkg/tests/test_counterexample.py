import math

import numpy as np
import pytest

from horizon_lab.counterexample import (
    ClassificationError,
    ConstructionError,
    Interval,
    build_instance,
    initial_wealth,
    mc_cross_check,
    premature_value,
    terminal_value,
)
from horizon_lab.utility import UtilitySpec

# Frozen from an independent 50-digit reconstruction of the level chains
# for U(x) = -1/x (power p=-1): x_k = 1/(k*2^k) exactly, the halving and
# doubling chains rerun in exact rational steps, and all sums carried to
# 64 extension levels.
TERMINAL_ORACLE = -0.19828222318100290918
X0_ORACLE = 0.19828222318100290918
PREMATURE_ORACLE = {
    1: -10.765097526990512794,
    5: -30.303781024779827736,
    10: -48.142750418671023072,
    15: -84.081746758301988689,
    20: -91.973766122551996089,
}
TERMINAL_LOG_ORACLE = 5.7208876233262231956


@pytest.fixture(scope="module")
def inst():
    return build_instance(UtilitySpec.power(-1.0), n_max=20)


def _contains(iv, value, scale=1.0):
    tol = 1e-10 * max(1.0, abs(scale))
    return iv.lo - tol <= value <= iv.hi + tol


def test_interval_basics():
    iv = Interval(1.0, 3.0)
    assert iv.mid == 2.0 and iv.width == 2.0
    with pytest.raises(ValueError):
        Interval(2.0, 1.0)


def test_level_one_frozen_chain(inst):
    lv = inst.levels[0]
    # x_1 = U^{-1}(-2) = 1/2; sqrt(a) and 1/sqrt(b) must drop below x/2,
    # with the boundary cases sqrt(1/16)=1/4 and 1/sqrt(16)=1/4 excluded
    # by the strict inequality
    assert lv.x == 0.5
    assert lv.a == 0.03125
    assert lv.b == 32.0
    assert lv.p == (32.0 - 1.0) / (32.0 - 0.03125)
    assert lv.one_minus_p == (1.0 - 0.03125) / (32.0 - 0.03125)


def test_levels_monotone_and_consistent(inst):
    a = np.array([lv.a for lv in inst.levels])
    b = np.array([lv.b for lv in inst.levels])
    x = np.array([lv.x for lv in inst.levels])
    p = np.array([lv.p for lv in inst.levels])
    omp = np.array([lv.one_minus_p for lv in inst.levels])
    assert np.all(np.diff(a) < 0.0)
    assert np.all(np.diff(b) > 0.0)
    assert np.all(np.diff(x) < 0.0)
    assert np.all((p > 0.0) & (p < 1.0) & (omp > 0.0) & (omp < 1.0))
    # mean-one identity, computed the same split way the module stores it
    dev = np.abs(a * p + b * omp - 1.0)
    assert np.max(dev) <= 1e-14
    # exact x_k for this utility is 1/(k*2^k)
    k = np.arange(1, 21, dtype=np.float64)
    assert np.allclose(x, 1.0 / (k * 2.0 ** k), rtol=1e-14)


def test_budget_per_level_below_x(inst):
    for lv in inst.levels:
        m = lv.a * lv.a ** -0.5 * lv.p + lv.b * lv.b ** -0.5 * lv.one_minus_p
        assert m < lv.x


def test_alpha_values_finite(inst):
    assert inst.t_grid.shape == (21,)
    for lv in inst.levels:
        assert math.isfinite(lv.alpha) and lv.alpha > 0.0


def test_initial_wealth_frozen(inst):
    assert abs(inst.x0 - X0_ORACLE) <= 1e-12
    assert initial_wealth(inst) == inst.x0


def test_terminal_value_frozen(inst):
    tv = terminal_value(inst)
    assert tv.width < 1e-12
    assert _contains(tv, TERMINAL_ORACLE)
    # for p=-1, U(I(y)) = -sqrt(y) and Y*I(Y) = sqrt(Y): terminal = -x0
    assert abs(tv.mid + inst.x0) <= 1e-12


def test_premature_values_frozen(inst):
    for n, want in PREMATURE_ORACLE.items():
        pv = premature_value(inst, n)
        assert _contains(pv, want, scale=want), (n, pv, want)
    mids = [premature_value(inst, n).mid for n in (1, 5, 10, 15, 20)]
    assert all(m1 > m2 for m1, m2 in zip(mids, mids[1:]))


def test_premature_below_terminal(inst):
    assert premature_value(inst, 1).hi < terminal_value(inst).lo


def test_premature_index_validation(inst):
    with pytest.raises(IndexError):
        premature_value(inst, 0)
    with pytest.raises(IndexError):
        premature_value(inst, 21)
    with pytest.raises(IndexError):
        premature_value(inst, 1.5)


def test_log_override_exact(inst):
    log_u = UtilitySpec.log()
    assert initial_wealth(inst, utility=log_u) == 1.0
    tv = terminal_value(inst, utility=log_u)
    assert _contains(tv, TERMINAL_LOG_ORACLE, scale=TERMINAL_LOG_ORACLE)
    pv = premature_value(inst, 10, utility=log_u)
    assert pv.width == 0.0  # inner series is exact for log
    assert math.isfinite(pv.mid)


def test_classification_gate():
    with pytest.raises(ClassificationError):
        build_instance(UtilitySpec.log(), n_max=3)
    with pytest.raises(ClassificationError):
        build_instance(UtilitySpec.power(0.5), n_max=3)


def test_t_grid_validation():
    u = UtilitySpec.power(-1.0)
    with pytest.raises(ValueError):
        build_instance(u, n_max=3, t_grid=[0.1, 0.2])
    with pytest.raises(ValueError):
        build_instance(u, n_max=2, t_grid=[0.1, 0.3, 0.2])
    with pytest.raises(ValueError):
        build_instance(u, n_max=2, t_grid=[0.0, 0.5, 0.9])
    with pytest.raises(ValueError):
        build_instance(u, n_max=2, t_grid=[0.1, 0.5, 1.0])
    with pytest.raises(ValueError):
        build_instance(u, n_max=0)


def test_divergence_threshold():
    u = UtilitySpec.power(-1.0)
    inst = build_instance(u, n_max=10, divergence_threshold=-40.0)
    assert premature_value(inst, 10).hi < -40.0
    with pytest.raises(ConstructionError):
        build_instance(u, n_max=5, divergence_threshold=-1000.0)
    with pytest.raises(ValueError):
        build_instance(u, n_max=5, divergence_threshold=1.0)


def test_probability_resolution_cap():
    # around level 22 the upper point is so large that (b-1)/(b-a) rounds
    # onto 1.0 and the construction must refuse rather than emit p=1
    with pytest.raises(ConstructionError):
        build_instance(UtilitySpec.power(-1.0), n_max=22)


def test_rebuild_bit_identical(inst):
    again = build_instance(UtilitySpec.power(-1.0), n_max=20)
    assert again.x0 == inst.x0
    for lv1, lv2 in zip(inst.levels, again.levels):
        assert lv1 == lv2
    assert np.array_equal(inst.t_grid, again.t_grid)
    assert terminal_value(again).lo == terminal_value(inst).lo


def test_custom_at_risk_utility_builds():
    u = UtilitySpec.custom(
        value=lambda a: -1.0 / a,
        marginal=lambda a: a ** -2.0,
        inverse_marginal=lambda b: b ** -0.5,
        name="reciprocal",
    )
    inst = build_instance(u, n_max=3)
    assert inst.x0 > 0.0
    tv = terminal_value(inst)
    assert math.isfinite(tv.mid)
    p1 = premature_value(inst, 1)
    p3 = premature_value(inst, 3)
    assert p3.mid < p1.mid < tv.lo


def test_mc_cross_check_premature(inst):
    est = mc_cross_check(inst, 3, paths=100_000, seed=1, quantity="premature")
    exact = premature_value(inst, 3).mid
    assert est.n_paths == 100_000 and est.seed == 1
    assert est.stderr > 0.0
    assert abs(est.mean - exact) <= 3.0 * est.stderr


def test_mc_cross_check_xi(inst):
    est = mc_cross_check(inst, 3, paths=400_000, seed=1, quantity="xi")
    assert abs(est.mean - 1.0) <= 3.0 * est.stderr


def test_mc_cross_check_xi_degenerate_level_one(inst):
    # below level 1 nothing is resolved, so the density is constant 1
    est = mc_cross_check(inst, 1, paths=2000, seed=7, quantity="xi")
    assert est.mean == 1.0 and est.stderr == 0.0


def test_mc_cross_check_reproducible(inst):
    e1 = mc_cross_check(inst, 2, paths=5000, seed=9)
    e2 = mc_cross_check(inst, 2, paths=5000, seed=9)
    assert e1 == e2
    e3 = mc_cross_check(inst, 2, paths=5000, seed=10)
    assert e3.mean != e1.mean


def test_mc_cross_check_validation(inst):
    with pytest.raises(ValueError):
        mc_cross_check(inst, 3, paths=10, seed=1)
    with pytest.raises(IndexError):
        mc_cross_check(inst, 0, paths=2000, seed=1)
    with pytest.raises(ValueError):
        mc_cross_check(inst, 3, paths=2000, seed=1, quantity="bogus")
