import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from emodel.model import EventModel, HistoryDependent, PiecewiseConstant, effective_generator
from emodel.propagator import (NumericalDegeneracyError, evolve, find_jump_time, propagator_matrix,
                               survival_curve)
from emodel.zoo import SIGMA_X, SIGMA_Z

from conftest import closed, random_state, two_level


def test_scalar_survival(scalar):
    res = evolve(scalar, 0, [1.0], 0.0, 1.0)
    assert res.state[0] == pytest.approx(math.exp(-0.5), rel=1e-12)
    assert res.survival == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert res.t_end == 1.0


def test_unitary_branch_keeps_norm():
    m = closed(np.array([[0.3, 1.0], [1.0, -0.7]]))
    for t in (0.1, 3.3, 17.0):
        assert evolve(m, 0, [0.6, 0.8j], 0.0, t).survival == pytest.approx(1.0, abs=1e-10)


def test_driven_decay_matches_expm():
    m = two_level(1.0, 0.5 * SIGMA_X)
    a = effective_generator(m, 0)
    psi = np.array([1.0, 0.0])
    got = evolve(m, 0, psi, 0.0, 1.0, step=1e-3).state
    assert np.allclose(got, expm(a) @ psi, atol=1e-8)


def test_propagator_matrix_matches_expm():
    m = two_level(0.7, 0.5 * SIGMA_X)
    w = propagator_matrix(m, 0, 0.2, 1.45)
    assert np.allclose(w, expm(1.25 * effective_generator(m, 0)), atol=1e-10)


def test_evolve_rejects_bad_step(scalar):
    with pytest.raises(ValueError):
        evolve(scalar, 0, [1.0], 0.0, 1.0, step=0.0)


def test_piecewise_constant_matches_expm_product():
    h1, h2 = 0.5 * SIGMA_X, 0.8 * SIGMA_Z
    m = two_level(0.4, PiecewiseConstant([0.37], [h1, h2]))
    lam = np.diag([0.4, 0.0])
    want = expm(0.63 * (-1j * h2 - 0.5 * lam)) @ expm(0.37 * (-1j * h1 - 0.5 * lam)) @ np.array([0.6, 0.8])
    assert np.allclose(evolve(m, 0, [0.6, 0.8], 0.0, 1.0).state, want, atol=1e-10)


def test_time_dependent_matches_reference_ode():
    def h(t, hist):
        return 0.5 * math.cos(2 * t) * SIGMA_X + 0.2 * SIGMA_Z

    m = two_level(0.6, HistoryDependent(h, (2, 2)))
    psi0 = np.array([0.6, 0.8j])
    lam = np.diag([0.6, 0.0])

    def rhs(t, y):
        return (-1j * h(t, ()) - 0.5 * lam) @ y

    ref = solve_ivp(rhs, (0, 2), psi0, rtol=1e-12, atol=1e-13).y[:, -1]
    assert np.allclose(evolve(m, 0, psi0, 0.0, 2.0).state, ref, atol=1e-9)


def test_find_jump_time_closed_form(scalar):
    js = find_jump_time(scalar, 0, [1.0], 0.0, math.exp(-1.0), 10.0)
    assert js.jumped
    assert js.t == pytest.approx(1.0, abs=1e-9)


def test_no_jump_without_decay():
    m = closed(SIGMA_X)
    js = find_jump_time(m, 0, [1.0, 0.0], 0.0, 0.3, 5.0)
    assert not js.jumped and js.t == 5.0
    assert js.survival == pytest.approx(1.0, abs=1e-12)


def test_no_jump_in_kernel_of_lambda():
    m = two_level(2.0)
    for r in (0.01, 0.5, 0.999):
        js = find_jump_time(m, 0, [0.0, 1.0], 0.0, r, 50.0)
        assert not js.jumped
        assert js.survival == pytest.approx(1.0, abs=1e-15)


def test_threshold_equal_to_limit_is_no_jump():
    # survival of (1,1)/sqrt2 decays to exactly 1/2
    m = two_level(1.0)
    js = find_jump_time(m, 0, np.array([1.0, 1.0]) / math.sqrt(2), 0.0, 0.5, 30.0)
    assert not js.jumped


def test_find_jump_time_validates(scalar):
    with pytest.raises(ValueError):
        find_jump_time(scalar, 0, [1.0], 0.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        find_jump_time(scalar, 0, [1.0], 0.0, 1.5, 1.0)
    with pytest.raises(ValueError):
        find_jump_time(scalar, 0, [2.0], 0.0, 0.5, 1.0)


def test_degenerate_crossing_raises():
    # the channel switches off at t = 1, exactly where the survival reaches r
    m = EventModel([(0, 1), (1, 1)], {}, [(0, 1, PiecewiseConstant([1.0], [[[1.0]], [[0.0]]]))])
    r = evolve(m, 0, [1.0], 0.0, 1.0).survival
    with pytest.raises(NumericalDegeneracyError):
        find_jump_time(m, 0, [1.0], 0.0, r, 3.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6), st.floats(0.02, 0.98))
def test_threshold_consistency(seed, r):
    rng = np.random.default_rng(seed)
    m = two_level(rng.uniform(0.5, 3.0), 0.5 * rng.uniform(-2, 2) * SIGMA_X)
    psi = random_state(rng, 2)
    js = find_jump_time(m, 0, psi, 0.0, r, 200.0)
    if js.jumped:
        assert abs(js.survival - r) <= max(1e-10, 1e-8 * r)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_survival_monotone(seed):
    rng = np.random.default_rng(seed)
    m = two_level(rng.uniform(0.1, 3.0), 0.5 * rng.uniform(-3, 3) * SIGMA_X + 0.3 * SIGMA_Z)
    _, s = survival_curve(m, 0, random_state(rng, 2), 0.0, 3.0, step=0.05)
    assert np.all(np.diff(s) <= 1e-12)


def test_convergence_order():
    m = two_level(1.0, 1.5 * SIGMA_X)
    psi = np.array([1.0, 0.0])
    exact = np.linalg.norm(expm(2.0 * effective_generator(m, 0)) @ psi) ** 2
    errs = [abs(evolve(m, 0, psi, 0.0, 2.0, step=h).survival - exact) for h in (0.2, 0.1, 0.05)]
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 3.5)


def test_evolve_is_composable():
    m = two_level(0.8, 0.5 * SIGMA_X)
    psi = np.array([0.6, 0.8])
    a = evolve(m, 0, psi, 0.0, 1.7).state
    b = evolve(m, 0, evolve(m, 0, psi, 0.0, 0.9).state, 0.9, 1.7).state
    assert np.allclose(a, b, atol=1e-9)
