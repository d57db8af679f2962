import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from emodel.lindblad import (DirectSumDensity, IntegrationError, integrate_master, lindblad_rhs,
                             observable_rate, sum_sectors)
from emodel.model import EventModel
from emodel.zoo import (SIGMA_X, SIGMA_Z, GrwLatticeConfig, as_event_model, build_grw_lattice, build_momentum_weighted, counter_model,
                        grw_initial_state)

from conftest import closed, random_hermitian, random_matrix, random_state


def _random_model(rng):
    return EventModel([(0, 2), (1, 3), (2, 2)], {0: random_hermitian(rng, 2), 1: random_hermitian(rng, 3)},
                      [(0, 1, random_matrix(rng, 3, 2)), (1, 2, random_matrix(rng, 2, 3)),
                       (2, 0, random_matrix(rng, 2, 2)), (1, 0, random_matrix(rng, 2, 3))])


def _random_density(rng, m):
    blocks = {}
    for s in m.sectors:
        a = random_matrix(rng, s.dim, s.dim)
        blocks[s.id] = a @ a.conj().T
    tr = sum(np.trace(b).real for b in blocks.values())
    return DirectSumDensity({k: b / tr for k, b in blocks.items()})


def test_stationary_state_has_zero_derivative():
    m = EventModel([(0, 2), (1, 1)], {0: SIGMA_Z}, [(0, 1, np.array([[1.0, 0.0]]))])
    rho = DirectSumDensity({0: np.diag([0.0, 1.0]).astype(complex), 1: np.zeros((1, 1), complex)})
    d = lindblad_rhs(m, rho)
    assert d.frobenius() == 0.0


def test_rate_equation_limit(scalar):
    d = lindblad_rhs(scalar, DirectSumDensity({0: np.eye(1), 1: np.zeros((1, 1))}))
    assert d.blocks[0][0, 0] == pytest.approx(-1.0) and d.blocks[1][0, 0] == pytest.approx(1.0)


@settings(max_examples=40)
@given(st.integers(0, 10**6))
def test_derivative_is_traceless_and_hermitian(seed):
    rng = np.random.default_rng(seed)
    m = _random_model(rng)
    d = lindblad_rhs(m, _random_density(rng, m), 0.3)
    scale = max(1.0, max(np.linalg.norm(j.op(0), 2) ** 2 for j in m.jumps))
    assert abs(d.trace()) <= 1e-12 * scale
    assert d.hermiticity_error() <= 1e-12 * scale


def test_rhs_shape_mismatch(scalar):
    with pytest.raises(ValueError):
        lindblad_rhs(scalar, DirectSumDensity({0: np.eye(2), 1: np.zeros((1, 1))}))


def test_scalar_integration(scalar):
    rho = integrate_master(scalar, DirectSumDensity.pure(scalar, 0, [1.0]), 0.0, 1.0)
    assert rho.blocks[0][0, 0].real == pytest.approx(math.exp(-1), abs=1e-12)
    assert rho.blocks[1][0, 0].real == pytest.approx(1 - math.exp(-1), abs=1e-12)


def test_unitary_channel():
    h = np.array([[0.4, 1.0 - 0.5j], [1.0 + 0.5j, -0.2]])
    m = closed(h)
    psi = np.array([0.6, 0.8j])
    rho = integrate_master(m, DirectSumDensity.pure(m, 0, psi), 0.0, 3.0)
    u = expm(-3j * h)
    want = u @ np.outer(psi, psi.conj()) @ u.conj().T
    assert np.allclose(rho.blocks[0], want, atol=1e-10)
    assert np.allclose(np.linalg.eigvalsh(rho.blocks[0]), [0, 1], atol=1e-9)


def test_matches_reference_ode():
    rng = np.random.default_rng(3)
    m = _random_model(rng)
    rho0 = DirectSumDensity.pure(m, 0, random_state(rng, 2))
    dims = {s.id: s.dim for s in m.sectors}

    def pack(d):
        return np.concatenate([d.blocks[k].ravel() for k in sorted(dims)])

    def unpack(y):
        out, i = {}, 0
        for k in sorted(dims):
            n = dims[k] ** 2
            out[k] = y[i:i + n].reshape(dims[k], dims[k])
            i += n
        return DirectSumDensity(out)

    ref = solve_ivp(lambda t, y: pack(lindblad_rhs(m, unpack(y), t)), (0, 1), pack(rho0), rtol=1e-11, atol=1e-12)
    got = integrate_master(m, rho0, 0.0, 1.0, step=1e-3)
    assert got.distance(unpack(ref.y[:, -1])) <= 1e-8


def test_probes_and_invariants():
    rng = np.random.default_rng(9)
    m = _random_model(rng)
    probes = [0.0, 0.25, 1.0, 2.0]
    out = integrate_master(m, DirectSumDensity.pure(m, 0, random_state(rng, 2)), 0.0, 2.0, probes=probes)
    assert len(out) == 4
    for d in out:
        assert d.violations() == []


def test_invariant_violation_raises():
    # a non-Hermitian initial block is caught at the first check
    m = closed(SIGMA_X)
    with pytest.raises(IntegrationError):
        integrate_master(m, DirectSumDensity({0: np.array([[1.0, 1.0], [0.0, 0.0]])}), 0.0, 0.1)


def test_sum_sectors_examples():
    rho = np.array([[0.7, 0.1j], [-0.1j, 0.3]])
    assert np.array_equal(sum_sectors(DirectSumDensity({0: rho})), rho)
    assert np.allclose(sum_sectors(DirectSumDensity({0: rho / 2, 1: rho / 2})), rho)
    with pytest.raises(ValueError):
        sum_sectors(DirectSumDensity({0: np.eye(2), 1: np.eye(1)}))


def test_sector_sum_reduces_to_single_sector_equation():
    cfg = GrwLatticeConfig(M=8, sigma=1.0, lam=1.0, J=1.0, initial="site:2")
    r = build_grw_lattice(cfg)
    psi = grw_initial_state(cfg)
    for mod in (2, 3):
        full = counter_model(r, mod)
        a = integrate_master(full, DirectSumDensity.pure(full, 0, psi), 0.0, 1.0)
        red = as_event_model(r)
        b = integrate_master(red, DirectSumDensity.pure(red, 0, psi), 0.0, 1.0)
        assert np.max(np.abs(sum_sectors(a) - b.blocks[0])) <= 1e-8


def test_observable_rate_is_finite_difference():
    rng = np.random.default_rng(1)
    m = _random_model(rng)
    rho = _random_density(rng, m)
    obs = {s.id: random_hermitian(rng, s.dim) for s in m.sectors}
    eps = 1e-5
    plus = integrate_master(m, rho, 0.0, eps, step=eps / 4, check=False)
    fd = (plus.expectation(obs) - rho.expectation(obs)) / eps
    assert observable_rate(m, rho, obs) == pytest.approx(fd, rel=1e-4, abs=1e-6)


def test_long_run_stays_valid_with_indefinite_operators():
    # Hermitian, indefinite flash operators; round-off must not seed a growing non-Hermitian mode
    m = as_event_model(build_momentum_weighted(GrwLatticeConfig(M=8), mu=1.0))
    rho0 = DirectSumDensity.pure(m, 0, np.full(8, 8 ** -0.5))
    out = integrate_master(m, rho0, 0.0, 10.0, probes=[10.0])[0]
    assert abs(out.trace() - 1.0) <= 1e-10 and out.hermiticity_error() <= 1e-12
