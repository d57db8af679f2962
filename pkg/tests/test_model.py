import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emodel.model import (Constant, EventModel, HistoryDependent, ModelError, PiecewiseConstant, check_model,
                          effective_generator, lambda_of, total_rate, validate_model)
from emodel.zoo import GrwLatticeConfig, as_event_model, build_grw_lattice

from conftest import random_matrix, random_hermitian


def test_minimal_model_valid():
    m = EventModel([(0, 1), (1, 1)], {0: [[0.0]]}, [(0, 1, [[0.7]])])
    assert validate_model(m).valid


def test_diagonal_jump_reported():
    m = EventModel([(0, 1), (1, 1)], {}, [(0, 1, [[1.0]]), (0, 0, [[1.0]])])
    rep = validate_model(m)
    assert not rep.valid
    assert any("diagonal jump" in v for v in rep.violations)


def test_non_hermitian_hamiltonian_reported():
    m = EventModel([(0, 2)], {0: [[0, 1], [0, 0]]}, [])
    assert any("non-Hermitian Hamiltonian" in v for v in validate_model(m).violations)


def test_all_violations_listed():
    m = EventModel([(0, 2), (1, 1)], {0: [[0, 1], [0, 0]]}, [(0, 0, np.eye(2)), (0, 1, np.eye(2))])
    v = validate_model(m).violations
    assert len(v) == 3
    with pytest.raises(ModelError):
        check_model(m)


def test_empty_sector_set():
    assert "empty sector set" in validate_model(EventModel([], {}, [])).violations


def test_shape_checks():
    m = EventModel([(0, 2), (1, 3)], {}, [(0, 1, np.ones((2, 3)))])
    assert any("shape" in v for v in validate_model(m).violations)
    m = EventModel([(0, 2), (1, 3)], {}, [(0, 1, np.ones((3, 2)))])
    assert validate_model(m).valid


def test_reduced_self_channel_needs_label():
    m = EventModel([(0, 1)], {}, [(0, 0, [[1.0]])], sequence_reduced=True)
    assert any("label" in v for v in validate_model(m).violations)
    m = EventModel([(0, 1)], {}, [(0, 0, [[1.0]], "a"), (0, 0, [[2.0]], "b")], sequence_reduced=True)
    assert validate_model(m).valid


def test_piecewise_hamiltonian_sampled_on_every_piece():
    p = PiecewiseConstant([1.0], [np.zeros((2, 2)), [[0, 1], [0, 0]]])
    assert not validate_model(EventModel([(0, 2)], {0: p}, [])).valid


def test_lambda_examples(scalar):
    assert np.allclose(lambda_of(scalar, 0), [[1.0]])
    assert np.allclose(lambda_of(scalar, 1), [[0.0]])
    m = as_event_model(build_grw_lattice(GrwLatticeConfig(M=8, sigma=1.0, lam=1.3)))
    assert np.max(np.abs(lambda_of(m, 0) - 1.3 * np.eye(8))) <= 1e-12


def test_effective_generator_examples(scalar):
    assert np.allclose(effective_generator(scalar, 0), [[-0.5]])
    h = np.array([[1.0, 0.5], [0.5, -1.0]])
    a = effective_generator(EventModel([(0, 2)], {0: h}, []), 0)
    assert np.allclose(a + a.conj().T, 0)
    m = EventModel([(0, 2), (1, 2)], {}, [(0, 1, np.diag([1.0, np.sqrt(2)]))])
    assert np.allclose(effective_generator(m, 0), np.diag([-0.5, -1.0]))


def test_total_rate_examples():
    m = EventModel([(0, 2), (1, 2)], {}, [(0, 1, np.diag([1.0, 0.0]))])
    assert total_rate(m, 0, [1, 0]) == pytest.approx(1.0)
    assert total_rate(m, 0, np.array([1, 1]) / np.sqrt(2)) == pytest.approx(0.5)
    assert total_rate(EventModel([(0, 2)], {}, []), 0, [0.3, 0.1j]) == 0.0
    with pytest.raises(ValueError):
        total_rate(m, 0, [0, 0])


def _random_model(seed):
    rng = np.random.default_rng(seed)
    return EventModel([(0, 3), (1, 2), (2, 3)], {0: random_hermitian(rng, 3), 1: random_hermitian(rng, 2)},
                      [(0, 1, random_matrix(rng, 2, 3)), (0, 2, random_matrix(rng, 3, 3)),
                       (1, 0, random_matrix(rng, 3, 2))])


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_lambda_psd_and_generator_split(seed):
    m = _random_model(seed)
    for s in (0, 1, 2):
        lam = lambda_of(m, s)
        assert np.linalg.eigvalsh(lam)[0] >= -1e-12 * max(1.0, np.linalg.norm(lam, 2))
        a = effective_generator(m, s)
        assert np.max(np.abs(a + a.conj().T + lam)) <= 1e-12 * max(1.0, np.linalg.norm(lam, 2))


@settings(max_examples=30)
@given(st.integers(0, 10**6), st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3))
def test_total_rate_scale_invariant(seed, c):
    m = _random_model(seed)
    psi = np.random.default_rng(seed + 1).normal(size=3) + 0j
    assert total_rate(m, 0, c * psi) == pytest.approx(total_rate(m, 0, psi), rel=1e-12)


def test_history_dependent_provider_reads_history():
    p = HistoryDependent(lambda t, h: np.array([[1.0 + len(h)]]), (1, 1), time_dependent=False)
    assert p(0.0, ())[0, 0] == 1.0
    assert p(0.0, ("e1", "e2"))[0, 0] == 3.0
    assert p.piece(0.0, ("e1",)) != p.piece(0.0, ())


def test_callbacks_must_be_wrapped():
    with pytest.raises(ModelError):
        EventModel([(0, 1)], {0: lambda t, h: np.zeros((1, 1))}, [])


def test_piecewise_breakpoints_must_increase():
    with pytest.raises(ModelError):
        PiecewiseConstant([1.0, 1.0], [np.eye(1)] * 3)


def test_constant_provider_is_read_only():
    c = Constant(np.eye(2))
    with pytest.raises(ValueError):
        c(0.0)[0, 0] = 5.0
