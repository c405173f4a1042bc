import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import random_hermitian
from spintherm.errors import ConfigError
from spintherm.rng import stream
from spintherm.spin_model import (
    SpinSystem,
    build_hamiltonian,
    collective_observable,
    diagonalize,
    dipolar_couplings,
    hamiltonian_parts,
    random_spin_system,
    spin_operator,
)


def two_spin(offsets=(0.0, 0.0), b=0.0):
    return SpinSystem.from_pairs(2, offsets, [(0, 1, b)])


def test_no_interactions_gives_zero_matrix():
    h = build_hamiltonian(two_spin())
    assert np.array_equal(h, np.zeros((4, 4)))


def test_single_offset_splitting():
    w = 1.7
    levels = np.linalg.eigvalsh(build_hamiltonian(two_spin((w, 0.0))))
    np.testing.assert_allclose(levels, [-w / 2, -w / 2, w / 2, w / 2], atol=1e-14)


def test_two_spin_dipolar_spectrum():
    # Brute force: secular form written out by hand in the product basis
    # |uu>, |ud>, |du>, |dd> with I_zI_z diagonal (1/4,-1/4,-1/4,1/4) and the
    # flip-flop (I_xI_x + I_yI_y) coupling |ud> <-> |du> with amplitude 1/2.
    b = 0.9
    manual = b * np.array([[0.5, 0, 0, 0], [0, -0.5, -0.5, 0], [0, -0.5, -0.5, 0], [0, 0, 0, 0.5]])
    h = build_hamiltonian(two_spin(b=b))
    np.testing.assert_allclose(h, manual, atol=1e-15)
    np.testing.assert_allclose(np.linalg.eigvalsh(h), sorted([b / 2, b / 2, -b, 0.0]), atol=1e-14)


def test_collective_z_two_spins():
    sz = collective_observable(two_spin(), "z")
    np.testing.assert_allclose(sz, np.diag([1.0, 0.0, 0.0, -1.0]))


@pytest.mark.parametrize("n", [2, 3, 5])
@pytest.mark.parametrize("axis", ["x", "y", "z"])
def test_collective_traceless(n, axis):
    sys_ = SpinSystem(n, np.zeros(n), np.zeros((n, n)))
    assert abs(np.trace(collective_observable(sys_, axis))) < 1e-14


def test_collective_x_square_trace():
    sys_ = SpinSystem(3, np.zeros(3), np.zeros((3, 3)))
    ix = collective_observable(sys_, "x")
    assert np.trace(ix @ ix).real == pytest.approx(6.0, abs=1e-13)


def test_spin_operator_commutator():
    sx, sy, sz = (spin_operator(3, 1, a) for a in "xyz")
    np.testing.assert_allclose(sx @ sy - sy @ sx, 1j * sz, atol=1e-15)
    # different sites commute
    other = spin_operator(3, 2, "x")
    np.testing.assert_allclose(sx @ other, other @ sx, atol=1e-15)


def test_diagonalize_permutation():
    eig = diagonalize(np.diag([3.0, 1.0, 2.0]))
    np.testing.assert_array_equal(eig.levels, [1.0, 2.0, 3.0])
    # columns are eigenvectors: level 1 lives on basis state 1, level 3 on state 0
    np.testing.assert_allclose(np.abs(eig.vectors), [[0, 0, 1], [1, 0, 0], [0, 1, 0]])


def test_diagonalize_pauli_x():
    eig = diagonalize(np.array([[0.0, 1.0], [1.0, 0.0]]))
    np.testing.assert_allclose(eig.levels, [-1.0, 1.0], atol=1e-15)


def test_reconstruction_residual():
    h = random_hermitian(8, stream(8, 0))
    eig = diagonalize(h)
    assert np.max(np.abs(eig.reconstruct() - h)) <= 1e-9
    again = diagonalize(eig.reconstruct())
    assert np.max(np.abs(again.levels - eig.levels)) <= 1e-9


def test_non_hermitian_rejected():
    with pytest.raises(ValueError):
        diagonalize(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_dimension_overflow_is_config_error():
    with pytest.raises(ConfigError) as err:
        SpinSystem(13, np.zeros(13), np.zeros((13, 13)))
    assert err.value.key == "n_spins"


@pytest.mark.parametrize("bad", [np.array([[0, 1], [2, 0]]), np.array([[1, 1], [1, 0]])])
def test_bad_couplings(bad):
    with pytest.raises(ConfigError):
        SpinSystem(2, np.zeros(2), bad)


def test_dict_round_trip():
    sys_ = random_spin_system(4, stream(3, 0))
    back = SpinSystem.from_dict(sys_.to_dict())
    np.testing.assert_array_equal(back.offsets, sys_.offsets)
    np.testing.assert_array_equal(back.couplings, sys_.couplings)


def test_from_dict_rejects_unknown_key():
    with pytest.raises(ConfigError) as err:
        SpinSystem.from_dict({"n_spins": 2, "offsets": [0, 0], "couplings": [], "spin": 1})
    assert err.value.key == "spin"


def test_immutable_arrays():
    sys_ = two_spin(b=1.0)
    with pytest.raises(ValueError):
        sys_.offsets[0] = 2.0


def test_dipolar_couplings_geometry():
    pos = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    b = dipolar_couplings(pos, strength=2.0)
    assert np.allclose(b, b.T) and np.all(np.diag(b) == 0)
    # along the field (theta = 0) vs perpendicular (theta = 90 deg): ratio -2
    assert b[0, 1] / b[0, 2] == pytest.approx(-2.0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 5), seed=st.integers(0, 2**32 - 1))
def test_hamiltonian_hermitian_and_conserves_magnetization(n, seed):
    sys_ = random_spin_system(n, stream(seed, 0))
    h = build_hamiltonian(sys_)
    assert np.max(np.abs(h - h.conj().T)) <= 1e-12
    sz = collective_observable(sys_, "z")
    assert np.max(np.abs(h @ sz - sz @ h)) <= 1e-12
    parts = hamiltonian_parts(sys_)
    np.testing.assert_allclose(parts["zeeman"] + parts["dipolar"], h, atol=1e-13)
