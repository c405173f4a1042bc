"""Spin-1/2 many-body Hamiltonians as dense Hermitian matrices.

Conventions
-----------
- hbar = k = 1; offsets and couplings are angular frequencies.
- Product basis ordered with spin 0 as the most significant factor and
  ``|0> = |up>`` (I_z = +1/2), so that for two spins the collective I_z is
  ``diag(1, 0, 0, -1)``.
- Interactions use the secular (high-field) dipolar form
  ``b_ij (2 I_z^i I_z^j - I_x^i I_x^j - I_y^i I_y^j)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce

import numpy as np

from .errors import ConfigError

MAX_SPINS = 12

_SX = np.array([[0, 1], [1, 0]], dtype=complex) / 2
_SY = np.array([[0, -1j], [1j, 0]], dtype=complex) / 2
_SZ = np.array([[1, 0], [0, -1]], dtype=complex) / 2
_SINGLE = {"x": _SX, "y": _SY, "z": _SZ}


@dataclass(frozen=True)
class SpinSystem:
    """Physical parameters of an ensemble of interacting spins-1/2.

    Parameters
    ----------
    n_spins : int
        Number of spins, 2 <= n_spins <= 12.
    offsets : array_like, shape (n_spins,)
        Zeeman detunings delta_i in the rotating frame.
    couplings : array_like, shape (n_spins, n_spins)
        Symmetric dipolar strengths b_ij with zero diagonal.
    """

    n_spins: int
    offsets: np.ndarray
    couplings: np.ndarray

    def __post_init__(self):
        n = self.n_spins
        if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
            raise ConfigError("n_spins must be an integer", key="n_spins")
        if n > MAX_SPINS:
            raise ConfigError(
                f"n_spins={n} exceeds the dense limit of {MAX_SPINS} "
                f"(Hilbert dimension 2^{n} > {2 ** MAX_SPINS})",
                key="n_spins",
            )
        if n < 2:
            raise ConfigError(f"n_spins={n} must be at least 2", key="n_spins")
        offsets = np.array(self.offsets, dtype=float).reshape(-1)
        couplings = np.array(self.couplings, dtype=float)
        if offsets.shape != (n,):
            raise ConfigError(f"offsets must have length {n}", key="offsets")
        if couplings.shape != (n, n):
            raise ConfigError(f"couplings must be {n}x{n}", key="couplings")
        if not (np.all(np.isfinite(offsets)) and np.all(np.isfinite(couplings))):
            raise ConfigError("offsets and couplings must be finite", key="couplings")
        if np.any(np.diag(couplings) != 0):
            raise ConfigError("couplings must have zero diagonal", key="couplings")
        if not np.array_equal(couplings, couplings.T):
            raise ConfigError("couplings must be symmetric", key="couplings")
        offsets.setflags(write=False)
        couplings.setflags(write=False)
        object.__setattr__(self, "n_spins", int(n))
        object.__setattr__(self, "offsets", offsets)
        object.__setattr__(self, "couplings", couplings)

    @property
    def dim(self) -> int:
        return 2 ** self.n_spins

    @classmethod
    def from_pairs(cls, n_spins, offsets, pairs):
        """Build from a list of ``(i, j, b_ij)`` coupling triples."""
        b = np.zeros((n_spins, n_spins))
        for entry in pairs:
            if len(entry) != 3:
                raise ConfigError("coupling entries must be [i, j, b]", key="couplings")
            i, j, val = entry
            i, j = int(i), int(j)
            if i == j or not (0 <= i < n_spins and 0 <= j < n_spins):
                raise ConfigError(f"invalid coupling pair ({i}, {j})", key="couplings")
            b[i, j] = b[j, i] = float(val)
        return cls(n_spins, offsets, b)

    def to_dict(self) -> dict:
        """Plain-data form used in experiment configuration files."""
        n = self.n_spins
        pairs = [
            [i, j, float(self.couplings[i, j])]
            for i in range(n)
            for j in range(i + 1, n)
            if self.couplings[i, j] != 0.0
        ]
        return {"n_spins": n, "offsets": [float(x) for x in self.offsets], "couplings": pairs}

    @classmethod
    def from_dict(cls, data: dict) -> "SpinSystem":
        allowed = {"n_spins", "offsets", "couplings"}
        for key in data:
            if key not in allowed:
                raise ConfigError(f"unknown key '{key}' in spin system", key=key)
        for key in allowed:
            if key not in data:
                raise ConfigError(f"missing key '{key}' in spin system", key=key)
        n = data["n_spins"]
        couplings = data["couplings"]
        if len(couplings) and np.ndim(couplings[0]) == 1 and len(couplings) == n and len(couplings[0]) == n:
            return cls(n, data["offsets"], couplings)
        return cls.from_pairs(n, data["offsets"], couplings)

    def without_couplings(self) -> "SpinSystem":
        return SpinSystem(self.n_spins, self.offsets, np.zeros_like(self.couplings))

    def without_offsets(self) -> "SpinSystem":
        return SpinSystem(self.n_spins, np.zeros_like(self.offsets), self.couplings)


def random_spin_system(n_spins, rng, offset_scale=1.0, coupling_scale=1.0) -> SpinSystem:
    """Gaussian-disordered offsets and all-to-all couplings."""
    offsets = offset_scale * rng.standard_normal(n_spins)
    upper = np.triu(coupling_scale * rng.standard_normal((n_spins, n_spins)), k=1)
    return SpinSystem(n_spins, offsets, upper + upper.T)


def dipolar_couplings(positions, strength=1.0) -> np.ndarray:
    """Secular couplings b_ij = strength * (1 - 3 cos^2 theta_ij) / r_ij^3.

    The static field lies along z; ``positions`` has shape (n, 3).
    """
    pos = np.asarray(positions, dtype=float)
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.linalg.norm(diff, axis=-1)
    np.fill_diagonal(r, 1.0)
    cos2 = (diff[..., 2] / r) ** 2
    b = strength * (1.0 - 3.0 * cos2) / r**3
    np.fill_diagonal(b, 0.0)
    return b


def spin_operator(n_spins: int, site: int, axis: str) -> np.ndarray:
    """I_axis acting on ``site``, embedded in the full 2^n space."""
    if axis not in _SINGLE:
        raise ValueError(f"axis must be one of x, y, z; got {axis!r}")
    factors = [np.eye(2, dtype=complex)] * n_spins
    factors[site] = _SINGLE[axis]
    return reduce(np.kron, factors)


def collective_observable(sys: SpinSystem, axis: str) -> np.ndarray:
    """Sum over sites of I_axis."""
    return sum(spin_operator(sys.n_spins, i, axis) for i in range(sys.n_spins))


def zeeman_part(sys: SpinSystem) -> np.ndarray:
    n = sys.n_spins
    # I_z is diagonal, so build the diagonal directly.
    bits = (np.arange(2**n)[:, None] >> np.arange(n - 1, -1, -1)[None, :]) & 1
    sz = 0.5 - bits
    return np.diag((sz @ sys.offsets).astype(complex))


def dipolar_part(sys: SpinSystem) -> np.ndarray:
    n = sys.n_spins
    ops = {a: [spin_operator(n, i, a) for i in range(n)] for a in "xyz"}
    h = np.zeros((2**n, 2**n), dtype=complex)
    for i in range(n):
        for j in range(i + 1, n):
            b = sys.couplings[i, j]
            if b == 0.0:
                continue
            h += b * (
                2.0 * ops["z"][i] @ ops["z"][j]
                - ops["x"][i] @ ops["x"][j]
                - ops["y"][i] @ ops["y"][j]
            )
    return h


def hamiltonian_parts(sys: SpinSystem) -> dict:
    """Labeled pieces of the Hamiltonian: ``{"zeeman": ..., "dipolar": ...}``."""
    return {"zeeman": zeeman_part(sys), "dipolar": dipolar_part(sys)}


def build_hamiltonian(sys: SpinSystem) -> np.ndarray:
    parts = hamiltonian_parts(sys)
    h = parts["zeeman"] + parts["dipolar"]
    return 0.5 * (h + h.conj().T)


def check_hermitian(a, name="operator") -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {a.shape}")
    scale = np.max(np.abs(a)) if a.size else 0.0
    if np.max(np.abs(a - a.conj().T), initial=0.0) > 1e-12 * max(scale, 1e-300):
        raise ValueError(f"{name} is not Hermitian")
    return a


@dataclass(frozen=True)
class Eigensystem:
    """Ascending eigenvalues and the unitary of eigencolumns."""

    levels: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.levels.shape[0]

    def to_energy_basis(self, op) -> np.ndarray:
        """Matrix elements <n|op|m> in the eigenbasis."""
        v = self.vectors
        return v.conj().T @ np.asarray(op) @ v

    def from_energy_basis(self, op) -> np.ndarray:
        v = self.vectors
        return v @ np.asarray(op) @ v.conj().T

    def reconstruct(self) -> np.ndarray:
        v = self.vectors
        return (v * self.levels) @ v.conj().T


def diagonalize(h) -> Eigensystem:
    """Full spectral decomposition of a Hermitian matrix (levels ascending)."""
    h = check_hermitian(h, "Hamiltonian")
    levels, vectors = np.linalg.eigh(h)
    levels.setflags(write=False)
    vectors.setflags(write=False)
    return Eigensystem(levels, vectors)
