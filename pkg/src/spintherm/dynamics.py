"""Exact closed-system propagation through the spectral decomposition.

Every propagator here is a phase on the eigenvalues, so results are exact up
to round-off; there is no time stepping.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .spin_model import Eigensystem, check_hermitian, diagonalize


@dataclass(frozen=True)
class SpectralAmplitudes:
    """Coefficients c_n of a pure state in the energy eigenbasis."""

    c: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        if self.c.shape != self.levels.shape:
            raise ValueError("amplitudes and levels differ in length")

    @property
    def populations(self) -> np.ndarray:
        return np.abs(self.c) ** 2


def normalized(vec) -> np.ndarray:
    vec = np.asarray(vec, dtype=complex)
    return vec / np.linalg.norm(vec)


def check_pure(state, tol=1e-12) -> np.ndarray:
    state = np.asarray(state, dtype=complex)
    if state.ndim != 1:
        raise ValueError("a pure state is a 1-d amplitude vector")
    if abs(np.linalg.norm(state) - 1.0) > tol:
        raise ValueError(f"state norm {float(np.linalg.norm(state))!r} differs from 1")
    return state


def check_density(rho, tol=1e-12) -> np.ndarray:
    rho = check_hermitian(np.asarray(rho, dtype=complex), "density matrix")
    if abs(np.trace(rho).real - 1.0) > tol:
        raise ValueError("density matrix must have unit trace")
    if np.linalg.eigvalsh(rho).min() < -1e-10:
        raise ValueError("density matrix has negative eigenvalues")
    return rho


def polarized_state(n_spins: int, axis: str = "x") -> np.ndarray:
    """All spins along +axis.

    The +x state is the pi/2 rotation about y of the all-up state, which is
    how it is prepared in an echo experiment.
    """
    up = np.zeros(2**n_spins, dtype=complex)
    up[0] = 1.0
    if axis == "z":
        return up
    # exp(-i theta I_y) per spin; theta = pi/2 sends z -> x, theta = -pi/2 about x sends z -> y
    if axis == "x":
        single = np.array([[np.cos(np.pi / 4), -np.sin(np.pi / 4)],
                           [np.sin(np.pi / 4), np.cos(np.pi / 4)]], dtype=complex)
    elif axis == "y":
        single = np.array([[np.cos(np.pi / 4), 1j * np.sin(np.pi / 4)],
                           [1j * np.sin(np.pi / 4), np.cos(np.pi / 4)]], dtype=complex)
    else:
        raise ValueError(f"axis must be x, y or z; got {axis!r}")
    spinor = single @ np.array([1.0, 0.0], dtype=complex)
    state = spinor
    for _ in range(n_spins - 1):
        state = np.kron(state, spinor)
    return state


def to_spectral(state, eig: Eigensystem) -> SpectralAmplitudes:
    state = np.asarray(state, dtype=complex)
    if state.shape != (eig.dim,):
        raise ValueError(f"state has length {state.shape}, eigensystem has dimension {eig.dim}")
    return SpectralAmplitudes(eig.vectors.conj().T @ state, eig.levels)


def from_spectral(c: SpectralAmplitudes, eig: Eigensystem) -> np.ndarray:
    return eig.vectors @ c.c


def evolve_pure(c: SpectralAmplitudes, t: float) -> SpectralAmplitudes:
    """c_n(t) = c_n(0) exp(-i E_n t); negative t runs the evolution backwards."""
    return SpectralAmplitudes(c.c * np.exp(-1j * c.levels * t), c.levels)


def evolve_density(rho, eig: Eigensystem, t: float) -> np.ndarray:
    """rho(t) = U rho U^dagger with U = V exp(-i E t) V^dagger."""
    rho = np.asarray(rho, dtype=complex)
    u = (eig.vectors * np.exp(-1j * eig.levels * t)) @ eig.vectors.conj().T
    out = u @ rho @ u.conj().T
    return 0.5 * (out + out.conj().T)


def expectation(c: SpectralAmplitudes, a_energy, t: float) -> float:
    """<psi(t)|A|psi(t)> with A given in the energy basis."""
    a_energy = np.asarray(a_energy)
    if a_energy.shape != (c.c.shape[0],) * 2:
        raise ValueError("observable and amplitudes differ in dimension")
    ct = c.c * np.exp(-1j * c.levels * t)
    val = np.vdot(ct, a_energy @ ct)
    if abs(val.imag) > 1e-10 * max(1.0, abs(val.real)):
        raise ValueError(f"imaginary residue {val.imag:.3e}; observable not Hermitian?")
    return float(val.real)


def expectation_trace(c: SpectralAmplitudes, a_energy, times) -> np.ndarray:
    """Vectorized :func:`expectation` over a time grid."""
    times = np.asarray(times, dtype=float)
    out = np.empty(times.shape[0])
    chunk = max(1, 2**20 // max(1, c.c.shape[0] ** 2))
    for start in range(0, times.shape[0], chunk):
        tt = times[start:start + chunk]
        ct = c.c[None, :] * np.exp(-1j * np.outer(tt, c.levels))
        out[start:start + chunk] = np.einsum("tn,nm,tm->t", ct.conj(), a_energy, ct).real
    return out


def diagonal_ensemble(c: SpectralAmplitudes, a_energy) -> float:
    """Infinite-time average for a non-degenerate spectrum: sum_n |c_n|^2 A_nn."""
    diag = np.real(np.diagonal(np.asarray(a_energy)))
    return float(np.sum(c.populations * diag))


def _degenerate_mask(levels, gap_tol):
    gaps = np.abs(levels[None, :] - levels[:, None])
    mask = gaps <= gap_tol
    np.fill_diagonal(mask, False)
    return mask, gaps


def windowed_time_average(c: SpectralAmplitudes, a_energy, T: float, n_samples: int,
                          gap_tol: float | None = None):
    """Trapezoidal average of the expectation over [0, T].

    Returns ``(mean, bound)``. ``bound`` is the analytic tail
    ``sum 2|c_n||c_m||A_nm| / (T |E_m - E_n|)`` over oscillating pairs.
    Pairs with ``|E_m - E_n| <= gap_tol`` do not oscillate; their cross
    terms are added to the mean exactly and left out of the bound.  The
    default ``gap_tol`` is 1e-9 times the spectral width.

    The bound also covers the trapezoid error as long as the grid resolves
    the fastest frequency (step * max gap < pi); a warning is issued
    otherwise.
    """
    if not T > 0:
        raise ValueError(f"averaging window T must be positive, got {T}")
    if n_samples < 100:
        raise ValueError("n_samples must be at least 100")
    a_energy = np.asarray(a_energy)
    levels = c.levels
    if gap_tol is None:
        gap_tol = 1e-9 * (levels.max() - levels.min())
    mask, gaps = _degenerate_mask(levels, gap_tol)
    off = a_energy.copy()
    np.fill_diagonal(off, 0.0)
    static_cross = np.where(mask, off, 0.0)
    oscillating = np.where(mask, 0.0, off)

    static = diagonal_ensemble(c, a_energy) + float(np.vdot(c.c, static_cross @ c.c).real)

    amp = np.abs(c.c)
    weights = amp[:, None] * amp[None, :] * np.abs(oscillating)
    active = weights > 0
    if not np.any(active):
        return static, 0.0
    bound = float(np.sum(2.0 * weights[active] / (T * gaps[active])))

    step = T / (n_samples - 1)
    if step * gaps[active].max() >= np.pi:
        warnings.warn("time grid does not resolve the largest gap; bound may not hold",
                      RuntimeWarning, stacklevel=2)
    times = np.linspace(0.0, T, n_samples)
    trace = expectation_trace(c, oscillating, times)
    osc_mean = float(np.sum(trace[1:] + trace[:-1]) * step / 2.0 / T)
    return static + osc_mean, bound


def loschmidt_echo(state, h, v_pert, eps: float, t, return_raw: bool = False):
    """Fidelity |<psi0| exp(+i(H + eps V)t) exp(-iHt) |psi0>|^2.

    Forward evolution under H followed by evolution under the imperfectly
    sign-reversed Hamiltonian -(H + eps V).  ``t`` may be a scalar or an
    array.  Values are clipped to [0, 1]; with ``return_raw`` the unclipped
    values are returned as well.
    """
    if eps < 0:
        raise ValueError("eps must be non-negative")
    state = check_pure(state, tol=1e-10)
    h = check_hermitian(np.asarray(h, dtype=complex), "H")
    v_pert = check_hermitian(np.asarray(v_pert, dtype=complex), "V_pert")
    if h.shape != v_pert.shape or h.shape[0] != state.shape[0]:
        raise ValueError("state, H and V_pert shapes do not match")
    fwd = diagonalize(h)
    back = fwd if eps == 0 else diagonalize(h + eps * v_pert)
    scalar = np.ndim(t) == 0
    times = np.atleast_1d(np.asarray(t, dtype=float))

    c_fwd = fwd.vectors.conj().T @ state
    # overlap matrix between the two eigenbases
    w = back.vectors.conj().T @ fwd.vectors
    c_back = back.vectors.conj().T @ state
    raw = np.empty(times.shape[0])
    for k, tk in enumerate(times):
        psi_t = w @ (c_fwd * np.exp(-1j * fwd.levels * tk))
        amp = np.vdot(c_back * np.exp(-1j * back.levels * tk), psi_t)
        raw[k] = abs(amp) ** 2
    fid = np.clip(raw, 0.0, 1.0)
    if scalar:
        fid, raw = float(fid[0]), float(raw[0])
    return (fid, raw) if return_raw else fid
