"""Dynamical-decoupling pulse sequences with ideal collective pulses.

Pulses are instantaneous rotations exp(-i theta n . sum_i I_i) applied to
every spin; between pulses the system evolves exactly under its
Hamiltonian.  Sequence cycles are read from the ``sequences/*.seq`` tables
shipped with the package, and custom cycles use the same plain-text format:

    # comment
    <delay> <axis> <angle>      one pulse, preceded by <delay>
    <delay>                     trailing free evolution (last line only)

``axis`` is one of x, -x, y, -y, z, -z or a comma-separated vector
``ax,ay,az``; ``angle`` is in radians and may be written as ``pi``,
``pi/2``, ``-pi/2``, ``3pi/2``, ``2*pi``.

This is a unitary simulator: decoherence it reports comes only from the
Hamiltonian terms a sequence fails to average out.  Any thermalization
residual beyond unitary dynamics is outside its reach.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .dynamics import SpectralAmplitudes, expectation, to_spectral
from .spin_model import Eigensystem

SEQUENCE_KINDS = ("CP", "CPMG", "XY4", "XY8", "WAHUHA", "MREV8")

_AXES = {
    "x": (1.0, 0.0, 0.0), "-x": (-1.0, 0.0, 0.0),
    "y": (0.0, 1.0, 0.0), "-y": (0.0, -1.0, 0.0),
    "z": (0.0, 0.0, 1.0), "-z": (0.0, 0.0, -1.0),
}
_PI_RE = re.compile(r"^([+-]?)(\d*\.?\d*)\*?pi(?:/(\d+(?:\.\d*)?))?$")


@dataclass(frozen=True)
class PulseEvent:
    delay_before: float
    axis: tuple
    angle: float

    def __post_init__(self):
        if not (np.isfinite(self.delay_before) and self.delay_before >= 0):
            raise ValueError(f"delay must be finite and non-negative, got {self.delay_before}")
        axis = tuple(float(a) for a in self.axis)
        if len(axis) != 3 or abs(math.sqrt(sum(a * a for a in axis)) - 1.0) > 1e-12:
            raise ValueError(f"pulse axis must be a unit 3-vector, got {self.axis}")
        object.__setattr__(self, "axis", axis)


@dataclass(frozen=True)
class PulseSequence:
    events: tuple
    tail_delay: float = 0.0
    n_cycles: int = 1
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))
        if not (np.isfinite(self.tail_delay) and self.tail_delay >= 0):
            raise ValueError("tail delay must be finite and non-negative")
        if self.events and self.cycle_time <= 0:
            raise ValueError("a non-empty sequence needs a positive total duration")

    @property
    def cycle_time(self) -> float:
        """Total duration: all delays including the tail."""
        return float(sum(e.delay_before for e in self.events) + self.tail_delay)

    @property
    def period(self) -> float:
        """Duration of one cycle."""
        return self.cycle_time / self.n_cycles

    @property
    def n_pulses(self) -> int:
        return len(self.events)

    def segments(self):
        """Yield ``(delay, event_or_None)``: free evolution, then the pulse."""
        for ev in self.events:
            yield ev.delay_before, ev
        yield self.tail_delay, None


def free_evolution(duration: float) -> PulseSequence:
    return PulseSequence((), tail_delay=float(duration), name="free")


def parse_angle(token: str) -> float:
    m = _PI_RE.match(token.strip())
    if m is None:
        return float(token)
    sign, num, den = m.groups()
    val = math.pi * (float(num) if num else 1.0) / (float(den) if den else 1.0)
    return -val if sign == "-" else val


def parse_axis(token: str) -> tuple:
    token = token.strip()
    if token in _AXES:
        return _AXES[token]
    parts = [float(p) for p in token.split(",")]
    if len(parts) != 3:
        raise ValueError(f"cannot parse pulse axis {token!r}")
    return tuple(parts)


def parse_sequence_table(text: str, tau: float = 1.0, name: str = "custom") -> PulseSequence:
    """One cycle from the plain-text table format; delays are multiplied by ``tau``."""
    events = []
    tail = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if tail is not None:
            raise ValueError(f"line {lineno}: entries after the tail delay")
        tokens = line.split()
        if len(tokens) == 1:
            tail = float(tokens[0]) * tau
        elif len(tokens) == 3:
            events.append(PulseEvent(float(tokens[0]) * tau, parse_axis(tokens[1]),
                                     parse_angle(tokens[2])))
        else:
            raise ValueError(f"line {lineno}: expected 'delay axis angle' or 'delay'")
    return PulseSequence(tuple(events), tail or 0.0, 1, name)


def load_sequence_table(path, tau: float = 1.0) -> PulseSequence:
    with open(path) as fh:
        return parse_sequence_table(fh.read(), tau, name=str(path))


def repeat(cycle: PulseSequence, n_cycles: int) -> PulseSequence:
    """Concatenate cycles; each tail merges into the next cycle's first delay."""
    if n_cycles < 1:
        raise ValueError("n_cycles must be at least 1")
    events = []
    carry = 0.0
    for _ in range(n_cycles):
        for k, ev in enumerate(cycle.events):
            delay = ev.delay_before + (carry if k == 0 else 0.0)
            events.append(PulseEvent(delay, ev.axis, ev.angle))
        carry = cycle.tail_delay if cycle.events else carry + cycle.tail_delay
    return PulseSequence(tuple(events), carry, n_cycles * cycle.n_cycles, cycle.name)


def with_pulse_errors(seq: PulseSequence, flip_error: float = 0.0, phase_error: float = 0.0):
    """Scale every angle by (1 + flip_error) and turn every axis by
    ``phase_error`` about z."""
    if flip_error == 0.0 and phase_error == 0.0:
        return seq
    c, s = math.cos(phase_error), math.sin(phase_error)
    events = []
    for ev in seq.events:
        ax, ay, az = ev.axis
        axis = (c * ax - s * ay, s * ax + c * ay, az)
        events.append(PulseEvent(ev.delay_before, axis, ev.angle * (1.0 + flip_error)))
    return PulseSequence(tuple(events), seq.tail_delay, seq.n_cycles, seq.name)


def build_sequence(kind: str, tau: float, n_cycles: int = 1, *, flip_error: float = 0.0,
                   phase_error: float = 0.0) -> PulseSequence:
    """Standard cycle ``kind`` with base delay ``tau``, repeated ``n_cycles`` times."""
    key = kind.upper().replace("-", "")
    if key not in SEQUENCE_KINDS:
        raise ValueError(f"unknown sequence kind {kind!r}; choose from {', '.join(SEQUENCE_KINDS)}")
    if not tau > 0:
        raise ValueError("tau must be positive")
    text = resources.files("spintherm").joinpath(f"sequences/{key}.seq").read_text()
    cycle = parse_sequence_table(text, tau, name=key)
    return with_pulse_errors(repeat(cycle, n_cycles), flip_error, phase_error)


def rotation(n_spins: int, axis, angle: float) -> np.ndarray:
    """exp(-i angle axis . sum_i I_i) as a tensor power of the single-spin rotation."""
    ax, ay, az = axis
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    single = np.array([[c - 1j * s * az, -1j * s * (ax - 1j * ay)],
                       [-1j * s * (ax + 1j * ay), c + 1j * s * az]])
    out = single
    for _ in range(n_spins - 1):
        out = np.kron(out, single)
    return out


def _n_spins_for(dim: int) -> int:
    n = int(round(math.log2(dim)))
    if 2**n != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return n


def toggling_average(h_parts, seq: PulseSequence):
    """Zeroth-order average Hamiltonian (1/t_c) sum_k tau_k U_k^dag H U_k.

    ``U_k`` is the product of all pulses before window k.  ``h_parts`` is a
    single matrix or a mapping of labelled matrices (e.g. ``{"zeeman": ...,
    "dipolar": ...}``); the result has the same shape.
    """
    if isinstance(h_parts, dict):
        return {k: toggling_average(v, seq) for k, v in h_parts.items()}
    h = np.asarray(h_parts, dtype=complex)
    if seq.cycle_time <= 0:
        raise ValueError("sequence has zero duration")
    n = _n_spins_for(h.shape[0])
    cache = {}
    u = np.eye(h.shape[0], dtype=complex)
    acc = np.zeros_like(h)
    for delay, ev in seq.segments():
        if delay > 0:
            acc += delay * (u.conj().T @ h @ u)
        if ev is not None:
            key = (ev.axis, ev.angle)
            if key not in cache:
                cache[key] = rotation(n, ev.axis, ev.angle)
            u = cache[key] @ u
    avg = acc / seq.cycle_time
    return 0.5 * (avg + avg.conj().T)


@dataclass
class CoherenceTrace:
    times: np.ndarray
    values: np.ndarray
    norm_drift: float = 0.0
    metric_time: float | None = None
    threshold: float | None = None
    meta: dict = field(default_factory=dict)


def _sample_times(seq: PulseSequence, samples_per_delay: int):
    """Grid: t = 0, then ``samples_per_delay`` evenly spaced points closing each delay."""
    times = [0.0]
    start = 0.0
    for delay, _ in seq.segments():
        if delay > 0:
            times.extend(start + delay * j / samples_per_delay for j in range(1, samples_per_delay + 1))
        start += delay
    return np.array(times)


def apply_sequence(initial, eig: Eigensystem, seq: PulseSequence, observable,
                   samples_per_delay: int = 4, *, times=None, threshold: float | None = None):
    """Expectation of ``observable`` along a pulse sequence.

    ``initial`` is a state vector or a density matrix in the product basis.
    The observable is recorded at ``times`` when given (any points in
    [0, total duration]; a point that coincides with a pulse is taken just
    before it), otherwise on the per-delay grid of ``samples_per_delay``
    points.  With ``threshold`` the decoherence time is also filled in.
    """
    initial = np.asarray(initial, dtype=complex)
    dim = eig.dim
    n = _n_spins_for(dim)
    a_energy = eig.to_energy_basis(observable)
    grid = _sample_times(seq, samples_per_delay) if times is None else np.asarray(times, float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("sample times must be strictly increasing")
    if grid.size and (grid[0] < 0 or grid[-1] > seq.cycle_time + 1e-12 * max(1.0, seq.cycle_time)):
        raise ValueError("sample times fall outside the sequence")

    pure = initial.ndim == 1
    if pure:
        if initial.shape != (dim,):
            raise ValueError("state dimension does not match the Hamiltonian")
        state = to_spectral(initial, eig)
        norm0 = float(np.linalg.norm(state.c))
    else:
        if initial.shape != (dim, dim):
            raise ValueError("density matrix dimension does not match the Hamiltonian")
        rho = eig.to_energy_basis(initial)
        norm0 = float(np.trace(rho).real)

    rot_cache = {}
    values = np.empty(grid.shape[0])
    k = 0
    start = 0.0
    for delay, ev in seq.segments():
        end = start + delay
        last_segment = ev is None
        while k < grid.shape[0] and (grid[k] <= end if not last_segment else True):
            s = grid[k] - start
            if pure:
                values[k] = expectation(state, a_energy, s)
            else:
                ph = np.exp(-1j * eig.levels * s)
                values[k] = float(np.real(np.sum((ph[:, None] * rho * ph.conj()[None, :]) * a_energy.T)))
            k += 1
        if pure:
            state = SpectralAmplitudes(state.c * np.exp(-1j * eig.levels * delay), state.levels)
        else:
            ph = np.exp(-1j * eig.levels * delay)
            rho = ph[:, None] * rho * ph.conj()[None, :]
        if ev is not None:
            key = (ev.axis, ev.angle)
            if key not in rot_cache:
                rot_cache[key] = eig.to_energy_basis(rotation(n, ev.axis, ev.angle))
            r = rot_cache[key]
            if pure:
                state = SpectralAmplitudes(r @ state.c, state.levels)
            else:
                rho = r @ rho @ r.conj().T
        start = end

    if pure:
        drift = abs(float(np.linalg.norm(state.c)) - norm0)
    else:
        drift = abs(float(np.trace(rho).real) - norm0)
    trace = CoherenceTrace(grid, values, drift)
    if threshold is not None:
        trace.threshold = threshold
        trace.metric_time = decoherence_time(trace, threshold)
    return trace


def stroboscopic_times(seq: PulseSequence, n_points: int | None = None):
    """Cycle boundaries 0, t_c, 2 t_c, ... of a repeated sequence."""
    n = seq.n_cycles if n_points is None else n_points
    return seq.period * np.arange(n + 1)


def decoherence_time(trace: CoherenceTrace, threshold: float) -> float:
    """First time the trace, normalized by its initial value, drops below
    ``threshold``; linear interpolation between samples, ``inf`` if never."""
    values = np.asarray(trace.values, dtype=float)
    times = np.asarray(trace.times, dtype=float)
    if values.size == 0:
        raise ValueError("empty trace")
    if values[0] == 0:
        raise ValueError("trace starts at zero; cannot normalize")
    norm = values / values[0]
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie strictly between 0 and the initial value")
    below = np.nonzero(norm < threshold)[0]
    if below.size == 0:
        return math.inf
    i = int(below[0])
    t0, t1 = times[i - 1], times[i]
    v0, v1 = norm[i - 1], norm[i]
    return float(t0 + (v0 - threshold) * (t1 - t0) / (v0 - v1))
