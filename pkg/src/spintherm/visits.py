"""Visit-count combinatorics on integer energy lattices.

A visit configuration distributes N visits over levels e_n with counts
nu_n, fixed total sum nu_n = N and fixed energy sum nu_n e_n = E_t.  Its
weight is the number of orderings N! / prod nu_n!.  This module finds the
most probable configuration (continuous Lagrange solution plus integer
repair), checks it by exhaustive enumeration, and samples configurations
with an energy-conserving Metropolis chain whose stationary law is
proportional to that weight.

The chain is a computational stand-in for the postulated relaxation
transitions: only its stationary law is fixed, its dynamics is a modelling
choice (see :data:`CHAIN_LABEL`).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field
from functools import reduce

import numpy as np
from scipy.special import gammaln

from .ensembles import beta_from_energy, canonical_from_beta
from .errors import DomainError
from .rng import stream

CHAIN_LABEL = (
    "Metropolis stand-in: uniform proposals over energy-conserving pair moves "
    "(a,b -> c,d with e_a+e_b = e_c+e_d), acceptance targeting N!/prod(nu!)"
)


@dataclass(frozen=True)
class IntegerLevels:
    """Strictly ascending non-negative integer levels with gcd 1.

    Physical energies are ``offset + scale * levels``.
    """

    levels: tuple
    scale: float = 1.0
    offset: float = 0.0

    def __post_init__(self):
        lv = tuple(int(x) for x in self.levels)
        if any(x != y for x, y in zip(lv, self.levels)):
            raise DomainError("integer levels must be integers", quantity="levels")
        if len(lv) < 2:
            raise DomainError("need at least two levels", quantity="levels")
        if lv[0] < 0:
            raise DomainError("integer levels must be non-negative", quantity="levels")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise DomainError("integer levels must be strictly ascending", quantity="levels")
        if reduce(math.gcd, lv) != 1:
            raise DomainError(f"levels {lv} are not gcd-reduced", quantity="levels")
        object.__setattr__(self, "levels", lv)

    def __len__(self):
        return len(self.levels)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.levels, dtype=float)

    @property
    def energies(self) -> np.ndarray:
        return self.offset + self.scale * self.array

    @classmethod
    def from_energies(cls, energies, quantum: float) -> "IntegerLevels":
        """Map physical energies onto the lattice offset + quantum * k."""
        e = np.asarray(energies, dtype=float)
        k = np.rint((e - e.min()) / quantum).astype(int)
        if np.max(np.abs(e.min() + quantum * k - e)) > 1e-9 * max(1.0, np.abs(e).max()):
            raise DomainError("energies are not on the requested lattice", quantity="levels")
        g = reduce(math.gcd, k.tolist())
        g = g or 1
        return cls(tuple(int(x) for x in k // g), scale=quantum * g, offset=float(e.min()))


@dataclass(frozen=True)
class VisitConfiguration:
    counts: tuple
    levels: IntegerLevels

    @property
    def N(self) -> int:
        return sum(self.counts)

    @property
    def E_t(self) -> int:
        return sum(c * e for c, e in zip(self.counts, self.levels.levels))

    def check(self, N: int, E_t: int):
        if any(c < 0 for c in self.counts):
            raise DomainError("visit counts must be non-negative", quantity="counts")
        if self.N != N:
            raise DomainError(f"counts sum to {self.N}, expected N={N}", quantity="N")
        if self.E_t != E_t:
            raise DomainError(f"energy sum is {self.E_t}, expected E_t={E_t}", quantity="E_t")


def _as_int_levels(levels) -> IntegerLevels:
    return levels if isinstance(levels, IntegerLevels) else IntegerLevels(tuple(levels))


def multinomial_weight(counts) -> int:
    """Exact N! / prod nu_n! as an integer."""
    n = sum(counts)
    w = math.factorial(n)
    for c in counts:
        w //= math.factorial(c)
    return w


def log_multinomial_weight(cfg: VisitConfiguration, N: int | None = None,
                           E_t: int | None = None) -> float:
    """ln(N! / prod nu_n!) via log-gamma.

    ``N`` and ``E_t``, when given, are checked against the configuration.
    """
    if any(c < 0 for c in cfg.counts):
        raise DomainError("visit counts must be non-negative", quantity="counts")
    if N is not None or E_t is not None:
        cfg.check(cfg.N if N is None else N, cfg.E_t if E_t is None else E_t)
    counts = np.asarray(cfg.counts, dtype=float)
    return float(gammaln(counts.sum() + 1.0) - gammaln(counts + 1.0).sum())


def _check_feasible_range(lv: IntegerLevels, N: int, E_t: int):
    if N < 1:
        raise DomainError("N must be positive", quantity="N")
    lo, hi = N * lv.levels[0], N * lv.levels[-1]
    if not (lo <= E_t <= hi):
        raise DomainError(
            f"E_t={E_t} is infeasible for N={N}; it must lie in [{lo}, {hi}]", quantity="E_t"
        )


def iter_configurations(levels, N: int, E_t: int):
    """Yield every count tuple with sum N and energy sum E_t."""
    lv = _as_int_levels(levels).levels
    L = len(lv)

    def rec(i, n_left, e_left, prefix):
        if i == L - 1:
            if n_left * lv[i] == e_left:
                yield prefix + (n_left,)
            return
        # remaining levels i+1.. must absorb (n_left - k) visits and e_left - k e_i energy
        for k in range(n_left + 1):
            n_rest = n_left - k
            e_rest = e_left - k * lv[i]
            if e_rest < n_rest * lv[i + 1]:
                # more visits here only lowers e_rest further below the floor
                if e_rest < 0:
                    break
                continue
            if e_rest > n_rest * lv[-1]:
                continue
            yield from rec(i + 1, n_rest, e_rest, prefix + (k,))

    yield from rec(0, N, E_t, ())


@dataclass
class Enumeration:
    """Result of exhaustive search: the winner, every tied maximizer, and the count."""

    best: VisitConfiguration | None
    ties: list = field(default_factory=list)
    n_feasible: int = 0
    weight: int = 0


def _best_exact(candidates, lv):
    best_w, best = -1, []
    for counts in candidates:
        w = multinomial_weight(counts)
        if w > best_w:
            best_w, best = w, [counts]
        elif w == best_w:
            best.append(counts)
    return best_w, sorted(best)


def brute_force_argmax(levels, N: int, E_t: int, max_levels: int = 5, max_n: int = 60) -> Enumeration:
    """Exhaustive maximization of N!/prod nu! over feasible compositions.

    Ties are broken toward the lexicographically smallest count tuple; all
    tied maximizers are listed in ``ties``.  An infeasible instance returns
    ``best=None``.
    """
    lv = _as_int_levels(levels)
    if len(lv) > max_levels or N > max_n:
        raise DomainError(f"enumeration bounded to L <= {max_levels}, N <= {max_n}", quantity="N")
    if N < 1:
        raise DomainError("N must be positive", quantity="N")
    configs = list(iter_configurations(lv, N, E_t))
    if not configs:
        return Enumeration(None, [], 0, 0)
    w, tied = _best_exact(configs, lv)
    return Enumeration(VisitConfiguration(tied[0], lv), tied, len(configs), w)


@dataclass
class MostProbable:
    nu_real: np.ndarray
    nu_rounded: VisitConfiguration
    beta: float
    repaired_by: str


def move_table(levels) -> list:
    """Energy-conserving pair moves ``(a, b, c, d)``: one visit leaves each of
    a and b, one arrives at each of c and d, with e_a + e_b = e_c + e_d.

    a <= b, c <= d and {a, b} != {c, d}.  The table is closed under reversal,
    so uniform proposals over it are symmetric.
    """
    lv = _as_int_levels(levels).levels
    pairs = list(itertools.combinations_with_replacement(range(len(lv)), 2))
    by_sum = {}
    for a, b in pairs:
        by_sum.setdefault(lv[a] + lv[b], []).append((a, b))
    moves = []
    for group in by_sum.values():
        for src in group:
            for dst in group:
                if src != dst:
                    moves.append(src + dst)
    return sorted(moves)


def _move_delta(L, move):
    a, b, c, d = move
    delta = [0] * L
    delta[a] -= 1
    delta[b] -= 1
    delta[c] += 1
    delta[d] += 1
    return tuple(delta)


def _local_ascent(counts, lv, N):
    """Climb in exact weight using pair moves until no move improves."""
    L = len(lv.levels)
    deltas = [_move_delta(L, m) for m in move_table(lv)]
    current = tuple(counts)
    w = multinomial_weight(current)
    improved = True
    while improved:
        improved = False
        for dl in deltas:
            cand = tuple(c + x for c, x in zip(current, dl))
            if min(cand) < 0:
                continue
            wc = multinomial_weight(cand)
            if wc > w or (wc == w and cand < current):
                current, w, improved = cand, wc, True
    return current


def _argmax_dp(lv: IntegerLevels, N: int, E_t: int):
    """Exact argmax by dynamic programming over (visits used, energy used).

    Values are log-weights; every configuration within 1e-9 of the optimum
    is recovered by backtracking and the winner decided in exact integer
    arithmetic, so float ties cannot change the answer.
    """
    levels = lv.levels
    L = len(levels)
    lg = gammaln(np.arange(N + 1) + 1.0)
    neg = -np.inf
    # value[i][n, e]: best -sum lgamma over levels i.. using n visits, energy e
    value = [None] * (L + 1)
    end = np.full((N + 1, E_t + 1), neg)
    end[0, 0] = 0.0
    value[L] = end
    for i in range(L - 1, -1, -1):
        nxt = value[i + 1]
        cur = np.full((N + 1, E_t + 1), neg)
        ei = levels[i]
        for k in range(N + 1):
            if k * ei > E_t:
                break
            shifted = np.full((N + 1, E_t + 1), neg)
            shifted[k:, k * ei:] = nxt[: N + 1 - k, : E_t + 1 - k * ei] - lg[k]
            np.maximum(cur, shifted, out=cur)
        value[i] = cur
    best = value[0][N, E_t]
    if not np.isfinite(best):
        return None
    tol = 1e-9 * max(1.0, abs(best))
    found = []

    def rec(i, n, e, acc, prefix):
        if i == L:
            if n == 0 and e == 0:
                found.append(prefix)
            return
        ei = levels[i]
        for k in range(n + 1):
            if k * ei > e:
                break
            rest = value[i + 1][n - k, e - k * ei]
            if acc - lg[k] + rest >= best - tol:
                rec(i + 1, n - k, e - k * ei, acc - lg[k], prefix + (k,))

    rec(0, N, E_t, 0.0, ())
    _, tied = _best_exact(found, lv)
    return tied[0]


def most_probable_visits(levels, N: int, E_t: int) -> MostProbable:
    """Most probable visit configuration for total N and energy sum E_t.

    The continuous solution is ``nu_n = N exp(-beta e_n) / Z`` with beta
    fixed by the mean energy E_t / N.  The integer answer starts from the
    best feasible point of the +-1 box around it, is improved by pair-move
    ascent, and is certified by an exact dynamic program over
    (visits, energy); ``repaired_by`` says which stage produced the result.
    Endpoint energies return the forced corner configuration.
    """
    lv = _as_int_levels(levels)
    _check_feasible_range(lv, N, E_t)
    L = len(lv)
    e = lv.array
    if E_t == N * lv.levels[0] or E_t == N * lv.levels[-1]:
        counts = [0] * L
        idx = 0 if E_t == N * lv.levels[0] else L - 1
        counts[idx] = N
        beta = math.inf if idx == 0 else -math.inf
        return MostProbable(np.array(counts, dtype=float), VisitConfiguration(tuple(counts), lv),
                            beta, "corner")

    beta = beta_from_energy(e, E_t / N)
    nu_real = N * canonical_from_beta(e, beta).probs

    ranges = [range(max(0, math.ceil(x - 1)), math.floor(x + 1) + 1) for x in nu_real]
    box = [
        c for c in itertools.product(*ranges)
        if sum(c) == N and sum(ci * ei for ci, ei in zip(c, lv.levels)) == E_t
    ]
    stage = "box"
    start = None
    if box:
        _, tied = _best_exact(box, lv)
        start = tied[0]
        climbed = _local_ascent(start, lv, N)
        if climbed != start:
            stage = "ascent"
        start = climbed
    exact = _argmax_dp(lv, N, E_t)
    if exact is None:
        raise DomainError(f"no configuration has N={N} visits with E_t={E_t}", quantity="E_t")
    if start is None:
        stage = "dp"
    elif multinomial_weight(exact) > multinomial_weight(start) or (
        multinomial_weight(exact) == multinomial_weight(start) and exact < start
    ):
        stage = "dp"
    else:
        exact = start
    return MostProbable(nu_real, VisitConfiguration(tuple(exact), lv), beta, stage)


# --------------------------------------------------------------------------
# r-transition chain


@dataclass
class ChainDiagnostics:
    steps: int
    seed: int | None
    task: int
    stderr: np.ndarray
    ess: np.ndarray
    acceptance_rate: float
    n_moves: int
    frozen: bool
    initial: tuple
    final: tuple
    label: str = CHAIN_LABEL


def _unique_configuration(lv, N, E_t):
    return len(set(lv.levels)) == 2 or E_t in (N * lv.levels[0], N * lv.levels[-1])


def r_transition_chain(levels, N: int, E_t: int, steps: int, seed=None, *, task: int = 0,
                       rng=None, n_batches: int = 50, trace_path=None, trace_stride: int = 1000,
                       start=None):
    """Energy-conserving Metropolis chain on visit configurations.

    Each step picks a pair move uniformly from :func:`move_table` and accepts
    it with probability min(1, P(new)/P(old)), P = N!/prod nu!, evaluated in
    log space.  Counts are integers, so both constraints hold exactly at
    every step.  Returns ``(freq, diagnostics)`` where ``freq`` is the time
    average of nu / N over all ``steps`` states.
    """
    lv = _as_int_levels(levels)
    _check_feasible_range(lv, N, E_t)
    if steps < 10_000:
        raise DomainError("steps must be at least 10^4", quantity="steps")
    L = len(lv)
    moves = move_table(lv)
    if start is None:
        start = most_probable_visits(lv, N, E_t).nu_rounded.counts
    counts = list(start)
    VisitConfiguration(tuple(counts), lv).check(N, E_t)
    initial = tuple(counts)

    if not moves:
        if not _unique_configuration(lv, N, E_t):
            raise DomainError(
                f"chain is frozen: move table has size {len(moves)} for levels {lv.levels}",
                quantity="move_table",
            )
        freq = np.array(counts, dtype=float) / N
        zeros = np.zeros(L)
        diag = ChainDiagnostics(steps, seed, task, zeros, np.full(L, float(steps)), 0.0, 0,
                                True, initial, initial)
        return freq, diag

    if rng is None:
        rng = stream(seed, task)
    lg = [math.lgamma(k + 1.0) for k in range(N + 1)]
    move_list = [(m[0], m[1], m[2], m[3]) for m in moves]
    n_moves = len(move_list)

    n_batches = max(2, min(n_batches, steps))
    batch = steps // n_batches
    batch_sums = np.zeros((n_batches, L))
    sq_sum = np.zeros(L)
    accepted = 0
    writer = None
    fh = None
    if trace_path is not None:
        fh = open(trace_path, "w", newline="")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step"] + [f"nu_{i}" for i in range(L)])
    try:
        step = 0
        for bi in range(n_batches):
            n_here = batch if bi < n_batches - 1 else steps - batch * (n_batches - 1)
            picks = rng.integers(0, n_moves, size=n_here).tolist()
            logu = np.log(rng.random(n_here)).tolist()
            acc = [0] * L
            acc2 = [0] * L
            last = 0
            for j in range(n_here):
                if writer is not None and step % trace_stride == 0:
                    writer.writerow([step] + counts)
                step += 1
                a, b, c, d = move_list[picks[j]]
                na, nb = counts[a], counts[b]
                if a == b:
                    if na < 2:
                        continue
                    dl = lg[na] - lg[na - 2]
                else:
                    if na < 1 or nb < 1:
                        continue
                    dl = lg[na] - lg[na - 1] + lg[nb] - lg[nb - 1]
                nc, nd = counts[c], counts[d]
                if c == d:
                    dl -= lg[nc + 2] - lg[nc]
                else:
                    dl -= lg[nc + 1] - lg[nc] + lg[nd + 1] - lg[nd]
                if logu[j] < dl:
                    # state held from index `last` through j (inclusive of j's old value)
                    dur = j - last
                    for i in range(L):
                        acc[i] += counts[i] * dur
                        acc2[i] += counts[i] * counts[i] * dur
                    counts[a] -= 1
                    counts[b] -= 1
                    counts[c] += 1
                    counts[d] += 1
                    last = j
                    accepted += 1
            dur = n_here - last
            for i in range(L):
                acc[i] += counts[i] * dur
                acc2[i] += counts[i] * counts[i] * dur
            batch_sums[bi] = np.array(acc, dtype=float) / (n_here * N)
            sq_sum += np.array(acc2, dtype=float) / (N * N)
            if sum(counts) != N or sum(x * e for x, e in zip(counts, lv.levels)) != E_t:
                raise RuntimeError("constraint drift in r-transition chain")
    finally:
        if fh is not None:
            fh.close()

    sizes = np.array([batch] * (n_batches - 1) + [steps - batch * (n_batches - 1)], dtype=float)
    freq = (batch_sums * sizes[:, None]).sum(axis=0) / steps
    var_batch = batch_sums.var(axis=0, ddof=1)
    se = np.sqrt(var_batch / n_batches)
    var_state = np.maximum(sq_sum / steps - freq**2, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(var_batch > 0, steps * var_state / (batch * var_batch), float(steps))
    diag = ChainDiagnostics(steps, seed, task, se, ess, accepted / steps, n_moves, False,
                            initial, tuple(counts))
    return freq, diag


@dataclass
class PooledChains:
    freq: np.ndarray
    stderr: np.ndarray
    chains: list


def pool_chains(results) -> PooledChains:
    """Equal-length chains merged by averaging; standard errors combine in quadrature."""
    freqs = np.array([f for f, _ in results])
    ses = np.array([d.stderr for _, d in results])
    k = len(results)
    freq = freqs.mean(axis=0)
    se = np.sqrt((ses ** 2).sum(axis=0)) / k
    return PooledChains(freq, se, [d for _, d in results])


def transition_matrix(levels, N: int, E_t: int):
    """Explicit Metropolis transition matrix on the feasible configurations.

    Returns ``(states, matrix)``; used to verify detailed balance and the
    stationary law on small instances.
    """
    lv = _as_int_levels(levels)
    states = sorted(iter_configurations(lv, N, E_t))
    index = {s: i for i, s in enumerate(states)}
    moves = move_table(lv)
    L = len(lv)
    deltas = [_move_delta(L, m) for m in moves]
    n = len(states)
    mat = np.zeros((n, n))
    logw = [log_multinomial_weight(VisitConfiguration(s, lv)) for s in states]
    for i, s in enumerate(states):
        for dl in deltas:
            t = tuple(x + y for x, y in zip(s, dl))
            if min(t) < 0:
                continue
            j = index[t]
            mat[i, j] += min(1.0, math.exp(logw[j] - logw[i])) / len(moves)
        mat[i, i] += 1.0 - mat[i].sum()
    return states, mat


def stationary_mean(levels, N: int, E_t: int) -> np.ndarray:
    """Exact mean of nu/N under the law proportional to N!/prod nu! (enumeration)."""
    lv = _as_int_levels(levels)
    states = np.array(list(iter_configurations(lv, N, E_t)), dtype=float)
    logw = gammaln(N + 1.0) - gammaln(states + 1.0).sum(axis=1)
    w = np.exp(logw - logw.max())
    w /= w.sum()
    return (w[:, None] * states).sum(axis=0) / N
