"""Canonical distribution, its inverse-temperature solver, and GQME averaging.

The GQME ("generalized quantum microcanonical ensemble") average is taken
with the flat Lebesgue measure on the polytope of populations

    {p >= 0, sum p = 1, sum p E = E_target},

phases being irrelevant to |c_n|^2. This choice of measure is recorded in
:data:`GQME_MEASURE` and echoed in every experiment output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np
from scipy.linalg import null_space
from scipy.special import entr, logsumexp

from .errors import DomainError
from .rng import stream

GQME_MEASURE = "flat Lebesgue measure on the population polytope {p>=0, sum p=1, sum p*E=E}"


def as_levels(levels) -> np.ndarray:
    """Validate an energy-level list: finite, ascending, at least two entries."""
    arr = np.asarray(levels, dtype=float).reshape(-1)
    if arr.shape[0] < 2:
        raise DomainError("need at least two energy levels", quantity="levels")
    if not np.all(np.isfinite(arr)):
        raise DomainError("energy levels must be finite", quantity="levels")
    if np.any(np.diff(arr) < 0):
        raise DomainError("energy levels must be ascending", quantity="levels")
    return arr


@dataclass(frozen=True)
class CanonicalDistribution:
    beta: float
    levels: np.ndarray
    probs: np.ndarray
    log_z: float

    @property
    def mean_energy(self) -> float:
        return _mean_energy(self.levels, self.probs)


def _mean_energy(levels, probs):
    # Anchored at the ground level to limit cancellation.
    return float(levels[0] + np.dot(probs, levels - levels[0]))


def canonical_from_beta(levels, beta: float) -> CanonicalDistribution:
    """Level probabilities exp(-beta E_n) / Z, with ln Z for unshifted energies."""
    levels = as_levels(levels)
    if not np.isfinite(beta):
        raise DomainError("beta must be finite", quantity="beta")
    beta = float(beta)
    # Shift by the level of largest weight: E_min for beta >= 0, E_max otherwise.
    anchor = levels[0] if beta >= 0 else levels[-1]
    shifted = -beta * (levels - anchor)
    log_z_shifted = logsumexp(shifted)
    probs = np.exp(shifted - log_z_shifted)
    probs /= probs.sum()
    return CanonicalDistribution(beta, levels, probs, float(log_z_shifted - beta * anchor))


def mean_energy(levels, beta: float) -> float:
    return canonical_from_beta(levels, beta).mean_energy


def beta_from_energy(levels, e_target: float, tol: float = 1e-12) -> float:
    """Solve sum_n rho_n(beta) E_n = e_target for beta.

    The mean energy is strictly decreasing in beta, so the root is bracketed
    by expanding [-2^k, 2^k] / width and then bisected; a guarded Newton
    step (slope = -variance) polishes the result.
    """
    levels = as_levels(levels)
    e_min, e_max = float(levels[0]), float(levels[-1])
    width = e_max - e_min
    if width == 0:
        raise DomainError("all levels are equal; beta is undetermined", quantity="levels")
    if not (e_min < e_target < e_max):
        raise DomainError(
            f"target energy {e_target!r} must lie in the open interval "
            f"({e_min!r}, {e_max!r}); endpoints correspond to beta = +/-inf",
            quantity="E_target",
        )
    target_tol = tol * width

    def resid(b):
        return mean_energy(levels, b) - e_target

    r0 = resid(0.0)
    if r0 == 0.0:
        return 0.0
    # resid decreases with beta: positive residual means beta must grow
    sign = 1.0 if r0 > 0 else -1.0
    lo, hi = 0.0, sign / width
    k = 0
    while resid(hi) * sign > 0:
        lo = hi
        k += 1
        hi = sign * 2.0**k / width
        if k > 1100:
            raise DomainError("could not bracket beta", quantity="E_target")
    a, b = (lo, hi) if lo < hi else (hi, lo)

    for _ in range(400):
        mid = 0.5 * (a + b)
        if mid == a or mid == b:
            break
        r = resid(mid)
        if r == 0.0:
            return mid
        if r > 0:
            a = mid
        else:
            b = mid
        if abs(r) <= 0.25 * target_tol and (b - a) <= 1e-15 * max(1.0, abs(mid)):
            break
    beta = 0.5 * (a + b)
    for _ in range(3):
        dist = canonical_from_beta(levels, beta)
        r = dist.mean_energy - e_target
        var = float(np.dot(dist.probs, (levels - dist.mean_energy) ** 2))
        if r == 0.0 or var <= 0.0:
            break
        step = beta + r / var
        if not (a <= step <= b):
            break
        if abs(resid(step)) >= abs(r):
            break
        beta = step
    return float(beta)


def entropy(dist) -> float:
    """Gibbs entropy -sum p ln p (k = 1), with 0 ln 0 = 0."""
    probs = dist.probs if isinstance(dist, CanonicalDistribution) else np.asarray(dist, dtype=float)
    if np.any(probs < 0):
        raise DomainError("probabilities must be non-negative", quantity="probs")
    if abs(probs.sum() - 1.0) > 1e-9:
        raise DomainError(f"probabilities sum to {probs.sum()!r}, not 1", quantity="probs")
    return float(np.sum(entr(probs)))


def free_energy_identity_check(levels, beta: float):
    """Both sides of S = beta <E> + ln Z.

    Returns ``(lhs, rhs)`` with lhs the entropy of the canonical
    probabilities and rhs built from the mean energy and ln Z.
    """
    dist = canonical_from_beta(levels, beta)
    return entropy(dist), dist.beta * dist.mean_energy + dist.log_z


# --------------------------------------------------------------------------
# GQME sampling


@dataclass
class GqmeSampleStats:
    mean_p: np.ndarray
    stderr: np.ndarray
    n_samples: int
    energy_target: float
    ess: float
    low_ess: bool
    max_constraint_violation: float
    measure: str = GQME_MEASURE
    samples: np.ndarray | None = field(default=None, repr=False)


def _check_gqme_target(levels, e_target):
    if not (levels[0] < e_target < levels[-1]):
        raise DomainError(
            f"target energy {e_target!r} is infeasible; it must lie in the open interval "
            f"({float(levels[0])!r}, {float(levels[-1])!r})",
            quantity="E_target",
        )


def _project(p, a_mat, b_vec, gram_inv):
    return p + a_mat.T @ (gram_inv @ (b_vec - a_mat @ p))


def batch_means(x, n_batches=50):
    """Batch-means standard error and effective sample size per column."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    nb = min(n_batches, n)
    size = n // nb
    used = x[: nb * size]
    means = used.reshape(nb, size, -1).mean(axis=1)
    var_batch = means.var(axis=0, ddof=1) if nb > 1 else np.zeros(x.shape[1])
    se = np.sqrt(var_batch / nb)
    var_x = used.var(axis=0, ddof=1) if n > 1 else np.zeros(x.shape[1])
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(var_batch > 0, nb * size * var_x / (size * var_batch), float(n))
    return se, ess


def gqme_sample(levels, e_target: float, n_samples: int, seed=None, *, burn_in: int = 1000,
                thinning: int = 10, rng=None, keep_samples: bool = False) -> GqmeSampleStats:
    """Hit-and-run sampling of populations under the flat GQME measure.

    Each step draws an isotropic direction inside the affine subspace
    {sum dp = 0, sum dp E = 0}, finds the chord through the current point
    that stays in p >= 0, and jumps to a uniform point on it. The walk
    starts at the canonical distribution of the same energy, which is
    strictly interior.
    """
    levels = as_levels(levels)
    _check_gqme_target(levels, e_target)
    if n_samples < 1000:
        raise DomainError("n_samples must be at least 1000", quantity="n_samples")
    if rng is None:
        rng = stream(seed) if seed is not None else np.random.default_rng()

    a_mat = np.vstack([np.ones_like(levels), levels])
    b_vec = np.array([1.0, e_target])
    gram_inv = np.linalg.inv(a_mat @ a_mat.T) if levels[0] != levels[-1] else None
    basis = null_space(a_mat)
    dim = basis.shape[1]

    p = canonical_from_beta(levels, beta_from_energy(levels, e_target)).probs
    p = _project(p, a_mat, b_vec, gram_inv)
    out = np.empty((n_samples, levels.shape[0]))

    if dim == 0:
        out[:] = p
    else:
        total = burn_in + n_samples * thinning
        kept = 0
        for step in range(total):
            g = rng.standard_normal(dim)
            d = basis @ (g / np.linalg.norm(g))
            neg = d < 0
            pos = d > 0
            t_max = np.min(-p[neg] / d[neg]) if np.any(neg) else np.inf
            t_min = np.max(-p[pos] / d[pos]) if np.any(pos) else -np.inf
            t = rng.uniform(t_min, t_max)
            p = p + t * d
            p = _project(p, a_mat, b_vec, gram_inv)
            # Landing within round-off of a face can leave -1e-17 entries.
            np.maximum(p, 0.0, out=p)
            if step >= burn_in and (step - burn_in) % thinning == thinning - 1:
                out[kept] = p
                kept += 1

    violation = float(max(np.max(np.abs(out.sum(axis=1) - 1.0)),
                          np.max(np.abs(out @ levels - e_target)),
                          np.max(np.maximum(-out, 0.0))))
    mean_p = out.mean(axis=0)
    if dim == 0:
        se = np.zeros_like(mean_p)
        ess = float(n_samples)
    else:
        se, ess_cols = batch_means(out)
        ess = float(np.min(ess_cols))
    return GqmeSampleStats(
        mean_p=mean_p,
        stderr=se,
        n_samples=n_samples,
        energy_target=float(e_target),
        ess=ess,
        low_ess=ess < 100,
        max_constraint_violation=violation,
        samples=out if keep_samples else None,
    )


def polytope_vertices(levels, e_target) -> np.ndarray:
    """Vertices of {p >= 0, sum p = 1, sum p E = e_target}.

    A vertex has at most two non-zero entries, so every pair of levels is
    solved for directly.
    """
    levels = as_levels(levels)
    n = levels.shape[0]
    verts = []
    for i in range(n):
        if levels[i] == e_target:
            v = np.zeros(n)
            v[i] = 1.0
            verts.append(v)
    for i, j in combinations(range(n), 2):
        ei, ej = levels[i], levels[j]
        if ei == ej:
            continue
        pj = (e_target - ei) / (ej - ei)
        pi = 1.0 - pj
        if pi < 0 or pj < 0:
            continue
        v = np.zeros(n)
        v[i], v[j] = pi, pj
        verts.append(v)
    if not verts:
        return np.empty((0, n))
    verts = np.array(verts)
    uniq = [verts[0]]
    for v in verts[1:]:
        if all(np.max(np.abs(v - u)) > 1e-14 for u in uniq):
            uniq.append(v)
    return np.array(uniq)


def gqme_exact_small(levels, e_target: float) -> np.ndarray:
    """Exact flat-measure mean of the populations for L <= 4 levels.

    L = 2: the unique feasible point.  L = 3: the midpoint of the feasible
    segment.  L = 4: the area centroid of the feasible polygon, computed in
    in-plane coordinates with the shoelace formula.
    """
    levels = as_levels(levels)
    n = levels.shape[0]
    if n > 4:
        raise DomainError("exact GQME mean is only available for L <= 4", quantity="levels")
    _check_gqme_target(levels, e_target)
    verts = polytope_vertices(levels, e_target)
    if n == 2:
        return verts[0]
    if n == 3:
        return 0.5 * (verts[0] + verts[1]) if len(verts) == 2 else verts[0]
    a_mat = np.vstack([np.ones_like(levels), levels])
    basis = null_space(a_mat)
    center = verts.mean(axis=0)
    xy = (verts - center) @ basis
    if basis.shape[1] != 2 or len(verts) < 3:
        return center
    order = np.argsort(np.arctan2(xy[:, 1], xy[:, 0]))
    xy = xy[order]
    x, y = xy[:, 0], xy[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = cross.sum() / 2.0
    cx = np.sum((x + xn) * cross) / (6.0 * area)
    cy = np.sum((y + yn) * cross) / (6.0 * area)
    return center + basis @ np.array([cx, cy])
