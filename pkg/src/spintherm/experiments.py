"""Named experiments: each turns an :class:`ExperimentConfig` into a
:class:`ResultRecord`.

Independent tasks (chains, GQME walkers, perturbation strengths) are keyed
by their task index and seeded from ``(seed, task)``; results are reduced in
task order, so the worker count never changes a payload.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from .config import ExperimentConfig
from .decoupling import (
    SEQUENCE_KINDS,
    apply_sequence,
    build_sequence,
    decoherence_time,
    free_evolution,
    stroboscopic_times,
    toggling_average,
)
from .dynamics import (
    diagonal_ensemble,
    expectation_trace,
    loschmidt_echo,
    polarized_state,
    to_spectral,
    windowed_time_average,
)
from .ensembles import (
    GQME_MEASURE,
    as_levels,
    beta_from_energy,
    canonical_from_beta,
    entropy,
    gqme_exact_small,
    gqme_sample,
)
from .errors import ConfigError
from .output import ResultRecord, Table
from .rng import GENERATOR_NAME, SYSTEM_STREAM, stream
from .spin_model import (
    SpinSystem,
    build_hamiltonian,
    collective_observable,
    diagonalize,
    hamiltonian_parts,
    random_spin_system,
)
from .visits import (
    CHAIN_LABEL,
    IntegerLevels,
    brute_force_argmax,
    log_multinomial_weight,
    most_probable_visits,
    pool_chains,
    r_transition_chain,
)

OFFDIAGONAL_FLOOR = 1e-10
UNITARY_BOUNDARY = (
    "closed-system unitary simulation: decay reported here comes from Hamiltonian terms the "
    "sequence or sign reversal leaves behind; irreversibility beyond unitary dynamics is not modelled"
)


def run_tasks(fn, arglist, workers: int = 1):
    """Apply ``fn`` to each argument tuple; results come back in input order."""
    if workers <= 1 or len(arglist) <= 1:
        return [fn(*args) for args in arglist]
    with ProcessPoolExecutor(max_workers=min(workers, len(arglist))) as pool:
        futures = [pool.submit(fn, *args) for args in arglist]
        return [f.result() for f in futures]


def _metadata(cfg: ExperimentConfig, **extra) -> dict:
    meta = {
        "experiment": cfg.experiment,
        "code_version": __version__,
        "config": cfg.raw,
        "seeds": {"seed": cfg.seed, "generator": GENERATOR_NAME,
                  "streams": "SeedSequence([seed, task_index])"},
    }
    meta.update(extra)
    return meta


def spin_system_from(cfg: ExperimentConfig) -> SpinSystem:
    block = cfg.system
    if "random" in block:
        rnd = block["random"]
        return random_spin_system(
            rnd["n_spins"], stream(cfg.seed, SYSTEM_STREAM),
            offset_scale=float(rnd.get("offset_scale", 1.0)),
            coupling_scale=float(rnd.get("coupling_scale", 1.0)),
        )
    return SpinSystem.from_dict(block)


# --------------------------------------------------------------------------


def experiment_canonical(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    levels = as_levels(cfg.system["levels"])
    p = cfg.parameters
    beta = float(p["beta"]) if p["beta"] is not None else beta_from_energy(levels, float(p["energy"]))
    dist = canonical_from_beta(levels, beta)
    s = entropy(dist)
    rhs = dist.beta * dist.mean_energy + dist.log_z
    rec = ResultRecord(_metadata(cfg))
    rows = [[i, e, q] for i, (e, q) in enumerate(zip(levels, dist.probs))]
    rec.tables["distribution"] = Table(["index", "energy", "probability"], rows, ("probability",))
    rec.add_scalar("beta", beta)
    rec.add_scalar("log_z", dist.log_z)
    rec.add_scalar("mean_energy", dist.mean_energy)
    rec.add_scalar("entropy", s)
    rec.add_scalar("identity_rhs", rhs)
    rec.add_scalar("identity_residual", s - rhs, tolerance=1e-12 * max(1.0, abs(dist.log_z)))
    return rec


def _gqme_task(levels, energy, n_samples, seed, task, burn_in, thinning):
    stats = gqme_sample(levels, energy, n_samples, rng=stream(seed, task),
                        burn_in=burn_in, thinning=thinning)
    return stats


def experiment_gqme(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    levels = as_levels(cfg.system["levels"])
    p = cfg.parameters
    energy = float(p["energy"])
    if p["chains"] < 1:
        raise ConfigError("key 'chains' must be at least 1", key="chains")
    args = [(levels, energy, p["n_samples"], cfg.seed, k, p["burn_in"], p["thinning"])
            for k in range(p["chains"])]
    runs = run_tasks(_gqme_task, args, workers)
    k = len(runs)
    mean = np.mean([r.mean_p for r in runs], axis=0)
    se = np.sqrt(np.sum([r.stderr**2 for r in runs], axis=0)) / k
    canon = canonical_from_beta(levels, beta_from_energy(levels, energy)).probs
    columns = ["index", "energy", "gqme_mean", "gqme_stderr", "canonical"]
    cols = [np.arange(len(levels)), levels, mean, se, canon]
    prob = ["gqme_mean", "canonical"]
    exact = None
    if len(levels) <= 4:
        exact = gqme_exact_small(levels, energy)
        columns.append("exact")
        cols.append(exact)
        prob.append("exact")
    rec = ResultRecord(_metadata(cfg, measure=GQME_MEASURE,
                                 low_ess=bool(any(r.low_ess for r in runs))))
    rec.tables["gqme"] = Table(columns, np.column_stack(cols).tolist(), tuple(prob))
    dep = np.abs(mean - canon)
    j = int(np.argmax(dep))
    rec.add_scalar("max_departure_from_canonical", dep[j], stderr=se[j], stochastic=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, dep / se, np.inf)
    rec.add_scalar("departure_in_stderr", float(np.max(z)))
    if exact is not None:
        err = np.abs(mean - exact)
        i = int(np.argmax(err))
        rec.add_scalar("max_error_vs_exact", err[i], stderr=se[i], stochastic=True)
    rec.add_scalar("min_ess", min(r.ess for r in runs))
    rec.add_scalar("max_constraint_violation", max(r.max_constraint_violation for r in runs),
                   tolerance=1e-12)
    return rec


def _int_levels(cfg) -> IntegerLevels:
    s = cfg.system
    return IntegerLevels(tuple(s["levels"]), float(s.get("scale", 1.0)), float(s.get("offset", 0.0)))


def experiment_visits(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    lv = _int_levels(cfg)
    N, E_t = cfg.parameters["N"], cfg.parameters["E_t"]
    mp = most_probable_visits(lv, N, E_t)
    rounded = np.array(mp.nu_rounded.counts, dtype=float)
    columns = ["index", "level", "energy", "nu_real", "nu_rounded", "rho_real", "rho_rounded"]
    cols = [np.arange(len(lv)), lv.array, lv.energies, mp.nu_real, rounded, mp.nu_real / N,
            rounded / N]
    rec = ResultRecord(_metadata(cfg, repaired_by=mp.repaired_by))
    if cfg.parameters["brute_force"] and len(lv) <= 5 and N <= 60:
        bf = brute_force_argmax(lv, N, E_t)
        columns.append("brute_force")
        cols.append(np.array(bf.best.counts, dtype=float))
        rec.add_scalar("agrees_with_brute_force", float(bf.best.counts == mp.nu_rounded.counts))
        rec.add_scalar("brute_force_ties", len(bf.ties))
        rec.add_scalar("n_feasible", bf.n_feasible)
    rec.tables["visits"] = Table(columns, np.column_stack(cols).tolist(), ("rho_real", "rho_rounded"))
    rec.add_scalar("beta_lattice_units", mp.beta)
    lw = log_multinomial_weight(mp.nu_rounded, N, E_t)
    rec.add_scalar("log_weight", lw)
    if math.isfinite(mp.beta):
        s = entropy(mp.nu_real / N)
        rec.add_scalar("entropy_canonical", s)
        rec.add_scalar("log_weight_per_visit_gap", s - lw / N)
    return rec


def _chain_task(levels, N, E_t, steps, seed, task, n_batches, trace_path, trace_stride):
    return r_transition_chain(levels, N, E_t, steps, seed, task=task, n_batches=n_batches,
                              trace_path=trace_path, trace_stride=max(trace_stride, 1))


def experiment_chain(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    lv = _int_levels(cfg)
    p = cfg.parameters
    N, E_t = p["N"], p["E_t"]
    if p["chains"] < 1:
        raise ConfigError("key 'chains' must be at least 1", key="chains")
    traces = []
    args = []
    for k in range(p["chains"]):
        trace = None
        if p["trace_stride"] > 0:
            cfg.output_dir.mkdir(parents=True, exist_ok=True)
            trace = cfg.output_dir / f".chain_trace_{k}.csv.part"
            traces.append((trace, cfg.output_dir / f"chain_trace_{k}.csv"))
        args.append((lv, N, E_t, p["steps"], cfg.seed, k, p["n_batches"], trace, p["trace_stride"]))
    results = run_tasks(_chain_task, args, workers)
    for part, final in traces:
        os.replace(part, final)
    pooled = pool_chains(results)
    rho = canonical_from_beta(lv.array, beta_from_energy(lv.array, E_t / N)).probs if (
        N * lv.levels[0] < E_t < N * lv.levels[-1]) else pooled.freq
    rec = ResultRecord(_metadata(cfg, chain=CHAIN_LABEL,
                                 frozen=bool(any(d.frozen for d in pooled.chains))))
    rows = np.column_stack([np.arange(len(lv)), lv.array, pooled.freq, pooled.stderr, rho]).tolist()
    rec.tables["chain"] = Table(["index", "level", "freq", "stderr", "canonical"], rows,
                                ("freq", "canonical"))
    dev = np.abs(pooled.freq - rho)
    j = int(np.argmax(dev))
    rec.add_scalar("max_deviation_from_canonical", dev[j], stderr=pooled.stderr[j], stochastic=True)
    rec.add_scalar("max_stderr", float(np.max(pooled.stderr)))
    rec.add_scalar("acceptance_rate", float(np.mean([d.acceptance_rate for d in pooled.chains])))
    rec.add_scalar("min_ess", float(np.min([np.min(d.ess) for d in pooled.chains])))
    rec.add_scalar("move_table_size", pooled.chains[0].n_moves)
    return rec


def experiment_dd(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    p = cfg.parameters
    sys_ = spin_system_from(cfg)
    parts = hamiltonian_parts(sys_)
    h = build_hamiltonian(sys_)
    eig = diagonalize(h)
    psi = polarized_state(sys_.n_spins, "x")
    obs = collective_observable(sys_, "x")
    duration = float(p["duration"])
    threshold = float(p["threshold"])
    rec = ResultRecord(_metadata(cfg, boundary=UNITARY_BOUNDARY, system=sys_.to_dict(),
                                 observable="sum_i I_x^i normalized by its initial value",
                                 initial_state="all spins along +x"))

    free_times = np.linspace(0.0, duration, p["free_samples"] + 1)
    free = apply_sequence(psi, eig, free_evolution(duration), obs, times=free_times)
    t_free = decoherence_time(free, threshold)
    rec.tables["free"] = Table(["time", "value", "normalized"],
                               np.column_stack([free.times, free.values,
                                                free.values / free.values[0]]).tolist())
    rec.add_scalar("decoherence_time_free", t_free)
    for kind in p["sequences"]:
        if not isinstance(kind, str) or kind.upper() not in SEQUENCE_KINDS:
            raise ConfigError(f"key 'sequences' must list names from {', '.join(SEQUENCE_KINDS)}",
                              key="sequences")
        one = build_sequence(kind, float(p["tau"]), 1)
        n_cycles = max(1, int(math.ceil(duration / one.period - 1e-9)))
        seq = build_sequence(kind, float(p["tau"]), n_cycles,
                             flip_error=float(p["flip_error"]), phase_error=float(p["phase_error"]))
        tr = apply_sequence(psi, eig, seq, obs, times=stroboscopic_times(seq), threshold=threshold)
        name = seq.name.lower()
        rec.tables[f"seq_{name}"] = Table(
            ["time", "value", "normalized"],
            np.column_stack([tr.times, tr.values, tr.values / tr.values[0]]).tolist())
        avg = toggling_average(parts, build_sequence(kind, float(p["tau"]), 1))
        rec.add_scalar(f"decoherence_time_{name}", tr.metric_time)
        rec.add_scalar(f"suppression_factor_{name}", tr.metric_time / t_free)
        rec.add_scalar(f"cycle_time_{name}", seq.period)
        rec.add_scalar(f"norm_drift_{name}", tr.norm_drift, tolerance=1e-10)
        rec.add_scalar(f"avg_zeeman_maxnorm_{name}", float(np.max(np.abs(avg["zeeman"]))))
        rec.add_scalar(f"avg_dipolar_maxnorm_{name}", float(np.max(np.abs(avg["dipolar"]))))
    return rec


def _echo_task(psi, h, v, eps, times):
    fid, raw = loschmidt_echo(psi, h, v, eps, times, return_raw=True)
    return fid, raw


def gaussian_decay_scale(times, fid) -> float:
    """T in F ~ exp(-(t/T)^2), least squares on -ln F against t^2 through the origin."""
    t2 = np.asarray(times) ** 2
    y = -np.log(np.clip(np.asarray(fid), 1e-300, 1.0))
    # round-off level losses are no decay
    y = np.where(y < 1e-12, 0.0, y)
    den = float(np.sum(t2 * t2))
    slope = float(np.sum(t2 * y)) / den if den > 0 else 0.0
    return math.inf if slope <= 0 else 1.0 / math.sqrt(slope)


def experiment_reverse(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    p = cfg.parameters
    sys_ = spin_system_from(cfg)
    parts = hamiltonian_parts(sys_)
    h = build_hamiltonian(sys_)
    if p["perturbation"] not in ("dipolar", "zeeman", "full"):
        raise ConfigError("key 'perturbation' must be dipolar, zeeman or full", key="perturbation")
    v = h if p["perturbation"] == "full" else parts[p["perturbation"]]
    psi = polarized_state(sys_.n_spins, p["initial"])
    eps_grid = [float(e) for e in p["eps"]]
    if not eps_grid:
        raise ConfigError("key 'eps' must be a non-empty list", key="eps")
    times = np.linspace(0.0, float(p["t_max"]), p["n_times"])
    results = run_tasks(_echo_task, [(psi, h, v, e, times) for e in eps_grid], workers)
    rows = []
    rec = ResultRecord(_metadata(cfg, boundary=UNITARY_BOUNDARY, system=sys_.to_dict(),
                                 perturbation=p["perturbation"]))
    for eps, (fid, raw) in zip(eps_grid, results):
        rows.extend([eps, t, f, r] for t, f, r in zip(times, fid, raw))
        rec.add_scalar(f"decay_scale[eps={eps!r}]", gaussian_decay_scale(times, fid))
        rec.add_scalar(f"final_fidelity[eps={eps!r}]", fid[-1])
    rec.tables["echo"] = Table(["eps", "time", "fidelity", "fidelity_raw"], rows)
    return rec


def _observable(name: str, sys_: SpinSystem, h):
    table = {
        "Ix": lambda: collective_observable(sys_, "x"),
        "Iy": lambda: collective_observable(sys_, "y"),
        "Iz": lambda: collective_observable(sys_, "z"),
        "identity": lambda: np.eye(sys_.dim, dtype=complex),
        "hamiltonian": lambda: h,
    }
    if name not in table:
        raise ConfigError(f"key 'observable' must be one of {', '.join(table)}", key="observable")
    return table[name]()


def experiment_eth(cfg: ExperimentConfig, workers: int = 1) -> ResultRecord:
    p = cfg.parameters
    sys_ = spin_system_from(cfg)
    if sys_.n_spins > 10:
        raise ConfigError("eth needs n_spins <= 10 for off-diagonal statistics", key="n_spins")
    h = build_hamiltonian(sys_)
    eig = diagonalize(h)
    a_e = eig.to_energy_basis(_observable(p["observable"], sys_, h))
    c = to_spectral(polarized_state(sys_.n_spins, p["initial"]), eig)
    levels = eig.levels

    diag_a = np.real(np.diagonal(a_e))
    off = np.abs(a_e[~np.eye(len(levels), dtype=bool)])
    # magnitudes at the level of diagonalization round-off are recorded as zero
    floor = OFFDIAGONAL_FLOOR * max(1.0, float(np.max(np.abs(diag_a))))
    off = np.where(off < floor, 0.0, off)
    hist_max = float(off.max()) if off.size and off.max() > 0 else 1.0
    counts, edges = np.histogram(off, bins=p["histogram_bins"], range=(0.0, hist_max))

    window = float(p["window"])
    mean, bound = windowed_time_average(c, a_e, window, p["n_samples"])
    t_trace = np.linspace(0.0, window, p["trace_points"])
    trace = expectation_trace(c, a_e, t_trace)
    de = diagonal_ensemble(c, a_e)

    energy = float(np.sum(c.populations * levels))
    canon_value = None
    if levels[0] < energy < levels[-1]:
        rho = canonical_from_beta(levels, beta_from_energy(levels, energy)).probs
        canon_value = float(np.sum(rho * diag_a))

    rec = ResultRecord(_metadata(cfg, system=sys_.to_dict(), observable=p["observable"],
                                 initial_state=f"all spins along +{p['initial']}"))
    rec.tables["diagonal_elements"] = Table(
        ["index", "energy", "A_nn"], np.column_stack([np.arange(len(levels)), levels, diag_a]).tolist())
    rec.tables["offdiagonal_histogram"] = Table(
        ["bin_low", "bin_high", "count"], np.column_stack([edges[:-1], edges[1:], counts]).tolist())
    rec.tables["time_trace"] = Table(["time", "expectation"], np.column_stack([t_trace, trace]).tolist())
    rec.add_scalar("energy", energy)
    rec.add_scalar("diagonal_ensemble", de)
    rec.add_scalar("windowed_average", mean)
    rec.add_scalar("windowed_bound", bound)
    rec.add_scalar("max_trace_deviation", float(np.max(np.abs(trace - de))))
    rec.add_scalar("max_offdiagonal", float(off.max()) if off.size else 0.0)
    rec.add_scalar("offdiagonal_floor", floor)
    rec.add_scalar("mean_neighbor_diagonal_step", float(np.mean(np.abs(np.diff(diag_a)))))
    if canon_value is not None:
        rec.add_scalar("canonical_value", canon_value)
        rec.add_scalar("diagonal_minus_canonical", de - canon_value)
    return rec


EXPERIMENT_FUNCS = {
    "canonical": experiment_canonical,
    "gqme": experiment_gqme,
    "visits": experiment_visits,
    "chain": experiment_chain,
    "dd": experiment_dd,
    "reverse": experiment_reverse,
    "eth": experiment_eth,
}

# Alias used by the module interface
experiment_irreversibility = experiment_reverse
