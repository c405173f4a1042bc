"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Tolerances and runtime limits are pinned as module constants below.
"""

import filecmp
import itertools
import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from spintherm.cli import main
from spintherm.decoupling import (
    apply_sequence,
    build_sequence,
    decoherence_time,
    free_evolution,
    stroboscopic_times,
    toggling_average,
)
from spintherm.dynamics import (
    diagonal_ensemble,
    evolve_pure,
    loschmidt_echo,
    polarized_state,
    to_spectral,
    windowed_time_average,
)
from spintherm.ensembles import (
    beta_from_energy,
    canonical_from_beta,
    entropy,
    gqme_exact_small,
    gqme_sample,
    mean_energy,
)
from spintherm.experiments import run_tasks
from spintherm.oracles import DD_INSTANCE, REVERSE_INSTANCE, instance_system
from spintherm.rng import stream
from spintherm.spin_model import (
    build_hamiltonian,
    collective_observable,
    diagonalize,
    hamiltonian_parts,
    random_spin_system,
)
from spintherm.visits import brute_force_argmax, most_probable_visits, pool_chains, r_transition_chain

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs" / "acceptance"
GOLDEN = Path(__file__).resolve().parent / "golden"

# 1. canonical identities
C1_SETS = 50
C1_L_RANGE = (2, 16)
C1_BETA_RANGE = (-5.0, 5.0)
C1_IDENTITY_TOL = 1e-12
C1_ROUND_TRIP_TOL = 1e-8
C1_RUNTIME = 1.0
# 2. most probable visits
C2_MAX_L, C2_MAX_N, C2_MAX_LEVEL = 5, 60, 6
C2_MIN_INSTANCES = 200
C2_RUNTIME = 30.0
# 3. r-transition chain
C3_LEVELS, C3_N, C3_ET = (0, 1, 2), 300, 240
C3_STEPS, C3_CHAINS = 1_000_000, 8
C3_N_STDERR = 4.0
C3_MAX_STDERR = 0.01
C3_RUNTIME = 60.0
# 4. GQME
C4_LEVELS, C4_ENERGY = (0.0, 1.0, 2.0), 0.8
C4_SAMPLES, C4_CHAINS = 10_000, 4
C4_AGREE_STDERR = 4.0
C4_DEPART_STDERR = 10.0
C4_RUNTIME = 60.0
# 5. conservation and windowed average
C5_INSTANCES = 20
C5_SPINS = (4, 6)
C5_T_MAX = 1e3
C5_DRIFT_TOL = 1e-12
C5_SAMPLES = 20_000
C5_RUNTIME = 60.0
# 6. dynamical decoupling
C6_ECHOES = 20
C6_ECHO_TOL = 1e-9
C6_AVERAGE_TOL = 1e-12
C6_CYCLE_TIME = 0.3          # documented WAHUHA t_c for the acceptance instance
C6_MIN_FACTOR = 5.0
C6_RUNTIME = 120.0
# 7. irreversibility boundary
C7_EXACT_TOL = 1e-9
C7_EPS = 0.1
C7_MAX_FINAL = 0.99
C7_RUNTIME = 30.0
# 8. determinism
C8_WORKERS = (1, 8)


def report(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def test_criterion_1_canonical_identities():
    t0 = time.perf_counter()
    worst_id, worst_rt = 0.0, 0.0
    for k in range(C1_SETS):
        rng = stream(101, k)
        L = int(rng.integers(C1_L_RANGE[0], C1_L_RANGE[1] + 1))
        levels = np.sort(rng.standard_normal(L))
        beta = float(rng.uniform(*C1_BETA_RANGE))
        dist = canonical_from_beta(levels, beta)
        s = entropy(dist)
        worst_id = max(worst_id, abs(s - (beta * dist.mean_energy + dist.log_z))
                       / max(1.0, abs(dist.log_z)))
        back = beta_from_energy(levels, mean_energy(levels, beta))
        worst_rt = max(worst_rt, abs(back - beta))
    elapsed = time.perf_counter() - t0
    ok = worst_id <= C1_IDENTITY_TOL and worst_rt <= C1_ROUND_TRIP_TOL and elapsed < C1_RUNTIME
    assert report(1, ok, f"identity residual {worst_id:.2e} (tol {C1_IDENTITY_TOL}), beta round trip "
                         f"{worst_rt:.2e} (tol {C1_ROUND_TRIP_TOL}), {elapsed:.2f} s (< {C1_RUNTIME} s)")


def _visit_grid():
    for L in range(2, C2_MAX_L + 1):
        for rest in itertools.combinations(range(1, C2_MAX_LEVEL + 1), L - 1):
            levels = (0,) + rest
            if math.gcd(*levels) != 1:
                continue
            for N in (7, 20, C2_MAX_N):
                top = N * levels[-1]
                for q in (0.15, 0.35, 0.5, 0.65, 0.85):
                    E_t = int(round(q * top))
                    if 0 < E_t < top:
                        yield levels, N, E_t


def test_criterion_2_most_probable_visits():
    t0 = time.perf_counter()
    feasible, mismatches = 0, []
    for levels, N, E_t in _visit_grid():
        enum = brute_force_argmax(levels, N, E_t, max_levels=C2_MAX_L, max_n=C2_MAX_N)
        if enum.best is None:
            continue
        feasible += 1
        got = most_probable_visits(levels, N, E_t).nu_rounded.counts
        if got != enum.best.counts:
            mismatches.append((levels, N, E_t, got, enum.best.counts))
    elapsed = time.perf_counter() - t0
    ok = not mismatches and feasible >= C2_MIN_INSTANCES and elapsed < C2_RUNTIME
    assert report(2, ok, f"{feasible} feasible instances (>= {C2_MIN_INSTANCES}), "
                         f"{len(mismatches)} mismatches, {elapsed:.1f} s (< {C2_RUNTIME} s)"), mismatches[:5]


def _chain(task):
    return r_transition_chain(C3_LEVELS, C3_N, C3_ET, C3_STEPS, 20240802, task=task)


def test_criterion_3_chain_reaches_canonical():
    t0 = time.perf_counter()
    runs = run_tasks(_chain, [(k,) for k in range(C3_CHAINS)], workers=C3_CHAINS)
    pooled = pool_chains(runs)
    elapsed = time.perf_counter() - t0
    levels = np.array(C3_LEVELS, dtype=float)
    rho = canonical_from_beta(levels, beta_from_energy(levels, C3_ET / C3_N)).probs
    dev = np.abs(pooled.freq - rho)
    z = float(np.max(dev / pooled.stderr))
    ok = z <= C3_N_STDERR and np.all(pooled.stderr <= C3_MAX_STDERR) and elapsed < C3_RUNTIME
    assert report(3, ok, f"max |freq - rho| = {dev.max():.2e} = {z:.1f} pooled stderr "
                         f"(<= {C3_N_STDERR}), max stderr {pooled.stderr.max():.1e} "
                         f"(<= {C3_MAX_STDERR}), {elapsed:.1f} s (< {C3_RUNTIME} s)")


def test_criterion_4_gqme_departure():
    t0 = time.perf_counter()
    runs = [gqme_sample(C4_LEVELS, C4_ENERGY, C4_SAMPLES, rng=stream(20240801, k))
            for k in range(C4_CHAINS)]
    mean = np.mean([r.mean_p for r in runs], axis=0)
    se = np.sqrt(np.sum([r.stderr**2 for r in runs], axis=0)) / C4_CHAINS
    elapsed = time.perf_counter() - t0
    exact = gqme_exact_small(C4_LEVELS, C4_ENERGY)
    rho = canonical_from_beta(C4_LEVELS, beta_from_energy(C4_LEVELS, C4_ENERGY)).probs
    agree = float(np.max(np.abs(mean - exact) / se))
    depart = float(np.max(np.abs(mean - rho) / se))
    ok = agree <= C4_AGREE_STDERR and depart > C4_DEPART_STDERR and elapsed < C4_RUNTIME
    assert report(4, ok, f"|mean - exact| <= {agree:.2f} stderr (<= {C4_AGREE_STDERR}), departure "
                         f"from canonical {depart:.0f} stderr (> {C4_DEPART_STDERR}), "
                         f"{elapsed:.1f} s (< {C4_RUNTIME} s)")


def test_criterion_5_conservation_and_time_average():
    t0 = time.perf_counter()
    worst_drift, violations = 0.0, 0
    times = np.linspace(0.0, C5_T_MAX, 101)
    for k in range(C5_INSTANCES):
        rng = stream(505, k)
        n = C5_SPINS[0] + k % (C5_SPINS[1] - C5_SPINS[0] + 1)
        sys_ = random_spin_system(n, rng)
        eig = diagonalize(build_hamiltonian(sys_))
        psi = rng.standard_normal(sys_.dim) + 1j * rng.standard_normal(sys_.dim)
        c = to_spectral(psi / np.linalg.norm(psi), eig)
        for t in times:
            worst_drift = max(worst_drift, float(np.max(np.abs(evolve_pure(c, t).populations
                                                              - c.populations))))
        a_e = eig.to_energy_basis(collective_observable(sys_, "x"))
        mean, bound = windowed_time_average(c, a_e, C5_T_MAX, C5_SAMPLES)
        if abs(mean - diagonal_ensemble(c, a_e)) > bound:
            violations += 1
    elapsed = time.perf_counter() - t0
    ok = worst_drift <= C5_DRIFT_TOL and violations == 0 and elapsed < C5_RUNTIME
    assert report(5, ok, f"max |c_n|^2 drift {worst_drift:.1e} (<= {C5_DRIFT_TOL}), "
                         f"{violations}/{C5_INSTANCES} bound violations, {elapsed:.1f} s "
                         f"(< {C5_RUNTIME} s)")


def _golden_scalar(name, key):
    import json
    entry = json.loads((GOLDEN / name / "result.json").read_text())["scalars"][key]
    return float(entry["value"])


def test_criterion_6_decoupling():
    t0 = time.perf_counter()
    sys_ = instance_system(DD_INSTANCE)
    psi = polarized_state(sys_.n_spins, "x")
    obs = collective_observable(sys_, "x")

    # (a) CPMG with the dipolar couplings removed: even echoes return exactly
    bare = sys_.without_couplings()
    eig0 = diagonalize(build_hamiltonian(bare))
    tau = DD_INSTANCE["tau"]
    seq = build_sequence("CPMG", tau, C6_ECHOES)
    tr = apply_sequence(psi, eig0, seq, obs, times=stroboscopic_times(seq))
    echo_err = float(np.max(np.abs(tr.values[1:] - tr.values[0])))

    # (b) zeroth-order cancellations
    parts = hamiltonian_parts(sys_)
    wahuha = float(np.max(np.abs(toggling_average(parts["dipolar"], build_sequence("WAHUHA", tau)))))
    cp = float(np.max(np.abs(toggling_average(parts["zeeman"], build_sequence("CP", tau)))))

    # (c) WAHUHA at the documented cycle time vs free evolution
    eig = diagonalize(build_hamiltonian(sys_))
    dur = DD_INSTANCE["duration"]
    free = apply_sequence(psi, eig, free_evolution(dur), obs,
                          times=np.linspace(0.0, dur, DD_INSTANCE["free_samples"] + 1))
    n_cycles = math.ceil(dur / C6_CYCLE_TIME - 1e-9)
    wseq = build_sequence("WAHUHA", C6_CYCLE_TIME / 6, n_cycles)
    wtr = apply_sequence(psi, eig, wseq, obs, times=stroboscopic_times(wseq))
    thr = DD_INSTANCE["threshold"]
    factor = decoherence_time(wtr, thr) / decoherence_time(free, thr)
    golden = _golden_scalar("dd", "suppression_factor_wahuha")
    elapsed = time.perf_counter() - t0
    ok = (echo_err <= C6_ECHO_TOL and wahuha <= C6_AVERAGE_TOL and cp <= C6_AVERAGE_TOL
          and factor >= C6_MIN_FACTOR and factor == pytest.approx(golden, rel=1e-8)
          and elapsed < C6_RUNTIME)
    assert report(6, ok, f"(a) {C6_ECHOES} CPMG echoes within {echo_err:.1e} (<= {C6_ECHO_TOL}); "
                         f"(b) WAHUHA dipolar {wahuha:.1e}, CP Zeeman {cp:.1e} (<= {C6_AVERAGE_TOL}); "
                         f"(c) factor {factor:.2f} at t_c = {C6_CYCLE_TIME} (>= {C6_MIN_FACTOR}, "
                         f"golden {golden:.2f}); {elapsed:.1f} s (< {C6_RUNTIME} s)")


def test_criterion_7_irreversibility_boundary():
    t0 = time.perf_counter()
    sys_ = instance_system(REVERSE_INSTANCE)
    h = build_hamiltonian(sys_)
    v = hamiltonian_parts(sys_)["dipolar"]
    psi = polarized_state(sys_.n_spins, "x")
    times = np.linspace(0.0, REVERSE_INSTANCE["t_max"], REVERSE_INSTANCE["n_times"])
    exact = loschmidt_echo(psi, h, v, 0.0, times)
    pert = loschmidt_echo(psi, h, v, C7_EPS, times)
    golden = _golden_scalar("reverse", f"final_fidelity[eps={C7_EPS!r}]")
    elapsed = time.perf_counter() - t0
    ok = (np.all(exact >= 1 - C7_EXACT_TOL) and pert[-1] < C7_MAX_FINAL
          and pert[-1] == pytest.approx(golden, rel=1e-8) and elapsed < C7_RUNTIME)
    assert report(7, ok, f"eps = 0 min fidelity {exact.min():.12f} (>= 1 - {C7_EXACT_TOL}); "
                         f"eps = {C7_EPS} final fidelity {pert[-1]:.4f} (< {C7_MAX_FINAL}, golden "
                         f"{golden:.4f}); {elapsed:.2f} s (< {C7_RUNTIME} s)")


def _run_suite(root: Path, workers: int):
    os.environ["SPINTHERM_OUTPUT_ROOT"] = str(root)
    codes = [main(["--workers", str(workers), "run", str(cfg)])
             for cfg in sorted(CONFIGS.glob("*.toml"))]
    return codes


def _payload_files(root: Path):
    return sorted(p.relative_to(root) for p in root.rglob("*") if p.is_file() and p.name != "run.log")


def test_criterion_8_determinism(tmp_path, monkeypatch):
    monkeypatch.setenv("SPINTHERM_OUTPUT_ROOT", str(tmp_path))
    runs = {"first": (tmp_path / "a", C8_WORKERS[0]), "second": (tmp_path / "b", C8_WORKERS[0]),
            "parallel": (tmp_path / "c", C8_WORKERS[1])}
    codes = {name: _run_suite(root, w) for name, (root, w) in runs.items()}
    files = {name: _payload_files(root) for name, (root, _) in runs.items()}
    same_files = files["first"] == files["second"] == files["parallel"]
    diffs = []
    if same_files:
        for rel in files["first"]:
            a = runs["first"][0] / rel
            for other in ("second", "parallel"):
                if not filecmp.cmp(a, runs[other][0] / rel, shallow=False):
                    diffs.append(f"{other}:{rel}")
    all_ok = all(c == 0 for cs in codes.values() for c in cs)
    ok = all_ok and same_files and not diffs and len(files["first"]) > 0
    assert report(8, ok, f"{len(files['first'])} payload files over "
                         f"{len(list(CONFIGS.glob('*.toml')))} configs; reruns and workers "
                         f"{C8_WORKERS[0]} vs {C8_WORKERS[1]} byte-identical: {not diffs and same_files}"), diffs
