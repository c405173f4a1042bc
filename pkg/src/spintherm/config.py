"""Experiment configuration: TOML files parsed in strict mode.

Layout::

    experiment = "canonical"        # canonical | gqme | visits | chain | dd | reverse | eth
    seed = 7                        # required by stochastic experiments

    [system]                        # energy levels or a spin system
    levels = [0.0, 1.0, 2.0]

    [parameters]                    # experiment-specific, see PARAMETERS
    beta = 1.0

    [output]
    directory = "out/canonical"     # relative to $SPINTHERM_OUTPUT_ROOT (or cwd)
    csv = true
    json = true

A spin system is given explicitly (``n_spins``, ``offsets``, ``couplings``
as ``[i, j, b]`` triples) or drawn at random from the seed with
``[system.random]`` (``n_spins``, ``offset_scale``, ``coupling_scale``).
Unknown keys anywhere are rejected.
"""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError

EXPERIMENTS = ("canonical", "gqme", "visits", "chain", "dd", "reverse", "eth")
STOCHASTIC = {"gqme", "chain"}
OUTPUT_ROOT_ENV = "SPINTHERM_OUTPUT_ROOT"

# name -> (type, default); a default of REQUIRED must be supplied
REQUIRED = object()
_NUM = (int, float)

PARAMETERS = {
    "canonical": {"beta": (_NUM, None), "energy": (_NUM, None)},
    "gqme": {
        "energy": (_NUM, REQUIRED), "n_samples": (int, 10000), "burn_in": (int, 1000),
        "thinning": (int, 10), "chains": (int, 1),
    },
    "visits": {"N": (int, REQUIRED), "E_t": (int, REQUIRED), "brute_force": (bool, True)},
    "chain": {
        "N": (int, REQUIRED), "E_t": (int, REQUIRED), "steps": (int, 1_000_000),
        "chains": (int, 1), "n_batches": (int, 50), "trace_stride": (int, 0),
    },
    "dd": {
        "sequences": (list, ["CPMG", "WAHUHA"]), "tau": (_NUM, REQUIRED),
        "duration": (_NUM, REQUIRED), "threshold": (_NUM, 0.9),
        "free_samples": (int, 4000), "flip_error": (_NUM, 0.0), "phase_error": (_NUM, 0.0),
    },
    "reverse": {
        "eps": (list, REQUIRED), "t_max": (_NUM, REQUIRED), "n_times": (int, 51),
        "perturbation": (str, "dipolar"), "initial": (str, "x"),
    },
    "eth": {
        "observable": (str, "Iz"), "initial": (str, "x"), "window": (_NUM, 1000.0),
        "n_samples": (int, 20000), "trace_points": (int, 201), "histogram_bins": (int, 40),
    },
}

SPIN_EXPERIMENTS = {"dd", "reverse", "eth"}
INTEGER_LEVEL_EXPERIMENTS = {"visits", "chain"}


@dataclass
class ExperimentConfig:
    experiment: str
    system: dict
    parameters: dict
    seed: int | None
    output_dir: Path
    write_csv: bool = True
    write_json: bool = True
    source: str = ""
    raw: dict = field(default_factory=dict)


def _check_type(value, typ, key):
    if typ is _NUM:
        ok = isinstance(value, _NUM) and not isinstance(value, bool)
    elif typ is int:
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, typ)
    if not ok:
        name = "number" if typ is _NUM else getattr(typ, "__name__", str(typ))
        raise ConfigError(f"key '{key}' must be a {name}, got {value!r}", key=key)


def _strict(table: dict, allowed, where: str):
    for key in table:
        if key not in allowed:
            raise ConfigError(f"unknown key '{key}' in {where}", key=key)


def _parse_system(experiment: str, system: dict) -> dict:
    if not isinstance(system, dict):
        raise ConfigError("[system] must be a table", key="system")
    if experiment in SPIN_EXPERIMENTS:
        if "random" in system:
            _strict(system, {"random"}, "[system]")
            rnd = system["random"]
            _strict(rnd, {"n_spins", "offset_scale", "coupling_scale"}, "[system.random]")
            if "n_spins" not in rnd:
                raise ConfigError("missing key 'n_spins' in [system.random]", key="n_spins")
            _check_type(rnd["n_spins"], int, "n_spins")
            for key in ("offset_scale", "coupling_scale"):
                if key in rnd:
                    _check_type(rnd[key], _NUM, key)
            return {"random": dict(rnd)}
        _strict(system, {"n_spins", "offsets", "couplings"}, "[system]")
        for key in ("n_spins", "offsets", "couplings"):
            if key not in system:
                raise ConfigError(f"missing key '{key}' in [system]", key=key)
        return dict(system)
    allowed = {"levels"} | ({"scale", "offset"} if experiment in INTEGER_LEVEL_EXPERIMENTS else set())
    _strict(system, allowed, "[system]")
    if "levels" not in system:
        raise ConfigError("missing key 'levels' in [system]", key="levels")
    levels = system["levels"]
    if not isinstance(levels, list) or not levels:
        raise ConfigError("key 'levels' must be a non-empty list", key="levels")
    for v in levels:
        _check_type(v, int if experiment in INTEGER_LEVEL_EXPERIMENTS else _NUM, "levels")
    return dict(system)


def parse_config(data: dict, source: str = "<memory>") -> ExperimentConfig:
    _strict(data, {"experiment", "seed", "system", "parameters", "output"}, "top level")
    experiment = data.get("experiment")
    if experiment not in EXPERIMENTS:
        raise ConfigError(
            f"key 'experiment' must be one of {', '.join(EXPERIMENTS)}, got {experiment!r}",
            key="experiment",
        )
    seed = data.get("seed")
    if seed is not None:
        _check_type(seed, int, "seed")
        if not 0 <= seed < 2**64:
            raise ConfigError("key 'seed' must be a 64-bit unsigned integer", key="seed")
    needs_seed = experiment in STOCHASTIC or (
        isinstance(data.get("system"), dict) and "random" in data["system"]
    )
    if needs_seed and seed is None:
        raise ConfigError(f"experiment '{experiment}' requires key 'seed'", key="seed")
    if "system" not in data:
        raise ConfigError("missing [system] table", key="system")
    system = _parse_system(experiment, data["system"])

    spec = PARAMETERS[experiment]
    given = data.get("parameters", {})
    if not isinstance(given, dict):
        raise ConfigError("[parameters] must be a table", key="parameters")
    _strict(given, spec, f"[parameters] for experiment '{experiment}'")
    params = {}
    for key, (typ, default) in spec.items():
        if key in given:
            _check_type(given[key], typ, key)
            params[key] = given[key]
        elif default is REQUIRED:
            raise ConfigError(f"missing key '{key}' in [parameters]", key=key)
        else:
            params[key] = default
    if experiment == "canonical" and (params["beta"] is None) == (params["energy"] is None):
        raise ConfigError("canonical needs exactly one of 'beta' or 'energy'", key="beta")

    out = data.get("output", {})
    _strict(out, {"directory", "csv", "json"}, "[output]")
    directory = out.get("directory", f"results/{experiment}")
    _check_type(directory, str, "directory")
    for key in ("csv", "json"):
        if key in out:
            _check_type(out[key], bool, key)
    return ExperimentConfig(
        experiment=experiment,
        system=system,
        parameters=params,
        seed=seed,
        output_dir=resolve_output(directory),
        write_csv=out.get("csv", True),
        write_json=out.get("json", True),
        source=source,
        raw=data,
    )


def resolve_output(directory: str) -> Path:
    path = Path(directory)
    if path.is_absolute():
        return path
    root = os.environ.get(OUTPUT_ROOT_ENV)
    return (Path(root) if root else Path.cwd()) / path


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}", key="config") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config {path}: {exc}", key="config") from exc
    return parse_config(data, source=str(path))
