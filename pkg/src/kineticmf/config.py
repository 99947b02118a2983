"""Run configuration: TOML ingestion, strict key validation, overrides, digest.

A run is fully described by one TOML file with the sections below plus the
top-level ``seed`` and ``out`` keys.  Every CLI flag overrides one dotted key;
unknown keys anywhere are hard errors.  The canonical JSON serialization of
the resolved configuration is hashed into the run digest, so identical digests
mean identical outputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - python < 3.11
    import tomli as tomllib

from .errors import ConfigError
from .fpe import FpeConfig, PhaseGrid
from .galerkin import GalerkinBasis
from .models import ModelSpec, builtin_linear, builtin_saturated
from .particles import DiagonalGaussian, IntegratorConfig, PointMass, TwoClusterMixture

DEFAULTS = {
    "seed": 12345,
    "out": "runs",
    "galerkin": {
        "box_length": 1.0,
        "modes": 1,
        "free_transport": False,
    },
    "model": {
        "name": "linear",
        "gamma": 1.0,
        "epsilon": 1.0,
        "kappa": 0.4,
        "a": 0.2,
        "sigma": 0.5,
        "sigma1": 0.1,
        "moment_cap": 10.0,
    },
    "integrator": {
        "dt": 1e-3,
        "scheme": "splitting",
        "force_tile": 256,
    },
    "fpe": {
        "n_u": 256,
        "n_v": 256,
        "r_u": 0.0,  # 0 = size the box from the model envelope
        "r_v": 0.0,
        "dt": 1e-3,
        "picard_tol": 1e-9,
        "picard_max_iter": 50,
        "reconstruction": "muscl",
    },
    "experiment": {
        "name": "particles",
        "t_final": 1.0,
        "snapshot_every": 100,
        "n_particles": 1024,
        "n_sweep": [64, 256, 1024, 4096],
        "repetitions": 8,
        "n_projections": 128,
        "n_reference": 16384,
        "reference": "analytic",  # analytic | large-n
        "n_samples": 256,
        "n_probes": 20,
        "adjoint_t": 0.25,
        "exact_cap": 512,
        "init": "gaussian",  # point | gaussian | two-cluster
        "init_mean_u": 0.4,
        "init_mean_v": 0.0,
        "init_std_u": 0.3,
        "init_std_v": 0.3,
        "init_shift": 0.25,
        "init_cluster_gap": 1.0,
        "workers": 1,
    },
}

_SCALAR_TYPES = {
    bool: (bool,),
    int: (int,),
    float: (int, float),
    str: (str,),
}


def _validate_against(defaults, data, prefix=""):
    out = copy.deepcopy(defaults)
    for key, val in data.items():
        path = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown configuration key '{path}'")
        ref = defaults[key]
        if isinstance(ref, dict):
            if not isinstance(val, dict):
                raise ConfigError(f"'{path}' must be a table")
            out[key] = _validate_against(ref, val, prefix=f"{path}.")
        elif isinstance(ref, list):
            if not isinstance(val, list) or not all(isinstance(x, int) for x in val):
                raise ConfigError(f"'{path}' must be a list of integers")
            out[key] = list(val)
        else:
            wanted = _SCALAR_TYPES[type(ref)]
            if isinstance(val, bool) and type(ref) is not bool:
                raise ConfigError(f"'{path}' has the wrong type")
            if not isinstance(val, wanted):
                raise ConfigError(f"'{path}' has the wrong type")
            out[key] = type(ref)(val)
    return out


def load_config(path: str | None = None) -> dict:
    """Read a TOML config file and merge it over the defaults (strict keys)."""
    if path is None:
        return copy.deepcopy(DEFAULTS)
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"invalid TOML in {path}: {exc}") from exc
    return _validate_against(DEFAULTS, data)


def _parse_literal(text: str):
    low = text.strip()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(low)
    except ValueError:
        pass
    try:
        return float(low)
    except ValueError:
        pass
    if low.startswith("[") and low.endswith("]"):
        inner = low[1:-1].strip()
        if not inner:
            return []
        return [int(x) for x in inner.split(",")]
    return low.strip("\"'")


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides; unknown keys are hard errors."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = cfg
        ref = DEFAULTS
        for part in parts[:-1]:
            if not isinstance(ref, dict) or part not in ref:
                raise ConfigError(f"unknown configuration key '{key}'")
            node = node.setdefault(part, {})
            ref = ref[part]
        leaf = parts[-1]
        if not isinstance(ref, dict) or leaf not in ref or isinstance(ref[leaf], dict):
            raise ConfigError(f"unknown configuration key '{key}'")
        value = _parse_literal(raw)
        patch = {leaf: value}
        validated = _validate_against({leaf: ref[leaf]}, patch)
        node[leaf] = validated[leaf]
    return cfg


def config_digest(cfg: dict) -> str:
    """Content digest of the scientific configuration.

    The worker count is execution infrastructure: results are identical for
    any value, so it is excluded from the digest.
    """
    canon = copy.deepcopy(cfg)
    canon.get("experiment", {}).pop("workers", None)
    canon.pop("out", None)
    text = json.dumps(canon, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


# ---------------------------------------------------------------------------
# object construction
# ---------------------------------------------------------------------------


def build_basis(cfg: dict) -> GalerkinBasis:
    g = cfg["galerkin"]
    return GalerkinBasis(
        mode_count=g["modes"],
        box_length=g["box_length"],
        free_transport=g["free_transport"],
    )


def build_model(cfg: dict) -> ModelSpec:
    mc = cfg["model"]
    basis = build_basis(cfg)
    if mc["name"] == "linear":
        return builtin_linear(
            basis,
            kappa=mc["kappa"],
            a=mc["a"],
            s=mc["sigma"],
            gamma=mc["gamma"],
            epsilon=mc["epsilon"],
        )
    if mc["name"] == "saturated":
        return builtin_saturated(
            basis,
            kappa=mc["kappa"],
            a=mc["a"],
            s=mc["sigma"],
            s1=mc["sigma1"],
            gamma=mc["gamma"],
            epsilon=mc["epsilon"],
        )
    raise ConfigError(f"unknown model '{mc['name']}'")


def build_integrator(cfg: dict) -> IntegratorConfig:
    ic = cfg["integrator"]
    return IntegratorConfig(
        dt=ic["dt"],
        scheme=ic["scheme"],
        force_tile=ic["force_tile"],
        workers=cfg["experiment"]["workers"],
    )


def build_fpe_config(cfg: dict) -> FpeConfig:
    fc = cfg["fpe"]
    return FpeConfig(
        dt=fc["dt"],
        picard_tol=fc["picard_tol"],
        picard_max_iter=fc["picard_max_iter"],
        reconstruction=fc["reconstruction"],
    )


def build_fpe_grid(cfg: dict, model: ModelSpec) -> PhaseGrid:
    fc = cfg["fpe"]
    if fc["r_u"] > 0 and fc["r_v"] > 0:
        return PhaseGrid(r_u=fc["r_u"], r_v=fc["r_v"], n_u=fc["n_u"], n_v=fc["n_v"])
    from .fpe import default_grid

    ex = cfg["experiment"]
    return default_grid(
        model,
        mean=(ex["init_mean_u"], ex["init_mean_v"]),
        std=(ex["init_std_u"], ex["init_std_v"]),
        n_u=fc["n_u"],
        n_v=fc["n_v"],
    )


def build_initial(cfg: dict, m: int):
    ex = cfg["experiment"]
    kind = ex["init"]
    mean = [ex["init_mean_u"]] * m + [ex["init_mean_v"]] * m
    std = [ex["init_std_u"]] * m + [ex["init_std_v"]] * m
    if kind == "point":
        return PointMass(mean)
    if kind == "gaussian":
        return DiagonalGaussian(mean, std)
    if kind == "two-cluster":
        gap = ex["init_cluster_gap"]
        mean_b = list(mean)
        mean_b[0] += gap
        return TwoClusterMixture(mean, mean_b, std)
    raise ConfigError(f"unknown initial distribution '{kind}'")
