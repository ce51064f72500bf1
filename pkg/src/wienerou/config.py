"""Experiment configuration: YAML in, validated dataclass out.

A config file has a top-level ``experiment`` name, shared settings, and an
optional section named after the experiment holding its own parameters.
Unknown keys are errors, reported with their full path.
"""

import copy
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .spectrum import SpectrumSpec

COMMANDS = (
    "spectrum-check", "simulate-paths", "moment-scan", "qv-partition", "qv-regularized",
    "theta", "tensor-qv", "mehler-check", "generator-check", "ito-check", "approx-check",
    "evt-tail", "evt-norming", "evt-gumbel", "evt-moments",
)

# settings that never change numerical output and so stay out of the digest
NON_SEMANTIC = ("workers", "out", "verbose")

DEFAULTS = {
    "spectrum": {"family": "power", "a": 1.0, "alpha": 0.25, "d": 1},
    "M": 6,
    "L": 8,
    "T": 1.0,
    "h": 2.0**-10,
    "norm": "sup",
    "N": 500,
    "seed": 20240607,
    "initials": "zero",
    "workers": 1,
    "out": None,
    "verbose": False,
}

# per-experiment parameters and their defaults
EXPERIMENT_DEFAULTS = {
    "spectrum-check": {"M_max": 20},
    "simulate-paths": {"law_checks": 10, "law_N": 100_000, "export_paths": 0},
    "moment-scan": {"t_list": [0.0, 1.0], "u_list": [0.25, 0.125, 0.0625, 0.03125, 0.015625],
                    "N": 10_000},
    "qv-partition": {"meshes": [2.0**-9, 2.0**-10], "theta_N": 100_000, "theta_seed_offset": 1,
                     "norms": ["sup", "l1"], "random_partition": False, "zq_substeps": 16},
    "qv-regularized": {"deltas": [2.0**-6, 2.0**-8, 2.0**-10], "theta_N": 100_000,
                       "theta_seed_offset": 1, "norms": ["sup", "l1"]},
    "theta": {"N": 100_000, "quad_depth": None},
    "tensor-qv": {"delta": 2.0**-8, "N": 2000, "h": 2.0**-8, "L": 7, "xi_N": 100_000,
                  "points": 5},
    "mehler-check": {"functions": ["linear", "quadratic", "sigmoid_product", "trig_poly"],
                     "t_list": [0.1, 0.5, 1.0], "N": 100_000, "initials": [1.0, -0.5]},
    "generator-check": {"F": "quadratic", "H": "quadratic",
                        "t_list": [0.2, 0.1, 0.05, 0.025], "order": 32},
    "ito-check": {"function": "quadratic", "N": 10_000, "steps": [2.0**-10, 2.0**-11]},
    "approx-check": {"functions": ["sigmoid_product", "trig_poly"], "t_list": [0.5, 1.0],
                     "k": 2, "n_list": [1, 2, 4, 8], "N": 20_000, "initials": "stationary"},
    "evt-tail": {"lam": 1.0, "x_list": [2.0, 3.0, 4.0, 5.0, 6.0], "N": 100_000, "depth": 12,
                 "panels": 2048},
    "evt-norming": {"lams": [1.0, 4.0, 16.0], "n_list": [100, 1000, 10_000, 100_000],
                    "panels": 2048},
    "evt-gumbel": {"lam": 1.0, "n_list": [8, 64, 512], "N": 5000, "depth": 12},
    "evt-moments": {"m_list": [1, 2, 3, 4, 5, 6], "k": 2, "N": 2000, "depth": 12,
                    "gauss_n_list": [100, 1000, 10_000], "gauss_N": 10_000},
}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass
class ExperimentConfig:
    experiment: str
    spectrum: SpectrumSpec
    M: int
    L: int
    T: float
    h: float
    norm: str
    N: int
    seed: int
    initials: object
    params: dict = field(default_factory=dict)
    workers: int = 1
    out: str | None = None
    verbose: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def n(self):
        return self.spectrum.d * 2 ** (self.M + 1)

    def param(self, key):
        return self.params[key]

    def digest(self):
        """SHA-256 of the canonical JSON of every semantically meaningful field."""
        payload = {k: v for k, v in self.raw.items() if k not in NON_SEMANTIC}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()


def _is_multiple(x, step):
    r = x / step
    return abs(r - round(r)) < 1e-9 * max(1.0, abs(r))


def _check_type(path, value, types, what):
    if isinstance(value, bool) and bool not in types:
        raise ConfigError(path, f"expected {what}, got {value!r}")
    if not isinstance(value, types):
        raise ConfigError(path, f"expected {what}, got {value!r}")


def build_config(data, overrides=None):
    """Validate a parsed mapping and return an :class:`ExperimentConfig`."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a mapping")
    data = copy.deepcopy(data)
    for key, val in (overrides or {}).items():
        if val is not None:
            data[key] = val
    exp = data.get("experiment")
    if exp not in COMMANDS:
        raise ConfigError("experiment", f"unknown experiment {exp!r}; choose from {COMMANDS}")
    known = set(DEFAULTS) | {"experiment", exp}
    for key in data:
        if key not in known:
            raise ConfigError(key, "unknown field")
    merged = copy.deepcopy(DEFAULTS)
    merged.update({k: v for k, v in data.items() if k != exp})
    spec_cfg = dict(DEFAULTS["spectrum"])
    if "spectrum" in data:
        if not isinstance(data["spectrum"], dict):
            raise ConfigError("spectrum", "expected a mapping")
        spec_cfg = dict(data["spectrum"])
        allowed = {"family", "a", "alpha", "p", "values", "d", "unchecked"}
        for key in spec_cfg:
            if key not in allowed:
                raise ConfigError(f"spectrum.{key}", "unknown field")
    merged["spectrum"] = spec_cfg
    try:
        spec = SpectrumSpec.from_dict(spec_cfg)
    except (ValueError, KeyError, TypeError) as err:
        raise ConfigError("spectrum", str(err)) from None

    for key, types, what in (("M", (int,), "an integer"), ("L", (int,), "an integer"),
                             ("N", (int,), "an integer"), ("seed", (int,), "an integer"),
                             ("workers", (int,), "an integer"),
                             ("T", (int, float), "a number"), ("h", (int, float), "a number")):
        _check_type(key, merged[key], types, what)
    if merged["M"] < 0:
        raise ConfigError("M", "must be >= 0")
    if merged["L"] < merged["M"] + 1:
        raise ConfigError("L", f"grid depth {merged['L']} must be >= M + 1 = {merged['M'] + 1}")
    if not 0 <= merged["seed"] < 2**64:
        raise ConfigError("seed", "must fit in 64 unsigned bits")
    if merged["T"] <= 0 or merged["h"] <= 0:
        raise ConfigError("T" if merged["T"] <= 0 else "h", "must be positive")
    if not _is_multiple(merged["T"], merged["h"]):
        raise ConfigError("h", "must divide T")
    if merged["N"] < 2:
        raise ConfigError("N", "must be >= 2")
    if merged["workers"] < 1:
        raise ConfigError("workers", "must be >= 1")
    if str(merged["norm"]).lower() not in ("sup", "l1"):
        raise ConfigError("norm", "must be 'sup' or 'l1'")
    init = merged["initials"]
    if isinstance(init, str):
        if init not in ("zero", "stationary"):
            raise ConfigError("initials", "must be 'zero', 'stationary', a number or a list")
    elif not isinstance(init, (int, float, list)):
        raise ConfigError("initials", "must be 'zero', 'stationary', a number or a list")

    params = copy.deepcopy(EXPERIMENT_DEFAULTS[exp])
    section = data.get(exp, {}) or {}
    if not isinstance(section, dict):
        raise ConfigError(exp, "expected a mapping")
    for key, val in section.items():
        if key not in params:
            raise ConfigError(f"{exp}.{key}", "unknown field")
        params[key] = val
    _validate_params(exp, params, merged)
    merged[exp] = params
    merged["experiment"] = exp
    return ExperimentConfig(
        experiment=exp, spectrum=spec, M=merged["M"], L=merged["L"], T=float(merged["T"]),
        h=float(merged["h"]), norm=str(merged["norm"]).lower(), N=merged["N"],
        seed=merged["seed"], initials=init, params=params, workers=merged["workers"],
        out=merged["out"], verbose=bool(merged["verbose"]), raw=merged)


def _validate_params(exp, params, merged):
    h = float(merged["h"])
    path = exp
    if exp == "qv-partition":
        for i, mesh in enumerate(params["meshes"]):
            if not _is_multiple(mesh, h):
                raise ConfigError(f"{path}.meshes[{i}]", f"mesh {mesh} is not a multiple of h = {h}")
    if exp == "qv-regularized":
        for i, delta in enumerate(params["deltas"]):
            if delta < h or not _is_multiple(delta, h):
                raise ConfigError(f"{path}.deltas[{i}]",
                                  f"delta {delta} is not a positive multiple of h = {h}")
    if exp == "tensor-qv":
        if params["delta"] < params["h"] or not _is_multiple(params["delta"], params["h"]):
            raise ConfigError(f"{path}.delta", "must be a positive multiple of tensor-qv.h")
        if params["L"] < merged["M"] + 1:
            raise ConfigError(f"{path}.L", "must be >= M + 1")
    if exp == "ito-check":
        for i, step in enumerate(params["steps"]):
            if not _is_multiple(merged["T"], step):
                raise ConfigError(f"{path}.steps[{i}]", "must divide T")
    if exp == "moment-scan":
        for i, u in enumerate(params["u_list"]):
            if not 0 < u <= 1:
                raise ConfigError(f"{path}.u_list[{i}]", "must lie in (0, 1]")
    for key in ("N", "theta_N", "xi_N", "law_N", "gauss_N"):
        if key in params and (not isinstance(params[key], int) or params[key] < 2):
            raise ConfigError(f"{path}.{key}", "must be an integer >= 2")


def load_config(path, overrides=None):
    """Read a YAML file and validate it."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as err:
        raise ConfigError("--config", f"cannot read {path}: {err.strerror}") from None
    except yaml.YAMLError as err:
        raise ConfigError("--config", f"invalid YAML: {err}") from None
    return build_config(data or {}, overrides)
