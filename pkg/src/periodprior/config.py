"""Pipeline configuration: defaults, presets, file loading, overrides, validation."""
from __future__ import annotations

import copy
import json
import math
import re
from pathlib import Path

import yaml

from .gp import FAMILIES
from .models import PARAM_NAMES


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot ("1e-3")."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
                |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
                |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[-+]?\.(?:inf|Inf|INF)
                |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def _yaml_load(text: str):
    return yaml.load(text, Loader=_Loader)


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the dotted field name."""


AIS_DEFAULTS = {"N": 500, "T": 20, "adapt": "local", "init_width": 0.5, "ridge": 1e-3,
                "min_shrink": 0.3}

DEFAULTS = {
    "seed": 20240917,
    "output_dir": "periodprior_out",
    "threads": 1,
    "plots": True,
    "data": {
        # "file", "sim" (noisy sin(x)) or "kepler_sim" (synthetic RV curve)
        "source": "sim",
        "path": None,
        "columns": {"time": "time", "value": "value", "sigma": None},
        "delimiter": None,
        "detrend": True,
        "sim": {"n_points": 50, "sigma_e": 0.5, "x_range": [-4.0, 4.0], "replicate": 0},
        "kepler_sim": {"V0": 0.0, "K": 70.0, "e": 0.44, "omega": 2.0, "P": 204.0,
                       "t_p": 100.0, "n_points": 158, "span": 900.0, "sigma": 3.33},
    },
    "periodogram": {"enabled": True, "oversample": 5.0, "n_peaks": 5, "period_factor": 2.0},
    "stage1": {
        "kernel": "periodic",
        # a number fixes the GP noise level, "infer" samples it
        "sigma_e": "infer",
        "bounds": {},
        "ais": dict(AIS_DEFAULTS),
        "grid_points": 400,
        "fbs_min_weight": 1e-8,
        "full_bayes": True,
    },
    "prior": {"fit": "kde", "gamma": 1.0, "resample": 4000, "cred_level": 0.9},
    "stage2": {
        "model": "sinusoid",
        "bounds": {},
        "noise": {"sigma_s": None, "use_point_sigmas": False},
        "ais": dict(AIS_DEFAULTS),
        "period_init_scale": 2.0,
    },
    "baseline": {"enabled": False, "uniform": [195.0, 210.0]},
    # fix_sigma_e: use data.sim.sigma_e as the GP noise level instead of stage1.sigma_e
    "mmse_study": {"n_points": [10, 50, 100], "n_replicates": 30, "fix_sigma_e": True},
}

# sections whose keys are user-chosen rather than fixed
_FREE_FORM = {"stage1.bounds", "stage2.bounds", "data.columns"}

PRESETS = {
    # noisy sin(x) on [-4, 4], GP noise fixed at the simulated level
    "sim": {
        "data": {"source": "sim", "sim": {"n_points": 50}},
        "stage1": {"kernel": "periodic", "sigma_e": 0.5},
        "prior": {"fit": "kde"},
        "stage2": {"model": "sinusoid", "noise": {"sigma_s": 0.5}},
    },
    "sim16": {
        "data": {"source": "sim", "sim": {"n_points": 16}},
        "stage1": {"kernel": "periodic", "sigma_e": 0.5},
        "prior": {"fit": "kde"},
        "stage2": {"model": "sinusoid", "noise": {"sigma_s": 0.5}},
    },
    # CARMENES-style RV table; point data.path at the file
    "gj3512": {
        "data": {"source": "file", "columns": {"time": "bjd", "value": "rv", "sigma": "e_rv"},
                 "detrend": True},
        # 1.5 keeps the 2P alias of the periodic kernel out of the window
        "periodogram": {"period_factor": 1.5},
        "stage1": {"kernel": "quasi_periodic_sum", "sigma_e": "infer",
                   "bounds": {"l": [10.0, 5000.0]}, "ais": {"N": 1000, "T": 30}},
        "prior": {"fit": "laplace"},
        "stage2": {"model": "kepler", "noise": {"sigma_s": 3.33}, "ais": {"N": 2000, "T": 30}},
        "baseline": {"enabled": True, "uniform": [195.0, 210.0]},
    },
    # synthetic Keplerian stand-in when the GJ 3512 table is not available
    "gj3512_synthetic": {
        "data": {"source": "kepler_sim", "detrend": True},
        # 1.5 keeps the 2P alias of the periodic kernel out of the window
        "periodogram": {"period_factor": 1.5},
        "stage1": {"kernel": "quasi_periodic_sum", "sigma_e": "infer",
                   "bounds": {"l": [10.0, 5000.0]}, "ais": {"N": 1000, "T": 30}},
        "prior": {"fit": "laplace"},
        "stage2": {"model": "kepler", "noise": {"sigma_s": 3.33}, "ais": {"N": 2000, "T": 30}},
        "baseline": {"enabled": True, "uniform": [195.0, 210.0]},
    },
    # ASAS-style photometry (time, magnitude, error)
    "hd112661": {
        "data": {"source": "file", "columns": {"time": "hjd", "value": "mag", "sigma": "mag_err"},
                 "detrend": True},
        "stage1": {"kernel": "periodic", "sigma_e": "infer"},
        "prior": {"fit": "gaussian"},
        "stage2": {"model": "sinusoid", "noise": {"sigma_s": 0.01, "use_point_sigmas": True},
                   "bounds": {"phi": [-12.566370614359172, 0.0]}},
    },
}


def deep_merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in update.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config_file(path) -> dict:
    """Read a YAML/JSON config. A run manifest is accepted and its snapshot used."""
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except ValueError:
        doc = _yaml_load(text) or {}
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    if "config" in doc and "files" in doc:
        doc = doc["config"]
    return doc


def set_dotted(cfg: dict, key: str, value):
    parts = key.split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def parse_value(text: str):
    """Parse a command-line override with YAML scalar/list rules."""
    return _yaml_load(text)


def build_config(path=None, preset=None, overrides=()) -> dict:
    """Defaults, then preset, then file, then ``(dotted_key, value)`` overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    file_cfg = load_config_file(path) if path else {}
    file_preset = file_cfg.pop("preset", None)
    preset = preset or file_preset
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"preset: unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        cfg = deep_merge(cfg, PRESETS[preset])
    cfg = deep_merge(cfg, file_cfg)
    for key, value in overrides:
        set_dotted(cfg, key, value)
    validate(cfg)
    return cfg


def _check_keys(cfg, ref, prefix=""):
    for k, v in cfg.items():
        name = f"{prefix}{k}"
        if k not in ref:
            raise ConfigError(f"{name}: unknown configuration key")
        if isinstance(ref[k], dict) and name not in _FREE_FORM:
            if not isinstance(v, dict):
                raise ConfigError(f"{name}: expected a mapping")
            _check_keys(v, ref[k], name + ".")


def _pair(name, v, positive=False):
    try:
        lo, hi = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected a [lower, upper] pair, got {v!r}") from None
    if not lo < hi:
        raise ConfigError(f"{name}: lower bound must be below upper bound, got [{lo}, {hi}]")
    if positive and lo < 0:
        raise ConfigError(f"{name}: bounds must be non-negative")
    return lo, hi


def _ais(name, a):
    if int(a["N"]) < 2:
        raise ConfigError(f"{name}.N: must be >= 2")
    if int(a["T"]) < 1:
        raise ConfigError(f"{name}.T: must be >= 1")
    if a["adapt"] not in ("local", "all", "none"):
        raise ConfigError(f"{name}.adapt: must be local, all or none")
    if not float(a["init_width"]) > 0:
        raise ConfigError(f"{name}.init_width: must be > 0")


def validate(cfg: dict):
    _check_keys(cfg, DEFAULTS)
    data = cfg["data"]
    if data["source"] not in ("file", "sim", "kepler_sim"):
        raise ConfigError(f"data.source: unknown source {data['source']!r}")
    if data["source"] == "file":
        if not data.get("path"):
            raise ConfigError("data.path: required when data.source is 'file'")
        if not Path(data["path"]).is_file():
            raise ConfigError(f"data.path: file not found: {data['path']}")
    if data["source"] == "sim" and int(data["sim"]["n_points"]) < 4:
        raise ConfigError("data.sim.n_points: must be >= 4")

    s1 = cfg["stage1"]
    if s1["kernel"] not in FAMILIES:
        raise ConfigError(f"stage1.kernel: unknown kernel {s1['kernel']!r}; "
                          f"choose from {sorted(FAMILIES)}")
    se = s1["sigma_e"]
    if se != "infer" and not (isinstance(se, (int, float)) and se >= 0 and math.isfinite(se)):
        raise ConfigError(f"stage1.sigma_e: must be 'infer' or a number >= 0, got {se!r}")
    names = set(FAMILIES[s1["kernel"]][1]) | {"sigma_e"}
    for k, v in s1["bounds"].items():
        if k not in names:
            raise ConfigError(f"stage1.bounds.{k}: not a hyperparameter of {s1['kernel']}")
        _pair(f"stage1.bounds.{k}", v, positive=True)
    _ais("stage1.ais", s1["ais"])

    pr = cfg["prior"]
    if pr["fit"] not in ("kde", "laplace", "gaussian"):
        raise ConfigError(f"prior.fit: unknown fit {pr['fit']!r}; choose kde, laplace or gaussian")
    g = pr["gamma"]
    if not (g == "auto" or (isinstance(g, (int, float)) and 0 < g <= 1)):
        raise ConfigError(f"prior.gamma: must lie in (0, 1] or be 'auto', got {g!r}")

    s2 = cfg["stage2"]
    if s2["model"] not in PARAM_NAMES:
        raise ConfigError(f"stage2.model: unknown model {s2['model']!r}; "
                          f"choose from {sorted(PARAM_NAMES)}")
    for k, v in s2["bounds"].items():
        if k not in PARAM_NAMES[s2["model"]]:
            raise ConfigError(f"stage2.bounds.{k}: not a parameter of {s2['model']}")
        _pair(f"stage2.bounds.{k}", v)
    ss = s2["noise"]["sigma_s"]
    if ss is not None and not (isinstance(ss, (int, float)) and ss > 0):
        raise ConfigError(f"stage2.noise.sigma_s: must be > 0, got {ss!r}")
    _ais("stage2.ais", s2["ais"])

    _pair("baseline.uniform", cfg["baseline"]["uniform"])
    if int(cfg["threads"]) < 1:
        raise ConfigError("threads: must be >= 1")


def dump_config(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True)
