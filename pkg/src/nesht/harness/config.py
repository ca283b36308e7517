"""Experiment configuration: a strict, versioned JSON schema.

Example::

    {
      "schema_version": 1,
      "mode": "sweep",
      "problem": {"name": "chain", "params": {"d0": 11, "horizon": 30},
                  "noise_ratio": 10, "p_zero": 0.9},
      "optimizer": {"alpha": 0.003, "T": 800, "sigma": 0.2, "n": 400},
      "betas": [0.0, 0.9],
      "seeds": [0, 1, 2],
      "group_size": 11
    }

Unknown keys anywhere raise :class:`ConfigError`; so does anything that
would only fail later (unresolvable problem name, empty seed list, bad
ranges).  Validation never touches the file system beyond reading the file.
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCHEMA_VERSION = 1
MODES = ("run", "sweep", "theory-check", "variance-probe")


class ConfigError(ValueError):
    """The configuration is malformed or inconsistent."""


# problem name -> (allowed params, required params)
PROBLEM_PARAMS = {
    "sparse_quadratic": ({"d", "k_star", "problem_seed", "theta_star", "scale", "noise_std"}, set()),
    "bandit": ({"d0", "k_star", "problem_seed", "theta_star", "sigma_x"}, set()),
    "chain": (
        {"d0", "k_star", "problem_seed", "theta_star", "horizon", "scale", "noise_std", "reward_cap"},
        set(),
    ),
    "bounded_step": ({"d", "radius", "center"}, {"d"}),
    "linear": ({"a", "noise_std"}, {"a"}),
    "constant": ({"d", "value"}, {"d"}),
}
EPISODIC = {"bandit", "chain"}

_TOP_KEYS = {
    "schema_version", "mode", "problem", "optimizer", "ht", "betas", "seeds",
    "group_size", "output_dir", "theory_check", "variance_probe", "description",
}
_PROBLEM_KEYS = {"name", "params", "noise_ratio", "p_zero", "collapse_noise"}
_OPT_KEYS = {"alpha", "T", "sigma", "n", "N", "eval_rollouts", "checkpoint_every", "theta0"}
_HT_KEYS = {"beta", "k"}
_THEORY_KEYS = {"sigma", "pairs", "samples", "reps", "n", "N", "theta", "seed"}
_PROBE_KEYS = {"sigma", "n", "N", "reps", "theta", "C", "seed"}


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _no_unknown(obj, allowed, where):
    _require(isinstance(obj, dict), f"{where} must be an object")
    extra = sorted(set(obj) - allowed)
    _require(not extra, f"unknown key(s) in {where}: {', '.join(extra)}")


def _is_int(x):
    return isinstance(x, int) and not isinstance(x, bool)


def _is_num(x):
    return (isinstance(x, (int, float)) and not isinstance(x, bool)) and math.isfinite(x)


def _pos_int(obj, key, where, default=None, minimum=1):
    v = obj.get(key, default)
    _require(_is_int(v) and v >= minimum, f"{where}.{key} must be an integer >= {minimum}, got {v!r}")
    return v


def _pos_num(obj, key, where, default=None, allow_zero=False):
    v = obj.get(key, default)
    ok = _is_num(v) and (v >= 0 if allow_zero else v > 0)
    _require(ok, f"{where}.{key} must be a {'non-negative' if allow_zero else 'positive'} number, got {v!r}")
    return float(v)


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    problem: dict
    optimizer: dict
    ht: dict | None
    betas: tuple
    seeds: tuple
    group_size: int | None
    output_dir: str | None
    theory_check: dict = field(default_factory=dict)
    variance_probe: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def config_hash(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_seeds(self, seeds) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["seeds"] = list(seeds)
        return parse_config(raw)

    def with_mode(self, mode) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw["mode"] = mode
        return parse_config(raw)


def _check_problem(p):
    _no_unknown(p, _PROBLEM_KEYS, "problem")
    name = p.get("name")
    _require(name in PROBLEM_PARAMS, f"unknown problem name {name!r}; known: {sorted(PROBLEM_PARAMS)}")
    params = p.get("params", {})
    allowed, required = PROBLEM_PARAMS[name]
    _no_unknown(params, allowed, f"problem.params ({name})")
    missing = sorted(required - set(params))
    _require(not missing, f"problem.params ({name}) missing: {', '.join(missing)}")
    for key in ("d", "d0", "k_star", "horizon"):
        if key in params:
            _pos_int(params, key, "problem.params")
    if "problem_seed" in params:
        _pos_int(params, "problem_seed", "problem.params", minimum=0)
    for key in ("scale", "sigma_x", "radius", "reward_cap"):
        if key in params:
            _pos_num(params, key, "problem.params")
    for key in ("noise_std",):
        if key in params:
            _pos_num(params, key, "problem.params", allow_zero=True)
    if "value" in params:
        _require(_is_num(params["value"]), "problem.params.value must be a number")
    for key in ("theta_star", "a", "center"):
        if key in params:
            v = params[key]
            _require(
                isinstance(v, list) and v and all(_is_num(x) for x in v),
                f"problem.params.{key} must be a non-empty list of numbers",
            )
    if "noise_ratio" in p:
        _require(name in EPISODIC, "noise_ratio needs a problem with observations (bandit, chain)")
        _pos_int(p, "noise_ratio", "problem", minimum=0)
    if "collapse_noise" in p:
        _require(isinstance(p["collapse_noise"], bool), "problem.collapse_noise must be true or false")
    if "p_zero" in p:
        _require(name in EPISODIC, "p_zero needs a problem with per-step rewards (bandit, chain)")
        v = p["p_zero"]
        _require(_is_num(v) and 0 <= v <= 1, f"problem.p_zero must lie in [0, 1], got {v!r}")


def _check_optimizer(o, mode):
    _no_unknown(o, _OPT_KEYS, "optimizer")
    _pos_num(o, "sigma", "optimizer")
    _pos_int(o, "n", "optimizer", default=1)
    _pos_int(o, "N", "optimizer", default=1)
    if mode in ("run", "sweep"):
        _pos_num(o, "alpha", "optimizer", allow_zero=True)
        _pos_int(o, "T", "optimizer")
    _pos_int(o, "eval_rollouts", "optimizer", default=8, minimum=0)
    _pos_int(o, "checkpoint_every", "optimizer", default=0, minimum=0)
    if "theta0" in o:
        v = o["theta0"]
        _require(isinstance(v, list) and all(_is_num(x) for x in v), "optimizer.theta0 must be a list of numbers")


def _check_beta(b, where):
    _require(_is_num(b) and 0 <= b < 1, f"{where} must lie in [0, 1), got {b!r}")


def _seed_list(seeds):
    _require(isinstance(seeds, list), "seeds must be a list of integers")
    _require(len(seeds) > 0, "seeds must be non-empty")
    for s in seeds:
        _require(_is_int(s) and 0 <= s < 2**64, f"seed {s!r} is not an unsigned 64-bit integer")
    _require(len(set(seeds)) == len(seeds), "seeds must be distinct")
    return tuple(seeds)


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a decoded JSON object and return an :class:`ExperimentConfig`."""
    _no_unknown(raw, _TOP_KEYS, "config")
    ver = raw.get("schema_version")
    _require(ver == SCHEMA_VERSION, f"schema_version must be {SCHEMA_VERSION}, got {ver!r}")
    mode = raw.get("mode")
    _require(mode in MODES, f"mode must be one of {MODES}, got {mode!r}")
    _require("problem" in raw, "missing 'problem'")
    _check_problem(raw["problem"])
    _require("optimizer" in raw, "missing 'optimizer'")
    _check_optimizer(raw["optimizer"], mode)

    ht = raw.get("ht")
    if ht is not None:
        _no_unknown(ht, _HT_KEYS, "ht")
        _require(len(ht) == 1, "ht takes exactly one of 'beta' or 'k'")
        if "beta" in ht:
            _check_beta(ht["beta"], "ht.beta")
        else:
            _pos_int(ht, "k", "ht")

    betas = raw.get("betas")
    if mode == "sweep":
        _require(isinstance(betas, list) and betas, "sweep mode needs a non-empty 'betas' list")
        for b in betas:
            _check_beta(b, "betas entry")
        _require(len(set(betas)) == len(betas), "betas must be distinct")
        _require(ht is None, "sweep mode takes 'betas', not 'ht'")
    else:
        _require(betas is None, f"'betas' is only valid in sweep mode, not {mode}")

    seeds = _seed_list(raw.get("seeds"))
    gs = raw.get("group_size")
    if gs is not None:
        _pos_int(raw, "group_size", "config")
    out = raw.get("output_dir")
    _require(out is None or isinstance(out, str), "output_dir must be a string")

    tc = raw.get("theory_check", {})
    _no_unknown(tc, _THEORY_KEYS, "theory_check")
    vp = raw.get("variance_probe", {})
    _no_unknown(vp, _PROBE_KEYS, "variance_probe")
    for key in ("n", "N", "sigma"):
        if key in vp:
            v = vp[key]
            _require(isinstance(v, list) and v, f"variance_probe.{key} must be a non-empty list")
    if mode == "variance-probe":
        _require(vp, "variance-probe mode needs a 'variance_probe' section")

    return ExperimentConfig(
        mode=mode,
        problem=copy.deepcopy(raw["problem"]),
        optimizer=copy.deepcopy(raw["optimizer"]),
        ht=copy.deepcopy(ht),
        betas=tuple(float(b) for b in betas) if betas else (),
        seeds=seeds,
        group_size=gs,
        output_dir=out,
        theory_check=copy.deepcopy(tc),
        variance_probe=copy.deepcopy(vp),
        raw=copy.deepcopy(raw),
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path.name}: {exc}") from exc
    return parse_config(raw)
