"""Flat ``key = value`` campaign config files.

One file describes one campaign; sweeps need lists, which is why configs are
files rather than flags (flags still override file keys).  Lines starting
with ``#`` are comments.  Unknown keys are rejected by name so typos fail
loudly.
"""

from __future__ import annotations

import hashlib
from dataclasses import replace
from pathlib import Path

from .protocols import ALGORITHMS, ProtocolParams
from .coordinates import VivaldiParams
from .simulator import ByteCostModel, ConfigError, SimConfig


def _to_int(key: str, raw: str) -> int:
    try:
        return int(raw)
    except ValueError as exc:
        raise ConfigError(key, f"expected an integer, got {raw!r}") from exc


def _to_float(key: str, raw: str) -> float:
    try:
        return float(raw)
    except ValueError as exc:
        raise ConfigError(key, f"expected a number, got {raw!r}") from exc


def _to_bool(key: str, raw: str) -> bool:
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(key, f"expected a boolean, got {raw!r}")


# config key -> (SimConfig field, converter); "params." prefixes protocol fields
_SIM_KEYS = {
    "matrix": ("matrix_path", str),
    "format": ("matrix_format", str),
    "gen": ("gen_kind", str),
    "n": ("gen_n", _to_int),
    "noise": ("gen_noise", _to_float),
    "asym": ("gen_asym", _to_float),
    "clusters": ("gen_clusters", _to_int),
    "scale": ("gen_scale", _to_float),
    "quantize_ms": ("gen_quantize_ms", _to_float),
    "servers": ("server_count", _to_int),
    "trials": ("trials", _to_int),
    "queries": ("queries", _to_int),
    "gossip_mean_s": ("gossip_mean_s", _to_float),
    "ring_mgmt_mean_s": ("ring_mgmt_mean_s", _to_float),
    "oversample_mean_s": ("oversample_mean_s", _to_float),
    "query_mean_s": ("query_mean_s", _to_float),
    "warmup_s": ("warmup_s", _to_float),
    "seed": ("seed", _to_int),
    "algorithm": ("algorithm", str),
    "mode": ("mode", str),
    "k": ("k", _to_int),
    "latency_mode": ("latency_mode", str),
    "oracle_direction": ("oracle_direction", str),
    "ring_capacity": ("ring_capacity", _to_int),
    "ring_tolerance": ("ring_tolerance", _to_int),
    "ring_alpha_base": ("ring_alpha_base", _to_float),
    "ring_spacing": ("ring_spacing", _to_float),
    "ring_count": ("ring_count", _to_int),
    "trace": ("trace", _to_bool),
}

_PARAM_KEYS = {
    "rho": ("rho", _to_float),
    "beta": ("beta", _to_float),
    "m": ("m", _to_int),
    "tau": ("tau", _to_int),
    "K": ("oversample_k", _to_int),
    "err_gate": ("err_gate", _to_float),
    "tiv_gap_ms": ("tiv_gap_ms", _to_float),
    "beta_farthest": ("beta_farthest", _to_float),
    "hop_cap": ("hop_cap", _to_int),
    "bootstrap_probes": ("bootstrap_probes", _to_int),
    "beta_cutoff": ("beta_cutoff", _to_float),
}

_VIVALDI_KEYS = {
    "dim": ("dim", _to_int),
    "cc": ("cc", _to_float),
    "ce": ("ce", _to_float),
    "tiv_gate": ("tiv_gate", _to_float),
}

# handled by the CLI, not by SimConfig
CAMPAIGN_KEYS = ("algorithms", "sweep", "sweep_values", "churn")

SWEEPABLE = set(_SIM_KEYS) | set(_PARAM_KEYS) | set(_VIVALDI_KEYS)


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    kv: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}", f"expected 'key = value', got {raw!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}", "empty key")
        kv[key] = val
    return kv


def load_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(str(path), f"cannot read config file: {exc}") from exc
    return parse_config_text(text, source=str(path))


def parse_churn(raw: str) -> list[tuple[float, str, int]]:
    """Churn schedule syntax: ``time:op:node`` entries separated by ``;``."""
    out = []
    for item in raw.split(";"):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 3:
            raise ConfigError("churn", f"expected time:op:node, got {item!r}")
        t = _to_float("churn", parts[0])
        op = parts[1].strip()
        nid = _to_int("churn", parts[2])
        out.append((t, op, nid))
    return out


def make_sim_config(kv: dict[str, str]) -> SimConfig:
    """Build a validated SimConfig from string key/values.

    Per-algorithm presets are applied first, then explicit keys, so a config
    that names an algorithm still wins over its preset on any key it sets.
    """
    from .simulator import apply_algorithm_defaults

    unknown = [k for k in kv if k not in _SIM_KEYS and k not in _PARAM_KEYS
               and k not in _VIVALDI_KEYS and k not in CAMPAIGN_KEYS]
    if unknown:
        raise ConfigError(unknown[0], "unknown config key")

    config = SimConfig()
    algorithm = kv.get("algorithm", config.algorithm)
    if algorithm not in ALGORITHMS:
        raise ConfigError("algorithm", f"must be one of {ALGORITHMS}")
    config = apply_algorithm_defaults(config, algorithm)

    sim_updates = {}
    for key, raw in kv.items():
        if key in _SIM_KEYS:
            attr, conv = _SIM_KEYS[key]
            sim_updates[attr] = conv(key, raw) if conv is not str else raw
    if "churn" in kv:
        sim_updates["churn"] = parse_churn(kv["churn"])
    param_updates = {}
    for key, raw in kv.items():
        if key in _PARAM_KEYS:
            attr, conv = _PARAM_KEYS[key]
            param_updates[attr] = conv(key, raw)
    viv_updates = {}
    for key, raw in kv.items():
        if key in _VIVALDI_KEYS:
            attr, conv = _VIVALDI_KEYS[key]
            viv_updates[attr] = conv(key, raw)

    try:
        vivaldi = replace(config.params.vivaldi, **viv_updates) if viv_updates else config.params.vivaldi
        params = replace(config.params, vivaldi=vivaldi, **param_updates)
    except ValueError as exc:
        bad = next(iter(param_updates), next(iter(viv_updates), "params"))
        raise ConfigError(bad, str(exc)) from exc
    config = replace(config, params=params, **sim_updates)
    config.validate()
    return config


def config_digest(kv: dict[str, str]) -> str:
    """Stable short hash of the effective key/value set, for output headers."""
    canon = "\n".join(f"{k} = {kv[k]}" for k in sorted(kv))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
