"""JSON configuration loading for runs and campaigns."""

from __future__ import annotations

import json
from dataclasses import fields
from pathlib import Path

from .evidence import EvidenceConfig
from .expression import ExpressionError
from .generate import GenerationConfig
from .gp import GpConfig
from .smc import SmcConfig
from .variation import VariationConfig


class ConfigError(ValueError):
    pass


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _build(cls, data, where):
    if data is None:
        data = {}
    if isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**data)
    except (TypeError, ValueError, ExpressionError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def generation_config(data, operators=None) -> GenerationConfig:
    data = dict(data or {})
    if operators is not None:
        data["operator_set"] = tuple(operators)
    elif "operator_set" in data:
        data["operator_set"] = tuple(data["operator_set"])
    return _build(GenerationConfig, data, "generation")


def variation_config(data, max_nodes=None) -> VariationConfig:
    data = dict(data or {})
    if max_nodes is not None:
        data.setdefault("max_nodes", max_nodes)
    return _build(VariationConfig, data, "variation")


def evidence_config(data) -> EvidenceConfig:
    return _build(EvidenceConfig, data, "evidence")


def _sub_configs(data, operators=None):
    gen = generation_config(data.get("generation"), operators)
    return gen, variation_config(data.get("variation"), gen.max_nodes), evidence_config(data.get("evidence"))


def smc_config(data: dict, seed=None, workers=None, snapshots=None, operators=None) -> SmcConfig:
    data = dict(data)
    data.pop("algorithm", None)
    gen, var, ev = _sub_configs(data, operators)
    for k in ("generation", "variation", "evidence"):
        data.pop(k, None)
    if seed is not None:
        data["seed"] = seed
    if "seed" not in data:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    if workers is not None:
        data["workers"] = workers
    if snapshots is not None:
        data["snapshots"] = snapshots
    data["snapshots"] = tuple(data.get("snapshots", ()))
    return _build(SmcConfig, {**data, "generation": gen, "variation": var, "evidence": ev}, "smc config")


def gp_config(data: dict, seed=None, workers=None, n_generations=None, operators=None) -> GpConfig:
    data = dict(data)
    if "algorithm" in data and "variant" not in data:
        data["variant"] = data.pop("algorithm")
    gen, var, ev = _sub_configs(data, operators)
    for k in ("generation", "variation", "evidence", "snapshots", "n_mcmc", "ess_target_fraction"):
        data.pop(k, None)
    if seed is not None:
        data["seed"] = seed
    if "seed" not in data:
        raise ConfigError("a seed is required (config key 'seed' or --seed)")
    if workers is not None:
        data["workers"] = workers
    if n_generations is not None:
        data["n_generations"] = n_generations
    if "n_generations" not in data:
        raise ConfigError("n_generations is required (config key or --matched-steps)")
    if "variant" not in data:
        raise ConfigError("variant is required (gp-mse, gp-nml or gp-agg)")
    return _build(GpConfig, {**data, "generation": gen, "variation": var, "evidence": ev}, "gp config")
