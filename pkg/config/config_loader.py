"""
ClusterReserve - Config Loader
------------------------------
Loads run configurations (YAML) strictly and safely.

Usage:
    from config.config_loader import load_config, cfg_get

    run = load_config("config/study.yaml")
    rel_tol = cfg_get(run.raw, "quadrature.rel_tol", 1e-10)

Every mapping has a closed key set: unknown keys, missing required keys and
type violations are all reported together, each with its dotted key path.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import yaml

from core.errors import ScenarioValidationError
from core.model import ClusterModel, DelayDistribution, MeanValueFunction, Scenario, validate_scenario
from core.quadrature import QuadratureConfig


# ===============================
# Exceptions
# ===============================

class ConfigError(Exception):
    pass


# ===============================
# Schema
# ===============================

TOP_KEYS = {"model", "t", "s", "m", "m_range", "ell", "quadrature", "mc", "logging"}
TOP_REQUIRED = ("model", "t", "s")
MODEL_KEYS = {"center", "cluster", "delay"}

MVF_KEYS = {
    "linear": {"a"},
    "rational": {"a"},
    "power": {"a", "p"},
    "capped_linear": {"a", "x0"},
    "tabulated": {"knots"},
}
CLUSTER_KEYS = {
    "poisson": {"mu"},
    "negbinomial": {"mu", "p"},
}
DELAY_KEYS = {
    "none": set(),
    "deterministic": {"d"},
    "exponential": {"rate"},
    "uniform": {"lo", "hi"},
}
QUADRATURE_KEYS = {"rel_tol", "abs_tol", "max_depth"}
MC_KEYS = {"replicates", "seed"}
LOGGING_KEYS = {"level"}
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")

SEED_LIMIT = 2 ** 64


@dataclass(frozen=True)
class MonteCarloConfig:
    replicates: int = 200_000
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    scenario: Scenario
    quadrature: QuadratureConfig = field(default_factory=QuadratureConfig)
    m: Optional[int] = None
    m_range: Optional[Tuple[int, int]] = None
    ell: Optional[int] = None
    mc: Optional[MonteCarloConfig] = None
    log_level: Optional[str] = None
    raw: Dict[str, Any] = field(default_factory=dict, compare=False)

    def conditioning_values(self) -> List[int]:
        if self.m is not None:
            return [self.m]
        if self.m_range is not None:
            return list(range(self.m_range[0], self.m_range[1] + 1))
        if self.ell is not None:
            return [self.ell]
        return []


# ===============================
# Core Loader
# ===============================

def load_config(path: str) -> RunConfig:
    """
    Load a YAML run configuration from disk.
    """
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")

    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate YAML text into a RunConfig.
    """
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        problem = getattr(exc, "problem", None) or str(exc)
        raise ConfigError(f"YAML syntax error{where}: {problem}") from exc

    if not isinstance(cfg, dict):
        raise ConfigError("Config must parse into a mapping (YAML object).")

    return validate_config(cfg)


# ===============================
# Helpers
# ===============================

def cfg_get(cfg: Dict[str, Any], dotted_key: str, default: Optional[Any] = None) -> Any:
    """
    Get nested config keys using dotted path.

    Example:
        cfg_get(cfg, "model.cluster.family")
    """
    parts = dotted_key.split(".")
    current: Any = cfg

    for p in parts:
        if not isinstance(current, dict) or p not in current:
            return default
        current = current[p]

    return current


class _Errors:
    def __init__(self):
        self.items: List[str] = []

    def add(self, path: str, msg: str):
        self.items.append(f"{path}: {msg}")


def _keys(node: Any, path: str, allowed, required, errors: _Errors) -> bool:
    if not isinstance(node, dict):
        errors.add(path, "must be a mapping")
        return False
    for k in sorted(set(node) - set(allowed), key=str):
        errors.add(f"{path}.{k}" if path else str(k), "unknown key")
    for k in required:
        if k not in node:
            errors.add(f"{path}.{k}" if path else k, "missing required key")
    return True


def _number(node: Dict[str, Any], key: str, path: str, errors: _Errors,
            default: Optional[float] = None) -> Optional[float]:
    full = f"{path}.{key}" if path else key
    if key not in node:
        return default
    value = node[key]
    if isinstance(value, bool):
        errors.add(full, "must be a number")
        return default
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            errors.add(full, "must be a number")
            return default
    if not isinstance(value, (int, float)) or not math.isfinite(float(value)):
        errors.add(full, "must be a finite number")
        return default
    return float(value)


def _integer(node: Dict[str, Any], key: str, path: str, errors: _Errors,
             default: Optional[int] = None) -> Optional[int]:
    full = f"{path}.{key}" if path else key
    if key not in node:
        return default
    value = node[key]
    if isinstance(value, bool):
        errors.add(full, "must be an integer")
        return default
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        try:
            return int(value)
        except ValueError:
            pass
    errors.add(full, "must be an integer")
    return default


# ===============================
# Section Parsers
# ===============================

def _mvf(node: Any, path: str, errors: _Errors) -> Optional[MeanValueFunction]:
    if not isinstance(node, dict):
        errors.add(path, "must be a mapping")
        return None
    kind = node.get("kind")
    if kind not in MVF_KEYS:
        errors.add(f"{path}.kind", f"must be one of {', '.join(MVF_KEYS)}")
        return None
    allowed = MVF_KEYS[kind] | {"kind"}
    _keys(node, path, allowed, sorted(MVF_KEYS[kind]), errors)

    if kind == "tabulated":
        knots = node.get("knots")
        if not isinstance(knots, list) or not all(isinstance(k, (list, tuple)) and len(k) == 2 for k in knots):
            errors.add(f"{path}.knots", "must be a list of [x, y] pairs")
            return None
        try:
            return MeanValueFunction.tabulated([(float(x), float(y)) for x, y in knots])
        except (TypeError, ValueError):
            errors.add(f"{path}.knots", "knot coordinates must be numbers")
            return None

    a = _number(node, "a", path, errors, 0.0)
    if kind == "power":
        return MeanValueFunction.power(a, _number(node, "p", path, errors, 1.0))
    if kind == "capped_linear":
        return MeanValueFunction.capped_linear(a, _number(node, "x0", path, errors, 1.0))
    if kind == "rational":
        return MeanValueFunction.rational(a)
    return MeanValueFunction.linear(a)


def _cluster(node: Any, path: str, errors: _Errors) -> Optional[ClusterModel]:
    if not isinstance(node, dict):
        errors.add(path, "must be a mapping")
        return None
    family = node.get("family")
    if family not in CLUSTER_KEYS:
        errors.add(f"{path}.family", f"must be one of {', '.join(CLUSTER_KEYS)}")
        return None
    _keys(node, path, CLUSTER_KEYS[family] | {"family"}, sorted(CLUSTER_KEYS[family]), errors)

    mu = _mvf(node.get("mu"), f"{path}.mu", errors) if "mu" in node else None
    if mu is None:
        return None
    if family == "negbinomial":
        return ClusterModel.negbinomial(mu, _number(node, "p", path, errors, 0.5))
    return ClusterModel.poisson(mu)


def _delay(node: Any, path: str, errors: _Errors) -> DelayDistribution:
    if node is None:
        return DelayDistribution.none()
    if not isinstance(node, dict):
        errors.add(path, "must be a mapping")
        return DelayDistribution.none()
    kind = node.get("kind")
    if kind not in DELAY_KEYS:
        errors.add(f"{path}.kind", f"must be one of {', '.join(DELAY_KEYS)}")
        return DelayDistribution.none()
    _keys(node, path, DELAY_KEYS[kind] | {"kind"}, sorted(DELAY_KEYS[kind]), errors)

    if kind == "deterministic":
        return DelayDistribution.deterministic(_number(node, "d", path, errors, 0.0))
    if kind == "exponential":
        return DelayDistribution.exponential(_number(node, "rate", path, errors, 1.0))
    if kind == "uniform":
        return DelayDistribution.uniform(_number(node, "lo", path, errors, 0.0),
                                         _number(node, "hi", path, errors, 1.0))
    return DelayDistribution.none()


# ===============================
# Validation
# ===============================

def validate_config(cfg: Dict[str, Any]) -> RunConfig:
    """
    Build a RunConfig, reporting every schema violation at once.
    """
    errors = _Errors()
    _keys(cfg, "", TOP_KEYS, TOP_REQUIRED, errors)

    # --- model ---
    center = cluster = None
    delay = DelayDistribution.none()
    model = cfg.get("model")
    if "model" in cfg and _keys(model, "model", MODEL_KEYS, ("center", "cluster"), errors):
        if "center" in model:
            center = _mvf(model["center"], "model.center", errors)
        if "cluster" in model:
            cluster = _cluster(model["cluster"], "model.cluster", errors)
        delay = _delay(model.get("delay"), "model.delay", errors)

    t = _number(cfg, "t", "", errors)
    s = _number(cfg, "s", "", errors)

    # --- conditioning ---
    present = [k for k in ("m", "m_range", "ell") if k in cfg]
    if len(present) > 1:
        errors.add(",".join(present), "m, m_range and ell are mutually exclusive")

    m = _integer(cfg, "m", "", errors)
    ell = _integer(cfg, "ell", "", errors)
    if m is not None and m < 0:
        errors.add("m", "must be >= 0")
    if ell is not None and ell < 0:
        errors.add("ell", "must be >= 0")

    m_range = None
    if "m_range" in cfg:
        rng = cfg["m_range"]
        if (not isinstance(rng, list) or len(rng) != 2
                or not all(isinstance(v, int) and not isinstance(v, bool) for v in rng)):
            errors.add("m_range", "must be a list [lo, hi] of integers")
        elif not (0 <= rng[0] <= rng[1]):
            errors.add("m_range", "requires 0 <= lo <= hi")
        else:
            m_range = (int(rng[0]), int(rng[1]))

    # --- quadrature ---
    quad = QuadratureConfig()
    if "quadrature" in cfg and _keys(cfg["quadrature"], "quadrature", QUADRATURE_KEYS, (), errors):
        q = cfg["quadrature"]
        quad = QuadratureConfig(
            rel_tol=_number(q, "rel_tol", "quadrature", errors, quad.rel_tol),
            abs_tol=_number(q, "abs_tol", "quadrature", errors, quad.abs_tol),
            max_depth=_integer(q, "max_depth", "quadrature", errors, quad.max_depth),
        )
        for path, msg in quad.violations("quadrature"):
            errors.add(path, msg)

    # --- monte carlo ---
    mc = None
    if "mc" in cfg and _keys(cfg["mc"], "mc", MC_KEYS, ("replicates", "seed"), errors):
        node = cfg["mc"]
        reps = _integer(node, "replicates", "mc", errors, 1)
        seed = _integer(node, "seed", "mc", errors, 0)
        if reps is not None and reps < 1:
            errors.add("mc.replicates", "must be >= 1")
        if seed is not None and not (0 <= seed < SEED_LIMIT):
            errors.add("mc.seed", "must be an unsigned 64-bit integer")
        mc = MonteCarloConfig(replicates=reps, seed=seed)

    # --- logging ---
    level = None
    if "logging" in cfg and _keys(cfg["logging"], "logging", LOGGING_KEYS, (), errors):
        level = cfg["logging"].get("level")
        if level is not None and str(level).upper() not in LOG_LEVELS:
            errors.add("logging.level", f"must be one of {', '.join(LOG_LEVELS)}")
        level = None if level is None else str(level).upper()

    if not errors.items and center is not None and cluster is not None:
        scenario = Scenario(center=center, cluster=cluster, delay=delay, t=t, s=s)
        try:
            validate_scenario(scenario)
        except ScenarioValidationError as exc:
            for path, msg in exc.violations:
                errors.add(path, msg)

    if errors.items:
        raise ConfigError(
            "Invalid config:\n"
            + "\n".join([f" - {e}" for e in errors.items])
        )

    return RunConfig(
        scenario=scenario,
        quadrature=quad,
        m=m,
        m_range=m_range,
        ell=ell,
        mc=mc,
        log_level=level,
        raw=cfg,
    )
