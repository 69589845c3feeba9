"""
ClusterReserve - Commands
-------------------------
One function per CLI sub-command. Each takes a validated RunConfig and
returns data frames; writing them out is left to reporting.writers.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

import pandas as pd

from config.config_loader import ConfigError, MonteCarloConfig, RunConfig
from core.delay_predictor import delay_components, predict_delay
from core.model import ClusterModel, MeanValueFunction, Scenario
from core.nb_predictor import predict_nb_curve
from core.poisson_predictor import predict_poisson_curve
from core.prediction_record import PredictionResult
from reporting.writers import delay_frame, figure_frame, prediction_frame, validation_frame
from simulation.montecarlo import semi_analytic_oracle_curve, simulate
from simulation.validation import Z_GATE, central_values, run_validation, z_score

logger = logging.getLogger(__name__)


# ===============================
# Study panels
# ===============================

STUDY_CENTERS: Tuple[Tuple[str, MeanValueFunction], ...] = (
    ("lambda30", MeanValueFunction.linear(30.0)),
    ("lambda60", MeanValueFunction.linear(60.0)),
)
STUDY_CLUSTERS: Tuple[Tuple[str, MeanValueFunction], ...] = (
    ("mu_linear", MeanValueFunction.linear(5.0)),
    ("mu_rational", MeanValueFunction.rational(5.0)),
    ("mu_power", MeanValueFunction.power(5.0, 2.0)),
)
STUDY_M_RANGE = (10, 170)


@dataclass(frozen=True)
class FigurePanel:
    name: str
    scenario: Scenario
    frame: pd.DataFrame
    spot_checks: List[Dict[str, Any]] = field(default_factory=list)
    notes: Tuple[str, ...] = ()


def panel_notes(sc: Scenario) -> Tuple[str, ...]:
    """Caveats a reader of the panel needs; empty for most panels."""
    mu = sc.cluster.mu
    if mu.kind == "rational":
        return (
            f"mu is the running maximum of {mu.a:g}x/(1+x^2): it follows the formula up to x = 1 "
            f"and stays at {mu.a / 2.0:g} after, so the curve uses a nondecreasing mu",
        )
    return ()


# ===============================
# Helpers
# ===============================

def with_seed(run: RunConfig, seed: Optional[int]) -> RunConfig:
    """Command-line seed overrides the config one."""
    if seed is None:
        return run
    mc = run.mc or MonteCarloConfig()
    return replace(run, mc=replace(mc, seed=int(seed)))


def run_inputs(run: RunConfig, **extra: Any) -> Dict[str, Any]:
    inputs = {
        "scenario": run.scenario.to_dict(),
        "fingerprint": run.scenario.fingerprint(),
    }
    if run.mc is not None:
        inputs["seed"] = run.mc.seed
        inputs["replicates"] = run.mc.replicates
    inputs.update(extra)
    return inputs


def _curve(sc: Scenario, m_lo: int, m_hi: int, run: RunConfig) -> List[PredictionResult]:
    if sc.cluster.family == "poisson":
        return predict_poisson_curve(sc, m_lo, m_hi, run.quadrature)
    return predict_nb_curve(sc, m_lo, m_hi, run.quadrature)


# ===============================
# predict
# ===============================

def cmd_predict(run: RunConfig) -> Tuple[pd.DataFrame, str]:
    sc = run.scenario

    if not sc.delay.is_none:
        if run.ell is None:
            raise ConfigError("ell: a scenario with a reporting delay is predicted from the reported count ell")
        comp = delay_components(sc, run.quadrature)
        result = predict_delay(comp, run.ell)
        return delay_frame([result], comp), (
            f"Forecast of claim payments in (t, t+s] given {run.ell} claims reported by t; "
            f"of {comp.lambda_total:.6g} claims expected on [0, 1], "
            f"{comp.lambda_hat:.6g} are expected to be incurred but not reported."
        )

    if run.ell is not None:
        raise ConfigError("ell: conditioning on a reported count requires a reporting delay")
    if run.m is not None:
        m_lo = m_hi = run.m
    elif run.m_range is not None:
        m_lo, m_hi = run.m_range
    else:
        raise ConfigError("m: predict requires one of m, m_range or ell")

    results = _curve(sc, m_lo, m_hi, run)
    flagged = sum(1 for r in results if r.flags)
    return prediction_frame(results), (
        f"Conditional mean and variance of payments in (t, t+s] given M(t) = m for m in "
        f"[{m_lo}, {m_hi}] ({sc.cluster.family} clusters); {flagged} rows carry flags."
    )


# ===============================
# figure
# ===============================

def study_scenarios(run: RunConfig) -> List[Tuple[str, Scenario]]:
    sc = run.scenario
    return [
        (f"{c_name}_{mu_name}", Scenario(center=center, cluster=ClusterModel.poisson(mu), t=sc.t, s=sc.s))
        for c_name, center in STUDY_CENTERS
        for mu_name, mu in STUDY_CLUSTERS
    ]


def _spot_check(sc: Scenario, frame: pd.DataFrame, run: RunConfig, threads: int) -> List[Dict[str, Any]]:
    ms = [m for m in central_values(sc, run.quadrature) if m in set(frame["m"])]
    if not ms:
        return []
    oracle = semi_analytic_oracle_curve(sc, ms, run.mc.replicates, run.mc.seed, threads)
    means = dict(zip(frame["m"], frame["mean"]))
    out = []
    for m in ms:
        est = oracle[m].mean
        z = z_score(float(means[m]), est)
        out.append({"m": int(m), "mean": float(means[m]), "oracle": est.value,
                    "stderr": est.stderr, "z": z, "passed": bool(abs(z) < Z_GATE)})
    return out


def cmd_figure(run: RunConfig, spot_check: bool = False, threads: int = 1) -> List[FigurePanel]:
    """
    The six arrival/payment panels: Lambda in {30x, 60x} times
    mu in {5x, rational a=5, 5x^2}, each a predictor curve over m_range.
    """
    m_lo, m_hi = run.m_range or STUDY_M_RANGE
    if spot_check and run.mc is None:
        raise ConfigError("mc: figure spot checks require mc settings")

    panels: List[FigurePanel] = []
    for name, sc in study_scenarios(run):
        started = time.perf_counter()
        frame = figure_frame(_curve(sc, m_lo, m_hi, run))
        checks = _spot_check(sc, frame, run, threads) if spot_check else []
        logger.info("panel %s: %d rows in %.2fs", name, len(frame), time.perf_counter() - started)
        panels.append(FigurePanel(name=name, scenario=sc, frame=frame, spot_checks=checks,
                                  notes=panel_notes(sc)))
    return panels


# ===============================
# simulate
# ===============================

def cmd_simulate(run: RunConfig, threads: int = 1) -> Tuple[pd.DataFrame, str]:
    mc = run.mc or MonteCarloConfig()
    logger.info("simulating %d replicates (seed %d, %d threads)", mc.replicates, mc.seed, threads)
    out = simulate(run.scenario, mc.replicates, mc.seed, threads)
    return out.summary(), (
        f"Sample moments over {mc.replicates} simulated replicates with seed {mc.seed}."
    )


# ===============================
# validate
# ===============================

def cmd_validate(run: RunConfig, threads: int = 1) -> Tuple[pd.DataFrame, bool]:
    if run.mc is None:
        raise ConfigError("mc: validate requires mc settings (replicates, seed)")
    checks = run_validation(run.scenario, run.quadrature, run.mc.replicates, run.mc.seed, threads)
    passed = all(c.passed for c in checks)
    failed = [c.name for c in checks if not c.passed]
    if failed:
        logger.warning("validation failed: %s", ", ".join(failed))
    return validation_frame(checks), passed


def worst_z(frame: pd.DataFrame) -> float:
    zs = [abs(z) for z in frame["z"] if z is not None and not (isinstance(z, float) and math.isnan(z))]
    return max(zs) if zs else 0.0
