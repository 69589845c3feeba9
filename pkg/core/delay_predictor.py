"""
ClusterReserve - Reporting Delay Predictor
------------------------------------------
Prediction of M(t, t+s] from the number of claims reported by time t.

A claim arriving at v is reported at v + D and its payment process starts
then. Given N_hat(t) = ell:

    mean     = ell * J1 + H1
    variance = ell * (J2 - J1^2) + H2

J_i are moments of a reported claim's increment over the forecast window,
averaged over the reported-claim start distribution. H_i are moments of the
payments of claims reported inside (t, t+s].
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.errors import ScenarioValidationError, UndefinedComponentsError
from core.model import Scenario, shifted_kinks, validate_scenario
from core.prediction_record import PredictionResult, create_prediction_result
from core.quadrature import QuadratureConfig, integrate_against, integrate_delay_region

logger = logging.getLogger(__name__)


# ===============================
# Components
# ===============================

@dataclass(frozen=True)
class DelayComponents:
    lambda_hat: float       # expected number of claims not reported by t
    n_hat_mean: float       # expected number reported by t
    J1: float
    J2: float
    H1: float
    H2: float
    lambda_total: float     # Lambda(1)
    fingerprint: Optional[str] = None


def delay_components(sc: Scenario, cfg: Optional[QuadratureConfig] = None) -> DelayComponents:
    validate_scenario(sc, allow_empty_center=True)
    if sc.delay.is_none:
        raise ScenarioValidationError([("model.delay", "delay kind none has no reporting split")])
    cfg = cfg or QuadratureConfig()

    t, s = sc.t, sc.s
    mu = sc.cluster.mu
    c = sc.cluster
    total = sc.total_mass

    if total <= 0.0:
        return DelayComponents(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, sc.fingerprint())

    delay_breaks = [t - b for b in sc.delay.breakpoints()]
    lambda_hat = integrate_against(lambda v: sc.delay.sf(t - v), sc.center, 0.0, 1.0, cfg, delay_breaks)
    n_hat_mean = integrate_against(lambda v: sc.delay.cdf(t - v), sc.center, 0.0, 1.0, cfg, delay_breaks)

    if n_hat_mean <= 0.0:
        raise UndefinedComponentsError(
            "no claim can be reported by t (E[N_hat(t)] = 0); "
            "use the unconditional moments instead"
        )

    starts = shifted_kinks(mu, (t, t + s))

    # reported claims: increment over (t - u, t + s - u], u = v + r <= t
    def reported(u):
        return np.maximum(np.asarray(mu(t + s - u)) - np.asarray(mu(t - u)), 0.0)

    # claims reported in (t, t+s]: payments over (0, t + s - u]
    def late(u):
        return np.asarray(mu(t + s - u))

    def region(delta_fn, idx, r_lo, r_hi):
        return integrate_delay_region(
            lambda v, r: c.moments_from_delta(delta_fn(np.asarray(v) + np.asarray(r)))[idx],
            sc.center, sc.delay, r_lo, r_hi, cfg, start_breaks=starts,
        )

    j1 = region(reported, 0, lambda v: -1.0, lambda v: t - v) / n_hat_mean
    j2 = region(reported, 1, lambda v: -1.0, lambda v: t - v) / n_hat_mean
    h1 = region(late, 0, lambda v: t - v, lambda v: t + s - v)
    h2 = region(late, 1, lambda v: t - v, lambda v: t + s - v)

    comp = DelayComponents(
        lambda_hat=float(lambda_hat),
        n_hat_mean=float(n_hat_mean),
        J1=float(j1), J2=float(j2),
        H1=float(h1), H2=float(h2),
        lambda_total=total,
        fingerprint=sc.fingerprint(),
    )
    logger.info("delay components %s: J1=%.6g J2=%.6g H1=%.6g H2=%.6g",
                sc.fingerprint()[:12], comp.J1, comp.J2, comp.H1, comp.H2)
    return comp


# ===============================
# Prediction
# ===============================

def predict_delay(comp: DelayComponents, ell: int) -> PredictionResult:
    if ell < 0:
        raise ValueError(f"reported count must be >= 0, got {ell}")
    mean = ell * comp.J1 + comp.H1
    variance = ell * (comp.J2 - comp.J1 * comp.J1) + comp.H2
    return create_prediction_result("ell", ell, mean, variance, fingerprint=comp.fingerprint)


def unconditional_mse(comp: DelayComponents) -> float:
    """E[(M(t, t+s] - E[M(t, t+s] | N_hat(t)])^2]."""
    return max(0.0, comp.n_hat_mean * (comp.J2 - comp.J1 * comp.J1) + comp.H2)
