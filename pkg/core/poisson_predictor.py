"""
ClusterReserve - Poisson Cluster Predictor
------------------------------------------
Conditional mean and variance of M(t, t+s] given M(t) = m for Poisson
clusters.

Purpose:
- Quadrature coefficients c[j][l] = int dmu(v)^j mu(t-v)^l exp(-mu(t-v)) Lambda(dv),
  with dmu(v) = mu(t+s-v) - mu(t-v)
- Unsigned Leibniz recursions for B[l][j] in log space (entries grow like l!)
- Extraction of pmf, predictor and conditional variance per m
- The signed derivative recursion in its original form, for cross-checking

All table entries are nonnegative, so every sum is a plain log-sum-exp.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp, xlogy

from core.errors import NullConditioningError, ScenarioValidationError, TableRangeError
from core.model import Scenario, shifted_kinks, validate_scenario
from core.prediction_record import FLAG_DEGENERATE, PredictionResult, create_prediction_result
from core.quadrature import QuadratureConfig, integrate_against, integrate_log_against
from core.table_cache import get_or_build
from core.xnum import XReal, log_binomial_row, xf_add, xf_mul, xf_ratio, xsum

logger = logging.getLogger(__name__)

MAX_TABLE = 10_000


# ===============================
# Tables
# ===============================

@dataclass(frozen=True, eq=False)
class PoissonTables:
    m_max: int
    log_c: np.ndarray          # shape (3, m_max + 3), log of c[j][l]
    c00: float                 # c[0][0] as a plain real
    log_b: np.ndarray          # shape (m_max + 3, 3), log of B[l][j]
    total_mass: float          # Lambda(1)
    delta_mass: float          # int dmu dLambda
    fingerprint: str

    def b(self, ell: int, j: int) -> XReal:
        lg = float(self.log_b[ell, j])
        return XReal.zero() if lg == -math.inf else XReal(1, lg)


def _lse(terms: np.ndarray) -> float:
    finite = terms[np.isfinite(terms)]
    if finite.size == 0:
        return -math.inf
    return float(logsumexp(finite))


def _require_poisson(sc: Scenario):
    validate_scenario(sc, allow_empty_center=True)
    if sc.cluster.family != "poisson":
        raise ScenarioValidationError([("model.cluster.family", "poisson cluster required")])
    if not sc.delay.is_none:
        raise ScenarioValidationError([("model.delay", "conditioning on M(t) requires delay kind none")])


def _window(sc: Scenario):
    mu = sc.cluster.mu
    t, s = sc.t, sc.s

    def mu_now(v):
        return np.asarray(mu(t - np.asarray(v)), dtype=float)

    def dmu(v):
        return np.maximum(np.asarray(mu(t + s - np.asarray(v)), dtype=float) - mu_now(v), 0.0)

    return mu_now, dmu, shifted_kinks(mu, (t, t + s))


def build_poisson_tables(sc: Scenario, m_max: int, cfg: QuadratureConfig) -> PoissonTables:
    _require_poisson(sc)
    if m_max < 0 or m_max > MAX_TABLE:
        raise TableRangeError(f"m_max must be in [0, {MAX_TABLE}], got {m_max}")

    started = time.perf_counter()
    mu_now, dmu, breaks = _window(sc)
    n = m_max + 3

    # --- quadrature coefficients ---
    log_c = np.full((3, n), -math.inf)
    for j in range(3):
        for ell in range(n):
            def log_g(v, j=j, ell=ell):
                x = mu_now(v)
                out = xlogy(ell, x) - x
                if j:
                    with np.errstate(divide="ignore"):
                        out = out + j * np.log(dmu(v))
                return out

            val, _ = integrate_log_against(log_g, lambda v: 1.0, sc.center, 0.0, 1.0, cfg, breaks)
            log_c[j, ell] = val.logmag if not val.is_zero else -math.inf

    c00 = integrate_against(lambda v: np.exp(-mu_now(v)), sc.center, 0.0, 1.0, cfg, breaks)
    delta_mass = integrate_against(dmu, sc.center, 0.0, 1.0, cfg, breaks)
    total_mass = sc.total_mass

    # --- recursions ---
    log_b = np.full((n, 3), -math.inf)
    log_b[0, 0] = c00 - total_mass
    log_b[0, 1] = log_b[0, 0] + log_c[1, 0]
    log_b[0, 2] = _lse(np.array([log_b[0, 1] + log_c[1, 0], log_b[0, 0] + log_c[2, 0]]))

    for ell in range(1, n):
        k = np.arange(ell)
        log_b[ell, 0] = _lse(log_binomial_row(ell - 1) + log_b[k, 0] + log_c[0, ell - k])

        k = np.arange(ell + 1)
        lbin = log_binomial_row(ell)
        log_b[ell, 1] = _lse(lbin + log_b[k, 0] + log_c[1, ell - k])
        log_b[ell, 2] = _lse(np.concatenate([
            lbin + log_b[k, 1] + log_c[1, ell - k],
            lbin + log_b[k, 0] + log_c[2, ell - k],
        ]))

    tab = PoissonTables(
        m_max=m_max,
        log_c=log_c,
        c00=float(c00),
        log_b=log_b,
        total_mass=total_mass,
        delta_mass=float(delta_mass),
        fingerprint=sc.fingerprint(),
    )
    logger.info("poisson tables built: %s m_max=%d in %.2fs",
                tab.fingerprint[:12], m_max, time.perf_counter() - started)
    return tab


def get_poisson_tables(sc: Scenario, m_max: int, cfg: QuadratureConfig) -> PoissonTables:
    return get_or_build("poisson", sc.fingerprint(), cfg, m_max,
                        lambda: build_poisson_tables(sc, m_max, cfg))


# ===============================
# Extraction
# ===============================

def _check_m(tab, m: int):
    if m < 0 or m > tab.m_max:
        raise TableRangeError(f"m={m} outside table range [0, {tab.m_max}]")


def poisson_log_pmf(tab: PoissonTables, m: int) -> float:
    _check_m(tab, m)
    return float(tab.log_b[m, 0] - gammaln(m + 1))


def poisson_pmf(tab: PoissonTables, m: int) -> float:
    return math.exp(poisson_log_pmf(tab, m))


def predict_poisson(tab: PoissonTables, m: int) -> PredictionResult:
    _check_m(tab, m)
    b0 = tab.b(m, 0)
    if b0.is_zero:
        raise NullConditioningError(f"P(M(t) = {m}) = 0; the conditioning event is null")

    flags: Tuple[str, ...] = ()
    if tab.delta_mass == 0.0:
        flags += (FLAG_DEGENERATE,)

    mean = xf_ratio(tab.b(m, 1), b0)
    second = xf_ratio(xf_add(tab.b(m, 2), tab.b(m, 1)), b0)
    variance = second - mean * mean

    return create_prediction_result(
        "m", m, mean, variance,
        log_pmf=poisson_log_pmf(tab, m),
        flags=flags,
        fingerprint=tab.fingerprint,
    )


def predict_poisson_curve(sc: Scenario, m_lo: int, m_hi: int,
                          cfg: QuadratureConfig) -> List[PredictionResult]:
    if not (0 <= m_lo <= m_hi):
        raise TableRangeError(f"invalid m range [{m_lo}, {m_hi}]")
    tab = get_poisson_tables(sc, m_hi + 2, cfg)
    return [predict_poisson(tab, m) for m in range(m_lo, m_hi + 1)]


# ===============================
# Signed derivative form
# ===============================

def poisson_signed_form(sc: Scenario, m: int, cfg: QuadratureConfig) -> Tuple[float, float]:
    """
    (mean, variance) from the signed recursion on the joint Laplace transform
    phi(x, y) = E[exp(-x R(t) - y R(t+s))] at (1, 0):

        mean = (phi^(m+1,0) - phi^(m,1)) / phi^(m,0)
        var  = (phi^(m+2,0) - 2 phi^(m+1,1) + phi^(m,2)) / phi^(m,0) + mean - mean^2

    Terms alternate in sign; this path exists to cross-check the unsigned
    tables and is only trusted for moderate m.
    """
    _require_poisson(sc)
    mu = sc.cluster.mu
    t, s = sc.t, sc.s
    breaks = shifted_kinks(mu, (t, t + s))
    n = m + 3

    def mu1(v):
        return np.asarray(mu(t - np.asarray(v)), dtype=float)

    def mu2(v):
        return np.asarray(mu(t + s - np.asarray(v)), dtype=float)

    # psi^(l, j)(1, 0) = (-1)^(l+j) int mu1^l mu2^j exp(-mu1) dLambda
    psi = {}
    for j in range(3):
        for ell in range(n):
            def log_g(v, j=j, ell=ell):
                x = mu1(v)
                return xlogy(ell, x) + xlogy(j, mu2(v)) - x

            val, _ = integrate_log_against(log_g, lambda v: 1.0, sc.center, 0.0, 1.0, cfg, breaks)
            sign = -1 if (ell + j) % 2 else 1
            psi[ell, j] = XReal(sign * val.sign, val.logmag)

    c00 = integrate_against(lambda v: np.exp(-mu1(v)), sc.center, 0.0, 1.0, cfg, breaks)
    phi = {(0, 0): XReal(1, c00 - sc.total_mass)}

    def acc(terms):
        signs = [a.sign * b.sign for _, a, b in terms]
        logs = [lb + a.logmag + b.logmag for lb, a, b in terms]
        return xsum(signs, logs)[0]

    phi[0, 1] = acc([(0.0, phi[0, 0], psi[0, 1])])
    phi[0, 2] = acc([(0.0, phi[0, 1], psi[0, 1]), (0.0, phi[0, 0], psi[0, 2])])
    for ell in range(1, n):
        lb = log_binomial_row(ell - 1)
        phi[ell, 0] = acc([(lb[k], phi[k, 0], psi[ell - k, 0]) for k in range(ell)])
        lb = log_binomial_row(ell)
        phi[ell, 1] = acc([(lb[k], phi[k, 0], psi[ell - k, 1]) for k in range(ell + 1)])
        phi[ell, 2] = acc(
            [(lb[k], phi[k, 1], psi[ell - k, 1]) for k in range(ell + 1)]
            + [(lb[k], phi[k, 0], psi[ell - k, 2]) for k in range(ell + 1)]
        )

    den = phi[m, 0]
    if den.is_zero:
        raise NullConditioningError(f"P(M(t) = {m}) = 0; the conditioning event is null")

    mean = xf_ratio(xf_add(phi[m + 1, 0], -phi[m, 1]), den)
    two_mixed = xf_mul(XReal(1, math.log(2.0)), phi[m + 1, 1])
    num2 = xf_add(xf_add(phi[m + 2, 0], -two_mixed), phi[m, 2])
    variance = xf_ratio(num2, den) + mean - mean * mean
    return mean, variance
