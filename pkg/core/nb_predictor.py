"""
ClusterReserve - Negative Binomial Cluster Predictor
----------------------------------------------------
Conditional mean and variance of M(t, t+s] given M(t) = m for clusters whose
increments are NB(mu(a, b], p).

Purpose:
- H_j^(l)(p) = int ff(mu(t+s-v), j) ff(mu(t-v), l) p^(mu(t-v) - l) Lambda(dv)
  (ff = falling factorial), the mixed derivatives of the exponent of the
  joint pgf G(z1, z2) = E[z1^R(t) z2^R(t+s)] at (p, 1)
- Leibniz recursions for G^(l,j)(p, 1)
- pmf, predictor and conditional variance assembled from signed sums

Falling factorials change sign, so every sum here is signed. Each table entry
carries a loss: log10 of its propagated error bound in units of binary64
epsilon. Quadrature inputs start at the loss their tolerance allows, and every
signed sum adds its own cancellation on top of the error its terms carry.
Entries with fewer than MIN_DIGITS digits left are flagged; the flag travels
downstream. Conditioning values above VALIDATED_M always carry the flag.

nb_compound_reference computes the same pmf and moments from a recursion of
nonnegative terms. It needs the per-cluster count distribution at every k, so
it is slower, but nothing in it cancels.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.special import gammaln, logsumexp

from core.errors import NullConditioningError, ScenarioValidationError, TableRangeError, XRangeError
from core.model import Scenario, shifted_kinks, validate_scenario
from core.prediction_record import (
    FLAG_DEGENERATE,
    FLAG_PRECISION,
    PredictionResult,
    create_prediction_result,
)
from core.quadrature import QuadratureConfig, integrate_against, integrate_log_against
from core.table_cache import get_or_build
from core.xnum import LN10, XReal, log_abs_falling_factorial, log_binomial_row, xf_from_real, xf_ratio, xsum

logger = logging.getLogger(__name__)

MAX_TABLE = 10_000
DOUBLE_DIGITS = -math.log10(np.finfo(float).eps)     # about 15.65
MIN_DIGITS = 4.0
LOSS_ALARM = DOUBLE_DIGITS - MIN_DIGITS
VALIDATED_M = 60


# ===============================
# Tables
# ===============================

@dataclass(frozen=True, eq=False)
class NBTables:
    m_max: int
    p: float
    h_sign: np.ndarray         # (3, m_max + 3), H[j][l]
    h_log: np.ndarray
    h_loss: np.ndarray
    g_sign: np.ndarray         # (m_max + 3, 3), G[l][j]
    g_log: np.ndarray
    g_loss: np.ndarray         # propagated error bound, digits below unit roundoff
    h00: float                 # int p^mu(t-v) Lambda(dv)
    total_mass: float
    delta_mass: float
    fingerprint: str

    @property
    def q(self) -> float:
        return 1.0 - self.p

    def g(self, ell: int, j: int) -> XReal:
        sign = int(self.g_sign[ell, j])
        return XReal.zero() if sign == 0 else XReal(sign, float(self.g_log[ell, j]))

    @property
    def flagged(self) -> bool:
        return bool(np.any(self.g_loss[: self.m_max + 1] > LOSS_ALARM))


def _require_nb(sc: Scenario):
    validate_scenario(sc, allow_empty_center=True)
    if sc.cluster.family != "negbinomial":
        raise ScenarioValidationError([("model.cluster.family", "negbinomial cluster required")])
    if not sc.delay.is_none:
        raise ScenarioValidationError([("model.delay", "conditioning on M(t) requires delay kind none")])


def _signed_sum(signs: Sequence[float], logs: Sequence[float], losses: Sequence[float]) -> Tuple[XReal, float]:
    """
    xsum plus the propagated loss: log10(sum |term_i| 10^loss_i / |sum|).

    A term with loss L is trusted to L digits below unit roundoff, so the
    bound grows with both the cancellation of this sum and the error the
    terms already carry.
    """
    value, own = xsum(signs, logs)
    s = np.asarray(signs, dtype=float).ravel()
    lg = np.asarray(logs, dtype=float).ravel()
    lo = np.asarray(losses, dtype=float).ravel()
    live = (s != 0) & np.isfinite(lg)
    if not np.any(live):
        return value, 0.0
    if value.is_zero or np.any(np.isinf(lo[live])):
        return value, math.inf
    err = float(logsumexp(lg[live] + np.maximum(lo[live], 0.0) * LN10))
    return value, max(own, (err - value.logmag) / LN10, 0.0)


def _term_loss(a, b):
    """Loss of a product whose factors carry losses a and b."""
    return np.logaddexp(np.asarray(a, dtype=float) * LN10, np.asarray(b, dtype=float) * LN10) / LN10


def _input_loss(cfg: QuadratureConfig) -> float:
    """Digits a quadrature result may already be off, relative to unit roundoff."""
    return max(0.0, DOUBLE_DIGITS + math.log10(cfg.rel_tol))


def build_nb_tables(sc: Scenario, m_max: int, cfg: QuadratureConfig) -> NBTables:
    _require_nb(sc)
    if m_max < 0 or m_max > MAX_TABLE:
        raise TableRangeError(f"m_max must be in [0, {MAX_TABLE}], got {m_max}")

    started = time.perf_counter()
    mu = sc.cluster.mu
    t, s = sc.t, sc.s
    p = float(sc.cluster.p)
    log_p = math.log(p)
    breaks = shifted_kinks(mu, (t, t + s))
    n = m_max + 3
    floor = _input_loss(cfg)

    def mu1(v):
        return np.asarray(mu(t - np.asarray(v)), dtype=float)

    def mu2(v):
        return np.asarray(mu(t + s - np.asarray(v)), dtype=float)

    # --- H_j^(l)(p) ---
    h_sign = np.zeros((3, n))
    h_log = np.full((3, n), -math.inf)
    h_loss = np.zeros((3, n))
    for j in range(3):
        for ell in range(n):
            def parts(v, j=j, ell=ell):
                x1 = mu1(v)
                s2, l2 = log_abs_falling_factorial(mu2(v), j)
                s1, l1 = log_abs_falling_factorial(x1, ell)
                return s1 * s2, l1 + l2 + (x1 - ell) * log_p

            val, loss = integrate_log_against(
                lambda v: parts(v)[1], lambda v: parts(v)[0],
                sc.center, 0.0, 1.0, cfg, breaks,
            )
            h_sign[j, ell] = val.sign
            h_log[j, ell] = val.logmag
            h_loss[j, ell] = 0.0 if val.is_zero else floor + loss

    h00 = integrate_against(lambda v: np.power(p, mu1(v)), sc.center, 0.0, 1.0, cfg, breaks)
    delta_mass = integrate_against(
        lambda v: np.maximum(mu2(v) - mu1(v), 0.0), sc.center, 0.0, 1.0, cfg, breaks,
    )
    total_mass = sc.total_mass

    # --- G^(l,j)(p, 1) ---
    g_sign = np.zeros((n, 3))
    g_log = np.full((n, 3), -math.inf)
    g_loss = np.zeros((n, 3))

    def put(ell, j, value: XReal, loss: float):
        g_sign[ell, j] = value.sign
        g_log[ell, j] = value.logmag
        g_loss[ell, j] = loss

    def terms(lbin, k, gj, ell, hj):
        """C(.,k) G[k][gj] H[hj][ell - k] as parallel arrays."""
        return (
            g_sign[k, gj] * h_sign[hj, ell - k],
            lbin + g_log[k, gj] + h_log[hj, ell - k],
            _term_loss(g_loss[k, gj], h_loss[hj, ell - k]),
        )

    # exp(h00 - Lambda(1)) inherits the absolute error of h00
    put(0, 0, XReal(1, h00 - total_mass), floor + max(0.0, math.log10(max(h00, 1.0))))
    k0 = np.arange(1)
    zero = np.zeros(1)
    put(0, 1, *_signed_sum(*terms(zero, k0, 0, 0, 1)))
    s_a, l_a, o_a = terms(zero, k0, 1, 0, 1)
    s_b, l_b, o_b = terms(zero, k0, 0, 0, 2)
    put(0, 2, *_signed_sum(np.concatenate([s_a, s_b]), np.concatenate([l_a, l_b]),
                           np.concatenate([o_a, o_b])))

    for ell in range(1, n):
        k = np.arange(ell)
        put(ell, 0, *_signed_sum(*terms(log_binomial_row(ell - 1), k, 0, ell, 0)))

        k = np.arange(ell + 1)
        lbin = log_binomial_row(ell)
        put(ell, 1, *_signed_sum(*terms(lbin, k, 0, ell, 1)))
        s_a, l_a, o_a = terms(lbin, k, 1, ell, 1)
        s_b, l_b, o_b = terms(lbin, k, 0, ell, 2)
        put(ell, 2, *_signed_sum(np.concatenate([s_a, s_b]), np.concatenate([l_a, l_b]),
                                 np.concatenate([o_a, o_b])))

    tab = NBTables(
        m_max=m_max, p=p,
        h_sign=h_sign, h_log=h_log, h_loss=h_loss,
        g_sign=g_sign, g_log=g_log, g_loss=g_loss,
        h00=float(h00), total_mass=total_mass, delta_mass=float(delta_mass),
        fingerprint=sc.fingerprint(),
    )
    logger.info("nb tables built: %s m_max=%d in %.2fs",
                tab.fingerprint[:12], m_max, time.perf_counter() - started)
    if tab.flagged:
        worst = int(np.argmax(np.max(g_loss[: m_max + 1], axis=1)))
        logger.warning("nb tables %s: fewer than %.0f reliable digits from row %d",
                       tab.fingerprint[:12], MIN_DIGITS, worst)
    return tab


def get_nb_tables(sc: Scenario, m_max: int, cfg: QuadratureConfig) -> NBTables:
    return get_or_build("negbinomial", sc.fingerprint(), cfg, m_max,
                        lambda: build_nb_tables(sc, m_max, cfg))


# ===============================
# Assembly
# ===============================

def _check_m(tab: NBTables, m: int):
    if m < 0 or m > tab.m_max:
        raise TableRangeError(f"m={m} outside table range [0, {tab.m_max}]")


def _combine(tab: NBTables, entries: List[Tuple[float, float, int, int]]) -> Tuple[XReal, float]:
    """
    Sum of coef * G[l][j] over entries (coef_real, extra_log, l, j).

    extra_log multiplies the coefficient by exp(extra_log).
    """
    signs, logs, losses = [], [], []
    for coef, extra_log, ell, j in entries:
        c = xf_from_real(coef)
        gv = tab.g(ell, j)
        if c.is_zero or gv.is_zero:
            continue
        signs.append(c.sign * gv.sign)
        logs.append(c.logmag + extra_log + gv.logmag)
        losses.append(float(tab.g_loss[ell, j]))
    if not signs:
        return XReal.zero(), 0.0
    return _signed_sum(signs, logs, losses)


def _weights(m: int, k: int) -> float:
    """log C(m, k) + log ff(m-1, k); ff(m-1, k) > 0 for k <= m-1."""
    return float(gammaln(m + 1) - gammaln(k + 1) - gammaln(m - k + 1)
                 + gammaln(m) - gammaln(m - k))


def _denominator(tab: NBTables, m: int) -> Tuple[XReal, float]:
    """d^m/dp^m (p^(m-1) G(p, 1)) for m >= 1, or G(p, 1) for m = 0."""
    if m == 0:
        return tab.g(0, 0), float(tab.g_loss[0, 0])
    log_p = math.log(tab.p)
    return _combine(tab, [
        (1.0, _weights(m, k) + (m - 1 - k) * log_p, m - k, 0) for k in range(m)
    ])


def _log_pmf_from(tab: NBTables, m: int, den: XReal) -> float:
    """log P(M(t) = m) clamped to [-inf, 0]; -inf when the sum is not positive."""
    if den.sign <= 0:
        return -math.inf
    if m == 0:
        out = den.logmag
    else:
        out = math.log(tab.p) + m * math.log(tab.q) - float(gammaln(m + 1)) + den.logmag
    return min(out, 0.0)


def nb_log_pmf(tab: NBTables, m: int) -> Tuple[float, float]:
    """(log P(M(t) = m), propagated loss in digits)."""
    _check_m(tab, m)
    den, loss = _denominator(tab, m)
    return _log_pmf_from(tab, m, den), loss


def nb_pmf(tab: NBTables, m: int) -> float:
    lp, _ = nb_log_pmf(tab, m)
    return 0.0 if lp == -math.inf else math.exp(lp)


def _moment_sums(tab: NBTables, m: int) -> Tuple[XReal, float, XReal, float]:
    """First and second moment numerators, both already divided by p, with their losses."""
    p, q = tab.p, tab.q
    log_p, log_q = math.log(p), math.log(q)

    if m == 0:
        first = _combine(tab, [
            (q / p, 0.0, 0, 1),
            (-q, 0.0, 1, 0),
        ])
        second = _combine(tab, [
            (q / (p * p), 0.0, 0, 1),
            (-q / p, 0.0, 1, 0),
            (q * q / (p * p), 0.0, 0, 2),
            (q * q / (p * p), 0.0, 0, 1),
            (-2.0 * q * q / p, 0.0, 1, 1),
            (q * q, 0.0, 2, 0),
            (q * q / p, 0.0, 1, 0),
        ])
        return first[0], first[1], second[0], second[1]

    first_terms, second_terms = [], []
    for k in range(m):
        r = m - k
        w = _weights(m, k)
        base1 = w + (r - 1) * log_p + log_q - log_p
        first_terms += [
            (-r, base1, r, 0),
            (-p, base1, r + 1, 0),
            (1.0, base1, r, 1),
        ]
        base2 = w + (r - 2) * log_p + log_q - log_p
        second_terms += [
            (r * (r * q - 1.0), base2, r, 0),
            (p * (2.0 * r * q - p), base2, r + 1, 0),
            (-(2.0 * r * q - 1.0 - q), base2, r, 1),
            (q * p * p, base2, r + 2, 0),
            (-2.0 * p * q, base2, r + 1, 1),
            (q, base2, r, 2),
        ]
    first, l1 = _combine(tab, first_terms)
    second, l2 = _combine(tab, second_terms)
    return first, l1, second, l2


def _unreliable(tab: NBTables, m: int, flags: Tuple[str, ...]) -> PredictionResult:
    """Cancellation left nothing usable: moments are NaN and the pmf is not reported."""
    return create_prediction_result(
        "m", m, math.nan, math.nan,
        log_pmf=None,
        flags=flags + (FLAG_PRECISION,),
        fingerprint=tab.fingerprint,
    )


def predict_nb(tab: NBTables, m: int) -> PredictionResult:
    _check_m(tab, m)
    den, den_loss = _denominator(tab, m)
    if den.is_zero and den_loss == 0.0:
        raise NullConditioningError(f"P(M(t) = {m}) = 0; the conditioning event is null")

    flags: Tuple[str, ...] = (FLAG_PRECISION,) if m > VALIDATED_M else ()
    if den.sign <= 0:
        logger.warning("nb m=%d: pmf sum lost its sign to cancellation (%.1f digits)", m, den_loss)
        return _unreliable(tab, m, flags)

    log_pmf = _log_pmf_from(tab, m, den)
    if den_loss > LOSS_ALARM or (log_pmf == 0.0 and m > 0):
        flags += (FLAG_PRECISION,)

    if tab.delta_mass == 0.0:
        return create_prediction_result(
            "m", m, 0.0, 0.0, log_pmf=log_pmf,
            flags=flags + (FLAG_DEGENERATE,), fingerprint=tab.fingerprint,
        )

    first, l1, second, l2 = _moment_sums(tab, m)
    try:
        mean = xf_ratio(first, den)
        raw2 = xf_ratio(second, den)
    except XRangeError:
        logger.warning("nb m=%d: moment ratio out of range", m)
        return _unreliable(tab, m, flags)
    variance = raw2 - mean * mean

    l_mean = max(l1, den_loss)
    if variance != 0.0 and math.isfinite(l_mean):
        # raw2 - mean^2 adds its own cancellation
        bound = abs(raw2) * 10.0 ** min(max(l2, den_loss), 300.0) + 2.0 * mean * mean * 10.0 ** min(l_mean, 300.0)
        l_var = math.log10(bound / abs(variance)) if bound > 0.0 else 0.0
    else:
        l_var = math.inf
    if max(l_mean, l_var) > LOSS_ALARM:
        flags += (FLAG_PRECISION,)

    return create_prediction_result(
        "m", m, mean, variance,
        log_pmf=log_pmf,
        flags=flags,
        fingerprint=tab.fingerprint,
    )


def predict_nb_curve(sc: Scenario, m_lo: int, m_hi: int,
                     cfg: QuadratureConfig) -> List[PredictionResult]:
    if not (0 <= m_lo <= m_hi):
        raise TableRangeError(f"invalid m range [{m_lo}, {m_hi}]")
    tab = get_nb_tables(sc, m_hi + 2, cfg)
    return [predict_nb(tab, m) for m in range(m_lo, m_hi + 1)]


# ===============================
# Positive-term reference
# ===============================

@dataclass(frozen=True, eq=False)
class CompoundReference:
    """
    pmf and conditional moments of the NB model from nonnegative sums only.

    M(t) is compound Poisson: Lambda(1) clusters on average, each contributing
    a count drawn from the Lambda-mixture of NB(mu(t - v), p). Its pmf follows
    the Panjer recursion for Poisson frequency, and by the Mecke formula
        E[M(t, t+s]   ; M(t) = m] = sum_k a_k P(M(t) = m - k)
        E[M(t, t+s]^2 ; M(t) = m] = sum_k (b_k + (a*a)_k) P(M(t) = m - k)
    with a_k, b_k the Lambda-integrals of the first and second increment
    moments on the event that the cluster has k payments by t.
    """
    m_max: int
    log_pmf: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    fingerprint: str


def _lse(x: np.ndarray) -> float:
    x = x[np.isfinite(x)]
    return float(logsumexp(x)) if x.size else -math.inf


def _logmag(x: XReal) -> float:
    return -math.inf if x.is_zero else x.logmag


def nb_compound_reference(sc: Scenario, m_max: int, cfg: QuadratureConfig) -> CompoundReference:
    _require_nb(sc)
    if m_max < 0 or m_max > MAX_TABLE:
        raise TableRangeError(f"m_max must be in [0, {MAX_TABLE}], got {m_max}")

    started = time.perf_counter()
    cluster = sc.cluster
    mu, t, s = cluster.mu, sc.t, sc.s
    log_p, log_q = math.log(float(cluster.p)), math.log(cluster.q)
    breaks = shifted_kinks(mu, (t, t + s))

    def log_count(v, k: int):
        """log P(cluster arriving at v has k payments by t)."""
        r = np.asarray(mu(t - np.asarray(v)), dtype=float)
        if k == 0:
            return r * log_p
        pos = r > 0.0
        safe = np.where(pos, r, 1.0)
        out = gammaln(safe + k) - gammaln(safe) - gammaln(k + 1) + safe * log_p + k * log_q
        return np.where(pos, out, -np.inf)

    def log_moments(v):
        v = np.asarray(v)
        delta = np.maximum(np.asarray(mu(t + s - v), dtype=float) - np.asarray(mu(t - v), dtype=float), 0.0)
        y1, y2 = cluster.moments_from_delta(delta)
        with np.errstate(divide="ignore"):
            return np.log(y1), np.log(y2)

    def integral(log_g) -> float:
        val, _ = integrate_log_against(log_g, lambda v: 1.0, sc.center, 0.0, 1.0, cfg, breaks)
        return _logmag(val)

    n = m_max + 1
    lw = np.empty(n)
    la = np.empty(n)
    lb = np.empty(n)
    for k in range(n):
        lw[k] = integral(lambda v, k=k: log_count(v, k))
        la[k] = integral(lambda v, k=k: log_count(v, k) + log_moments(v)[0])
        lb[k] = integral(lambda v, k=k: log_count(v, k) + log_moments(v)[1])

    lg = np.full(n, -math.inf)
    lg[0] = math.exp(lw[0]) - sc.total_mass
    for m in range(1, n):
        k = np.arange(1, m + 1)
        lg[m] = _lse(np.log(k) + lw[k] + lg[m - k]) - math.log(m)

    laa = np.array([_lse(la[: j + 1] + la[j::-1]) for j in range(n)])
    ln1 = np.array([_lse(la[: m + 1] + lg[m::-1]) for m in range(n)])
    ln2 = np.array([np.logaddexp(_lse(lb[: m + 1] + lg[m::-1]), _lse(laa[: m + 1] + lg[m::-1]))
                    for m in range(n)])

    with np.errstate(invalid="ignore", over="ignore"):
        mean = np.where(np.isfinite(lg), np.exp(ln1 - lg), math.nan)
        variance = np.where(np.isfinite(lg), np.exp(ln2 - lg) - mean * mean, math.nan)

    logger.info("nb compound reference: %s m_max=%d in %.2fs",
                sc.fingerprint()[:12], m_max, time.perf_counter() - started)
    return CompoundReference(m_max=m_max, log_pmf=lg, mean=mean, variance=variance,
                             fingerprint=sc.fingerprint())
