"""
ClusterReserve - Monte Carlo
----------------------------
Simulation of the cluster model and the two oracles used to check every
analytic predictor.

Purpose:
- Vectorized replicate blocks; block b draws from its own Philox stream
  keyed by (seed, b), so output does not depend on the thread count
- Binned oracle: empirical conditional moments over replicates with
  M(t) = m (or N_hat(t) = ell)
- Semi-analytic oracle: simulate arrival times only and weight each replicate
  by the exact conditional pmf of the conditioning event
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd
from scipy.special import gammaln, xlogy

from core.errors import InsufficientDataError, ScenarioValidationError, TailUnreliableError
from core.model import ClusterModel, MeanValueFunction, Scenario, mvf_increment, validate_scenario

logger = logging.getLogger(__name__)


# ===============================
# Constants
# ===============================

BLOCK_SIZE = 4096
MIN_BIN = 200
MIN_ESS = 100.0
MIN_SEMI_REPS = 10_000
SEED_LIMIT = 2 ** 64


# ===============================
# Types
# ===============================

@dataclass(frozen=True, eq=False)
class SimOutput:
    m_t: np.ndarray
    m_incr: np.ndarray
    n1: np.ndarray
    n_hat: Optional[np.ndarray]
    seed: int
    n_reps: int

    def to_frame(self) -> pd.DataFrame:
        cols = {
            "replicate": np.arange(self.n_reps),
            "M_t": self.m_t,
            "M_incr": self.m_incr,
            "N1": self.n1,
        }
        if self.n_hat is not None:
            cols["N_hat"] = self.n_hat
        return pd.DataFrame(cols)

    def summary(self) -> pd.DataFrame:
        """One row per simulated quantity: mean, variance, standard error of the mean."""
        frame = self.to_frame().drop(columns="replicate")
        out = pd.DataFrame({
            "quantity": frame.columns,
            "mean": frame.mean().to_numpy(),
            "variance": frame.var(ddof=1).to_numpy() if self.n_reps > 1 else np.zeros(frame.shape[1]),
        })
        out["stderr"] = np.sqrt(out["variance"] / self.n_reps)
        return out


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    stderr: float
    effective_sample_size: float


@dataclass(frozen=True)
class ConditionalEstimate:
    mean: OracleEstimate
    var: OracleEstimate


# ===============================
# Streams
# ===============================

def check_seed(seed: int) -> int:
    seed = int(seed)
    if not (0 <= seed < SEED_LIMIT):
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))


def _blocks(n_reps: int):
    n_blocks = (n_reps + BLOCK_SIZE - 1) // BLOCK_SIZE
    return [(b, min(BLOCK_SIZE, n_reps - b * BLOCK_SIZE)) for b in range(n_blocks)]


def _run_blocks(fn, n_reps: int, seed: int, threads: int):
    blocks = _blocks(n_reps)
    jobs = [(block_rng(seed, b), size) for b, size in blocks]
    if threads <= 1 or len(blocks) == 1:
        return [fn(rng, size) for rng, size in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda job: fn(*job), jobs))


# ===============================
# Samplers
# ===============================

def _arrivals(lam: MeanValueFunction, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """(per-replicate counts, arrival times) for size replicates, by inverse cdf."""
    total = float(lam(1.0))
    if total <= 0.0:
        return np.zeros(size, dtype=np.int64), np.zeros(0)
    counts = rng.poisson(total, size=size)
    u = rng.random(int(counts.sum())) * total
    return counts, np.asarray(lam.inverse(u, hi=1.0), dtype=float).reshape(-1)


def sample_center(lam: MeanValueFunction, rng: np.random.Generator) -> np.ndarray:
    """Arrival times in [0, 1] of one realisation of the center process."""
    _, times = _arrivals(lam, rng, 1)
    return times


def sample_cluster_increments(c: ClusterModel, delta, rng: np.random.Generator) -> np.ndarray:
    """Independent increments with mean-value masses delta (gamma-Poisson mixture for NB)."""
    d = np.maximum(np.asarray(delta, dtype=float), 0.0)
    if c.family == "poisson":
        return rng.poisson(d)
    rates = np.where(d > 0.0, rng.gamma(np.where(d > 0.0, d, 1.0), c.q / c.p), 0.0)
    return rng.poisson(rates)


def sample_cluster_increment(c: ClusterModel, a: float, b: float, rng: np.random.Generator) -> int:
    return int(sample_cluster_increments(c, mvf_increment(c.mu, a, b), rng))


# ===============================
# Simulation
# ===============================

def _simulate_block(sc: Scenario, rng: np.random.Generator, size: int):
    counts, v = _arrivals(sc.center, rng, size)
    rep = np.repeat(np.arange(size), counts)
    delays = sc.delay.sample(rng, v.size)
    start = v + delays

    mu = sc.cluster.mu
    upto_t = np.asarray(mu(sc.t - start), dtype=float).reshape(-1)
    upto_ts = np.asarray(mu(sc.t + sc.s - start), dtype=float).reshape(-1)

    l_t = sample_cluster_increments(sc.cluster, upto_t, rng)
    l_incr = sample_cluster_increments(sc.cluster, upto_ts - upto_t, rng)

    m_t = np.bincount(rep, weights=l_t, minlength=size).astype(np.int64)
    m_incr = np.bincount(rep, weights=l_incr, minlength=size).astype(np.int64)
    n_hat = None
    if not sc.delay.is_none:
        n_hat = np.bincount(rep, weights=(start <= sc.t), minlength=size).astype(np.int64)
    return m_t, m_incr, counts.astype(np.int64), n_hat


def simulate(sc: Scenario, n_reps: int, seed: int, threads: int = 1) -> SimOutput:
    validate_scenario(sc, allow_empty_center=True)
    seed = check_seed(seed)
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")

    started = time.perf_counter()
    parts = _run_blocks(lambda rng, size: _simulate_block(sc, rng, size), n_reps, seed, threads)

    out = SimOutput(
        m_t=np.concatenate([p[0] for p in parts]),
        m_incr=np.concatenate([p[1] for p in parts]),
        n1=np.concatenate([p[2] for p in parts]),
        n_hat=None if sc.delay.is_none else np.concatenate([p[3] for p in parts]),
        seed=seed,
        n_reps=n_reps,
    )
    logger.info("simulated %d replicates (%d blocks, %d threads) in %.2fs",
                n_reps, len(parts), threads, time.perf_counter() - started)
    return out


# ===============================
# Binned oracle
# ===============================

def binned_conditional_oracle(out: SimOutput, m: Optional[int] = None,
                              ell: Optional[int] = None) -> ConditionalEstimate:
    """Sample moments of M_incr over replicates with M(t) = m, or N_hat(t) = ell."""
    if (m is None) == (ell is None):
        raise ValueError("exactly one of m / ell must be given")
    if ell is not None and out.n_hat is None:
        raise ValueError("conditioning on N_hat requires a simulation with reporting delay")

    mask = (out.m_t == m) if m is not None else (out.n_hat == ell)
    x = out.m_incr[mask].astype(float)
    n = x.size
    if n < MIN_BIN:
        raise InsufficientDataError(f"only {n} replicates satisfy the condition (need {MIN_BIN})")

    mean = float(x.mean())
    dev = x - mean
    var = float(dev @ dev / (n - 1))
    m4 = float(np.mean(dev ** 4))
    return ConditionalEstimate(
        mean=OracleEstimate(mean, math.sqrt(var / n), float(n)),
        var=OracleEstimate(var, math.sqrt(max(m4 - var * var, 0.0) / n), float(n)),
    )


# ===============================
# Semi-analytic oracle
# ===============================

def _center_sums_block(sc: Scenario, rng: np.random.Generator, size: int):
    """Per replicate: R(t) = sum mu(t - V) and dR = sum (mu(t+s-V) - mu(t-V))."""
    counts, v = _arrivals(sc.center, rng, size)
    rep = np.repeat(np.arange(size), counts)
    mu = sc.cluster.mu
    now = np.asarray(mu(sc.t - v), dtype=float).reshape(-1)
    later = np.asarray(mu(sc.t + sc.s - v), dtype=float).reshape(-1)
    r_t = np.bincount(rep, weights=now, minlength=size)
    d_r = np.bincount(rep, weights=np.maximum(later - now, 0.0), minlength=size)
    return r_t, d_r


def center_sums(sc: Scenario, n_reps: int, seed: int, threads: int = 1) -> Tuple[np.ndarray, np.ndarray]:
    validate_scenario(sc, allow_empty_center=True)
    if not sc.delay.is_none:
        raise ScenarioValidationError([("model.delay", "the semi-analytic oracle requires delay kind none")])
    seed = check_seed(seed)
    if n_reps < MIN_SEMI_REPS:
        raise ValueError(f"the semi-analytic oracle needs at least {MIN_SEMI_REPS} replicates")
    parts = _run_blocks(lambda rng, size: _center_sums_block(sc, rng, size), n_reps, seed, threads)
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _log_weights(c: ClusterModel, r_t: np.ndarray, m: int) -> np.ndarray:
    """log P(M(t) = m | arrival times)."""
    if c.family == "poisson":
        return xlogy(m, r_t) - r_t - gammaln(m + 1)

    p, q = float(c.p), c.q
    out = np.full_like(r_t, 0.0 if m == 0 else -np.inf)
    pos = r_t > 0.0
    a = r_t[pos]
    out[pos] = (gammaln(a + m) - gammaln(a) - gammaln(m + 1)
                + a * math.log(p) + m * math.log(q))
    return out


def _ratio_estimate(sc: Scenario, r_t: np.ndarray, d_r: np.ndarray, m: int) -> ConditionalEstimate:
    logw = _log_weights(sc.cluster, r_t, m)
    finite = np.isfinite(logw)
    if not np.any(finite):
        raise TailUnreliableError(f"no replicate can produce M(t) = {m}")

    w = np.where(finite, np.exp(logw - np.max(logw[finite])), 0.0)
    sw = float(w.sum())
    ess = sw * sw / float(w @ w)
    if ess < MIN_ESS:
        raise TailUnreliableError(f"effective sample size {ess:.1f} < {MIN_ESS:.0f} at m={m}")

    y1, y2 = sc.cluster.moments_from_delta(d_r)
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    nw = w / sw

    r1 = float(nw @ y1)
    r2 = float(nw @ y2)
    var = r2 - r1 * r1

    infl_mean = nw * (y1 - r1)
    infl_var = nw * ((y2 - r2) - 2.0 * r1 * (y1 - r1))
    return ConditionalEstimate(
        mean=OracleEstimate(r1, math.sqrt(float(infl_mean @ infl_mean)), ess),
        var=OracleEstimate(var, math.sqrt(float(infl_var @ infl_var)), ess),
    )


def semi_analytic_oracle(sc: Scenario, m: int, n_reps: int, seed: int,
                         threads: int = 1) -> ConditionalEstimate:
    r_t, d_r = center_sums(sc, n_reps, seed, threads)
    return _ratio_estimate(sc, r_t, d_r, m)


def semi_analytic_oracle_curve(sc: Scenario, ms: Iterable[int], n_reps: int, seed: int,
                               threads: int = 1) -> Dict[int, ConditionalEstimate]:
    """Oracle estimates for several m from one set of simulated arrival times."""
    r_t, d_r = center_sums(sc, n_reps, seed, threads)
    return {int(m): _ratio_estimate(sc, r_t, d_r, int(m)) for m in ms}
