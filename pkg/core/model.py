"""
ClusterReserve - Model
----------------------
Mean value functions, cluster families, reporting delays and the Scenario
record.

Purpose:
- One immutable description of a cluster process: centers arrive on [0, 1]
  with mean value function Lambda, each center starts a Poisson or negative
  binomial payment process with mean value function mu
- Closed-form evaluation, densities and inverses for quadrature and sampling
- Unconditional moments of M(t)

This file MUST NOT contain recursion tables.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from core.errors import ArgumentOrderError, ScenarioValidationError


# ===============================
# Constants
# ===============================

MVF_KINDS = ("linear", "rational", "power", "capped_linear", "tabulated")
CLUSTER_FAMILIES = ("poisson", "negbinomial")
DELAY_KINDS = ("none", "deterministic", "exponential", "uniform")

EXP_TAIL = -math.log(1e-16)   # survival quantile used to truncate exponential delays
INVERSE_ITERS = 80


# ===============================
# Mean value function
# ===============================

@dataclass(frozen=True)
class MeanValueFunction:
    """
    x -> mu(x), continuous, nondecreasing, zero on x <= 0.

    rational is the running maximum of a*x/(1+x^2): it follows the printed
    curve up to its peak at x = 1 and stays at a/2 afterwards.
    tabulated interpolates linearly between knots and is flat after the last.
    """

    kind: str
    a: float = 0.0
    p: float = 1.0
    x0: float = 1.0
    knots: Tuple[Tuple[float, float], ...] = ()

    # ---------- factories ----------

    @classmethod
    def linear(cls, a: float) -> "MeanValueFunction":
        return cls("linear", a=float(a))

    @classmethod
    def rational(cls, a: float) -> "MeanValueFunction":
        return cls("rational", a=float(a))

    @classmethod
    def power(cls, a: float, p: float) -> "MeanValueFunction":
        return cls("power", a=float(a), p=float(p))

    @classmethod
    def capped_linear(cls, a: float, x0: float) -> "MeanValueFunction":
        return cls("capped_linear", a=float(a), x0=float(x0))

    @classmethod
    def tabulated(cls, knots) -> "MeanValueFunction":
        return cls("tabulated", knots=tuple((float(x), float(y)) for x, y in knots))

    # ---------- evaluation ----------

    def __call__(self, x):
        xa = np.asarray(x, dtype=float)
        out = self._eval(np.maximum(xa, 0.0))
        out = np.where(xa <= 0.0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def _eval(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "linear":
            return self.a * x
        if self.kind == "rational":
            xc = np.minimum(x, 1.0)
            return self.a * xc / (1.0 + xc * xc)
        if self.kind == "power":
            return self.a * np.power(x, self.p)
        if self.kind == "capped_linear":
            return self.a * np.minimum(x, self.x0)
        if self.kind == "tabulated":
            xs, ys = self._knot_arrays()
            return np.interp(x, xs, ys, right=ys[-1])
        raise ValueError(f"unknown mean value function kind: {self.kind}")

    def density(self, x):
        """Right-continuous derivative; zero on x <= 0."""
        xa = np.asarray(x, dtype=float)
        xp = np.maximum(xa, 0.0)

        if self.kind == "linear":
            out = np.full_like(xp, self.a)
        elif self.kind == "rational":
            out = np.where(xp < 1.0, self.a * (1.0 - xp * xp) / (1.0 + xp * xp) ** 2, 0.0)
        elif self.kind == "power":
            out = self.a * self.p * np.power(xp, self.p - 1.0)
        elif self.kind == "capped_linear":
            out = np.where(xp < self.x0, self.a, 0.0)
        elif self.kind == "tabulated":
            xs, ys = self._knot_arrays()
            slopes = np.diff(ys) / np.diff(xs)
            idx = np.searchsorted(xs, xp, side="right") - 1
            inside = idx < len(slopes)
            out = np.where(inside, slopes[np.clip(idx, 0, len(slopes) - 1)], 0.0)
        else:
            raise ValueError(f"unknown mean value function kind: {self.kind}")

        out = np.where(xa < 0.0, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def kinks(self) -> Tuple[float, ...]:
        """Abscissas > 0 where the density jumps."""
        if self.kind == "rational":
            return (1.0,)
        if self.kind == "capped_linear":
            return (self.x0,)
        if self.kind == "tabulated":
            return tuple(x for x, _ in self.knots[1:])
        return ()

    def inverse(self, y, hi: float = 1.0):
        """
        Smallest x in [0, hi] with mu(x) >= y, for y in [0, mu(hi)].

        Closed forms where they exist, vectorized bisection otherwise.
        """
        ya = np.asarray(y, dtype=float)

        if self.kind == "linear" and self.a > 0:
            out = ya / self.a
        elif self.kind == "power" and self.a > 0:
            out = np.power(np.maximum(ya, 0.0) / self.a, 1.0 / self.p)
        elif self.kind == "capped_linear" and self.a > 0:
            out = ya / self.a
        else:
            lo = np.zeros_like(ya)
            up = np.full_like(ya, float(hi))
            for _ in range(INVERSE_ITERS):
                mid = 0.5 * (lo + up)
                below = np.asarray(self(mid)) < ya
                lo = np.where(below, mid, lo)
                up = np.where(below, up, mid)
            out = up

        out = np.clip(out, 0.0, hi)
        return float(out) if out.ndim == 0 else out

    def _knot_arrays(self) -> Tuple[np.ndarray, np.ndarray]:
        xs = np.array([k[0] for k in self.knots], dtype=float)
        ys = np.array([k[1] for k in self.knots], dtype=float)
        return xs, ys

    # ---------- validation ----------

    def violations(self, path: str) -> List[Tuple[str, str]]:
        out: List[Tuple[str, str]] = []
        if self.kind not in MVF_KINDS:
            return [(f"{path}.kind", f"must be one of {', '.join(MVF_KINDS)}")]

        if self.kind != "tabulated":
            if not math.isfinite(self.a) or self.a < 0:
                out.append((f"{path}.a", "a >= 0 required"))
        if self.kind == "power" and (not math.isfinite(self.p) or self.p < 1):
            out.append((f"{path}.p", "p >= 1 required"))
        if self.kind == "capped_linear" and (not math.isfinite(self.x0) or self.x0 <= 0):
            out.append((f"{path}.x0", "x0 > 0 required"))

        if self.kind == "tabulated":
            if len(self.knots) < 2:
                out.append((f"{path}.knots", "at least two knots required"))
                return out
            xs = [k[0] for k in self.knots]
            ys = [k[1] for k in self.knots]
            if not all(math.isfinite(v) for v in xs + ys):
                out.append((f"{path}.knots", "knots must be finite"))
            if self.knots[0] != (0.0, 0.0):
                out.append((f"{path}.knots", "first knot must be (0, 0)"))
            if any(b <= a for a, b in zip(xs, xs[1:])):
                out.append((f"{path}.knots", "knot abscissas must be strictly increasing"))
            if any(b < a for a, b in zip(ys, ys[1:])):
                out.append((f"{path}.knots", "knot ordinates must be nondecreasing"))
        return out

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "tabulated":
            d["knots"] = [list(k) for k in self.knots]
            return d
        d["a"] = self.a
        if self.kind == "power":
            d["p"] = self.p
        if self.kind == "capped_linear":
            d["x0"] = self.x0
        return d


def mvf_eval(f: MeanValueFunction, x: float) -> float:
    return float(f(x))


def mvf_increment(f: MeanValueFunction, a: float, b: float) -> float:
    if a > b:
        raise ArgumentOrderError(f"increment requires a <= b, got a={a}, b={b}")
    return max(0.0, float(f(b)) - float(f(a)))


def shifted_kinks(f: MeanValueFunction, shifts) -> Tuple[float, ...]:
    """
    Break points in v of v -> f(shift - v): shift - k for every kink k of f
    and for the origin.
    """
    pts = set()
    for sh in shifts:
        pts.add(float(sh))
        for k in f.kinks():
            pts.add(float(sh) - k)
    return tuple(sorted(pts))


# ===============================
# Cluster families
# ===============================

@dataclass(frozen=True)
class ClusterModel:
    family: str
    mu: MeanValueFunction
    p: Optional[float] = None

    @classmethod
    def poisson(cls, mu: MeanValueFunction) -> "ClusterModel":
        return cls("poisson", mu)

    @classmethod
    def negbinomial(cls, mu: MeanValueFunction, p: float) -> "ClusterModel":
        return cls("negbinomial", mu, float(p))

    @property
    def q(self) -> float:
        return 0.0 if self.family == "poisson" else 1.0 - float(self.p)

    @property
    def mean_factor(self) -> float:
        """E[L(a, b]] / mu(a, b]."""
        return 1.0 if self.family == "poisson" else self.q / float(self.p)

    def moments_from_delta(self, delta):
        """First and second raw moments of an increment with mean-value mass delta."""
        d = np.asarray(delta, dtype=float)
        if self.family == "poisson":
            m1, m2 = d, d + d * d
        else:
            p, q = float(self.p), self.q
            m1 = d * q / p
            m2 = d * q / (p * p) + m1 * m1
        if m1.ndim == 0:
            return float(m1), float(m2)
        return m1, m2

    def violations(self, path: str) -> List[Tuple[str, str]]:
        out: List[Tuple[str, str]] = []
        if self.family not in CLUSTER_FAMILIES:
            return [(f"{path}.family", f"must be one of {', '.join(CLUSTER_FAMILIES)}")]
        out.extend(self.mu.violations(f"{path}.mu"))
        if self.family == "negbinomial":
            if self.p is None or not (0.0 < self.p < 1.0):
                out.append((f"{path}.p", "p in (0,1) required"))
        return out

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"family": self.family, "mu": self.mu.to_dict()}
        if self.family == "negbinomial":
            d["p"] = self.p
        return d


def cluster_increment_moments(c: ClusterModel, a: float, b: float) -> Tuple[float, float]:
    delta = mvf_increment(c.mu, a, b)
    return c.moments_from_delta(delta)


# ===============================
# Reporting delay
# ===============================

@dataclass(frozen=True)
class DelayDistribution:
    kind: str = "none"
    d: float = 0.0
    rate: float = 1.0
    lo: float = 0.0
    hi: float = 1.0

    @classmethod
    def none(cls) -> "DelayDistribution":
        return cls("none")

    @classmethod
    def deterministic(cls, d: float) -> "DelayDistribution":
        return cls("deterministic", d=float(d))

    @classmethod
    def exponential(cls, rate: float) -> "DelayDistribution":
        return cls("exponential", rate=float(rate))

    @classmethod
    def uniform(cls, lo: float, hi: float) -> "DelayDistribution":
        return cls("uniform", lo=float(lo), hi=float(hi))

    @property
    def is_none(self) -> bool:
        return self.kind == "none"

    @property
    def is_continuous(self) -> bool:
        return self.kind in ("exponential", "uniform")

    def cdf(self, r):
        ra = np.asarray(r, dtype=float)
        if self.kind in ("none", "deterministic"):
            d = 0.0 if self.kind == "none" else self.d
            out = np.where(ra >= d, 1.0, 0.0)
        elif self.kind == "exponential":
            out = np.where(ra >= 0.0, -np.expm1(-self.rate * np.maximum(ra, 0.0)), 0.0)
        elif self.kind == "uniform":
            out = np.clip((ra - self.lo) / (self.hi - self.lo), 0.0, 1.0)
        else:
            raise ValueError(f"unknown delay kind: {self.kind}")
        return float(out) if out.ndim == 0 else out

    def sf(self, r):
        ra = np.asarray(r, dtype=float)
        if self.kind == "exponential":
            out = np.where(ra >= 0.0, np.exp(-self.rate * np.maximum(ra, 0.0)), 1.0)
            return float(out) if out.ndim == 0 else out
        out = 1.0 - np.asarray(self.cdf(ra))
        return float(out) if out.ndim == 0 else out

    def pdf(self, r):
        ra = np.asarray(r, dtype=float)
        if self.kind == "exponential":
            out = np.where(ra >= 0.0, self.rate * np.exp(-self.rate * np.maximum(ra, 0.0)), 0.0)
        elif self.kind == "uniform":
            out = np.where((ra >= self.lo) & (ra < self.hi), 1.0 / (self.hi - self.lo), 0.0)
        else:
            raise ValueError(f"delay kind {self.kind} has no density")
        return float(out) if out.ndim == 0 else out

    def support(self) -> Tuple[float, float]:
        """Integration range for continuous kinds (exponential truncated)."""
        if self.kind == "exponential":
            return 0.0, EXP_TAIL / self.rate
        if self.kind == "uniform":
            return self.lo, self.hi
        if self.kind == "deterministic":
            return self.d, self.d
        return 0.0, 0.0

    def breakpoints(self) -> Tuple[float, ...]:
        if self.kind == "deterministic":
            return (self.d,)
        if self.kind == "uniform":
            return (self.lo, self.hi)
        if self.kind == "exponential":
            return (0.0,)
        return ()

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "none":
            return np.zeros(size)
        if self.kind == "deterministic":
            return np.full(size, self.d)
        if self.kind == "exponential":
            return rng.exponential(1.0 / self.rate, size=size)
        if self.kind == "uniform":
            return rng.uniform(self.lo, self.hi, size=size)
        raise ValueError(f"unknown delay kind: {self.kind}")

    def violations(self, path: str) -> List[Tuple[str, str]]:
        if self.kind not in DELAY_KINDS:
            return [(f"{path}.kind", f"must be one of {', '.join(DELAY_KINDS)}")]
        out: List[Tuple[str, str]] = []
        if self.kind == "deterministic" and not (math.isfinite(self.d) and self.d >= 0):
            out.append((f"{path}.d", "d >= 0 required"))
        if self.kind == "exponential" and not (math.isfinite(self.rate) and self.rate > 0):
            out.append((f"{path}.rate", "rate > 0 required"))
        if self.kind == "uniform":
            if not (math.isfinite(self.lo) and self.lo >= 0):
                out.append((f"{path}.lo", "lo >= 0 required"))
            if not (math.isfinite(self.hi) and self.hi > self.lo):
                out.append((f"{path}.hi", "hi > lo required"))
        return out

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"kind": self.kind}
        if self.kind == "deterministic":
            d["d"] = self.d
        elif self.kind == "exponential":
            d["rate"] = self.rate
        elif self.kind == "uniform":
            d["lo"], d["hi"] = self.lo, self.hi
        return d


# ===============================
# Scenario
# ===============================

@dataclass(frozen=True)
class Scenario:
    center: MeanValueFunction
    cluster: ClusterModel
    delay: DelayDistribution = field(default_factory=DelayDistribution.none)
    t: float = 1.0
    s: float = 1.0

    @property
    def total_mass(self) -> float:
        """Lambda(1)."""
        return float(self.center(1.0))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "center": self.center.to_dict(),
            "cluster": self.cluster.to_dict(),
            "delay": self.delay.to_dict(),
            "t": self.t,
            "s": self.s,
        }

    def fingerprint(self) -> str:
        serialized = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(serialized.encode()).hexdigest()


def validate_scenario(sc: Scenario, allow_empty_center: bool = False) -> Scenario:
    """
    Return sc if every invariant holds, otherwise raise
    ScenarioValidationError listing all violations.

    allow_empty_center admits Lambda == 0 (no claims at all).
    """
    violations: List[Tuple[str, str]] = []

    if not (math.isfinite(sc.t) and sc.t >= 1.0):
        violations.append(("t", "t >= 1 required"))
    if not (math.isfinite(sc.s) and sc.s > 0.0):
        violations.append(("s", "s > 0 required"))

    center_errors = sc.center.violations("model.center")
    violations.extend(center_errors)
    if not center_errors and not allow_empty_center and sc.total_mass <= 0.0:
        violations.append(("model.center", "Lambda(1) > 0 required"))

    violations.extend(sc.cluster.violations("model.cluster"))
    violations.extend(sc.delay.violations("model.delay"))

    if violations:
        raise ScenarioValidationError(violations)
    return sc


# ===============================
# Unconditional moments
# ===============================

@dataclass(frozen=True)
class UnconditionalMoments:
    mean_at_t0: float
    cov: float


def unconditional_moments(sc: Scenario, s0: float, t0: float, cfg=None) -> UnconditionalMoments:
    """
    E[M(t0)] and Cov(M(s0), M(t0)).

    With a reporting delay the cluster of a center at v starts at v + r, so
    the Lambda(dv) integrals become iterated Lambda(dv) F_D(dr) integrals.
    """
    from core.quadrature import QuadratureConfig, integrate_against, integrate_delay_region

    if not (1.0 <= s0 <= t0):
        raise ArgumentOrderError(f"unconditional moments require 1 <= s0 <= t0, got s0={s0}, t0={t0}")
    cfg = cfg or QuadratureConfig()

    mu = sc.cluster.mu
    c = sc.cluster

    def mean_start(start):
        m1, _ = c.moments_from_delta(mu(t0 - start))
        return m1

    def cov_start(start):
        a_s = mu(s0 - start)
        m1_s, m2_s = c.moments_from_delta(a_s)
        inc_t = np.maximum(np.asarray(mu(t0 - start)) - a_s, 0.0)
        m1_inc, _ = c.moments_from_delta(inc_t)
        return m2_s + m1_s * m1_inc

    if sc.total_mass <= 0.0:
        return UnconditionalMoments(0.0, 0.0)

    breaks = shifted_kinks(mu, (s0, t0))
    if sc.delay.is_none:
        mean = integrate_against(mean_start, sc.center, 0.0, 1.0, cfg, extra_breaks=breaks)
        cov = integrate_against(cov_start, sc.center, 0.0, 1.0, cfg, extra_breaks=breaks)
        return UnconditionalMoments(float(mean), float(cov))

    mean = integrate_delay_region(
        lambda v, r: mean_start(v + r), sc.center, sc.delay,
        lambda v: -1.0, lambda v: t0 - v, cfg, start_breaks=breaks,
    )
    cov = integrate_delay_region(
        lambda v, r: cov_start(v + r), sc.center, sc.delay,
        lambda v: -1.0, lambda v: s0 - v, cfg, start_breaks=breaks,
    )
    return UnconditionalMoments(float(mean), float(cov))

