"""
ClusterReserve - Extended-Range Numbers
---------------------------------------
Signed log-magnitude reals for recursion tables whose entries grow like m!.

XReal(sign, logmag) stands for sign * exp(logmag). sign == 0 is exact zero and
its logmag is ignored (stored as -inf).

Scalar ops (xf_*) serve the predictors' final assembly; the array helpers
(xsum, log_abs_falling_factorial) serve table construction.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass
from typing import Iterable, Tuple

import numpy as np
from scipy.special import gammaln

from core.errors import XRangeError


# ===============================
# Constants
# ===============================

LOG_FLOAT_MAX = math.log(sys.float_info.max)   # ~709.78
CANCEL_EPS = 1e-15
DIRECT_PRODUCT_MAX_J = 64
LN10 = math.log(10.0)


# ===============================
# Type
# ===============================

@dataclass(frozen=True)
class XReal:
    sign: int
    logmag: float

    @classmethod
    def zero(cls) -> "XReal":
        return cls(0, -math.inf)

    @property
    def is_zero(self) -> bool:
        return self.sign == 0

    def __neg__(self) -> "XReal":
        return XReal(-self.sign, self.logmag)

    def __float__(self) -> float:
        return xf_to_real(self)


# ===============================
# Conversions
# ===============================

def xf_from_real(x: float) -> XReal:
    x = float(x)
    if x == 0.0:
        return XReal.zero()
    if math.isnan(x) or math.isinf(x):
        raise XRangeError(f"cannot represent {x!r} as XReal")
    return XReal(1 if x > 0 else -1, math.log(abs(x)))


def xf_from_log(logmag: float, sign: int = 1) -> XReal:
    if sign == 0 or logmag == -math.inf:
        return XReal.zero()
    return XReal(int(sign), float(logmag))


def xf_to_real(x: XReal) -> float:
    if x.sign == 0:
        return 0.0
    if x.logmag > LOG_FLOAT_MAX:
        raise XRangeError(f"XReal with logmag={x.logmag:.6g} overflows binary64")
    return x.sign * math.exp(x.logmag)


# ===============================
# Arithmetic
# ===============================

def xf_mul(a: XReal, b: XReal) -> XReal:
    if a.sign == 0 or b.sign == 0:
        return XReal.zero()
    return XReal(a.sign * b.sign, a.logmag + b.logmag)


def xf_add(a: XReal, b: XReal) -> XReal:
    if a.sign == 0:
        return b
    if b.sign == 0:
        return a

    big, small = (a, b) if a.logmag >= b.logmag else (b, a)
    d = small.logmag - big.logmag  # <= 0

    if big.sign == small.sign:
        return XReal(big.sign, big.logmag + math.log1p(math.exp(d)))

    # opposite signs
    if -d <= CANCEL_EPS * max(1.0, abs(big.logmag)):
        return XReal.zero()
    return XReal(big.sign, big.logmag + math.log1p(-math.exp(d)))


def xf_ratio(a: XReal, b: XReal) -> float:
    """Plain real a / b."""
    if b.sign == 0:
        raise ZeroDivisionError("XReal ratio by zero")
    if a.sign == 0:
        return 0.0
    diff = a.logmag - b.logmag
    if diff > LOG_FLOAT_MAX:
        raise XRangeError(f"XReal ratio exp({diff:.6g}) overflows binary64")
    return a.sign * b.sign * math.exp(diff)


def xsum(signs: Iterable[float], logs: Iterable[float]) -> Tuple[XReal, float]:
    """
    Signed log-sum-exp accumulation.

    Returns (sum, loss) where loss is the number of decimal digits lost to
    cancellation: log10(max |term| / |sum|). Exact zero with nonzero terms
    reports loss = inf.
    """
    s = np.asarray(signs, dtype=float).ravel()
    lg = np.asarray(logs, dtype=float).ravel()
    live = (s != 0) & np.isfinite(lg)
    if not np.any(live):
        return XReal.zero(), 0.0

    s = s[live]
    lg = lg[live]
    top = float(np.max(lg))
    scaled = np.sign(s) * np.exp(lg - top)
    total = math.fsum(scaled.tolist())

    if total == 0.0 or abs(total) <= CANCEL_EPS * float(np.max(np.abs(scaled))):
        return XReal.zero(), math.inf

    out = XReal(1 if total > 0 else -1, top + math.log(abs(total)))
    loss = max(0.0, (top - out.logmag) / LN10)
    return out, loss


# ===============================
# Combinatorics
# ===============================

def log_binomial(n: int, k: int) -> float:
    if n < 0 or k < 0 or k > n:
        raise ValueError(f"log_binomial requires 0 <= k <= n, got n={n}, k={k}")
    return float(gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1))


def log_binomial_row(n: int) -> np.ndarray:
    """log C(n, k) for k = 0..n."""
    k = np.arange(n + 1)
    return gammaln(n + 1) - gammaln(k + 1) - gammaln(n - k + 1)


def log_abs_falling_factorial(x, j: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorized signed log of x(x-1)...(x-j+1).

    Returns (sign, log|ff|) arrays; exact zero factors give sign 0, log -inf.
    """
    x = np.asarray(x, dtype=float)
    if j < 0:
        raise ValueError("falling factorial order must be >= 0")

    if j <= DIRECT_PRODUCT_MAX_J:
        sign = np.ones_like(x)
        logs = np.zeros_like(x)
        with np.errstate(divide="ignore"):
            for i in range(j):
                d = x - i
                sign = sign * np.sign(d)
                logs = logs + np.log(np.abs(d))
        logs = np.where(sign == 0, -np.inf, logs)
        return sign, logs

    # log-gamma route
    is_zero = (x == np.floor(x)) & (x >= 0) & (x <= j - 1)
    n_neg = np.clip(j - np.maximum(np.floor(x) + 1, 0), 0, j)
    sign = np.where(n_neg % 2 == 0, 1.0, -1.0)
    with np.errstate(invalid="ignore", over="ignore"):
        logs = gammaln(x + 1) - gammaln(x + 1 - j)
    sign = np.where(is_zero, 0.0, sign)
    logs = np.where(is_zero, -np.inf, logs)
    return sign, logs


def falling_factorial(x: float, j: int) -> float:
    if j < 0:
        raise ValueError("falling factorial order must be >= 0")
    if j <= DIRECT_PRODUCT_MAX_J:
        return float(math.prod(x - i for i in range(j)))

    sign, logs = log_abs_falling_factorial(np.array([x]), j)
    return xf_to_real(xf_from_log(float(logs[0]), int(sign[0])))
