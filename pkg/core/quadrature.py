"""
ClusterReserve - Quadrature
---------------------------
Integration against the center measure Lambda(dv) on [0, 1], and against
Lambda(dv) F_D(dr) over delay regions.

Purpose:
- Global adaptive Gauss-Legendre (order 15) with panel bisection
- Pre-splitting at every kink so each panel sees an analytic integrand
- A log-scaled variant for integrands whose magnitude leaves binary64 range
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass
from typing import Callable, Iterable, List, Tuple

import numpy as np
from scipy.optimize import brentq

from core.errors import ArgumentOrderError, ConvergenceError
from core.model import DelayDistribution, MeanValueFunction
from core.xnum import XReal

logger = logging.getLogger(__name__)


# ===============================
# Config
# ===============================

@dataclass(frozen=True)
class QuadratureConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-14
    max_depth: int = 40

    def violations(self, path: str = "quadrature") -> List[Tuple[str, str]]:
        out: List[Tuple[str, str]] = []
        if not (self.rel_tol > 0):
            out.append((f"{path}.rel_tol", "rel_tol > 0 required"))
        if not (self.abs_tol >= 0):
            out.append((f"{path}.abs_tol", "abs_tol >= 0 required"))
        if not (self.max_depth >= 1):
            out.append((f"{path}.max_depth", "max_depth >= 1 required"))
        return out


@dataclass(frozen=True)
class IntegralResult:
    value: float
    l1: float           # integral of |f|
    error: float
    panels: int

    @property
    def loss_digits(self) -> float:
        if self.value == 0.0:
            return 0.0 if self.l1 == 0.0 else math.inf
        return max(0.0, math.log10(self.l1 / abs(self.value)))


# ===============================
# Gauss-Legendre core
# ===============================

GL_ORDER = 15
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_ORDER)
INITIAL_PANELS = 4
MAX_PANELS = 200_000
CROSSING_PROBES = 257


def _gl(f: Callable, a: float, b: float) -> Tuple[float, float]:
    hw = 0.5 * (b - a)
    x = hw * _GL_X + 0.5 * (a + b)
    y = np.broadcast_to(np.asarray(f(x), dtype=float), x.shape)
    return hw * float(np.dot(_GL_W, y)), hw * float(np.dot(_GL_W, np.abs(y)))


def _panel(f: Callable, a: float, b: float, whole: float, depth: int):
    m = 0.5 * (a + b)
    lv, la = _gl(f, a, m)
    rv, ra = _gl(f, m, b)
    err = abs(whole - (lv + rv))
    return err, a, b, depth, lv, la, rv, ra


def _segments(lo: float, hi: float, breaks: Iterable[float]) -> List[float]:
    pts = {lo, hi}
    for x in breaks:
        if lo < x < hi:
            pts.add(float(x))
    return sorted(pts)


def adaptive_integrate(f: Callable, lo: float, hi: float, cfg: QuadratureConfig,
                       breaks: Iterable[float] = ()) -> IntegralResult:
    """
    Integral of a vectorized f over [lo, hi].

    Panels are refined globally, worst error first, until the summed error
    estimate is below max(abs_tol, rel_tol * integral of |f|).
    """
    if hi < lo:
        raise ArgumentOrderError(f"integration bounds reversed: lo={lo}, hi={hi}")
    if hi == lo:
        return IntegralResult(0.0, 0.0, 0.0, 0)

    heap: List[Tuple] = []
    counter = 0
    pts = _segments(lo, hi, breaks)

    for a, b in zip(pts, pts[1:]):
        edges = np.linspace(a, b, INITIAL_PANELS + 1)
        for pa, pb in zip(edges, edges[1:]):
            whole, _ = _gl(f, pa, pb)
            rec = _panel(f, float(pa), float(pb), whole, 0)
            heapq.heappush(heap, (-rec[0], counter, rec))
            counter += 1

    def totals():
        val = math.fsum(r[4] + r[6] for _, _, r in heap)
        l1 = math.fsum(r[5] + r[7] for _, _, r in heap)
        err = math.fsum(r[0] for _, _, r in heap)
        return val, l1, err

    value, l1, err = totals()
    while err > max(cfg.abs_tol, cfg.rel_tol * l1):
        _, _, worst = heapq.heappop(heap)
        w_err, a, b, depth, lv, la, rv, ra = worst

        if depth >= cfg.max_depth or len(heap) > MAX_PANELS:
            heapq.heappush(heap, (-w_err, counter, worst))
            value, l1, err = totals()
            raise ConvergenceError("adaptive quadrature did not converge", value, err)

        m = 0.5 * (a + b)
        children = (_panel(f, a, m, lv, depth + 1), _panel(f, m, b, rv, depth + 1))
        for rec in children:
            heapq.heappush(heap, (-rec[0], counter, rec))
            counter += 1

        # running totals; exact fsum every 64 splits keeps drift out
        if counter % 64 == 0:
            value, l1, err = totals()
        else:
            l1 += sum(c[5] + c[7] for c in children) - (la + ra)
            err = max(0.0, err + sum(c[0] for c in children) - w_err)

    value, l1, err = totals()
    return IntegralResult(value, l1, err, len(heap))


# ===============================
# Against Lambda(dv)
# ===============================

def _check_window(lo: float, hi: float):
    if not (0.0 <= lo <= hi <= 1.0):
        raise ArgumentOrderError(f"integration window must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")


def integrate_against_detail(g: Callable, lam: MeanValueFunction, lo: float, hi: float,
                             cfg: QuadratureConfig,
                             extra_breaks: Iterable[float] = ()) -> IntegralResult:
    _check_window(lo, hi)
    breaks = tuple(lam.kinks()) + tuple(extra_breaks)
    res = adaptive_integrate(lambda v: np.asarray(g(v)) * lam.density(v), lo, hi, cfg, breaks)
    logger.debug("integrate_against [%g, %g]: %d panels, error %.3g", lo, hi, res.panels, res.error)
    return res


def integrate_against(g: Callable, lam: MeanValueFunction, lo: float, hi: float,
                      cfg: QuadratureConfig,
                      extra_breaks: Iterable[float] = ()) -> float:
    """Integral of g(v) Lambda(dv) over [lo, hi]; g must accept numpy arrays."""
    return integrate_against_detail(g, lam, lo, hi, cfg, extra_breaks).value


def integrate_log_against(log_g: Callable, sign_g: Callable, lam: MeanValueFunction,
                          lo: float, hi: float, cfg: QuadratureConfig,
                          extra_breaks: Iterable[float] = ()) -> Tuple[XReal, float]:
    """
    Integral of sign_g(v) * exp(log_g(v)) Lambda(dv) as an XReal.

    The integrand is rescaled by its maximum on a probe grid before the
    adaptive pass. Returns (value, decimal digits lost to cancellation).
    """
    _check_window(lo, hi)
    if hi == lo:
        return XReal.zero(), 0.0

    breaks = tuple(lam.kinks()) + tuple(extra_breaks)
    probe = np.unique(np.concatenate([
        np.linspace(lo, hi, 1025),
        [b for b in breaks if lo <= b <= hi],
    ]))

    def log_f(v):
        with np.errstate(divide="ignore"):
            return np.asarray(log_g(v), dtype=float) + np.log(lam.density(v))

    lp = log_f(probe)
    lp = lp[np.isfinite(lp)]
    if lp.size == 0:
        return XReal.zero(), 0.0
    shift = float(np.max(lp))

    def f(v):
        lf = log_f(v)
        with np.errstate(over="ignore", invalid="ignore"):
            val = np.asarray(sign_g(v), dtype=float) * np.exp(lf - shift)
        return np.where(np.isfinite(lf), val, 0.0)

    res = adaptive_integrate(f, lo, hi, cfg, breaks)
    if res.value == 0.0:
        return XReal.zero(), (0.0 if res.l1 == 0.0 else math.inf)

    out = XReal(1 if res.value > 0 else -1, shift + math.log(abs(res.value)))
    loss = res.loss_digits
    if loss > 0:
        logger.debug("integrate_log_against: %.2f digits lost to cancellation", loss)
    return out, loss


# ===============================
# Delay regions
# ===============================

def _as_array(x, shape) -> np.ndarray:
    return np.broadcast_to(np.asarray(x, dtype=float), shape)


def _crossings(fn: Callable, levels: Iterable[float], lo: float, hi: float) -> List[float]:
    """v in (lo, hi) where fn(v) crosses one of the levels."""
    grid = np.linspace(lo, hi, CROSSING_PROBES)
    vals = _as_array(fn(grid), grid.shape)
    found: List[float] = []
    for c in levels:
        h = vals - c
        for i in range(len(grid) - 1):
            if h[i] == 0.0:
                found.append(float(grid[i]))
            elif h[i] * h[i + 1] < 0.0:
                found.append(brentq(lambda v: float(fn(v)) - c, grid[i], grid[i + 1], xtol=1e-14))
    return [x for x in found if lo < x < hi]


def integrate_delay_region(g: Callable, lam: MeanValueFunction, delay: DelayDistribution,
                           r_lo: Callable, r_hi: Callable, cfg: QuadratureConfig,
                           start_breaks: Iterable[float] = ()) -> float:
    """
    Integral over v in [0, 1] and r in (r_lo(v), r_hi(v)] of g(v, r) F_D(dr) Lambda(dv).

    start_breaks are values u = v + r where g has a kink.
    Deterministic delays are integrated by substitution r = d; continuous
    delays by an inner adaptive pass against the delay density.
    """
    start_breaks = tuple(start_breaks)

    if delay.is_none:
        return 0.0

    if delay.kind == "deterministic":
        d = delay.d
        cuts = _crossings(r_lo, [d], 0.0, 1.0) + _crossings(r_hi, [d], 0.0, 1.0)
        cuts += [u - d for u in start_breaks]

        def outer_det(v):
            v = np.asarray(v, dtype=float)
            inside = (_as_array(r_lo(v), v.shape) < d) & (d <= _as_array(r_hi(v), v.shape))
            val = _as_array(g(v, np.full_like(v, d)), v.shape)
            return np.where(inside, val, 0.0)

        return integrate_against(outer_det, lam, 0.0, 1.0, cfg, extra_breaks=cuts)

    sup_lo, sup_hi = delay.support()
    d_breaks = tuple(delay.breakpoints()) + (sup_hi,)
    cuts = _crossings(r_lo, d_breaks, 0.0, 1.0) + _crossings(r_hi, d_breaks, 0.0, 1.0)

    def inner(v: float) -> float:
        a = max(float(r_lo(v)), sup_lo)
        b = min(float(r_hi(v)), sup_hi)
        if b <= a:
            return 0.0
        inner_breaks = list(delay.breakpoints()) + [u - v for u in start_breaks]
        res = adaptive_integrate(lambda r: np.asarray(g(v, r)) * delay.pdf(r), a, b, cfg, inner_breaks)
        return res.value

    def outer_cont(vs):
        vs = np.asarray(vs, dtype=float)
        return np.array([inner(float(v)) for v in vs.ravel()]).reshape(vs.shape)

    return integrate_against(outer_cont, lam, 0.0, 1.0, cfg, extra_breaks=cuts)
