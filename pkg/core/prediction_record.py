"""
ClusterReserve - Prediction Record
----------------------------------
Canonical, immutable representation of one conditional prediction.

Purpose:
- Standardize predictor output across the Poisson, negative binomial and
  delay engines
- Carry diagnostics (log-pmf of the conditioning event, precision flags)
- Deterministic hash for reproducibility checks

This file MUST NOT contain numerical logic.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, asdict
from typing import Any, Dict, Optional, Tuple


# ===============================
# Flags
# ===============================

FLAG_VARIANCE_CLAMPED = "variance_clamped"
FLAG_MEAN_CLAMPED = "mean_clamped"
FLAG_PRECISION = "precision_warning"
FLAG_TAIL = "tail_conditioning"
FLAG_DEGENERATE = "degenerate_increment"

NEGATIVE_TOL = -1e-9
TAIL_LOG_PMF = math.log(1e-300)


# ===============================
# Record Schema
# ===============================

@dataclass(frozen=True)
class PredictionResult:
    # Conditioning: M(t) = m, or reported count = ell for delay predictions
    conditioning: str      # "m" / "ell"
    value: int

    mean: float
    variance: float

    # Diagnostics
    log_pmf: Optional[float] = None
    flags: Tuple[str, ...] = ()

    # Integrity
    fingerprint: Optional[str] = None
    result_hash: Optional[str] = None


# ===============================
# Factory
# ===============================

def create_prediction_result(
    conditioning: str,
    value: int,
    mean: float,
    variance: float,
    log_pmf: Optional[float] = None,
    flags: Tuple[str, ...] = (),
    fingerprint: Optional[str] = None,
) -> PredictionResult:
    """
    Build a record, clamping tiny negative round-off in mean and variance.
    """
    flags = tuple(flags)

    if mean < 0.0:
        if mean < NEGATIVE_TOL:
            flags += (FLAG_MEAN_CLAMPED,)
        mean = 0.0
    if variance < 0.0:
        if variance < NEGATIVE_TOL * max(1.0, mean * mean):
            flags += (FLAG_VARIANCE_CLAMPED,)
        variance = 0.0

    if log_pmf is not None and log_pmf < TAIL_LOG_PMF:
        flags += (FLAG_TAIL,)

    record = PredictionResult(
        conditioning=conditioning,
        value=int(value),
        mean=float(mean),
        variance=float(variance),
        log_pmf=None if log_pmf is None else float(log_pmf),
        flags=tuple(sorted(set(flags))),
        fingerprint=fingerprint,
    )
    return attach_hash(record)


# ===============================
# Hashing (Integrity Layer)
# ===============================

def attach_hash(record: PredictionResult) -> PredictionResult:
    record_dict = asdict(record)
    record_dict["result_hash"] = None  # exclude hash from hash

    serialized = json.dumps(record_dict, sort_keys=True)
    result_hash = hashlib.sha256(serialized.encode()).hexdigest()

    return PredictionResult(**{**record_dict, "flags": tuple(record.flags), "result_hash": result_hash})


# ===============================
# Serialization
# ===============================

def to_dict(record: PredictionResult) -> Dict[str, Any]:
    d = asdict(record)
    d["flags"] = list(record.flags)
    return d


def to_json(record: PredictionResult) -> str:
    return json.dumps(to_dict(record), indent=2)
