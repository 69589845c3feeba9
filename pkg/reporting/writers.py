"""
ClusterReserve - Output Writers
-------------------------------
CSV and JSON emission for every command.

CSV dialect: comma separated, '.' decimal, 17 significant digits, header
row, LF line endings. JSON wraps the same rows with the run inputs and a
short explanation.
"""

from __future__ import annotations

import json
import os
import sys
from typing import Any, Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from core.delay_predictor import DelayComponents, unconditional_mse
from core.prediction_record import PredictionResult

FLOAT_FORMAT = "%.17g"


# ===============================
# Utilities
# ===============================

def _truncate(text: str, max_len: int = 1000) -> str:
    if text is None:
        return ""
    return text if len(text) <= max_len else text[: max_len - 3] + "..."


def _jsonable(x: Any) -> Any:
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x


# ===============================
# Row Builders
# ===============================

def prediction_frame(results: Iterable[PredictionResult]) -> pd.DataFrame:
    rows = [{
        "m": r.value,
        "mean": r.mean,
        "variance": r.variance,
        "log_pmf": r.log_pmf,
        "flags": ";".join(r.flags),
    } for r in results]
    return pd.DataFrame(rows, columns=["m", "mean", "variance", "log_pmf", "flags"])


def delay_frame(results: Iterable[PredictionResult], comp: DelayComponents) -> pd.DataFrame:
    mse = unconditional_mse(comp)
    rows = [{
        "ell": r.value,
        "mean": r.mean,
        "variance": r.variance,
        "unconditional_mse": mse,
    } for r in results]
    return pd.DataFrame(rows, columns=["ell", "mean", "variance", "unconditional_mse"])


def figure_frame(results: List[PredictionResult]) -> pd.DataFrame:
    """Columns m, mean and the straight reference line from the first to the last point."""
    m = np.array([r.value for r in results], dtype=float)
    mean = np.array([r.mean for r in results], dtype=float)
    if len(results) > 1:
        reference = mean[0] + (mean[-1] - mean[0]) * (m - m[0]) / (m[-1] - m[0])
    else:
        reference = mean.copy()
    return pd.DataFrame({"m": m.astype(int), "mean": mean, "reference": reference})


def validation_frame(checks) -> pd.DataFrame:
    rows = [{
        "check": c.name,
        "passed": c.passed,
        "analytic": c.analytic,
        "reference": c.reference,
        "stderr": c.stderr,
        "z": c.z,
        "detail": c.detail,
    } for c in checks]
    return pd.DataFrame(rows, columns=["check", "passed", "analytic", "reference", "stderr", "z", "detail"])


# ===============================
# Payload Builder
# ===============================

def build_payload(
    *,
    command: str,
    inputs: Dict[str, Any],
    frame: pd.DataFrame,
    explanation: str = "",
) -> Dict[str, Any]:
    """
    JSON payload: what was run, the rows produced and a one-paragraph summary.
    """
    rows = [
        {k: (None if isinstance(v, float) and not np.isfinite(v) else v) for k, v in rec.items()}
        for rec in frame.to_dict(orient="records")
    ]
    return _jsonable({
        "command": command,
        "input": inputs,
        "output": {"columns": list(frame.columns), "rows": rows},
        "explanation": _truncate(explanation),
    })


# ===============================
# Writers
# ===============================

def write_csv(frame: pd.DataFrame, path: Optional[str]) -> None:
    """Write to path, or to stdout when path is None or '-'."""
    if path in (None, "-"):
        frame.to_csv(sys.stdout, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_json(payload: Dict[str, Any], path: Optional[str]) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def emit(frame: pd.DataFrame, path: Optional[str], fmt: str, *, command: str,
         inputs: Dict[str, Any], explanation: str = "") -> None:
    if fmt == "json":
        write_json(build_payload(command=command, inputs=inputs, frame=frame, explanation=explanation), path)
    else:
        write_csv(frame, path)


def write_figure(panels, out_dir: str, fmt: str = "csv") -> str:
    """
    One file per panel plus manifest.json describing panels and their
    reference lines. Returns the manifest path.
    """
    os.makedirs(out_dir, exist_ok=True)
    ext = "json" if fmt == "json" else "csv"
    entries = []
    for panel in panels:
        filename = f"{panel.name}.{ext}"
        emit(panel.frame, os.path.join(out_dir, filename), fmt, command="figure",
             inputs={"scenario": panel.scenario.to_dict(), "fingerprint": panel.scenario.fingerprint()},
             explanation=f"Predictor curve for panel {panel.name} with its straight reference line.")
        first, last = panel.frame.iloc[0], panel.frame.iloc[-1]
        entries.append({
            "name": panel.name,
            "file": filename,
            "scenario": panel.scenario.to_dict(),
            "fingerprint": panel.scenario.fingerprint(),
            "rows": int(len(panel.frame)),
            "reference": {
                "from": {"m": int(first["m"]), "mean": float(first["mean"])},
                "to": {"m": int(last["m"]), "mean": float(last["mean"])},
            },
            "spot_checks": list(panel.spot_checks),
            "notes": list(panel.notes),
        })
    manifest = os.path.join(out_dir, "manifest.json")
    write_json(_jsonable({"command": "figure", "panels": entries}), manifest)
    return manifest
