import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

import run
from cli.commands import cmd_figure, cmd_predict, study_scenarios
from config.config_loader import ConfigError, parse_config

SMOKE = Path(__file__).resolve().parents[1] / "config" / "smoke.yaml"

BASE = """
model:
  center: {kind: linear, a: 30}
  cluster:
    family: poisson
    mu: {kind: linear, a: 5}
t: 1
s: 1
"""


def _write(tmp_path, text, name="run.yaml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_predict_writes_one_row_per_m(tmp_path):
    cfg = _write(tmp_path, BASE + "m_range: [10, 20]\n")
    out = tmp_path / "pred.csv"
    assert run.main(["predict", "--config", cfg, "--output", str(out)]) == run.EXIT_OK
    frame = pd.read_csv(out, keep_default_na=False)
    assert list(frame.columns) == ["m", "mean", "variance", "log_pmf", "flags"]
    assert frame["m"].tolist() == list(range(10, 21))
    assert (frame["mean"] > 0).all()


def test_predict_output_is_deterministic(tmp_path):
    cfg = _write(tmp_path, BASE + "m: 12\n")
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run.main(["predict", "--config", cfg, "--output", str(a)])
    run.main(["predict", "--config", cfg, "--output", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_predict_json(tmp_path):
    cfg = _write(tmp_path, BASE + "m: 12\n")
    out = tmp_path / "pred.json"
    assert run.main(["predict", "--config", cfg, "--output", str(out), "--format", "json"]) == 0
    payload = json.loads(out.read_text())
    assert payload["command"] == "predict"
    assert payload["input"]["scenario"]["center"] == {"kind": "linear", "a": 30.0}
    assert payload["output"]["rows"][0]["m"] == 12


def test_degenerate_increment_predicts_zero():
    run_cfg = parse_config("""
model:
  center: {kind: linear, a: 10}
  cluster:
    family: poisson
    mu: {kind: capped_linear, a: 5, x0: 0.5}
t: 2
s: 1
m_range: [0, 6]
""")
    frame, _ = cmd_predict(run_cfg)
    assert (frame["mean"] == 0.0).all()
    assert frame["flags"].str.contains("degenerate_increment").all()


def test_delay_predict(tmp_path):
    text = BASE.replace("t: 1", "  delay: {kind: deterministic, d: 0}\nt: 1") + "ell: 30\n"
    cfg = _write(tmp_path, text, "delay.yaml")
    out = tmp_path / "delay.csv"
    assert run.main(["predict", "--config", cfg, "--output", str(out)]) == 0
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["ell", "mean", "variance", "unconditional_mse"]
    assert frame["mean"].iloc[0] == pytest.approx(150.0, rel=1e-10)


def test_delay_explanation_names_expected_and_unreported_claims(tmp_path):
    text = BASE.replace("t: 1", "  delay: {kind: deterministic, d: 0.5}\nt: 1") + "ell: 10\n"
    cfg = _write(tmp_path, text, "delay.yaml")
    out = tmp_path / "delay.json"
    assert run.main(["predict", "--config", cfg, "--output", str(out), "--format", "json"]) == 0
    explanation = json.loads(out.read_text())["explanation"]
    # Lambda(1) = 30; centers after 0.5 are unreported by t = 1, so 30 - 15
    assert "of 30 claims expected on [0, 1]" in explanation
    assert "15 are expected to be incurred but not reported" in explanation


def test_predict_requires_conditioning():
    with pytest.raises(ConfigError):
        cmd_predict(parse_config(BASE))


def test_config_error_exit_code(tmp_path):
    cfg = _write(tmp_path, BASE + "m: 1\nell: 2\n")
    assert run.main(["predict", "--config", cfg]) == run.EXIT_CONFIG


def test_m_with_delay_is_a_config_error(tmp_path):
    text = BASE.replace("t: 1", "  delay: {kind: exponential, rate: 1}\nt: 1") + "m: 3\n"
    cfg = _write(tmp_path, text)
    assert run.main(["predict", "--config", cfg]) == run.EXIT_CONFIG


def test_numerical_error_exit_code(tmp_path):
    cfg = _write(tmp_path, BASE + "m: 20000\n")
    assert run.main(["predict", "--config", cfg]) == run.EXIT_NUMERICAL


def test_figure_panels_and_manifest(tmp_path):
    cfg = _write(tmp_path, BASE + "m_range: [10, 14]\n")
    out_dir = tmp_path / "figure"
    assert run.main(["figure", "--config", cfg, "--output", str(out_dir)]) == 0

    manifest = json.loads((out_dir / "manifest.json").read_text())
    assert len(manifest["panels"]) == 6
    for panel in manifest["panels"]:
        frame = pd.read_csv(out_dir / panel["file"])
        assert list(frame.columns) == ["m", "mean", "reference"]
        assert len(frame) == panel["rows"] == 5
        assert (frame["mean"] > 0).all()
        if "mu_rational" in panel["name"]:
            assert len(panel["notes"]) == 1
            assert "running maximum" in panel["notes"][0]
            assert "stays at 2.5" in panel["notes"][0]
        else:
            assert panel["notes"] == []


def test_figure_rows_match_predict(tmp_path):
    run_cfg = parse_config(BASE + "m_range: [10, 14]\n")
    panels = {p.name: p for p in cmd_figure(run_cfg)}
    predicted, _ = cmd_predict(run_cfg)
    assert panels["lambda30_mu_linear"].frame["mean"].tolist() == predicted["mean"].tolist()
    # the heavier arrival rate pushes the whole curve up at matched m
    assert (panels["lambda60_mu_linear"].frame["mean"] > panels["lambda30_mu_linear"].frame["mean"]).all()


def test_study_scenarios_cover_all_panels():
    names = [name for name, _ in study_scenarios(parse_config(BASE))]
    assert names == [
        "lambda30_mu_linear", "lambda30_mu_rational", "lambda30_mu_power",
        "lambda60_mu_linear", "lambda60_mu_rational", "lambda60_mu_power",
    ]


def test_simulate_seed_override(tmp_path):
    cfg = _write(tmp_path, BASE + "mc: {replicates: 2000, seed: 1}\n")
    a, b, c = (tmp_path / f"{n}.csv" for n in "abc")
    assert run.main(["simulate", "--config", cfg, "--output", str(a), "--seed", "5"]) == 0
    run.main(["simulate", "--config", cfg, "--output", str(b), "--seed", "5", "--threads", "3"])
    run.main(["simulate", "--config", cfg, "--output", str(c)])
    assert a.read_bytes() == b.read_bytes()
    assert a.read_bytes() != c.read_bytes()
    assert pd.read_csv(a)["quantity"].tolist() == ["M_t", "M_incr", "N1"]


def test_validate_requires_mc(tmp_path):
    cfg = _write(tmp_path, BASE)
    assert run.main(["validate", "--config", cfg]) == run.EXIT_CONFIG


def test_validate_smoke_config_passes(tmp_path):
    out = tmp_path / "checks.csv"
    assert run.main(["validate", "--config", str(SMOKE), "--output", str(out)]) == run.EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["check", "passed", "analytic", "reference", "stderr", "z", "detail"]
    assert frame["passed"].all()
    z = frame["z"].dropna().to_numpy()
    assert z.size > 0
    assert np.all(np.abs(z) < 3.0)
