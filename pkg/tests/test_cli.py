import json
import math
import os

import numpy as np
import pytest

from persched.artifact import ModelArtifact, load_model, save_model
from persched.cli import run
from persched.likelihood import PriorConfig
from persched.mcmc import PosteriorSamples
from persched.params import default_model_spec
from persched.types import Theta, WeibullHazard

CSV_HEADER = "patient_id,age,time_years,psa_ng_ml,biopsy_time_years,upgraded\n"


def exp_artifact_file(tmp_path, rate=0.5):
    """Single-draw artifact with constant hazard and no PSA association."""
    spec = default_model_spec()
    theta = Theta(
        beta=np.zeros(7), gamma=np.zeros(2), alpha=np.zeros(2), sigma2=0.09,
        D=np.eye(3), baseline=WeibullHazard(1.0, 1.0 / rate),
    )
    samples = PosteriorSamples.from_thetas(spec, PriorConfig(), [theta])
    path = tmp_path / "exp_model.json"
    path.write_bytes(save_model(ModelArtifact(samples=samples, provenance="exp test")))
    return str(path)


def patient_file(tmp_path, t_biopsy=2.0):
    rows = [
        "p1,70,0.0,5.0,,",
        "p1,70,0.5,5.2,,",
        "p1,70,1.0,5.1,,",
        f"p1,70,2.0,5.3,{t_biopsy},false",
    ]
    path = tmp_path / "patient.csv"
    path.write_text(CSV_HEADER + "\n".join(rows) + "\n")
    return str(path)


def test_schedule_annual(tmp_path, capsys):
    code = run([
        "schedule", "--patient", patient_file(tmp_path), "--policy", "annual",
    ])
    out = json.loads(capsys.readouterr().out)
    assert code == 0
    assert out["u"] == 3.0


def test_predict_exponential(tmp_path, capsys):
    model = exp_artifact_file(tmp_path, rate=0.5)
    code = run([
        "--seed", "1", "predict", "--model", model, "--patient", patient_file(tmp_path),
    ])
    out = json.loads(capsys.readouterr().out)
    assert code == 0
    # exponential: E = t + 1/rate
    assert out["expected"] == pytest.approx(2.0 + 2.0, rel=0.01)
    assert out["median"] == pytest.approx(2.0 + math.log(2) / 0.5, abs=2e-3)


def test_cli_api_parity(tmp_path, capsys):
    from fastapi.testclient import TestClient

    from persched.service import create_app

    model = exp_artifact_file(tmp_path)
    code = run([
        "--seed", "7", "--pairs", "200", "schedule", "--model", model,
        "--patient", patient_file(tmp_path), "--policy", "dyn_risk", "--kappa", "0.9",
    ])
    cli_out = json.loads(capsys.readouterr().out)
    assert code == 0

    artifact = load_model(open(model, "rb").read())
    app = create_app(artifact, seed=7, n_theta=1, per_theta=200)
    client = TestClient(app)
    client.post("/patients", json={"id": "p1", "age": 70})
    for t, v in [(0.0, 5.0), (0.5, 5.2), (1.0, 5.1), (2.0, 5.3)]:
        client.post("/patients/p1/psa", json={"time": t, "psa": v})
    client.post("/patients/p1/biopsies", json={"time": 2.0, "upgraded": False})
    api_out = client.get(
        "/patients/p1/proposal", params={"policy": "dyn_risk", "kappa": 0.9}
    ).json()
    assert api_out["u"] == cli_out["u"]
    assert api_out["diagnostics"]["expected"] == cli_out["diagnostics"]["expected"]
    assert api_out["diagnostics"]["median"] == cli_out["diagnostics"]["median"]


def test_kappa_command(tmp_path, capsys):
    path = tmp_path / "cohort.csv"
    path.write_text("pi,event\n0.1,1\n0.15,1\n0.8,0\n0.9,0\n")
    code = run(["kappa", "--cohort", str(path), "--objective", "f1"])
    out = json.loads(capsys.readouterr().out)
    assert code == 0
    assert out["objective_value"] == 1.0
    assert out["chosen_kappa"] == pytest.approx(0.79)


def test_evaluate_command(tmp_path, capsys):
    summary = {
        "n_datasets": 1,
        "quantile_probs": [0.1, 0.25, 0.5, 0.75, 0.9, 0.95],
        "overall": {
            "annual": {"policy": "annual", "n_patients": 5, "n_undetected": 0,
                        "mean_n": 5.24, "sd_n": 2.5, "mean_o_months": 6.01,
                        "sd_o_months": 3.4, "quantiles_n": [1] * 6,
                        "quantiles_o_months": [1] * 6},
            "exp": {"policy": "exp", "n_patients": 5, "n_undetected": 0,
                     "mean_n": 1.92, "sd_n": 1.2, "mean_o_months": 15.08,
                     "sd_o_months": 12.1, "quantiles_n": [1] * 6,
                     "quantiles_o_months": [1] * 6},
        },
        "by_subgroup": [],
    }
    path = tmp_path / "summary.json"
    path.write_text(json.dumps(summary))
    code = run([
        "evaluate", "--summary", str(path), "--weights", "mean_n=0.5,mean_o=0.5",
        "--objective", "mean_n", "--constraint", "mean_o<12",
    ])
    out = json.loads(capsys.readouterr().out)
    assert code == 0
    assert out["compound_loss"]["exp"] == pytest.approx(0.5 * 1.92 + 0.5 * 15.08)
    assert out["best_by_loss"] == "annual"  # 5.625 < 8.5
    assert out["constrained_choice"] == "annual"


def test_exit_codes(tmp_path, capsys):
    assert run(["no-such-command"]) == 1
    capsys.readouterr()
    # data error: missing patient in file
    path = tmp_path / "empty.csv"
    path.write_text(CSV_HEADER)
    assert run(["predict", "--patient", str(path)]) == 2
    capsys.readouterr()
    # numeric failure comes back as 3 (tail-dominated expectation)
    model = exp_artifact_file(tmp_path, rate=1e-4)
    code = run([
        "schedule", "--model", model, "--patient", patient_file(tmp_path),
        "--policy", "exp",
    ])
    assert code == 3


def test_csv_output_mode(tmp_path, capsys):
    code = run([
        "--output", "csv", "schedule", "--patient", patient_file(tmp_path),
        "--policy", "annual",
    ])
    out = capsys.readouterr().out
    assert code == 0
    assert out.splitlines()[0] == "key,value"
    assert any(line.startswith("u,3.0") for line in out.splitlines())
