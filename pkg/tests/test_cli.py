import json
from pathlib import Path

import pytest

from agents.base import TargetServiceInfo
from main import EXIT_ERROR, EXIT_INCOMPLETE, EXIT_OK, main
from pipeline.assessment_pipeline import ServiceFile


def write_json(path, payload):
    path.write_text(json.dumps(payload), encoding="utf-8")
    return str(path)


def test_analyze_a_missing_directory(tmp_path, capsys):
    assert main(["analyze", str(tmp_path / "nowhere")]) == EXIT_ERROR
    assert "trace directory not found" in capsys.readouterr().err


def test_gen_data_refuses_a_duplicate(tmp_path, capsys):
    spec = write_json(tmp_path / "spec.json", {"name": "tiny", "n_samples": 40, "n_features": 4, "n_classes": 2})
    env = str(tmp_path / "env")
    assert main(["gen-data", spec, "--env", env]) == EXIT_OK
    assert "[GenData] tiny: 40 rows" in capsys.readouterr().out
    assert main(["gen-data", spec, "--env", env]) == EXIT_ERROR


def test_gen_data_rejects_an_inconsistent_spec(tmp_path):
    spec = write_json(tmp_path / "spec.json", {"name": "bad", "n_samples": 40, "n_features": 4, "n_classes": 2,
                                               "task_from_attributes": ["smiling"]})
    assert main(["gen-data", spec, "--env", str(tmp_path / "env")]) == EXIT_ERROR


def test_assess_an_unreachable_service_is_incomplete(tmp_path, capsys):
    service = ServiceFile(
        target=TargetServiceInfo(name="gone", task_description="Object recognition.",
                                 predict_endpoint="http://127.0.0.1:9/predict"),
        env_dir=tmp_path / "env",
        bundle_path=tmp_path / "evaluation.npz",
    ).dump(tmp_path / "service.json")
    code = main(["assess", str(service), "--workspace", str(tmp_path / "runs"), "--planner", "mock"])
    assert code == EXIT_INCOMPLETE
    out = capsys.readouterr().out
    assert "unreachable" in out
    assert (tmp_path / "runs" / "gone-seed0" / "report.md").exists()


@pytest.mark.slow
def test_assess_then_analyze(world, services, tmp_path, capsys):
    fixture = world.services["synth-objects"]
    handle = services["synth-objects"]
    service = ServiceFile(
        target=TargetServiceInfo.model_validate(fixture.service_info(handle.predict_url)),
        env_dir=world.env_dir,
        bundle_path=Path(fixture.bundle_path),
    ).dump(tmp_path / "service.json")
    runs = tmp_path / "runs"
    assert main(["assess", str(service), "--workspace", str(runs), "--planner", "mock",
                 "--seed", "2", "--run-id", "cli"]) == EXIT_OK
    assert "complete: True" in capsys.readouterr().out

    assert main(["analyze", str(runs)]) == EXIT_OK
    assert "cli: " in capsys.readouterr().out
    [line] = (runs / "findings.jsonl").read_text(encoding="utf-8").splitlines()
    assert json.loads(line)["complete"]
