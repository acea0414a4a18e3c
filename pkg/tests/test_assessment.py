"""
End-to-end assessments with the mock planner against the fixture services.
"""
import json

import pytest

from agents.base import TargetServiceInfo
from agents.guard import INJECTION_PAYLOADS, inject
from core.errors import PreconditionError
from core.llm import MockPlanner
from knowledge.prompts import ATTRIBUTE_INFERENCE, CANDIDATE_ATTACKS
from pipeline.assessment_pipeline import INDEX_FILE, ServiceFile, run_assessment
from pipeline.bench_pipeline import BenchMatrix, BenchRun, run_bench
from reporting.report import SECTION_PARTS
from reporting.trace import TRACE_DIR, MERGED_TRACE, by_agent, load_run_trace
from conftest import PREDICT_ONLY, WITH_ATTRIBUTE, make_run_config, start_service

pytestmark = pytest.mark.slow


def controller_steps(output):
    return [r for r in by_agent(load_run_trace(output.run_dir))["controller"] if r["type"] == "step"]


def test_every_mock_run_completes(mock_runs):
    for name, outputs in mock_runs.items():
        for output in outputs:
            assert output.complete, f"{name} {output.run_dir}"
            ends = [r for r in load_run_trace(output.run_dir) if r["type"] == "agent_end"]
            assert all(r["steps"] <= 50 for r in ends)


@pytest.mark.parametrize("name", PREDICT_ONLY)
def test_predict_only_services_get_three_attacks(mock_runs, name):
    for output in mock_runs[name]:
        assert output.confirmed == [a for a in CANDIDATE_ATTACKS if a != ATTRIBUTE_INFERENCE]


@pytest.mark.parametrize("name", WITH_ATTRIBUTE)
def test_embedding_services_get_every_attack(mock_runs, name):
    for output in mock_runs[name]:
        assert output.confirmed == CANDIDATE_ATTACKS
        assert [s.attack.value for s in output.sections] == CANDIDATE_ATTACKS


def test_reports_have_every_part(mock_runs):
    output = mock_runs["synth-faces"][0]
    report = output.paths["report"].read_text(encoding="utf-8")
    for part in SECTION_PARTS:
        assert report.count(f"### {part}") == len(CANDIDATE_ATTACKS)
    results = json.loads(output.paths["results"].read_text(encoding="utf-8"))
    assert results["complete"]
    assert set(results["attacks"]) == set(CANDIDATE_ATTACKS)
    assert all(a["risk"] in ("low", "medium", "high") for a in results["attacks"].values())
    assert "Planner cost:" in report


def test_mock_runs_are_clean(mock_runs):
    for outputs in mock_runs.values():
        for output in outputs:
            assert output.findings.clean, output.findings.flags()


def test_agents_see_exactly_their_previous_three_steps(mock_runs):
    for output in mock_runs["synth-ages"]:
        for agent, records in by_agent(load_run_trace(output.run_dir)).items():
            steps = [r for r in records if r["type"] == "step"]
            for i, step in enumerate(steps):
                expected = [s["step"] for s in steps[max(0, i - 3):i]]
                assert step["context_steps"] == expected, (agent, step["step"])


def test_same_seed_gives_identical_traces(assess):
    first = assess("synth-objects", run_id="objects-a", seed=3)
    second = assess("synth-objects", run_id="objects-b", seed=3)
    a = (first.run_dir / TRACE_DIR / MERGED_TRACE).read_bytes()
    b = (second.run_dir / TRACE_DIR / MERGED_TRACE).read_bytes()
    assert a == b
    assert first.cost == second.cost


def test_run_ids_are_not_reused(assess):
    assess("synth-objects", run_id="objects-once", candidate_attacks=["model_stealing"])
    with pytest.raises(PreconditionError):
        assess("synth-objects", run_id="objects-once")


@pytest.mark.parametrize("family", sorted(INJECTION_PAYLOADS))
def test_injected_descriptions_do_not_change_the_assessment(assess, mock_runs, world, family):
    description = world.services["synth-ages"].description["task_description"]
    output = assess("synth-ages", run_id=f"ages-{family}",
                    info_overrides={"task_description": inject(description, family)})
    clean = mock_runs["synth-ages"][0]
    assert output.complete
    assert output.confirmed == clean.confirmed
    assert controller_steps(output)[-1]["important_information"] == controller_steps(clean)[-1]["important_information"]
    trace = (output.run_dir / TRACE_DIR / MERGED_TRACE).read_text(encoding="utf-8")
    assert "Access granted" not in trace


def test_a_budget_is_split_and_never_exceeded(world, tmp_path):
    fixture = world.services["synth-faces"]
    handle = start_service(fixture, budget=3000)
    try:
        info = fixture.service_info(handle.predict_url, handle.embedding_url, 3000)
        output = run_assessment(info, world.env_dir, fixture.bundle_path, make_run_config(tmp_path),
                                planner=MockPlanner(), run_id="faces-budget")
        used = handle.ledger.used
    finally:
        handle.shutdown()
    assert used <= 3000
    assert output.complete
    for section in output.sections:
        assert section.result.query_count <= 3000 // len(output.confirmed)


def test_unreachable_service_gives_a_diagnostic_run(world, tmp_path):
    fixture = world.services["synth-objects"]
    info = fixture.service_info("http://127.0.0.1:9/predict")
    output = run_assessment(info, world.env_dir, fixture.bundle_path, make_run_config(tmp_path),
                            planner=MockPlanner(), run_id="objects-unreachable")
    assert not output.complete
    assert "unreachable" in output.error
    assert "No attack was performed" in output.paths["report"].read_text(encoding="utf-8")
    index = json.loads((tmp_path / INDEX_FILE).read_text(encoding="utf-8"))
    assert index["runs"]["objects-unreachable"]["complete"] is False


def test_service_file_round_trip(world, services, tmp_path):
    fixture = world.services["synth-ages"]
    handle = services["synth-ages"]
    path = ServiceFile(
        target=TargetServiceInfo.model_validate(fixture.service_info(handle.predict_url, handle.embedding_url)),
        env_dir=world.env_dir,
        bundle_path=fixture.bundle_path,
    ).dump(tmp_path / "service.json")
    loaded = ServiceFile.load(path)
    assert loaded.target.sensitive_attribute == "gender"
    assert loaded.target.num_classes == 5
    assert loaded.env_dir == world.env_dir


# ===== Bench =====

def test_an_empty_matrix_is_refused(world, tmp_path):
    with pytest.raises(PreconditionError):
        run_bench(BenchMatrix(world=str(world.root)), make_run_config(tmp_path))


def test_a_small_bench(world, tmp_path):
    matrix = BenchMatrix(world=str(world.root), runs=[
        BenchRun(service="synth-objects", seeds=[0]),
        BenchRun(service="synth-ages", seeds=[1], budget=3000),
    ])
    output = run_bench(matrix, make_run_config(tmp_path), planner=MockPlanner())
    assert len(output.rows) == 2
    assert output.completion == {"synth-objects": 1.0, "synth-ages": 1.0, "overall": 1.0}
    assert output.table_path.exists()
    ages = output.rows.set_index("service").loc["synth-ages"]
    assert ages["membership_inference_queries"] <= 750
    assert set(output.steps["attack"]) == set(CANDIDATE_ATTACKS)
