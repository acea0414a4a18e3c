"""
Shared fixtures: one desk-scale fixture world per session, its services
running in-process on ephemeral ports, and a helper that assesses one of them.
"""
from typing import Dict, Optional

import pytest

from agents.config import RunConfig
from core.llm import MockPlanner
from env.fixtures import FixtureService, build_fixture_world
from pipeline.assessment_pipeline import run_assessment
from server import ServiceHandle, serve
from service.target import ServiceConfig

PREDICT_ONLY = ["synth-objects", "synth-scenes"]
WITH_ATTRIBUTE = ["synth-faces", "synth-ages"]


def start_service(fixture: FixtureService, budget: Optional[int] = None) -> ServiceHandle:
    return serve(ServiceConfig(
        artifact_path=fixture.artifact_path,
        expose_embedding=fixture.expose_embedding,
        query_budget=budget,
        port=0,
    ))


def make_run_config(root, **overrides) -> RunConfig:
    values = dict(
        planner="mock",
        clock="logical",
        workspace_root=str(root),
        poll_interval_s=120,
        runtime_limit_s=1800,
    )
    values.update(overrides)
    return RunConfig(**values)


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    return build_fixture_world(tmp_path_factory.mktemp("world"), seed=0)


@pytest.fixture(scope="session")
def services(world) -> Dict[str, ServiceHandle]:
    handles = {name: start_service(f) for name, f in {**world.services, **world.controls}.items()}
    yield handles
    for handle in handles.values():
        handle.shutdown()


def assess_service(world, services, name, root, planner=None, run_id=None, seed=0,
                   candidate_attacks=None, info_overrides=None, **config):
    fixture = world.services.get(name) or world.controls[name]
    handle = services[name]
    info = {**fixture.service_info(handle.predict_url, handle.embedding_url), **(info_overrides or {})}
    return run_assessment(
        info, world.env_dir, fixture.bundle_path,
        make_run_config(root, seed=seed, **config),
        planner=planner or MockPlanner(),
        run_id=run_id or f"{name}-seed{seed}",
        candidate_attacks=candidate_attacks,
    )


@pytest.fixture
def assess(world, services, tmp_path):
    """assess(name, **kwargs) runs one assessment under this test's tmp directory"""
    def _assess(name, **kwargs):
        return assess_service(world, services, name, tmp_path / "runs", **kwargs)
    return _assess


@pytest.fixture(scope="session")
def mock_runs(world, services, tmp_path_factory):
    """Five mock-planner runs per fixture service, shared by the end-to-end checks"""
    root = tmp_path_factory.mktemp("mock-runs")
    return {
        name: [assess_service(world, services, name, root, seed=seed) for seed in range(5)]
        for name in PREDICT_ONLY + WITH_ATTRIBUTE
    }
