import json
import threading
import time
from types import SimpleNamespace

import pytest

from agents.base import (
    AgentState, AgentStatus, ImportantFact, Memory, PathView, TargetServiceInfo, parse_plan,
)
from agents.config import RunConfig
from agents.controller.agent import ControllerAgent, determine_attacks
from core.errors import MalformedPlanError, PreconditionError
from core.llm import FaultyPlanner, MockPlanner, PlannerBackend, PlannerReply, create_planner, extract_context
from core.llm.client import RemotePlanner
from env.fixtures import register_dataset
from env.synthetic import AttributeSpec, DatasetSpec
from knowledge.prompts import (
    ATTRIBUTE_INFERENCE, CANDIDATE_ATTACKS, DATA_RECONSTRUCTION, DETERMINE_ATTACKS, FINAL_ANSWER, LAUNCH_ATTACK_AGENT,
    MEMBERSHIP_INFERENCE, MODEL_STEALING, MONITOR_ATTACKS,
)
from reporting.trace import TRACE_DIR, load_observation_archive, read_trace


def reply(action, action_input=None, facts=None):
    return "```json\n" + json.dumps({
        "Reflection": "r", "Plan": "p", "Important Information": facts or {},
        "Action": action, "Action Input": action_input or {},
    }) + "\n```"


class ScriptedPlanner(PlannerBackend):
    """Replays a fixed list of replies and keeps every context it was shown"""

    tag = "scripted"

    def __init__(self, replies):
        self.replies = list(replies)
        self.contexts = []

    def complete(self, messages, temperature=0.0):
        self.contexts.append(extract_context(messages))
        return PlannerReply(self.replies.pop(0), 10, 5)


class StubAgent:
    def __init__(self, attack, allowance):
        self.status = AgentStatus(attack, attack)
        self.allowance = allowance
        self.section = None

    def run(self):
        self.status.advance(AgentState.RUNNING)
        self.status.count_step()
        self.status.advance(AgentState.COMPLETED)
        return self.status


@pytest.fixture
def env_dir(tmp_path):
    env = tmp_path / "env"
    register_dataset(DatasetSpec(
        name="faces", n_samples=60, n_features=8, n_classes=2,
        attributes=[AttributeSpec(name="gender", n_classes=2, correlation=0.5)],
    ), env)
    return env


def target(**overrides):
    values = dict(
        name="svc",
        task_description="Age estimation: predict the age group of a face as one of 5 classes.",
        predict_endpoint="http://127.0.0.1:5000/predict",
        query_budget=3000,
    )
    values.update(overrides)
    return TargetServiceInfo(**values)


def run_config(**overrides):
    return RunConfig(**{"clock": "logical", "poll_interval_s": 5, **overrides})


# ===== Plans =====

def test_parse_plan_reads_a_fenced_reply():
    plan = parse_plan(reply(LAUNCH_ATTACK_AGENT, {"attacks": ["model_stealing"]}, {"confirmed_attacks": "x"}), step=4)
    assert plan.action == LAUNCH_ATTACK_AGENT
    assert plan.action_input == {"attacks": ["model_stealing"]}
    assert plan.important_information == [ImportantFact(key="confirmed_attacks", value="x", step=4)]


def test_parse_plan_accepts_key_value_lists():
    text = json.dumps({"Reflection": "", "Plan": "", "Action": "List Files", "Action Input": {"directory": "env"},
                       "Important Information": [{"key": "k", "value": 3}]})
    assert parse_plan(text).facts() == {"k": "3"}


@pytest.mark.parametrize("text", [
    "I will list the files now.",
    "[1, 2]",
    json.dumps({"Reflection": "", "Plan": "", "Action": "List Files"}),
    json.dumps({"Reflection": "", "Plan": "", "Important Information": {}, "Action": "x", "Action Input": "env"}),
])
def test_malformed_replies(text):
    with pytest.raises(MalformedPlanError):
        parse_plan(text)


# ===== Memory and status =====

def test_memory_keeps_the_last_three_steps_and_every_fact():
    memory = Memory("instruction")
    for step in range(1, 6):
        memory.record(step, "List Files", {}, f"observation {step}")
        memory.remember([ImportantFact(key=f"k{step % 2}", value=str(step), step=step)])
    assert [e["step"] for e in memory.recent()] == [3, 4, 5]
    assert memory.important_information() == {"k1": "5", "k0": "4"}
    assert memory.instruction == "instruction"


def test_status_only_moves_forward():
    status = AgentStatus("a")
    status.advance(AgentState.RUNNING)
    status.advance(AgentState.RUNNING)
    with pytest.raises(PreconditionError):
        status.advance(AgentState.PENDING)
    status.advance(AgentState.COMPLETED)
    with pytest.raises(PreconditionError):
        status.advance(AgentState.FAILED)
    assert status.terminal


def test_path_view_round_trip(tmp_path):
    view = PathView(tmp_path / "env", tmp_path / "ws")
    shown = view.display(tmp_path / "env" / "data" / "x.npz")
    assert shown == "env/data/x.npz"
    assert view.resolve(shown) == (tmp_path / "env" / "data" / "x.npz").resolve()
    assert view.resolve("workspace") == (tmp_path / "ws").resolve()
    assert view.scrub(f"saved to {(tmp_path / 'ws').resolve()}/a") == "saved to workspace/a"


@pytest.mark.parametrize("shown", ["/etc/passwd", "env/../../x", "targets/evaluation.npz"])
def test_path_view_refuses_outside_paths(tmp_path, shown):
    with pytest.raises(PreconditionError):
        PathView(tmp_path / "env", tmp_path / "ws").resolve(shown)


# ===== Attack selection =====

def test_predict_only_services_skip_attribute_inference(env_dir):
    confirmed, excluded = determine_attacks(CANDIDATE_ATTACKS, target(), env_dir)
    assert confirmed == [MEMBERSHIP_INFERENCE, MODEL_STEALING, "data_reconstruction"]
    assert "embedding" in excluded[ATTRIBUTE_INFERENCE]


def test_embedding_services_with_a_known_attribute_get_every_attack(env_dir):
    info = target(embedding_endpoint="http://127.0.0.1:5000/embedding", sensitive_attribute="gender")
    confirmed, excluded = determine_attacks(CANDIDATE_ATTACKS, info, env_dir)
    assert confirmed == CANDIDATE_ATTACKS
    assert excluded == {}


def test_attribute_needs_registry_support(env_dir):
    info = target(embedding_endpoint="http://127.0.0.1:5000/embedding", sensitive_attribute="ethnicity")
    confirmed, excluded = determine_attacks([ATTRIBUTE_INFERENCE, "property_inference"], info, env_dir)
    assert confirmed == []
    assert set(excluded) == {ATTRIBUTE_INFERENCE, "property_inference"}


def test_no_candidates(env_dir):
    with pytest.raises(PreconditionError):
        determine_attacks([], target(), env_dir)


# ===== Controller loop =====

def controller(tmp_path, env_dir, replies, **config):
    planner = ScriptedPlanner(replies)
    agent = ControllerAgent(planner, target(), StubAgent, tmp_path / "run", env_dir, run_config(**config))
    return agent, planner


def test_controller_refuses_to_finish_before_any_attack(tmp_path, env_dir):
    agent, planner = controller(tmp_path, env_dir, [
        reply(FINAL_ANSWER, {"summary": "nothing to do"}),
        reply(DETERMINE_ATTACKS, {"candidates": [MEMBERSHIP_INFERENCE, ATTRIBUTE_INFERENCE]}),
        reply(LAUNCH_ATTACK_AGENT, {"attacks": [MEMBERSHIP_INFERENCE]}),
        reply(MONITOR_ATTACKS),
        reply(FINAL_ANSWER, {"summary": "done"}),
    ])
    status = agent.run()
    assert status.state == AgentState.COMPLETED
    assert agent.confirmed == [MEMBERSHIP_INFERENCE]
    assert agent.is_complete()
    assert agent.agents[MEMBERSHIP_INFERENCE].allowance == 3000

    records = read_trace(tmp_path / "run" / TRACE_DIR / "controller.jsonl")
    steps = [r for r in records if r["type"] == "step"]
    assert [s["error_kind"] for s in steps] == ["bad_plan", None, None, None, None]
    assert steps[3]["observation"].startswith("all terminal: yes")
    run_end = next(r for r in records if r["type"] == "run_end")
    assert run_end["complete"] and run_end["confirmed"] == [MEMBERSHIP_INFERENCE]
    assert records[-1]["type"] == "agent_end" and records[-1]["status"] == "completed"


def test_steps_point_at_their_archived_observation(tmp_path, env_dir):
    agent, _ = controller(tmp_path, env_dir, [reply(MONITOR_ATTACKS)] * 2, max_steps=2)
    agent.run()
    records = read_trace(tmp_path / "run" / TRACE_DIR / "controller.jsonl")
    archive = load_observation_archive(tmp_path / "run", records)
    steps = [r for r in records if r["type"] == "step"]
    assert [s["observation_file"] for s in steps] == [
        "controller/observations/step-001.txt", "controller/observations/step-002.txt",
    ]
    for s in steps:
        assert archive[("controller", s["step"])].startswith("error: no attack agents have been launched")


def test_controller_context_carries_a_three_step_window(tmp_path, env_dir):
    agent, planner = controller(tmp_path, env_dir, [reply(MONITOR_ATTACKS)] * 5, max_steps=5)
    agent.run()
    windows = [[e["step"] for e in ctx["recent"]] for ctx in planner.contexts]
    assert windows == [[], [1], [1, 2], [1, 2, 3], [2, 3, 4]]
    records = read_trace(tmp_path / "run" / TRACE_DIR / "controller.jsonl")
    assert [r["context_steps"] for r in records if r["type"] == "step"] == windows
    assert records[-1]["status"] == "failed" and "step limit" in records[-1]["reason"]
    assert not agent.is_complete()


def test_unknown_actions_and_unsupported_inputs_are_contained(tmp_path, env_dir):
    agent, _ = controller(tmp_path, env_dir, [
        reply("Change Directory", {"directory": "env"}),
        reply(LAUNCH_ATTACK_AGENT, {"attacks": ["gradient_inversion"]}),
    ], max_steps=2)
    agent.run()
    steps = [r for r in read_trace(tmp_path / "run" / TRACE_DIR / "controller.jsonl") if r["type"] == "step"]
    assert [s["error_kind"] for s in steps] == ["hallucination_type1", "hallucination_type2"]
    assert "unknown action: Change Directory" in steps[0]["observation"]


def test_malformed_replies_are_retried_then_recorded(tmp_path, env_dir):
    agent, planner = controller(tmp_path, env_dir, ["not json"] * 3 + [reply(MONITOR_ATTACKS)], max_steps=2)
    agent.run()
    steps = [r for r in read_trace(tmp_path / "run" / TRACE_DIR / "controller.jsonl") if r["type"] == "step"]
    assert steps[0]["error_kind"] == "instruction_violation"
    assert (steps[0]["input_tokens"], steps[0]["output_tokens"]) == (30, 15)
    assert len(planner.contexts) == 4


def test_launch_requires_confirmed_attacks(tmp_path, env_dir):
    agent, _ = controller(tmp_path, env_dir, [
        reply(DETERMINE_ATTACKS, {"candidates": [MODEL_STEALING]}),
        reply(LAUNCH_ATTACK_AGENT, {"attacks": [MEMBERSHIP_INFERENCE]}),
    ], max_steps=2)
    agent.run()
    steps = [r for r in read_trace(tmp_path / "run" / TRACE_DIR / "controller.jsonl") if r["type"] == "step"]
    assert steps[1]["error_kind"] == "bad_plan"
    assert "not confirmed" in steps[1]["observation"]
    assert agent.agents == {}


def test_allowance_splits_the_budget(tmp_path, env_dir):
    agent, _ = controller(tmp_path, env_dir, [])
    assert agent.allowance(3) == 1000
    assert agent.allowance(0) is None


def test_staggered_launches_never_hand_out_more_than_the_budget(tmp_path, env_dir):
    agent, _ = controller(tmp_path, env_dir, [])
    agent.determine({"candidates": [MEMBERSHIP_INFERENCE, MODEL_STEALING, DATA_RECONSTRUCTION]})
    agent.launch({"attacks": [MEMBERSHIP_INFERENCE]})
    observation = agent.launch({"attacks": [MODEL_STEALING, DATA_RECONSTRUCTION]}).observation
    agent._executor.shutdown(wait=True)
    allowances = [a.allowance for a in agent.agents.values()]
    assert allowances == [1000, 1000, 1000]
    assert sum(allowances) <= 3000
    assert "query allowance per agent: 1000" in observation


class BlockingAgent(StubAgent):
    """Stays RUNNING until the shared release event is set"""

    def __init__(self, attack, allowance, release):
        super().__init__(attack, allowance)
        self.release = release
        self.started = threading.Event()

    def run(self):
        self.status.advance(AgentState.RUNNING)
        self.started.set()
        self.release.wait(timeout=60)
        self.status.advance(AgentState.COMPLETED)
        return self.status


def blocking_controller(tmp_path, env_dir, release):
    factory = lambda attack, allowance: BlockingAgent(attack, allowance, release)
    return ControllerAgent(ScriptedPlanner([]), target(), factory, tmp_path / "run", env_dir,
                           run_config(poll_interval_s=30))


def test_monitor_returns_while_agents_are_still_running(tmp_path, env_dir):
    release = threading.Event()
    agent = blocking_controller(tmp_path, env_dir, release)
    agent.determine({"candidates": [MODEL_STEALING]})
    agent.launch({"attacks": [MODEL_STEALING]})
    try:
        assert agent.agents[MODEL_STEALING].started.wait(timeout=10)
        started = time.monotonic()
        observation = agent.monitor({}).observation
        assert time.monotonic() - started < 1
        assert observation.startswith("all terminal: no")
        assert f"- {MODEL_STEALING}: running" in observation
    finally:
        release.set()
        agent._executor.shutdown(wait=True)
    assert agent.monitor({}).observation.startswith("all terminal: yes")


def test_the_pause_between_steps_ends_when_agents_finish(tmp_path, env_dir):
    release = threading.Event()
    agent = blocking_controller(tmp_path, env_dir, release)
    agent.determine({"candidates": [MODEL_STEALING]})
    agent.launch({"attacks": [MODEL_STEALING]})
    timer = threading.Timer(0.2, release.set)
    timer.start()
    try:
        started = time.monotonic()
        agent.between_steps()
        assert time.monotonic() - started < 10
        assert agent.all_terminal()
    finally:
        release.set()
        timer.cancel()
        agent._executor.shutdown(wait=True)


# ===== Planner backends =====

def test_planner_factory():
    assert isinstance(create_planner("mock"), MockPlanner)
    faulty = create_planner("faulty:context_loss")
    assert isinstance(faulty, FaultyPlanner) and faulty.script == "context_loss"
    with pytest.raises(ValueError):
        create_planner("oracle")
    with pytest.raises(ValueError):
        FaultyPlanner("stage_fright")


def test_mock_planner_starts_by_determining_attacks(tmp_path, env_dir):
    agent, _ = controller(tmp_path, env_dir, [])
    context = agent.build_context()
    plan = parse_plan(MockPlanner().complete([
        {"role": "user", "content": "```json\n" + json.dumps(context) + "\n```"},
    ]).text)
    assert plan.action == DETERMINE_ATTACKS
    assert plan.action_input == {"candidates": CANDIDATE_ATTACKS}


def test_run_config_overrides():
    config = RunConfig.from_config(planner="faulty:repeat_loop", max_steps=10, seed=None)
    assert config.planner == "faulty:repeat_loop"
    assert config.max_steps == 10
    assert config.seed == 0


class FakeCompletions:
    def __init__(self, content, usage):
        self.content, self.usage, self.calls = content, usage, []

    def create(self, **kwargs):
        self.calls.append(kwargs)
        message = SimpleNamespace(content=self.content)
        return SimpleNamespace(choices=[SimpleNamespace(message=message)], usage=self.usage)


def test_remote_planner_reports_usage_and_logs(tmp_path):
    completions = FakeCompletions(reply(MONITOR_ATTACKS), SimpleNamespace(prompt_tokens=120, completion_tokens=30))
    planner = RemotePlanner(model="gpt-4o", client=SimpleNamespace(chat=SimpleNamespace(completions=completions)))
    planner.log_path = str(tmp_path / "logs" / "llm.log")
    out = planner.complete([{"role": "user", "content": "plan"}], temperature=0.2)
    assert (out.input_tokens, out.output_tokens) == (120, 30)
    assert parse_plan(out.text).action == MONITOR_ATTACKS
    assert completions.calls[0]["temperature"] == 0.2
    assert ">>> model <gpt-4o>" in (tmp_path / "logs" / "llm.log").read_text(encoding="utf-8")


def test_remote_planner_estimates_tokens_without_usage(tmp_path):
    completions = FakeCompletions("no usage here", None)
    planner = RemotePlanner(model="m", client=SimpleNamespace(chat=SimpleNamespace(completions=completions)))
    planner.log_path = str(tmp_path / "llm.log")
    out = planner.complete([{"role": "user", "content": "x" * 400}])
    assert out.input_tokens > 0 and out.output_tokens > 0
