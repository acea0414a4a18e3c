"""
Deterministic offline planner.

It reads only the JSON context block the agents append to every request, so
a decision depends on the instruction facts, the Important Information
carried in memory and the recent (plan, observation) window, never on hidden
state. Every action guideline is encoded as an explicit rule.
"""
import json
from itertools import combinations
from math import prod
from typing import Any, Dict, List, Optional

from core.llm.interface import PlannerBackend, PlannerReply
from core.llm.utils import estimate_tokens, extract_context, observation_fields
from knowledge.prompts import (
    ATTRIBUTE_INFERENCE, CHECK_REQUIRED_PARAMETERS, CHOOSE_ATTRIBUTE, CHOOSE_SHADOW_DATASET,
    CHOOSE_SHADOW_MODEL_ARCHITECTURE, DATA_RECONSTRUCTION, DETERMINE_ATTACKS, EXECUTE_SCRIPT, FINAL_ANSWER,
    LAUNCH_ATTACK_AGENT, LIST_FILES, MEMBERSHIP_INFERENCE, MODEL_STEALING, MONITOR_ATTACKS,
    PURPOSE_CHOOSE_ARCHITECTURE, PURPOSE_CHOOSE_ATTRIBUTE, PURPOSE_CHOOSE_DATASET, PURPOSE_PLAN,
    PURPOSE_SET_PARAMETERS, SET_PARAMETERS, get_keywords,
)

MAX_EXECUTE_RETRIES = 2
SCORED_ROWS = 50
ATTRIBUTE_EVAL_ROWS = 100


def _split_names(value: str) -> List[str]:
    return [v.strip() for v in (value or "").split(",") if v.strip() and v.strip() != "(none)"]


class MockPlanner(PlannerBackend):
    """Rule-based stand-in for a remote planner"""

    tag = "mock"

    def complete(self, messages: List[Dict[str, str]], temperature: float = 0.0) -> PlannerReply:
        context = extract_context(messages) or {}
        handlers = {
            PURPOSE_PLAN: self.plan,
            PURPOSE_CHOOSE_DATASET: self.choose_shadow_dataset,
            PURPOSE_CHOOSE_ATTRIBUTE: self.choose_attribute,
            PURPOSE_CHOOSE_ARCHITECTURE: self.choose_architecture,
            PURPOSE_SET_PARAMETERS: self.set_parameters,
        }
        handler = handlers.get(context.get("purpose"))
        reply = handler(context) if handler else {"error": "no context block found"}
        text = "```json\n" + json.dumps(reply) + "\n```"
        prompt = "".join(m.get("content", "") for m in messages)
        return PlannerReply(text, estimate_tokens(prompt), estimate_tokens(text))

    # --- agent steps ---

    def plan(self, context: Dict[str, Any]) -> Dict[str, Any]:
        if context.get("agent") == "controller":
            return self.plan_controller(context)
        return self.plan_attack(context)

    @staticmethod
    def _response(reflection: str, plan: str, facts: Dict[str, Any], action: str, action_input: Dict[str, Any]):
        return {
            "Reflection": reflection,
            "Plan": plan,
            "Important Information": facts,
            "Action": action,
            "Action Input": action_input,
        }

    @staticmethod
    def _last(context: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        recent = context.get("recent") or []
        return recent[-1] if recent else None

    def controller_facts(self, context: Dict[str, Any]) -> Dict[str, str]:
        last = self._last(context)
        if not last:
            return {}
        fields = observation_fields(last["observation"])
        mapping = {
            DETERMINE_ATTACKS: ("confirmed", "confirmed_attacks"),
            LAUNCH_ATTACK_AGENT: ("launched", "launched_attacks"),
            MONITOR_ATTACKS: ("all terminal", "all_terminal"),
        }
        if last["action"] in mapping:
            field, key = mapping[last["action"]]
            if field in fields:
                return {key: fields[field]}
        return {}

    def plan_controller(self, context: Dict[str, Any]) -> Dict[str, Any]:
        facts = self.controller_facts(context)
        known = {**context.get("important_information", {}), **facts}
        last = self._last(context)
        plan = "Determine feasible attacks, launch one AttackAgent per attack, monitor them, then finish."
        if "confirmed_attacks" not in known:
            return self._response("Nothing has been decided yet.", plan, facts, DETERMINE_ATTACKS,
                                  {"candidates": list(context.get("candidate_attacks", []))})
        confirmed = _split_names(known["confirmed_attacks"])
        if not confirmed:
            return self._response("No attack can be performed against this service.", plan, facts, FINAL_ANSWER,
                                  {"summary": "No attack was feasible for this service."})
        if "launched_attacks" not in known:
            return self._response("The feasible attacks are confirmed.", plan, facts, LAUNCH_ATTACK_AGENT,
                                  {"attacks": confirmed})
        if known.get("all_terminal") == "yes" and last and last["action"] == MONITOR_ATTACKS:
            return self._response("Every attack agent has finished.", plan, facts, FINAL_ANSWER,
                                  {"summary": "All launched attacks finished; assembling the report."})
        return self._response("Attack agents are running.", plan, facts, MONITOR_ATTACKS, {})

    def attack_facts(self, context: Dict[str, Any]) -> Dict[str, str]:
        """Facts worth keeping from the latest observation, copied verbatim"""
        last = self._last(context)
        if not last:
            return {}
        attack = context.get("attack")
        observation = last["observation"]
        fields = observation_fields(observation)
        action = last["action"]
        facts: Dict[str, str] = {}
        if "error" in fields:
            facts["last_error"] = fields["error"]
        if action == LIST_FILES:
            for line in observation.splitlines():
                line = line.strip()
                if line.endswith("available_datasets.json"):
                    facts["dataset_registry"] = line
                elif line.endswith("available_models.json"):
                    facts["model_registry"] = line
                elif line.endswith(f"scripts/{attack}.json"):
                    facts["script"] = line
        elif action == CHECK_REQUIRED_PARAMETERS and "required" in fields:
            facts["required_parameters"] = fields["required"]
        elif action == CHOOSE_SHADOW_DATASET and "selected dataset" in fields:
            facts.update({
                "shadow_dataset": fields["selected dataset"],
                "shadow_dataset_path": fields.get("path", ""),
                "shadow_num_classes": fields.get("num_classes", ""),
            })
        elif action == CHOOSE_ATTRIBUTE and "selected attributes" in fields:
            facts["target_label"] = fields["selected attributes"]
        elif action == CHOOSE_SHADOW_MODEL_ARCHITECTURE and "selected architecture" in fields:
            facts["architecture"] = fields["selected architecture"]
        elif action == SET_PARAMETERS and "parameters" in fields:
            facts["parameters"] = fields["parameters"]
        elif action == EXECUTE_SCRIPT:
            metric = fields.get("metric")
            if metric and metric in fields:
                facts["result"] = f"{metric}: {fields[metric]}"
            elif "error" in fields:
                # parameters must be set again before the next run
                facts["parameters"] = ""
                retries = int(context.get("important_information", {}).get("execute_failures", "0")) + 1
                facts["execute_failures"] = str(retries)
        return facts

    def plan_attack(self, context: Dict[str, Any]) -> Dict[str, Any]:
        attack = context.get("attack")
        target = context.get("target", {})
        facts = self.attack_facts(context)
        known = {**context.get("important_information", {}), **facts}
        plan = ("List the environment, read the script parameters, choose data and architecture, "
                "set parameters, run the script, report.")
        say = lambda reflection, action, action_input: self._response(reflection, plan, facts, action, action_input)

        if not known.get("dataset_registry") or not known.get("script"):
            return say("I need to see what the environment provides.", LIST_FILES,
                       {"directory": context.get("env_dir", "env")})
        if not known.get("required_parameters"):
            return say("The starter script is known.", CHECK_REQUIRED_PARAMETERS, {"script": known["script"]})
        if not known.get("shadow_dataset_path"):
            action_input = {
                "registry_file": known["dataset_registry"],
                "task_description": target.get("task_description", ""),
                "input_format": target.get("input_format", ""),
                "output_format": target.get("output_format", ""),
            }
            if attack == ATTRIBUTE_INFERENCE and target.get("sensitive_attribute"):
                action_input["target_attribute"] = target["sensitive_attribute"]
            return say("The script needs a shadow dataset.", CHOOSE_SHADOW_DATASET, action_input)
        if (attack == MEMBERSHIP_INFERENCE and not known.get("target_label")
                and str(target.get("num_classes")) != known.get("shadow_num_classes")):
            return say("The shadow dataset's label does not match the target's class count.", CHOOSE_ATTRIBUTE, {
                "registry_file": known["dataset_registry"],
                "task_description": target.get("task_description", ""),
                "shadow_dataset": known["shadow_dataset"],
                "output_format": target.get("output_format", ""),
            })
        if attack in (MEMBERSHIP_INFERENCE, MODEL_STEALING) and not known.get("architecture"):
            return say("The script needs an architecture.", CHOOSE_SHADOW_MODEL_ARCHITECTURE, {
                "registry_file": known["model_registry"],
                "access": "embedding" if attack == ATTRIBUTE_INFERENCE else "predict",
                "attack": attack,
            })
        failures = int(known.get("execute_failures", "0") or 0)
        if known.get("result") or failures > MAX_EXECUTE_RETRIES:
            if known.get("result"):
                summary = f"The {attack.replace('_', ' ')} attack finished with {known['result']}."
                outcome = "completed"
            else:
                summary = f"The {attack.replace('_', ' ')} attack could not be completed: {known.get('last_error', 'unknown error')}"
                outcome = "failed"
            return say("The attack has produced its outcome.", FINAL_ANSWER, {"summary": summary, "outcome": outcome})
        if not known.get("parameters"):
            action_input = {"task": attack, "dataset": known["shadow_dataset"],
                            "purpose": f"run {attack} against the target service"}
            if known.get("architecture"):
                action_input["model"] = known["architecture"]
            return say("Dataset and architecture are chosen.", SET_PARAMETERS, action_input)
        return say("All parameters are set.", EXECUTE_SCRIPT,
                   {"script": known["script"], "parameters": json.loads(known["parameters"])})

    # --- decisions made inside actions ---

    def choose_shadow_dataset(self, context: Dict[str, Any]) -> Dict[str, Any]:
        """Attribute presence >> class-count match >> task-text overlap; ties keep registry order"""
        records = context.get("records", [])
        attribute = context.get("target_attribute")
        if attribute:
            records = [r for r in records if any(a["name"] == attribute for a in r.get("attributes", []))]
            if not records:
                return {"dataset": None, "reason": f"no dataset in the registry carries the attribute {attribute}"}
        if not records:
            return {"dataset": None, "reason": "the registry is empty"}
        task_words = set(get_keywords(context.get("task_description", "")))

        def score(record):
            overlap = len(task_words & set(get_keywords(f"{record.get('name', '')} {record.get('common_tasks', '')}")))
            class_match = int(record.get("num_classes") == context.get("num_classes"))
            return 1000 * int(bool(attribute)) + 100 * class_match + overlap

        best = max(records, key=score)
        reasons = []
        if attribute:
            reasons.append(f"carries the attribute {attribute}")
        if best.get("num_classes") == context.get("num_classes"):
            reasons.append("has the same number of classes")
        reasons.append("closest task description")
        return {"dataset": best["name"], "reason": "; ".join(reasons)}

    def choose_attribute(self, context: Dict[str, Any]) -> Dict[str, Any]:
        """Smallest attribute combination whose class-count product equals the target's"""
        attributes = context.get("attributes", [])
        wanted = context.get("num_classes")
        if not attributes:
            return {"attributes": None, "reason": "the shadow dataset has no attributes"}
        subsets = [c for size in range(1, len(attributes) + 1) for c in combinations(attributes, size)]
        exact = [c for c in subsets if prod(a["num_classes"] for a in c) == wanted]
        if exact:
            chosen, reason = exact[0], f"combined classes match the target's {wanted} classes"
        else:
            chosen = min(subsets, key=lambda c: abs(prod(a["num_classes"] for a in c) - (wanted or 0)))
            reason = f"no combination has exactly {wanted} classes; closest class count chosen"
        return {"attributes": ",".join(a["name"] for a in chosen), "reason": reason}

    def choose_architecture(self, context: Dict[str, Any]) -> Dict[str, Any]:
        records = sorted(context.get("records", []), key=lambda r: r.get("capacity_rank", 0))
        if not records:
            return {"architecture": None, "reason": "the model registry is empty"}
        attack = context.get("attack")
        if attack == MODEL_STEALING:
            usable = [r for r in records if not r.get("overfit_prone")] or records
            return {"architecture": usable[-1]["name"],
                    "reason": "most powerful architecture that is not overly complex"}
        if attack == MEMBERSHIP_INFERENCE:
            return {"architecture": records[len(records) // 2]["name"],
                    "reason": "mid-capacity shadow model to mimic the target"}
        return {"architecture": records[0]["name"], "reason": "smallest architecture suffices"}

    def set_parameters(self, context: Dict[str, Any]) -> Dict[str, Any]:
        attack = context.get("attack")
        known = context.get("known", {})
        rows = int(context.get("dataset_rows") or 0)
        allowance = context.get("query_allowance")
        params: Dict[str, Any] = {}
        reasons: Dict[str, str] = {}

        for spec in context.get("parameters", []):
            name, kind, candidates = spec["name"], spec["semantic_type"], spec.get("candidates") or []
            if kind == "dataset_path":
                params[name], reasons[name] = known.get("dataset_path"), "chosen shadow dataset"
            elif kind == "architecture" and known.get("architecture"):
                params[name], reasons[name] = known["architecture"], "chosen architecture"
            elif name == "target_label" and known.get("target_label"):
                params[name], reasons[name] = known["target_label"], "attribute combination matching the target"
            elif name == "attribute" and known.get("attribute"):
                params[name], reasons[name] = known["attribute"], "the sensitive attribute under assessment"
            elif name == "learning_rate":
                params[name], reasons[name] = 0.001, "standard Adam step size"
            elif name == "batch_size":
                params[name], reasons[name] = 64, "standard mini-batch size"
            elif name == "epochs":
                if attack in (MEMBERSHIP_INFERENCE, MODEL_STEALING):
                    params[name], reasons[name] = max(candidates), "long training to fit the target closely"
                else:
                    params[name], reasons[name] = sorted(candidates)[len(candidates) // 2], "moderate training length"
            elif name == "dataset_size":
                params[name], reasons[name] = self._dataset_size(attack, sorted(candidates), rows, allowance)

        if attack == MODEL_STEALING and allowance is not None and allowance < params.get("dataset_size", 0):
            params["selection_strategy"] = "importance"
            reasons["selection_strategy"] = "the query allowance is smaller than the dataset; query the most informative rows"
        return {"parameters": params, "reasons": reasons}

    @staticmethod
    def _dataset_size(attack: str, candidates: List[int], rows: int, allowance: Optional[int]):
        if attack == MEMBERSHIP_INFERENCE:
            fitting = [c for c in candidates if 2 * c <= rows] or candidates
            return fitting[0], "start small: a small shadow training set increases overfitting, as in the target"
        extra = {DATA_RECONSTRUCTION: SCORED_ROWS, ATTRIBUTE_INFERENCE: ATTRIBUTE_EVAL_ROWS}.get(attack, 0)
        fitting = [c for c in candidates if c <= rows]
        if allowance is not None and attack != MODEL_STEALING:
            fitting = [c for c in fitting if c + extra <= allowance]
        if not fitting:
            return candidates[0], "smallest size; larger sizes do not fit the data or the query allowance"
        return fitting[-1], "largest dataset size that fits the data and the query allowance"
