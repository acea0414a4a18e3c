"""
Assessment report: a markdown document for non-experts plus results.json.

Every attack section carries five parts: the target service, the attack
process, the results with metric values, the risk explanation, and defense
suggestions. A failed attack states the failure and its reason instead of
metrics.
"""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from attacks.models import AttackKind, AttackResult
from knowledge.defenses import RUBRIC, defenses_for, risk_level

SECTION_PARTS = ["Target service", "Attack process", "Results", "Risk", "Defense suggestions"]

TITLES = {
    AttackKind.MEMBERSHIP_INFERENCE: "Membership inference",
    AttackKind.MODEL_STEALING: "Model stealing",
    AttackKind.DATA_RECONSTRUCTION: "Data reconstruction",
    AttackKind.ATTRIBUTE_INFERENCE: "Attribute inference",
}

METRIC_NOTES = {
    AttackKind.MEMBERSHIP_INFERENCE: "share of records whose membership the attack decided correctly (0.5 is guessing)",
    AttackKind.MODEL_STEALING: "accuracy of the stolen surrogate on held-out data; agreement is the share of "
                               "inputs where surrogate and service predict the same class",
    AttackKind.DATA_RECONSTRUCTION: "mean squared error between reconstructed and true inputs (lower is worse "
                                    "for privacy)",
    AttackKind.ATTRIBUTE_INFERENCE: "accuracy of predicting the sensitive attribute from embeddings",
}


class AttackSection(BaseModel):
    """What one attack agent reports back to the controller"""
    attack: AttackKind
    status: str = Field(..., description="completed or failed")
    result: Optional[AttackResult] = None
    process: List[str] = Field(default_factory=list, description="Steps taken, one line each")
    parameters: Dict[str, Any] = Field(default_factory=dict)
    summary: str = ""
    failure_reason: Optional[str] = None


def _results_lines(section: AttackSection) -> List[str]:
    result = section.result
    lines = [f"- {result.metric_name}: {result.metric_value!r} ({METRIC_NOTES[section.attack]})"]
    for name, value in result.sub_results.items():
        if name != result.metric_name:
            lines.append(f"- {name}: {value!r}")
    lines.append(f"- queries sent to the service: {result.query_count}")
    for name, value in result.details.items():
        lines.append(f"- {name}: {value}")
    if result.partial:
        lines.append("- the query budget ran out; these values come from the rows answered before that")
    return lines


def render_section(section: AttackSection, target: Dict[str, Any]) -> str:
    out = [f"## {TITLES[section.attack]}", "", f"Status: {section.status}", ""]
    out += [f"### {SECTION_PARTS[0]}", "",
            f"{target.get('task_description', '')} Input: {target.get('input_format', '')}. "
            f"Output: {target.get('output_format', '')}.", ""]
    out += [f"### {SECTION_PARTS[1]}", ""]
    out += [f"{i}. {line}" for i, line in enumerate(section.process, 1)] or ["No steps were recorded."]
    if section.parameters:
        out += ["", "Parameters: " + ", ".join(f"{k}={v}" for k, v in sorted(section.parameters.items()))]
    out.append("")

    out += [f"### {SECTION_PARTS[2]}", ""]
    if section.status == "completed" and section.result is not None and section.result.metric_value is not None:
        out += _results_lines(section)
        if section.summary:
            out += ["", section.summary]
    else:
        out.append(f"The attack did not complete: {section.failure_reason or 'no reason was reported'}")
    out.append("")

    level, explanation = risk_level(section.result if section.status == "completed" else None)
    out += [f"### {SECTION_PARTS[3]}", "", f"Risk: **{level.value}** ({explanation}).", ""]
    out += [f"### {SECTION_PARTS[4]}", ""]
    out += [f"- {d}" for d in defenses_for(section.attack)]
    out.append("")
    return "\n".join(out)


def render_report(
    sections: List[AttackSection],
    target: Dict[str, Any],
    findings: Optional[Dict[str, Any]] = None,
    cost: Optional[str] = None,
) -> str:
    out = [f"# Inference-attack risk assessment: {target.get('name', 'target')}", ""]
    completed = [s for s in sections if s.status == "completed"]
    out.append(f"{len(completed)} of {len(sections)} attacks completed.")
    if cost:
        out.append(f"Planner cost: {cost}.")
    out.append("")
    if not sections:
        out += ["No attack was performed against this service.", ""]
    for section in sections:
        out.append(render_section(section, target))
    out += ["## How risk labels are assigned", ""]
    out += [f"- {line}" for line in RUBRIC]
    out.append("")
    if findings:
        out += ["## Run diagnostics", ""]
        out += [f"- {k}: {v}" for k, v in findings.items()]
        out.append("")
    return "\n".join(out)


def results_payload(sections: List[AttackSection], target: Dict[str, Any], complete: bool) -> Dict[str, Any]:
    payload = {"target": target, "complete": complete, "attacks": {}}
    for section in sections:
        level, _ = risk_level(section.result if section.status == "completed" else None)
        payload["attacks"][section.attack.value] = {
            **section.model_dump(mode="json", exclude={"attack"}),
            "risk": level.value,
        }
    return payload


def write_report(run_dir, sections, target, complete: bool, findings=None, cost=None) -> Dict[str, Path]:
    run_dir = Path(run_dir)
    report_path = run_dir / "report.md"
    results_path = run_dir / "results.json"
    report_path.write_text(render_report(sections, target, findings, cost), encoding="utf-8")
    with open(results_path, "w", encoding="utf-8") as f:
        json.dump(results_payload(sections, target, complete), f, indent=2, sort_keys=True)
    return {"report": report_path, "results": results_path}
