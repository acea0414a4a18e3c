"""
Run configuration for an assessment: config.json sections plus CLI overrides.
"""
from typing import Any, Dict, Literal, Optional

from pydantic import BaseModel, Field

from config_loader import get_planner_config, get_price_table_config, get_run_config, WORKSPACE_ROOT
from reporting.cost import PriceTable


class RunConfig(BaseModel):
    planner: str = Field("mock", description="mock, remote or faulty:<script>")
    temperature: float = Field(0.0, ge=0.0)
    seed: int = 0
    max_steps: int = Field(50, ge=1, description="Step limit per agent")
    runtime_limit_s: float = Field(18000, gt=0, description="Wall-clock limit per agent")
    poll_interval_s: float = Field(600, ge=0, description="Longest pause between controller steps while attack agents run")
    observation_limit: int = Field(1500, ge=80, description="Characters of an observation shown to the planner")
    plan_retries: int = Field(2, ge=0, description="Re-prompts before a reply counts as malformed")
    clock: Literal["wall", "logical"] = "logical"
    query_budget: Optional[int] = Field(None, ge=1, description="Budget override when the service does not advertise one")
    workspace_root: str = "workspace"
    price_table: PriceTable = Field(default_factory=PriceTable)

    @classmethod
    def from_config(cls, **overrides: Any) -> "RunConfig":
        """Config file values, replaced by every override that is not None"""
        values: Dict[str, Any] = dict(get_run_config())
        planner = get_planner_config()
        values.setdefault("planner", planner.get("backend", "mock"))
        values.setdefault("temperature", planner.get("temperature", 0.0))
        values.setdefault("workspace_root", WORKSPACE_ROOT())
        values.setdefault("price_table", get_price_table_config())
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(values)
