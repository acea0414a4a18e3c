import logging
import os
import threading
import time
from datetime import datetime
from typing import Any, Dict, List, Optional

from openai import OpenAI

from config_loader import get_config, get_planner_config
from core.llm.interface import PlannerBackend, PlannerReply
from core.llm.utils import estimate_tokens, parse_messages_to_str, parse_response_to_str

logger = logging.getLogger(__name__)

DEFAULT_LOG_PATH = "workspace/llm.log"


def get_llm_client() -> OpenAI:
    config = get_planner_config()
    return OpenAI(
        api_key=config.get("api_key") or None,
        base_url=config.get("base_url")
    )


def get_model_name() -> str:
    return get_planner_config().get("model", "gpt-4o")


class RemotePlanner(PlannerBackend):
    """Chat-completions endpoint; token counts come from the response usage block"""

    tag = "remote"

    def __init__(self, model: Optional[str] = None, client: Optional[OpenAI] = None):
        self.client = client or get_llm_client()
        self.model = model or get_model_name()
        self.log_path = get_config().get("llm_log_path") or DEFAULT_LOG_PATH
        self._log_lock = threading.Lock()

    def _log(self, messages: List[Dict[str, str]], response: Any, duration_ms: float):
        block = "\n".join([
            f">>> model <{self.model}> generated at <{datetime.now().isoformat()}>:",
            "- query:",
            parse_messages_to_str(messages),
            "- response:",
            parse_response_to_str(response),
            f"- duration <{duration_ms:.0f}> ms",
            "",
        ])
        try:
            with self._log_lock:
                os.makedirs(os.path.dirname(self.log_path) or ".", exist_ok=True)
                with open(self.log_path, "a", encoding="utf-8") as f:
                    f.write(block)
        except OSError as e:
            logger.warning("failed to write planner log %s: %s", self.log_path, e)

    def complete(self, messages: List[Dict[str, str]], temperature: float = 0.0) -> PlannerReply:
        started = time.perf_counter()
        resp = self.client.chat.completions.create(
            model=self.model,
            messages=messages,
            temperature=temperature,
        )
        content = resp.choices[0].message.content or ""
        self._log(messages, {"content": content}, (time.perf_counter() - started) * 1000)
        usage = getattr(resp, "usage", None)
        if usage is not None:
            return PlannerReply(content, usage.prompt_tokens, usage.completion_tokens)
        prompt = "".join(m.get("content", "") for m in messages)
        return PlannerReply(content, estimate_tokens(prompt), estimate_tokens(content))
