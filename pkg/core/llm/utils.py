import json
import math
import re
from typing import Dict, List, Optional

CONTEXT_PATTERN = re.compile(r"```json\s*(.*?)```", re.DOTALL | re.IGNORECASE)


def parse_messages_to_str(messages):
    res = ""
    for msg in messages:
        res += "role={}\n".format(msg.get("role"))
        res += msg.get("content")
        res += "\n"
    return res


def parse_response_to_str(response):
    return response.get("content")


def parse_json_response(response_str):
    match = CONTEXT_PATTERN.search(response_str)

    if match:
        text = match.group(1).strip()
    else:
        text = response_str.strip()

    return json.loads(text)


def extract_context(messages: List[Dict[str, str]]) -> Optional[dict]:
    """The last fenced JSON block of the last user message"""
    for msg in reversed(messages):
        if msg.get("role") != "user":
            continue
        blocks = CONTEXT_PATTERN.findall(msg.get("content", ""))
        if blocks:
            return json.loads(blocks[-1])
        return None
    return None


def context_block(payload: dict) -> str:
    return "```json\n" + json.dumps(payload, indent=1, sort_keys=True) + "\n```"


def estimate_tokens(text: str) -> int:
    """Rough count used when a backend reports no usage: four characters per token"""
    return math.ceil(len(text) / 4)


def observation_fields(text: str) -> Dict[str, str]:
    """`key: value` lines of an observation; the first occurrence of a key wins"""
    fields: Dict[str, str] = {}
    for line in (text or "").splitlines():
        if ": " not in line or line.startswith("- "):
            continue
        key, value = line.split(": ", 1)
        fields.setdefault(key.strip(), value.strip())
    return fields
