"""
Planner backend interface - every backend returns raw text plus token counts
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Dict, List


@dataclass
class PlannerReply:
    text: str
    input_tokens: int
    output_tokens: int


class PlannerBackend(ABC):
    """
    A chat-completions style planner.

    Implementations must be safe to call from several agent threads at once.
    """

    tag: str = "abstract"

    @abstractmethod
    def complete(self, messages: List[Dict[str, str]], temperature: float = 0.0) -> PlannerReply:
        """
        Send one request.

        Args:
            messages: List of message dicts with 'role' and 'content'
            temperature: Sampling temperature

        Returns:
            PlannerReply with the response text and token usage
        """
