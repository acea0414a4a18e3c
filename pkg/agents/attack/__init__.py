# Attack agents
from .agent import AttackAgent, attack_instruction

__all__ = ["AttackAgent", "attack_instruction"]
