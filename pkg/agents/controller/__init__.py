# Controller agent
from .agent import ControllerAgent, controller_instruction, determine_attacks

__all__ = ["ControllerAgent", "controller_instruction", "determine_attacks"]
