# Core Module
from .clock import get_clock
from .errors import AuditError

__all__ = ["get_clock", "AuditError"]
