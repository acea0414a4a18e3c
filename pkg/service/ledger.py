"""
Query ledger shared by every endpoint of one service.
"""
import threading
from typing import Dict, Optional

from core.errors import PreconditionError


class QueryLedger:
    """Counts scored input rows; the counter only ever moves up"""

    def __init__(self, budget: Optional[int] = None):
        if budget is not None and budget < 1:
            raise PreconditionError(f"query budget must be >= 1, got {budget}")
        self.budget = budget
        self._used = 0
        self._per_endpoint: Dict[str, int] = {}
        self._lock = threading.Lock()

    @property
    def used(self) -> int:
        return self._used

    @property
    def remaining(self) -> Optional[int]:
        if self.budget is None:
            return None
        return self.budget - self._used

    def admit(self, n: int, endpoint: str = "predict") -> bool:
        """Atomic check-and-increment; True iff used + n fits the budget"""
        if n < 1:
            raise PreconditionError(f"a query batch needs at least one row, got {n}")
        with self._lock:
            if self.budget is not None and self._used + n > self.budget:
                return False
            self._used += n
            self._per_endpoint[endpoint] = self._per_endpoint.get(endpoint, 0) + n
            return True

    def snapshot(self) -> Dict:
        with self._lock:
            return {
                "used": self._used,
                "budget": self.budget,
                "per_endpoint": dict(self._per_endpoint),
            }


def enforce_budget(ledger: QueryLedger, n: int, endpoint: str = "predict") -> bool:
    return ledger.admit(n, endpoint)
