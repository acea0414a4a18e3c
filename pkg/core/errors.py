"""
Error hierarchy shared by the kernel, the environment, the service client,
the attack pipelines and the agent runtime.
"""
from typing import Optional


class AuditError(Exception):
    """Base class for every error raised by this package"""


class ShapeError(AuditError, ValueError):
    """Layer lists, input widths or target shapes do not line up"""


class NumericalError(AuditError, ArithmeticError):
    """A loss or intermediate value became non-finite"""


class TrainingDivergedError(NumericalError):
    """Training produced a non-finite loss"""

    def __init__(self, epoch: int, batch: int, loss: float):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: loss={loss}")
        self.epoch = epoch
        self.batch = batch
        self.loss = loss


class RegistryError(AuditError, ValueError):
    """A registry file or record failed validation"""

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.field = field


class PreconditionError(AuditError, ValueError):
    """An operation was invoked outside its documented preconditions"""


class InfeasibleAttackError(AuditError):
    """The target service does not expose what an attack needs"""


class UnknownTaskError(AuditError, LookupError):
    """No starter task is registered under the given name"""


class MalformedPlanError(AuditError):
    """The planner kept returning text that does not parse into a plan"""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class ServiceError(AuditError):
    """Base class for black-box service failures"""


class ServiceUnavailableError(ServiceError):
    """The service could not be reached"""


class ServiceRequestError(ServiceError):
    """The service answered with a wire error"""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(f"[{status}] {code}: {message}")
        self.status = status
        self.code = code


class BudgetExhaustedError(ServiceRequestError):
    """The service refused a batch because the query budget is used up"""

    def __init__(self, message: str, remaining_budget: int):
        super().__init__(429, "budget_exhausted", message)
        self.remaining_budget = remaining_budget


class ArtifactError(AuditError, ValueError):
    """An artifact container is missing, corrupt or of an unknown version"""
