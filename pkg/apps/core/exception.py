"""
Exception hierarchy shared by every streaming module.

Each exception carries a stable ``error_code`` (upper snake case) and the exit
status the command line reports for it.
"""


class AppException(Exception):
    default_error_code = "APP_ERROR"
    exit_code = 1

    def __init__(self, message: str, error_code: str | None = None):
        super().__init__(message)
        self.message = message
        self.error_code = error_code or self.default_error_code

    def to_dict(self) -> dict:
        return {"error_code": self.error_code, "message": self.message}


class InvalidRequestException(AppException):
    default_error_code = "INVALID_REQUEST"
    exit_code = 2


class NotFoundException(InvalidRequestException):
    default_error_code = "NOT_FOUND"


class ConflictException(InvalidRequestException):
    default_error_code = "CONFLICT"


class InfeasibleConfigurationException(AppException):
    """The experiment cannot run at all; reports carry a flagged stub instead of numbers."""

    default_error_code = "INFEASIBLE_CONFIGURATION"
    exit_code = 3

    def __init__(self, message: str, reason: str, error_code: str | None = None):
        super().__init__(message, error_code=error_code)
        self.reason = reason

    def to_dict(self) -> dict:
        return {**super().to_dict(), "reason": self.reason}


class ControlPlaneException(AppException):
    default_error_code = "CONTROL_PLANE_ERROR"
    exit_code = 4


class RunTimeoutException(AppException):
    default_error_code = "RUN_TIMEOUT"


class FatalInvariantViolation(AssertionError):
    """Raised by checks that must never fire in a correct run."""

    def __init__(self, message: str, error_code: str):
        super().__init__(message)
        self.message = message
        self.error_code = error_code
