from apps.core.exception import AppException, FatalInvariantViolation


class MisroutedReplyError(FatalInvariantViolation):
    def __init__(self, message: str):
        super().__init__(message, error_code="MISROUTED_REPLY")


class MissingReplyError(AppException):
    default_error_code = "MISSING_REPLY"
