"""
Error hierarchy shared by the library and the command line.

Each error carries the process exit code the CLI reports for it.
"""

from typing import Optional


class AnchorPoseError(Exception):
    """Base class for all AnchorPose errors"""

    exit_code = 1


class UsageError(AnchorPoseError, ValueError):
    """Invalid arguments, ranges or preconditions"""

    exit_code = 1


class DataFormatError(AnchorPoseError, ValueError):
    """Malformed or incompatible file content"""

    exit_code = 2

    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class NumericalError(AnchorPoseError, ArithmeticError):
    """Non-finite loss or a degenerate numerical problem"""

    exit_code = 3

    def __init__(self, message: str, term: Optional[str] = None, details: Optional[dict] = None):
        self.term = term
        self.details = details or {}
        super().__init__(message)


def exit_code_for(error: BaseException) -> int:
    """Map any exception to the CLI exit code"""
    if isinstance(error, AnchorPoseError):
        return error.exit_code
    if isinstance(error, OSError):
        return 2
    if isinstance(error, ArithmeticError):
        return 3
    return 1
