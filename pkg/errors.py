"""Exceptions raised by the solver, simulator and file codec."""


class FbdpError(Exception):
    """Base class for feedback-DP failures."""


class CalibrationError(FbdpError):
    """λ bracket could not be found or bisection stalled."""


class NumericalError(FbdpError):
    """Density propagation lost or created probability mass."""


class PolicyFileError(FbdpError):
    def __init__(self, message: str, line: int = 0):
        self.line = line
        prefix = f"line {line}: " if line else ""
        super().__init__(prefix + message)
