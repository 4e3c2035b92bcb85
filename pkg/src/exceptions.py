from typing import List, Optional, Sequence


class OptomechError(Exception):
    pass


class ValidationError(OptomechError, ValueError):
    """Bad input or configuration; the CLI exits with code 2."""


class NumericalError(OptomechError, ArithmeticError):
    """A computation could not produce a trustworthy result; the CLI exits with code 3."""


class ConfigError(ValidationError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class UnsupportedPort(ValidationError):
    pass


class WindowTooCoarse(ValidationError):
    pass


class InsufficientSettling(ValidationError):
    pass


class TooShortSeries(ValidationError):
    pass


class CalibrationError(ValidationError):
    pass


class PoleError(NumericalError):
    def __init__(self, message: str, omega: Optional[float] = None):
        self.omega = omega
        super().__init__(message)


class ConvergenceError(NumericalError):
    def __init__(self, message: str, candidates: Optional[Sequence] = None):
        self.candidates: List = list(candidates or [])
        super().__init__(message)


class SingularSystemError(NumericalError):
    def __init__(self, omega: float, condition: float):
        self.omega = omega
        self.condition = condition
        super().__init__(
            f"System matrix is singular at omega={omega:.9g} rad/s "
            f"(condition number {condition:.3e})"
        )


class UnstableSystem(NumericalError):
    def __init__(self, message: str, eigenvalue: complex):
        self.eigenvalue = eigenvalue
        super().__init__(f"{message}: eigenvalue {eigenvalue:.6g}")


class NoConvergence(NumericalError):
    def __init__(self, message: str, best=None):
        self.best = best
        super().__init__(message)


class DegenerateWindow(NumericalError):
    pass


class SpectrumError(NumericalError):
    pass


class IdentifiabilityWarning(UserWarning):
    pass
