"""Exception hierarchy shared by every stratcal module."""

from __future__ import annotations


class StratcalError(Exception):
    """Base class for all errors raised by stratcal."""


class CurveError(StratcalError, ValueError):
    """Problem with a calibration curve file. ``line`` is 1-based, or None."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedRow(CurveError):
    pass


class NegativeSigma(CurveError):
    pass


class DuplicateCalAge(CurveError):
    pass


class TooFewKnots(CurveError):
    pass


class ThetaOutOfDomain(StratcalError, ValueError):
    def __init__(self, theta: float, domain: tuple[float, float]):
        self.theta = theta
        self.domain = domain
        super().__init__(
            f"calendar age {theta!r} cal BP is outside the curve domain "
            f"[{domain[0]!r}, {domain[1]!r}]"
        )


class ModelError(StratcalError, ValueError):
    """Invalid model file. ``location`` is a JSON path or ``line:col`` string."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        if location:
            message = f"{location}: {message}"
        super().__init__(message)


class ModelSyntaxError(ModelError):
    pass


class UnknownContext(ModelError):
    pass


class DuplicateLabel(ModelError):
    pass


class CyclicConstraints(ModelError):
    def __init__(self, message: str, cycle: list[str] | None = None):
        self.cycle = cycle or []
        super().__init__(message)


class EmptyModel(ModelError):
    pass


class InfeasibleModel(StratcalError):
    pass


class TooFewSamples(StratcalError, ValueError):
    pass


class ShapeMismatch(StratcalError, ValueError):
    pass


class GridTooLarge(StratcalError, ValueError):
    pass
