"""
Exception hierarchy shared by the surrogate, design and harness packages
"""

from typing import Optional, Sequence


class SurrogateDesignError(Exception):
    """Base class for every error raised by this package"""


class DomainError(SurrogateDesignError):
    """A point lies outside its input domain"""

    def __init__(self, message: str, coordinate: Optional[int] = None):
        super().__init__(message)
        self.coordinate = coordinate


class ArgumentError(SurrogateDesignError, ValueError):
    """Inconsistent sizes, dimensions or indices"""


class ConditioningError(SurrogateDesignError):
    """A correlation matrix could not be factorized"""

    def __init__(self, message: str, nugget: Optional[float] = None):
        super().__init__(message)
        self.nugget = nugget


class TrendError(SurrogateDesignError):
    """The regression matrix is rank deficient"""


class DegenerateUpdateError(SurrogateDesignError):
    """A conditioning point coincides with an existing design point"""


class DiagnosticsError(SurrogateDesignError):
    """Cross-validation quantities are unusable"""

    def __init__(self, message: str, level: Optional[int] = None, index: Optional[int] = None):
        super().__init__(message)
        self.level = level
        self.index = index


class StartPointError(SurrogateDesignError):
    """No admissible starting state for a Markov chain"""


class NestingError(SurrogateDesignError):
    """Multi-fidelity designs are not nested"""


class CalibrationError(SurrogateDesignError):
    """A synthetic code could not be calibrated"""


class BudgetError(SurrogateDesignError):
    """No run allocation fits the time budget"""


class SimulatorRunError(SurrogateDesignError):
    """A simulator call failed"""

    def __init__(self, message: str, level: int, point: Sequence[float]):
        super().__init__(message)
        self.level = level
        self.point = tuple(float(v) for v in point)


class ConfigError(SurrogateDesignError):
    """An experiment configuration is invalid"""


class ResultsIOError(SurrogateDesignError):
    """A result file could not be written or read"""

    def __init__(self, message: str, path):
        super().__init__(f"{message}: {path}")
        self.path = str(path)
