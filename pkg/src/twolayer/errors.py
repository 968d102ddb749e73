"""Exception types raised by the simulator.

Runtime failures derive from SimulationError; configuration problems
derive from ConfigError.  The CLI maps the two families to exit codes 3 and 2.
"""


class SimulationError(RuntimeError):
    """Base class for runtime aborts."""

    def __init__(self, message="", **context):
        super().__init__(message)
        self.context = context

    @property
    def kind(self):
        return type(self).__name__


class DegenerateJacobian(SimulationError):
    pass


class AdmissibilityFailure(SimulationError):
    pass


class DomainError(SimulationError, ValueError):
    pass


class DensityOutOfRange(SimulationError):
    pass


class SolveFailure(SimulationError):
    pass


class ZeroField(SimulationError, ValueError):
    pass


class CFLViolation(SimulationError):
    pass


class BoundaryLeak(SimulationError):
    pass


class EscapedDomain(SimulationError):
    pass


class PicardStall(SimulationError):
    pass


class InsufficientHistory(SimulationError):
    pass


class SmallnessViolation(SimulationError):
    """The surface smallness functional left its configured bound."""


class UnsupportedOrder(SimulationError, ValueError):
    pass


class ConfigError(ValueError):
    @property
    def kind(self):
        return type(self).__name__


class ParseError(ConfigError):
    def __init__(self, message, line=None, key=None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key '{key}'")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
        self.line = line
        self.key = key


class ValidationError(ConfigError):
    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


EXIT_CLEAN = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
