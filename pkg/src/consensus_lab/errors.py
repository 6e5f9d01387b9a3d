"""Exception hierarchy shared by every module of the package."""


class ConsensusLabError(Exception):
    """Base class for all errors raised by consensus_lab."""


# linear algebra
class NonSquare(ConsensusLabError, ValueError):
    pass


class NotSymmetric(ConsensusLabError, ValueError):
    pass


class DimensionMismatch(ConsensusLabError, ValueError):
    pass


class NonFiniteInput(ConsensusLabError, ValueError):
    pass


class NoConvergence(ConsensusLabError, ArithmeticError):
    pass


class NotHurwitz(ConsensusLabError, ArithmeticError):
    pass


class NotDetectable(ConsensusLabError, ArithmeticError):
    pass


class NotStabilizable(ConsensusLabError, ArithmeticError):
    pass


# synthesis
class OverrideNotStabilizing(ConsensusLabError, ValueError):
    pass


class NoFeasibleVarsigma(ConsensusLabError, ArithmeticError):
    pass


# graphs
class InvalidGraph(ConsensusLabError, ValueError):
    pass


class Disconnected(ConsensusLabError, ValueError):
    pass


class NoLeader(ConsensusLabError, ValueError):
    pass


# protocols / engine
class InactiveEdgeWeight(ConsensusLabError, ValueError):
    pass


class AssumptionViolated(ConsensusLabError, ValueError):
    pass


class InvalidProtocol(ConsensusLabError, ValueError):
    pass


class DwellMisaligned(ConsensusLabError, ValueError):
    pass


class InfeasibleParams(ConsensusLabError, ValueError):
    pass


class NonFiniteState(ConsensusLabError, ArithmeticError):
    """The integrated state blew up; ``trajectory`` holds the samples recorded so far."""

    def __init__(self, message, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# configuration
class UnknownPreset(ConsensusLabError, KeyError):
    pass


class ConfigSyntaxError(ConsensusLabError, ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ConfigValidationError(ConsensusLabError, ValueError):
    def __init__(self, field, reason):
        super().__init__(f"{field}: {reason}")
        self.field = field
        self.reason = reason
