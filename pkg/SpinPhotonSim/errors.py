"""Exception hierarchy.

The three families map onto the command line exit codes:
ConfigError -> 2, SimulationError -> 3, AnalysisError -> 4.
"""


class SpinPhotonSimError(Exception):
    """Base class of all errors raised by SpinPhotonSim."""
    exit_code = 1


class ConfigError(SpinPhotonSimError):
    exit_code = 2


class SimulationError(SpinPhotonSimError):
    exit_code = 3


class AnalysisError(SpinPhotonSimError):
    exit_code = 4


class InvalidParameter(ConfigError, ValueError):
    pass


class SequenceSyntaxError(ConfigError):

    def __init__(self, line: int, reason: str):
        super().__init__(f'line {line}: {reason}')
        self.line = line
        self.reason = reason


class OverlapError(ConfigError):

    def __init__(self, *names: str):
        super().__init__('overlapping pulses: ' + ', '.join(names))
        self.names = names


class UnknownTarget(ConfigError):

    def __init__(self, name: str):
        super().__init__(f'unknown target or pulse "{name}"')
        self.name = name


class OutOfCycle(ConfigError):

    def __init__(self, name: str):
        super().__init__(f'pulse "{name}" does not fit within the cycle period')
        self.name = name


class TagFileError(ConfigError):

    def __init__(self, path, line: int, reason: str):
        super().__init__(f'{path}:{line}: {reason}')
        self.path = path
        self.line = line


class MixedHashError(ConfigError):
    pass


class NonPositiveDetuning(ConfigError, AnalysisError):
    pass


class StepTooLarge(SimulationError):
    pass


class DriveConflict(SimulationError):
    pass


class InsufficientCounts(AnalysisError):
    pass


class NoConditioningEvents(AnalysisError):

    def __init__(self, message: str = 'no conditioning events'):
        super().__init__(message)


class ZeroDenominator(AnalysisError):
    pass


class FitDiverged(AnalysisError):
    pass


class PeriodUnderResolved(AnalysisError):
    pass


class PhaseInconsistent(AnalysisError):
    pass


class InsufficientPoints(AnalysisError):
    pass
