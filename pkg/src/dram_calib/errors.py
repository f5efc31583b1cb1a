"""Exception hierarchy shared by every stage of the toolkit."""


class DramCalibError(Exception):
    """Base class; ``stage`` names the pipeline stage that raised it, when known."""

    stage = None


class ParseError(DramCalibError, ValueError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"line {line}: "
        elif where:
            where += " "
        super().__init__(where + message)


class ValidationError(DramCalibError, ValueError):
    pass


# address-map
class AddressOutOfRange(DramCalibError, ValueError):
    pass


class InconsistentMappingError(DramCalibError, ValueError):
    """No XOR-of-address-bits function reproduces the samples."""

    def __init__(self, message, bits=()):
        self.bits = tuple(bits)
        super().__init__(message)


# workload-gen
class OverlapError(DramCalibError, ValueError):
    pass


class AlignmentError(DramCalibError, ValueError):
    pass


# memctrl-sim / trace-stats
class MappingError(DramCalibError, ValueError):
    pass


class NonMonotonicCycle(ParseError):
    pass


class IllegalTrace(DramCalibError, ValueError):
    def __init__(self, message, violations=()):
        self.violations = list(violations)
        super().__init__(message)


# power-model
class NegativeComponent(DramCalibError, ValueError):
    pass


# measurement
class WindowOutOfRange(DramCalibError, ValueError):
    pass


class TooFewSamples(DramCalibError, ValueError):
    pass


class EmptyRuns(DramCalibError, ValueError):
    pass


class NoFiles(DramCalibError, FileNotFoundError):
    pass


class NameConventionError(DramCalibError, ValueError):
    pass


# calibrate
class IdMismatch(DramCalibError, ValueError):
    pass


class DegenerateProblem(DramCalibError, ValueError):
    pass


class NonFinite(DramCalibError, ValueError):
    pass


class IterationLimit(DramCalibError, RuntimeError):
    """Raised only on request; by default the solver returns its best iterate."""

    def __init__(self, message, result=None):
        self.result = result
        super().__init__(message)


# cli
class MissingArtifacts(DramCalibError, FileNotFoundError):
    pass


class StageError(DramCalibError):
    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")
