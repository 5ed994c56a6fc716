"""Exception types shared across the pipeline."""


class HLFusionError(Exception):
    pass


class DegenerateBox(HLFusionError, ValueError):
    pass


class EmptyCluster(HLFusionError, ValueError):
    pass


class InvalidInput(HLFusionError, ValueError):
    pass


class ConvergenceWarning(UserWarning):
    pass


class NoTrainingData(HLFusionError):
    pass


class CalibrationMissing(HLFusionError):
    pass


class MismatchedLengths(HLFusionError, ValueError):
    pass


class EmptyEvaluation(HLFusionError):
    pass


class ParseError(HLFusionError):
    def __init__(self, path, message, line=None):
        self.path = str(path)
        self.line = line
        where = self.path if line is None else f"{self.path}:{line}"
        super().__init__(f"{where}: {message}")


class InvariantViolation(HLFusionError):
    def __init__(self, frame_id, message):
        self.frame_id = frame_id
        super().__init__(f"frame {frame_id!r}: {message}")


class InvalidFraction(HLFusionError, ValueError):
    pass


class PlacementFailure(HLFusionError):
    pass


class VersionMismatch(HLFusionError):
    pass
