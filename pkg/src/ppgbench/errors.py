"""Exception hierarchy.

Every error maps to one CLI exit code through its base class:
``UsageError`` -> 1, ``DataError`` -> 2, ``NumericError`` -> 3.
"""


class PPGBenchError(Exception):
    exit_code = 2


class UsageError(PPGBenchError):
    exit_code = 1


class DataError(PPGBenchError):
    exit_code = 2


class NumericError(PPGBenchError):
    exit_code = 3


class MalformedLine(DataError):
    def __init__(self, path, line_no, reason):
        self.path = str(path)
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"{self.path}:{line_no}: {reason}")


class UnknownSubject(DataError):
    pass


class LengthMismatch(DataError):
    pass


class EmptyDataset(DataError):
    pass


class TooFewSubjects(DataError):
    pass


class DegenerateFraction(DataError):
    pass


class NoBeats(DataError):
    pass


class NonPhysiologicalRate(DataError):
    pass


class MissingBMI(DataError):
    pass


class InvalidSpec(DataError):
    pass


class UnsupportedLength(InvalidSpec):
    pass


class ShapeMismatch(NumericError, ValueError):
    pass


class DegenerateBatch(NumericError):
    pass


class EmptyPair(NumericError, ValueError):
    pass


class NonScalarOutput(NumericError, ValueError):
    pass


class UnstableState(NumericError):
    pass


class NonFiniteLoss(NumericError):
    def __init__(self, epoch, batch_index, segment_indices, loss):
        self.epoch = epoch
        self.batch_index = batch_index
        self.segment_indices = list(segment_indices)
        self.loss = loss
        super().__init__(
            f"non-finite loss {loss!r} at epoch {epoch}, batch {batch_index} "
            f"(segments {self.segment_indices[:8]}{'...' if len(self.segment_indices) > 8 else ''})"
        )


class FoldTrainingError(NumericError):
    def __init__(self, fold, cause):
        self.fold = fold
        self.cause = cause
        super().__init__(f"fold {fold}: {cause}")


class ZeroVariance(NumericError):
    pass
