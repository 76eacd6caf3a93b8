"""Exception hierarchy shared across the package."""


class AesError(Exception):
    """Base class for all package errors."""


class AudioError(AesError):
    pass


class UnreadableFileError(AudioError):
    pass


class UnsupportedFormatError(AudioError):
    pass


class TruncatedDataError(AudioError):
    pass


class NumericalError(AesError):
    """A computation hit a degenerate or non-finite state."""


class DegenerateWeightsError(NumericalError):
    pass


class DegenerateEmbeddingError(NumericalError):
    pass


class ZeroVarianceError(NumericalError):
    def __init__(self, name, message=None):
        self.name = name
        super().__init__(message or f"zero variance in {name!r}")


class UndefinedCorrelationError(ZeroVarianceError):
    pass


class TrainingDivergedError(NumericalError):
    def __init__(self, step, last_good=None):
        self.step = step
        self.last_good = last_good
        super().__init__(f"non-finite loss at step {step}")


class SequenceTooLongError(AesError):
    pass


class DataError(AesError):
    """Malformed or inconsistent input data (manifests, labels, votes)."""


class CheckpointError(DataError):
    pass
