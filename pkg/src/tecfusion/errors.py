"""Exception hierarchy shared by every tecfusion module."""


class TecFusionError(Exception):
    """Base class for all package errors."""


class InvalidArgumentError(TecFusionError, ValueError):
    pass


class EmptyInputError(TecFusionError, ValueError):
    pass


class InsufficientHistoryError(TecFusionError):
    def __init__(self, message, earliest_origin=None):
        super().__init__(message)
        self.earliest_origin = earliest_origin


class DegenerateChannelError(TecFusionError, ValueError):
    def __init__(self, channel):
        super().__init__(f"channel {channel!r} has zero variance")
        self.channel = channel


class SchemaError(TecFusionError):
    def __init__(self, message, missing=(), unexpected=()):
        super().__init__(message)
        self.missing = tuple(missing)
        self.unexpected = tuple(unexpected)


class FormatError(TecFusionError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class BundleIncompleteError(TecFusionError):
    pass


class InsufficientSpanError(TecFusionError, ValueError):
    pass


class EmptySplitError(TecFusionError):
    def __init__(self, message, skip_reasons=None):
        super().__init__(message)
        self.skip_reasons = dict(skip_reasons or {})


class ShapeError(TecFusionError, ValueError):
    pass


class NumericFailureError(TecFusionError, ArithmeticError):
    def __init__(self, message, coordinate=None):
        super().__init__(message)
        self.coordinate = coordinate


class InvalidMaskError(TecFusionError, ValueError):
    pass


class MissingSeedError(TecFusionError):
    pass


class MissingHistoryError(TecFusionError):
    pass


class CheckpointError(TecFusionError):
    pass


class TrainingDivergedError(TecFusionError, ArithmeticError):
    def __init__(self, epoch, batch):
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch
