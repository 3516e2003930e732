"""Exception types shared across the package."""


class RolltuneError(Exception):
    """Base class for all package errors."""


class ShapeError(RolltuneError):
    """Operands have incompatible shapes."""


class ValidationError(RolltuneError):
    """A value or configuration violates its domain."""


class ContractError(RolltuneError):
    """An API was called outside its contract (e.g. non-scalar loss)."""


class ScheduleError(RolltuneError):
    """Illegal schedule transition, e.g. applying the same decay boundary twice."""


class DataFormatError(RolltuneError):
    """A serialized file is malformed; message carries the byte offset."""


class TrainingDiverged(RolltuneError):
    """Loss became non-finite; message carries epoch and batch index."""
