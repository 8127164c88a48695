"""Exception hierarchy shared by the library and the CLI."""


class ShapeError(ValueError):
    """Operand dimensions are inconsistent."""


class NonFiniteError(ValueError):
    """A NaN or Inf reached a public operation."""


class DataError(ValueError):
    """Dataset could not be loaded or is malformed."""


class BadMagicError(DataError):
    pass


class TruncatedFileError(DataError):
    pass


class CountMismatchError(DataError):
    pass


class NumericalError(RuntimeError):
    """Training diverged (non-finite loss or parameters)."""


class CheckpointError(ValueError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class SchemaError(CheckpointError):
    pass
