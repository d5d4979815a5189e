"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are inconsistent with an operation's contract."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf showed up where only finite values are allowed."""


class NumericalError(RuntimeError):
    """Training or evaluation diverged (typically a NaN loss)."""


class DataFormatError(ValueError):
    """A file or directory does not match the expected on-disk format."""
