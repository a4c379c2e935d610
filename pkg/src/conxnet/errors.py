class ConXNetError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(ConXNetError, ValueError):
    pass


class StateError(ConXNetError, RuntimeError):
    """A layer or model was used out of order (e.g. backward before forward)."""


class NumericalError(ConXNetError, ArithmeticError):
    """A non-finite value showed up where a finite one is required."""


class DataError(ConXNetError, ValueError):
    pass


class CheckpointError(ConXNetError, ValueError):
    pass
