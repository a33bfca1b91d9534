class DataError(ValueError):
    """Malformed input data or index out of the declared dimensions."""


class DivergenceError(RuntimeError):
    """The solver produced a non-finite value."""

    def __init__(self, message, cell=None, epoch=None):
        super().__init__(message)
        self.cell = cell
        self.epoch = epoch
