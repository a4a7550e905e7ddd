"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible or an extent is invalid."""


class ContractError(ValueError):
    """An argument violates an operation's contract (bad index, bad count)."""


class DataError(ValueError):
    """A dataset, corpus, or serialized file is malformed or unusable."""


class TrainingError(RuntimeError):
    """Training hit a numerical failure (non-finite loss or gradient)."""
