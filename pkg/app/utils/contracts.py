import numpy as np


class ContractError(ValueError):
    """Raised when an operation is called outside its contract (shapes, ranges, degenerate data)."""


def require(condition: bool, message: str) -> None:
    if not condition:
        raise ContractError(message)


def require_shape(array: np.ndarray, shape: tuple, name: str) -> None:
    require(
        tuple(array.shape) == tuple(shape),
        f"{name} has shape {tuple(array.shape)}, expected {tuple(shape)}",
    )


def require_finite(array: np.ndarray, name: str) -> None:
    require(bool(np.all(np.isfinite(array))), f"{name} contains non-finite entries")
