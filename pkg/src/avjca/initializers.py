"""Seeded parameter initialization."""

import math

import numpy as np

from .errors import ContractError
from .rng import SplitMix64


def xavier_init(rows: int, cols: int, seed: int) -> np.ndarray:
    """Glorot-uniform ``rows x cols`` matrix on ``[-a, a]``, ``a = sqrt(6 / (rows + cols))``.

    Entries are filled row-major from ``SplitMix64(seed)``.
    """
    if rows < 1 or cols < 1:
        raise ContractError(f"dimensions must be positive, got {rows}x{cols}")
    bound = math.sqrt(6.0 / (rows + cols))
    u = SplitMix64(seed).uniform(rows * cols).reshape(rows, cols)
    return (2.0 * u - 1.0) * bound
