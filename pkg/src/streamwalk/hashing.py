"""64-bit splitmix finalizer, scalar and numpy forms."""

from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

_U = np.uint64
_GOLDEN = _U(GOLDEN)
_M1U = _U(_M1)
_M2U = _U(_M2)
_S30, _S27, _S31 = _U(30), _U(27), _U(31)


def mix64(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def mix64_array(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=_U)
    z = (z ^ (z >> _S30)) * _M1U
    z = (z ^ (z >> _S27)) * _M2U
    return z ^ (z >> _S31)
