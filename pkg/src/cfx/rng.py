"""Counter-based random streams.

Every stream is addressed by ``(seed, purpose, a, b, c)``. The seed and purpose
form the 128-bit Philox key, while ``a, b, c`` occupy the upper three words of
the 256-bit counter. Draws advance only the lowest word, so two different
addresses never share output no matter how many numbers are taken. Results
therefore depend on the address alone, never on which worker asks or when.
"""

import numpy as np

PRIOR = 1
POSTERIOR = 2
NESTED_OUTER = 3
NESTED_INNER = 4
PERMUTATIONS = 5
BOOTSTRAP = 6
ENVIRONMENT = 7
ORDERINGS = 9

_MASK = (1 << 64) - 1


def stream(seed: int, purpose: int, a: int = 0, b: int = 0, c: int = 0) -> np.random.Generator:
    """Return the generator for one stream address."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    key = ((int(purpose) & _MASK) << 64) | (seed & _MASK)
    counter = np.array([0, a & _MASK, b & _MASK, c & _MASK], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def uniforms(seed: int, purpose: int, size: int, a: int = 0, b: int = 0, c: int = 0) -> np.ndarray:
    """Draw ``size`` uniforms on [0, 1) from the stream at the given address."""
    return stream(seed, purpose, a, b, c).random(size)
