"""Counter-based random streams.

Every random number used by the simulator and the filter is a pure function of
``(seed, purpose, step, row, position)``. A Philox key is derived from
``(seed, purpose)`` and the step; within a step, row ``r`` of a draw (one
particle, or one block) occupies a fixed counter range, and each element a
fixed position inside it. Values therefore do not depend on iteration order,
and any row can be regenerated on its own, which is what makes per-block or
per-particle parallel execution reproduce sequential results exactly.
"""

from __future__ import annotations

import zlib
from functools import lru_cache

import numpy as np
from scipy.special import ndtri

_MASK64 = (1 << 64) - 1


@lru_cache(maxsize=256)
def _seed_word(seed: int, purpose: str) -> int:
    tag = zlib.crc32(purpose.encode())
    return int(np.random.SeedSequence([int(seed) & _MASK64, tag]).generate_state(1, np.uint64)[0])


def stream_key(seed: int, purpose: str, step: int) -> np.ndarray:
    """Philox key for one ``(seed, purpose, step)`` triple."""
    return np.array([_seed_word(seed, purpose), int(step) & _MASK64], dtype=np.uint64)


def _row_width(row_len: int) -> int:
    # Philox emits four 64-bit words per counter increment
    return -(-row_len // 4) * 4


def raw_words(key: np.ndarray, n_rows: int, row_len: int, first_row: int = 0) -> np.ndarray:
    """64-bit words for rows ``first_row .. first_row + n_rows - 1``."""
    width = _row_width(row_len)
    counter = np.array([first_row * (width // 4), 0, 0, 0], dtype=np.uint64)
    bg = np.random.Philox(key=key, counter=counter)
    words = bg.random_raw(n_rows * width).reshape(n_rows, width)
    return words[:, :row_len]


def _words_to_open_unit(words: np.ndarray) -> np.ndarray:
    # midpoint of a 53-bit cell: strictly inside (0, 1)
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53


def uniforms(key: np.ndarray, shape, first_row: int = 0) -> np.ndarray:
    """Uniforms on (0, 1); the leading axis of ``shape`` is the row axis."""
    shape = tuple(np.atleast_1d(shape))
    n_rows, row_len = shape[0], int(np.prod(shape[1:], dtype=int))
    return _words_to_open_unit(raw_words(key, n_rows, row_len, first_row)).reshape(shape)


def normals(key: np.ndarray, shape, first_row: int = 0) -> np.ndarray:
    """Standard normals by inversion of :func:`uniforms` (one word per value)."""
    return ndtri(uniforms(key, shape, first_row))
