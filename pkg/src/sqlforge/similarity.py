"""Token-sequence similarity used to diff HTTP responses.

The ratio is ``2 * LCS(a, b) / (len(a) + len(b))`` over token lists, 1.0 when
both are empty. Tokens are interned to integer ids so the dynamic program runs
on int64 arrays, either in a numba kernel or a row-vectorised numpy loop.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from ._accel import HAVE_NUMBA, njit


@njit(cache=True)
def _lcs_length_jit(a, b):
    m = b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    cur = np.zeros(m + 1, dtype=np.int64)
    for i in range(a.shape[0]):
        ai = a[i]
        for j in range(1, m + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            elif prev[j] >= cur[j - 1]:
                cur[j] = prev[j]
            else:
                cur[j] = cur[j - 1]
        prev, cur = cur, prev
    return prev[m]


def _lcs_length_numpy(a: np.ndarray, b: np.ndarray) -> int:
    # Row update as a running maximum: L[i][j] = max_{k<=j} max(L[i-1][k], L[i-1][k-1] + match_k).
    m = b.shape[0]
    prev = np.zeros(m + 1, dtype=np.int64)
    for ai in a:
        cand = np.empty(m + 1, dtype=np.int64)
        cand[0] = 0
        cand[1:] = np.maximum(prev[1:], prev[:-1] + (b == ai))
        prev = np.maximum.accumulate(cand)
    return int(prev[m])


def encode_pair(a: Sequence[str], b: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    """Intern two token lists into a shared integer alphabet."""
    ids: dict[str, int] = {}
    ea = np.fromiter((ids.setdefault(t, len(ids)) for t in a), dtype=np.int64, count=len(a))
    eb = np.fromiter((ids.setdefault(t, len(ids)) for t in b), dtype=np.int64, count=len(b))
    return ea, eb


def lcs_length(a: Sequence[str], b: Sequence[str], backend: str | None = None) -> int:
    if not a or not b:
        return 0
    # keep the inner dimension the longer one; the numpy path vectorises over it
    if len(a) > len(b):
        a, b = b, a
    ea, eb = encode_pair(a, b)
    if backend is None:
        backend = "numba" if HAVE_NUMBA else "numpy"
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is unavailable")
        return int(_lcs_length_jit(ea, eb))
    if backend == "numpy":
        return _lcs_length_numpy(ea, eb)
    raise ValueError(f"unknown backend {backend!r}")


def similarity(a: Sequence[str], b: Sequence[str], backend: str | None = None) -> float:
    """Return the LCS ratio of two token lists, in [0, 1]."""
    total = len(a) + len(b)
    if total == 0:
        return 1.0
    if list(a) == list(b):
        return 1.0
    return 2.0 * lcs_length(a, b, backend) / total
