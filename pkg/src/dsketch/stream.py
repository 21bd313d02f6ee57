"""Turnstile stream model and exact reference oracles.

Everything here is deliberately simple and exact: dense vectors, O(n log n)
oracles, no sketching. The estimators in the rest of the package are tested
against these functions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Relative slack added to every (1 +/- eps) tolerance check to absorb
# floating-point noise in the double-precision moment arithmetic.
REL_SLACK = 1e-9


class StreamError(Exception):
    """Base error for stream handling."""


class UpdateError(StreamError):
    """An update was rejected (bad index or delta)."""


@dataclass(frozen=True)
class Update:
    """One turnstile event: coordinate ``index`` changes by ``delta``."""

    index: int
    delta: int

    def __post_init__(self) -> None:
        if self.delta not in (-1, 1):
            raise UpdateError(f"delta must be +1 or -1, got {self.delta}")
        if self.index < 0:
            raise UpdateError(f"index must be nonnegative, got {self.index}")


@dataclass(frozen=True)
class StreamParams:
    """Problem parameters shared by the estimators.

    n: universe size, m: stream length bound, p: moment exponent in [1, 2],
    eps: accuracy parameter in (0, 1).
    """

    n: int
    m: int
    p: float
    eps: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.m < 1:
            raise ValueError(f"m must be >= 1, got {self.m}")
        if not 1.0 <= self.p <= 2.0:
            raise ValueError(f"p must be in [1, 2], got {self.p}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must be in (0, 1), got {self.eps}")


class FrequencyVector:
    """Dense signed-integer frequency vector of a turnstile stream.

    Counters are 64-bit; with unit deltas |f_i| <= m, so overflow is not a
    concern at any scale this package targets. Mutation is single-writer.
    """

    __slots__ = ("entries",)

    def __init__(self, n: int | None = None, entries=None) -> None:
        if entries is not None:
            self.entries = np.asarray(entries, dtype=np.int64).copy()
        elif n is not None:
            self.entries = np.zeros(int(n), dtype=np.int64)
        else:
            raise ValueError("need n or entries")

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def add(self, index: int, delta: int) -> None:
        """Apply one update in place."""
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        self.entries[index] += delta

    def copy(self) -> "FrequencyVector":
        return FrequencyVector(entries=self.entries)

    def __eq__(self, other: object) -> bool:
        if isinstance(other, FrequencyVector):
            return bool(np.array_equal(self.entries, other.entries))
        return NotImplemented

    def __repr__(self) -> str:
        return f"FrequencyVector({self.entries.tolist()!r})"


def _entries(f) -> np.ndarray:
    if isinstance(f, FrequencyVector):
        return f.entries
    return np.asarray(f, dtype=np.int64)


def apply(f: FrequencyVector, u: Update) -> FrequencyVector:
    """Pure single-update application: returns a new vector."""
    out = f.copy() if isinstance(f, FrequencyVector) else FrequencyVector(entries=f)
    out.add(u.index, u.delta)
    return out


def exact_fp(f, p: float) -> float:
    """Moment sum_i |f_i|^p."""
    entries = _entries(f)
    if p == 2.0:
        # common case, keep it exact in integer arithmetic before the cast
        return float(np.sum(entries.astype(np.float64) ** 2))
    return float(np.sum(np.abs(entries).astype(np.float64) ** p))


def exact_l0(f) -> int:
    """Number of nonzero coordinates."""
    return int(np.count_nonzero(_entries(f)))


def magnitude_order(f) -> np.ndarray:
    """Indices sorted by |f_i| descending, ties broken by smaller index."""
    entries = _entries(f)
    n = entries.shape[0]
    # lexsort uses the last key as primary
    return np.lexsort((np.arange(n), -np.abs(entries)))


def exact_residual_fp(f, k: int, p: float) -> float:
    """Moment after zeroing the k largest-magnitude coordinates.

    Ties in magnitude are broken by smaller index first, which makes the
    oracle deterministic (the choice does not affect the value).
    """
    entries = _entries(f)
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    k = min(int(k), entries.shape[0])
    if k == 0:
        return exact_fp(entries, p)
    order = magnitude_order(entries)
    return exact_fp(entries[order[k:]], p)


def exact_heavy_hitters(f, eps: float, p: float) -> list[tuple[int, int]]:
    """All indices with |f_i| >= eps * ||f||_p, with their true frequencies."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must be in (0, 1), got {eps}")
    entries = _entries(f)
    norm = exact_fp(entries, p) ** (1.0 / p)
    cut = eps * norm
    mags = np.abs(entries).astype(np.float64)
    hits = np.flatnonzero((mags > 0) & (mags >= cut * (1.0 - REL_SLACK)))
    return [(int(i), int(entries[i])) for i in hits]
