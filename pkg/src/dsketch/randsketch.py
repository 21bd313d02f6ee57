"""Randomized oblivious sketches: CountSketch and a factor-2 L0 estimator.

Both are linear, so their state depends only on the frequency vector, not on
update order. Failure probabilities are first-class constructor parameters.
When the bucket formula 6/accuracy^2 meets or exceeds the universe size, a
CountSketch degenerates to one exact row (every coordinate gets its own
bucket), which is taken as an explicit fast path.
"""

from __future__ import annotations

import math

import numpy as np

from .detsketch import _pack_state, _unpack_state
from .hashing import KWiseHash, SubsampleLadder
from .stream import UpdateError


def countsketch_dims(n: int, m: int, accuracy: float, delta: float) -> tuple[int, int]:
    """(rows, width) for the standard L2 point-query guarantee."""
    width = math.ceil(6.0 / accuracy**2)
    rows = math.ceil(4.0 * math.log(max(n, 2) * max(m, 2) / delta))
    return max(1, rows), max(1, width)


class CountSketch:
    """Signed bucket counters with median-of-rows point queries.

    accuracy eps sizes the width as ceil(6/eps^2); rows default to
    ceil(4*ln(nm/delta)) so the point-error guarantee holds for all
    coordinates simultaneously.
    """

    def __init__(self, n: int, m: int, accuracy: float, delta: float, seed: int,
                 rows: int | None = None, width: int | None = None):
        self.n = int(n)
        self.m = int(m)
        self.accuracy = float(accuracy)
        self.delta = float(delta)
        d, w = countsketch_dims(n, m, accuracy, delta)
        if rows is not None:
            d = int(rows)
        if width is not None:
            w = int(width)
        self.collapsed = w >= self.n
        if self.collapsed:
            d, w = 1, self.n
            self.bucket_hashes: list[KWiseHash] = []
            self.sign_hashes: list[KWiseHash] = []
        else:
            seeds = np.random.SeedSequence(seed).spawn(2 * d)
            self.bucket_hashes = [
                KWiseHash(2, w, int(s.generate_state(1)[0]), universe=n)
                for s in seeds[:d]
            ]
            self.sign_hashes = [
                KWiseHash(4, 2, int(s.generate_state(1)[0]), universe=n)
                for s in seeds[d:]
            ]
        self.rows = d
        self.width = w
        self.counters = np.zeros((d, w), dtype=np.int64)
        self._row_sqsum = np.zeros(d, dtype=np.int64)
        self._rowidx = np.arange(d)
        self._coord_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def _coords(self, x: int) -> tuple[np.ndarray, np.ndarray]:
        got = self._coord_cache.get(x)
        if got is None:
            buckets = np.array([h.eval(x) for h in self.bucket_hashes], dtype=np.int64)
            signs = np.array([2 * h.eval(x) - 1 for h in self.sign_hashes], dtype=np.int64)
            got = (buckets, signs)
            if len(self._coord_cache) < 1 << 16:
                self._coord_cache[x] = got
        return got

    def update(self, index: int, delta: int) -> None:
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        if self.collapsed:
            old = self.counters[0, index]
            new = old + delta
            self.counters[0, index] = new
            self._row_sqsum[0] += new * new - old * old
            return
        buckets, signs = self._coords(index)
        old = self.counters[self._rowidx, buckets]
        new = old + signs * delta
        self.counters[self._rowidx, buckets] = new
        self._row_sqsum += new * new - old * old

    def extend(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            raise UpdateError("index out of range")
        if self.collapsed:
            np.add.at(self.counters[0], indices, deltas)
        else:
            for r in range(self.rows):
                b = self.bucket_hashes[r].eval_many(indices)
                s = 2 * self.sign_hashes[r].eval_many(indices) - 1
                self.counters[r] += np.bincount(
                    b, weights=(s * deltas).astype(np.float64), minlength=self.width
                ).astype(np.int64)
        self._row_sqsum = np.sum(self.counters.astype(np.float64) ** 2, axis=1).astype(np.int64)

    def point(self, x: int) -> float:
        if self.collapsed:
            return float(self.counters[0, x])
        buckets, signs = self._coords(x)
        return float(np.median(signs * self.counters[self._rowidx, buckets]))

    def point_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        if self.collapsed:
            return self.counters[0, xs].astype(np.float64)
        vals = np.empty((self.rows, xs.size), dtype=np.int64)
        for r in range(self.rows):
            b = self.bucket_hashes[r].eval_many(xs)
            s = 2 * self.sign_hashes[r].eval_many(xs) - 1
            vals[r] = s * self.counters[r, b]
        return np.median(vals, axis=0)

    def norm2_estimate(self) -> float:
        """Median-of-rows estimate of ||f||_2^2 (AMS-style row norms)."""
        return float(np.median(self._row_sqsum))

    def heavy_hitters(self, p: float, fp_estimate: float,
                      min_power: float = 0.25) -> list[tuple[int, float]]:
        """All x whose estimated |f_x|^p clears accuracy^p * fp_estimate.

        fp_estimate is the caller's upper bound on F_p. min_power discards
        numerical dust below the smallest possible nonzero power (integer
        frequencies make every true nonzero contribute at least 1).
        """
        if self.n > 1 << 20:
            raise MemoryError("heavy_hitters enumerates the universe; n too large")
        tau = max(self.accuracy**p * fp_estimate, min_power)
        est = self.point_many(np.arange(self.n))
        mags = np.abs(est)
        keep = np.flatnonzero(mags**p >= tau)
        order = np.lexsort((keep, -mags[keep]))
        return [(int(x), float(v)) for x, v in zip(keep[order], est[keep][order])]

    def counter_count(self) -> int:
        return int(self.rows * self.width)

    def to_bytes(self) -> bytes:
        meta = {"n": self.n, "m": self.m, "accuracy": self.accuracy,
                "delta": self.delta, "rows": self.rows, "width": self.width,
                "collapsed": self.collapsed}
        arrays = {"counters": self.counters}
        for i, h in enumerate(self.bucket_hashes):
            arrays[f"bh{i}"] = h.coefficients
        for i, h in enumerate(self.sign_hashes):
            arrays[f"sh{i}"] = h.coefficients
        return _pack_state("countsketch", meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "CountSketch":
        meta, arrays = _unpack_state(blob, "countsketch")
        obj = cls(meta["n"], meta["m"], meta["accuracy"], meta["delta"], seed=0,
                  rows=meta["rows"], width=meta["width"])
        obj.counters = arrays["counters"].astype(np.int64)
        for i, h in enumerate(obj.bucket_hashes):
            h.coefficients = arrays[f"bh{i}"].astype(np.int64)
        for i, h in enumerate(obj.sign_hashes):
            h.coefficients = arrays[f"sh{i}"].astype(np.int64)
        obj._coord_cache.clear()
        obj._row_sqsum = np.sum(obj.counters.astype(np.float64) ** 2, axis=1).astype(np.int64)
        return obj


class L0Estimator:
    """Factor-2 distinct-count estimator over geometric subsample levels.

    Level j (rate 2^-j) keeps an exact count of the nonzero coordinates it
    contains, with a saturation capacity K; the query walks to the shallowest
    unsaturated level and rescales. Repetitions are combined by a median,
    with R = ceil(24 ln(1/delta)) by default.
    """

    def __init__(self, n: int, delta: float = 0.05, capacity: int = 64,
                 reps: int | None = None, seed: int = 0):
        self.n = int(n)
        self.delta = float(delta)
        self.capacity = int(capacity)
        self.reps = int(reps) if reps is not None else math.ceil(24.0 * math.log(1.0 / delta))
        self.levels = max(1, math.ceil(math.log2(max(n, 2)))) + 1
        self.ladder = SubsampleLadder(n, levels=self.levels, repetitions=self.reps, seed=seed)
        self._values: list[dict[int, int]] = [dict() for _ in range(self.reps)]
        self._depth: list[dict[int, int]] = [dict() for _ in range(self.reps)]
        self.counts = np.zeros((self.reps, self.levels), dtype=np.int64)

    def _deepest(self, r: int, x: int) -> int:
        d = self._depth[r].get(x)
        if d is None:
            d = self.ladder.deepest_level(r, x)
            self._depth[r][x] = d
        return d

    def _shift(self, r: int, x: int, direction: int) -> None:
        self.counts[r, : self._deepest(r, x)] += direction

    def update(self, index: int, delta: int) -> None:
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        for r in range(self.reps):
            vals = self._values[r]
            old = vals.get(index, 0)
            new = old + delta
            if old == 0 and new != 0:
                self._shift(r, index, 1)
            elif old != 0 and new == 0:
                self._shift(r, index, -1)
            if new:
                vals[index] = new
            else:
                vals.pop(index, None)

    def extend(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        # only net zero-crossings matter, so aggregate per index first
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            raise UpdateError("index out of range")
        uniq = np.unique(indices)
        net = np.zeros(uniq.size, dtype=np.int64)
        np.add.at(net, np.searchsorted(uniq, indices), deltas)
        for x, d in zip(uniq, net):
            if d == 0:
                continue
            x, d = int(x), int(d)
            for r in range(self.reps):
                vals = self._values[r]
                old = vals.get(x, 0)
                new = old + d
                if old == 0 and new != 0:
                    self._shift(r, x, 1)
                elif old != 0 and new == 0:
                    self._shift(r, x, -1)
                if new:
                    vals[x] = new
                else:
                    vals.pop(x, None)

    def query(self) -> int:
        ests = np.empty(self.reps, dtype=np.float64)
        for r in range(self.reps):
            row = self.counts[r]
            unsat = np.flatnonzero(row <= self.capacity)
            j = int(unsat[0]) if unsat.size else self.levels - 1
            ests[r] = float(2**j) * row[j]
        return int(round(float(np.median(ests))))

    def counter_count(self) -> int:
        # logical footprint: capacity-bounded exact counters per level
        return self.reps * self.levels * self.capacity
