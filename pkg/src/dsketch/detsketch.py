"""Deterministic turnstile structures: residue-table heavy hitters and exact
k-sparse recovery.

Both are linear in the stream and use no randomness at all, which is what
makes them immune to adaptive adversaries: their output is a pure function of
the frequency vector. Either structure collapses to a single exact table once
its smallest residue prime would reach the universe size, since a table
indexed by x mod q with q >= n is simply the exact vector.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass

import numpy as np

from .hashing import first_primes, next_prime
from .stream import UpdateError


@dataclass(frozen=True)
class ResidueTablePlan:
    """Table layout for a deterministic residue sketch."""

    primes: tuple[int, ...]
    collision_bound: int  # max tables any two distinct indices share
    collapsed: bool
    bit_tests: int  # index-test counters per cell (0 for plain tables)

    @property
    def table_count(self) -> int:
        return len(self.primes)

    @property
    def counter_count(self) -> int:
        return sum(self.primes) * (1 + self.bit_tests)


def _collision_bound(q_min: int, n: int) -> int:
    # distinct primes >= q_min dividing some |x - y| < n
    if n <= 2:
        return 1
    return max(1, math.ceil(math.log(n) / math.log(max(q_min, 2))))


def plan_hh_tables(n: int, support_bound: int, threshold: float, p: float) -> ResidueTablePlan:
    """Size the heavy-hitter residue tables.

    T = ceil((16/threshold) * t^(1-1/p) * L) tables over the first T primes
    >= max(T, 2), where L bounds the number of tables any two indices share.
    T and L are interdependent, so iterate to a consistent pair.
    """
    if not 0 < threshold < 1:
        raise ValueError(f"threshold must be in (0, 1), got {threshold}")
    if support_bound < 1:
        raise ValueError("support_bound must be >= 1")
    base = (16.0 / threshold) * float(support_bound) ** (1.0 - 1.0 / p)
    L = 1
    for _ in range(64):
        T = max(1, math.ceil(base * L))
        needed = _collision_bound(max(T, 2), n)
        if needed <= L:
            break
        L = needed
    if max(T, 2) >= n:
        return ResidueTablePlan(primes=(next_prime(n),), collision_bound=1,
                                collapsed=True, bit_tests=0)
    return ResidueTablePlan(primes=tuple(first_primes(T, max(T, 2))),
                            collision_bound=L, collapsed=False, bit_tests=0)


def plan_sparse_tables(n: int, sparsity: int) -> ResidueTablePlan:
    """Size the sparse-recovery tables: 2*(k-1)*L' + 1 tables over primes
    >= 2k, so every nonzero of a k-sparse vector is isolated (and hence
    decodable) in a strict majority of tables."""
    if sparsity < 1:
        raise ValueError("sparsity must be >= 1")
    q_min = max(2 * sparsity, 2)
    bits = max(1, math.ceil(math.log2(max(n, 2))))
    if q_min >= n:
        return ResidueTablePlan(primes=(next_prime(n),), collision_bound=1,
                                collapsed=True, bit_tests=0)
    L = _collision_bound(q_min, n)
    T = 2 * (sparsity - 1) * L + 1
    return ResidueTablePlan(primes=tuple(first_primes(T, q_min)),
                            collision_bound=L, collapsed=False, bit_tests=bits)


_BLOB_VERSION = 1


def _pack_state(kind: str, meta: dict, arrays: dict[str, np.ndarray]) -> bytes:
    buf = io.BytesIO()
    header = dict(meta)
    header["__kind__"] = kind
    header["__version__"] = _BLOB_VERSION
    np.savez(buf, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8),
             **arrays)
    return buf.getvalue()


def _unpack_state(blob: bytes, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    data = np.load(io.BytesIO(blob), allow_pickle=False)
    header = json.loads(data["__header__"].tobytes().decode())
    if header.get("__kind__") != kind or header.get("__version__") != _BLOB_VERSION:
        raise ValueError(f"blob is not a version-{_BLOB_VERSION} {kind} state")
    arrays = {k: data[k] for k in data.files if k != "__header__"}
    return header, arrays


class ResidueHeavyHitters:
    """Deterministic heavy hitters via exact residue counters (CR-Precis
    style). Point estimates are medians over tables; the interference of any
    other coordinate is confined to at most ``collision_bound`` tables, which
    gives an unconditional error bound of ||f||_1 * L / T.

    Valid heavy-hitter reports additionally need the support to stay within
    ``support_bound`` (enforced externally by an L0 gate).
    """

    def __init__(self, n: int, support_bound: int, threshold: float, p: float,
                 plan: ResidueTablePlan | None = None):
        self.n = int(n)
        self.support_bound = int(support_bound)
        self.threshold = float(threshold)
        self.p = float(p)
        self.plan = plan or plan_hh_tables(n, support_bound, threshold, p)
        self.tables = [np.zeros(q, dtype=np.int64) for q in self.plan.primes]

    @property
    def collapsed(self) -> bool:
        return self.plan.collapsed

    def update(self, index: int, delta: int) -> None:
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        for q, table in zip(self.plan.primes, self.tables):
            table[index % q] += delta

    def extend(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            raise UpdateError("index out of range")
        for q, table in zip(self.plan.primes, self.tables):
            np.add.at(table, indices % q, deltas)

    def estimate(self, x: int) -> int:
        vals = [t[x % q] for q, t in zip(self.plan.primes, self.tables)]
        return int(np.median(vals))

    def estimates_all(self) -> np.ndarray:
        """Point estimates for every index in [0, n). Chunked so the
        tables-by-indices matrix never gets large."""
        if self.collapsed:
            return self.tables[0][: self.n].astype(np.float64)
        out = np.empty(self.n, dtype=np.float64)
        idx = np.arange(self.n, dtype=np.int64)
        step = max(1, (1 << 22) // max(1, len(self.tables)))
        for lo in range(0, self.n, step):
            chunk = idx[lo : lo + step]
            stack = np.empty((len(self.tables), chunk.size), dtype=np.int64)
            for t, (q, table) in enumerate(zip(self.plan.primes, self.tables)):
                stack[t] = table[chunk % q]
            out[lo : lo + step] = np.median(stack, axis=0)
        return out

    def error_bound(self, l1: float) -> float:
        """Deterministic point-error bound ||f||_1 * L / T."""
        return l1 * self.plan.collision_bound / self.plan.table_count

    def _candidate_estimates(self) -> tuple[np.ndarray, np.ndarray]:
        if self.n <= 1 << 20:
            est = self.estimates_all()
            cand = np.flatnonzero(est != 0)
            return cand, est[cand]
        # large universe: expand the heaviest residues of the widest table
        q, table = max(zip(self.plan.primes, self.tables), key=lambda it: it[0])
        order = np.argsort(-np.abs(table))
        keep = order[: 4 * self.support_bound]
        keep = keep[np.abs(table[keep]) > 0]
        cand = np.concatenate([np.arange(b, self.n, q, dtype=np.int64) for b in keep]) \
            if keep.size else np.empty(0, dtype=np.int64)
        if cand.size > 1 << 22:
            raise MemoryError("candidate enumeration too large for this universe")
        est = np.array([self.estimate(int(x)) for x in cand], dtype=np.float64)
        nz = est != 0
        return cand[nz], est[nz]

    def query(self, report_eps: float | None = None) -> list[tuple[int, float]]:
        """Heavy-hitter report: all x whose estimate clears (3/4) * eps * P,
        where P is the p-norm implied by the top estimates. Sorted by
        estimate magnitude (descending), ties by index."""
        eps = self.threshold if report_eps is None else float(report_eps)
        cand, est = self._candidate_estimates()
        if cand.size == 0:
            return []
        mags = np.abs(est)
        powers = np.sort(mags ** self.p)[::-1]
        norm_hat = float(np.sum(powers[: self.support_bound])) ** (1.0 / self.p)
        cut = 0.75 * eps * norm_hat
        keep = mags >= cut
        order = np.lexsort((cand[keep], -mags[keep]))
        kept_c, kept_e = cand[keep][order], est[keep][order]
        return [(int(x), float(v)) for x, v in zip(kept_c, kept_e)]

    def counter_count(self) -> int:
        return self.plan.counter_count

    def to_bytes(self) -> bytes:
        meta = {"n": self.n, "support_bound": self.support_bound,
                "threshold": self.threshold, "p": self.p,
                "primes": list(self.plan.primes),
                "collision_bound": self.plan.collision_bound,
                "collapsed": self.plan.collapsed}
        arrays = {f"t{i}": t for i, t in enumerate(self.tables)}
        return _pack_state("residue-hh", meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ResidueHeavyHitters":
        meta, arrays = _unpack_state(blob, "residue-hh")
        plan = ResidueTablePlan(primes=tuple(meta["primes"]),
                                collision_bound=meta["collision_bound"],
                                collapsed=meta["collapsed"], bit_tests=0)
        obj = cls(meta["n"], meta["support_bound"], meta["threshold"], meta["p"], plan=plan)
        obj.tables = [arrays[f"t{i}"].astype(np.int64) for i in range(len(plan.primes))]
        return obj


class SparseRecovery:
    """Exact recovery of a k-sparse frequency vector.

    Each cell keeps the running sum of its residue class plus one counter per
    index bit (counter j accumulates the deltas of indices with bit j set).
    A cell holding a single coordinate therefore decodes that coordinate
    exactly. Decoding peels candidates that are consistently decoded by a
    strict majority of tables, which is guaranteed to recover any vector with
    at most ``sparsity`` nonzeros; anything else either decodes correctly or
    fails the final zero-state verification and returns None.
    """

    def __init__(self, n: int, sparsity: int, plan: ResidueTablePlan | None = None):
        self.n = int(n)
        self.sparsity = int(sparsity)
        self.plan = plan or plan_sparse_tables(n, sparsity)
        self.bits = self.plan.bit_tests
        self.sums = [np.zeros(q, dtype=np.int64) for q in self.plan.primes]
        self.bit_tables = [np.zeros((q, self.bits), dtype=np.int64)
                           for q in self.plan.primes] if self.bits else []
        if not self.plan.collapsed:
            self._bit_weights = (1 << np.arange(self.bits, dtype=np.int64))

    @property
    def collapsed(self) -> bool:
        return self.plan.collapsed

    def update(self, index: int, delta: int) -> None:
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        if self.collapsed:
            self.sums[0][index] += delta
            return
        for q, s, bt in zip(self.plan.primes, self.sums, self.bit_tables):
            b = index % q
            s[b] += delta
            for j in range(self.bits):
                if index >> j & 1:
                    bt[b, j] += delta

    def extend(self, indices: np.ndarray, deltas: np.ndarray) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.n):
            raise UpdateError("index out of range")
        if self.collapsed:
            np.add.at(self.sums[0], indices, deltas)
            return
        bit_masks = [(indices >> j & 1).astype(bool) for j in range(self.bits)]
        for q, s, bt in zip(self.plan.primes, self.sums, self.bit_tables):
            res = indices % q
            np.add.at(s, res, deltas)
            for j in range(self.bits):
                mask = bit_masks[j]
                np.add.at(bt[:, j], res[mask], deltas[mask])

    def decode(self) -> np.ndarray | None:
        """The exact frequency vector, or None when the state cannot be
        explained by a decodable sparse vector."""
        if self.collapsed:
            return self.sums[0][: self.n].copy()
        work_s = [s.copy() for s in self.sums]
        work_b = [b.copy() for b in self.bit_tables]
        out = np.zeros(self.n, dtype=np.int64)
        majority = len(self.plan.primes) // 2 + 1
        peeled, cap = 0, 8 * self.sparsity + 64
        while True:
            if all(not s.any() for s in work_s):
                if all(not b.any() for b in work_b):
                    return out
                return None  # bit residue left over: state is not explained
            votes: dict[tuple[int, int], int] = {}
            for q, s, bt in zip(self.plan.primes, work_s, work_b):
                nz = np.flatnonzero(s)
                if not nz.size:
                    continue
                sv = s[nz]
                btv = bt[nz]
                pure = np.all((btv == 0) | (btv == sv[:, None]), axis=1)
                xs = ((btv == sv[:, None]) * self._bit_weights).sum(axis=1)
                good = pure & (xs < self.n) & (xs % q == nz)
                for x, v in zip(xs[good], sv[good]):
                    key = (int(x), int(v))
                    votes[key] = votes.get(key, 0) + 1
            if not votes:
                return None
            batch = [kv for kv in votes.items() if kv[1] >= majority]
            if not batch:
                batch = [max(votes.items(), key=lambda kv: kv[1])]
            seen: set[int] = set()
            for (x, v), _cnt in batch:
                if x in seen:
                    return None  # conflicting decodes for one index
                seen.add(x)
                out[x] += v
                peeled += 1
                for q, s, bt in zip(self.plan.primes, work_s, work_b):
                    b = x % q
                    s[b] -= v
                    for j in range(self.bits):
                        if x >> j & 1:
                            bt[b, j] -= v
            if peeled > cap:
                return None

    def moment(self, p: float) -> float | None:
        """||f||_p^p of the decoded vector, or None on decode failure."""
        if self.collapsed:
            vals = self.sums[0][: self.n]
            return float(np.sum(np.abs(vals).astype(np.float64) ** p))
        vec = self.decode()
        if vec is None:
            return None
        return float(np.sum(np.abs(vec).astype(np.float64) ** p))

    def counter_count(self) -> int:
        return self.plan.counter_count

    def to_bytes(self) -> bytes:
        meta = {"n": self.n, "sparsity": self.sparsity,
                "primes": list(self.plan.primes),
                "collision_bound": self.plan.collision_bound,
                "collapsed": self.plan.collapsed, "bit_tests": self.plan.bit_tests}
        arrays = {f"s{i}": s for i, s in enumerate(self.sums)}
        for i, b in enumerate(self.bit_tables):
            arrays[f"b{i}"] = b
        return _pack_state("sparse-recovery", meta, arrays)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SparseRecovery":
        meta, arrays = _unpack_state(blob, "sparse-recovery")
        plan = ResidueTablePlan(primes=tuple(meta["primes"]),
                                collision_bound=meta["collision_bound"],
                                collapsed=meta["collapsed"], bit_tests=meta["bit_tests"])
        obj = cls(meta["n"], meta["sparsity"], plan=plan)
        obj.sums = [arrays[f"s{i}"].astype(np.int64) for i in range(len(plan.primes))]
        if plan.bit_tests:
            obj.bit_tables = [arrays[f"b{i}"].astype(np.int64) for i in range(len(plan.primes))]
        return obj
