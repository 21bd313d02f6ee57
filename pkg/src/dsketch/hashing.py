"""k-wise independent hashing over a prime field, and nested subsample sets.

The polynomial construction (Carter-Wegman) gives jointly uniform outputs on
any k distinct inputs. Nested subsampling is realized by thresholding the
leading zero bits of a single hash value per repetition, so membership at a
deeper level implies membership at every shallower level by construction.
"""

from __future__ import annotations

import numpy as np

MERSENNE31 = 2**31 - 1
MERSENNE61 = 2**61 - 1


def is_prime(x: int) -> bool:
    if x < 2:
        return False
    if x < 4:
        return True
    if x % 2 == 0:
        return False
    d = 3
    while d * d <= x:
        if x % d == 0:
            return False
        d += 2
    return True


def next_prime(x: int) -> int:
    """Smallest prime >= x."""
    c = max(2, int(x))
    while not is_prime(c):
        c += 1
    return c


def first_primes(count: int, minimum: int) -> list[int]:
    """The first ``count`` primes >= minimum."""
    out: list[int] = []
    c = max(2, int(minimum))
    while len(out) < count:
        c = next_prime(c)
        out.append(c)
        c += 1
    return out


def _field_prime(need_above: int) -> int:
    # Mersenne primes keep int64 products in range for vectorized evaluation.
    if need_above < MERSENNE31:
        return MERSENNE31
    if need_above < MERSENNE61:
        return MERSENNE61
    return next_prime(need_above + 1)


class KWiseHash:
    """Degree-k polynomial hash into [0, out_range).

    The field modulus exceeds both the universe and the output range. A
    degree-1 hash is the constant map x -> c0 mod out_range.
    """

    __slots__ = ("degree", "out_range", "prime", "coefficients", "_vectorizable")

    def __init__(self, degree: int, out_range: int, seed: int, universe: int = 0):
        if degree < 1:
            raise ValueError("degree must be >= 1")
        if out_range < 1:
            raise ValueError("out_range must be >= 1")
        self.degree = int(degree)
        self.out_range = int(out_range)
        self.prime = _field_prime(max(universe, out_range))
        rng = np.random.default_rng(seed)
        self.coefficients = rng.integers(0, self.prime, size=self.degree, dtype=np.int64)
        # int64 Horner is safe when prime^2 < 2^63
        self._vectorizable = self.prime <= MERSENNE31

    def eval(self, x: int) -> int:
        acc = 0
        p = self.prime
        for c in self.coefficients[::-1]:
            acc = (acc * x + int(c)) % p
        return acc % self.out_range

    def eval_many(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.int64)
        if not self._vectorizable:
            return np.array([self.eval(int(x)) for x in xs], dtype=np.int64)
        p = self.prime
        acc = np.zeros_like(xs)
        for c in self.coefficients[::-1]:
            acc = (acc * xs + int(c)) % p
        return acc % self.out_range


class SubsampleLadder:
    """Nested subsets U_1 >= U_2 >= ... with level-i rate min(1, 2^(1-i)).

    One hash per repetition; level-i membership means the hash value has at
    least i-1 leading zero bits in its W-bit output, which nests exactly.
    Degree defaults to ceil(log2 n) + 2 so the subsampling concentration
    arguments go through.
    """

    def __init__(self, n: int, levels: int, repetitions: int, seed: int,
                 degree: int | None = None):
        if levels < 1 or repetitions < 1:
            raise ValueError("levels and repetitions must be >= 1")
        self.n = int(n)
        self.levels = int(levels)
        self.repetitions = int(repetitions)
        if degree is None:
            degree = int(np.ceil(np.log2(max(n, 2)))) + 2
        self.degree = int(degree)
        # capped at 48 so hash values stay exactly representable as float64
        self.bits = min(max(self.levels + 1, 16), 48)
        seeds = np.random.SeedSequence(seed).spawn(repetitions)
        self.hashes = [
            KWiseHash(self.degree, 1 << self.bits, int(s.generate_state(1)[0]), universe=n)
            for s in seeds
        ]

    def rate(self, i: int) -> float:
        return min(1.0, 2.0 ** (1 - i))

    def member(self, i: int, r: int, x: int) -> bool:
        if not 1 <= i <= self.levels:
            raise ValueError(f"level {i} out of range [1, {self.levels}]")
        return self.hashes[r].eval(x) < (1 << (self.bits - i + 1))

    def member_many(self, i: int, r: int, xs: np.ndarray) -> np.ndarray:
        if not 1 <= i <= self.levels:
            raise ValueError(f"level {i} out of range [1, {self.levels}]")
        return self.hashes[r].eval_many(xs) < (1 << (self.bits - i + 1))

    def deepest_level(self, r: int, x: int) -> int:
        """Largest level containing x for repetition r (>= 1 always)."""
        v = self.hashes[r].eval(x)
        lz = self.bits - int(v).bit_length()
        return min(self.levels, lz + 1)

    def deepest_level_many(self, r: int, xs: np.ndarray) -> np.ndarray:
        v = self.hashes[r].eval_many(xs)
        # frexp exponent equals bit_length for integers (exact below 2^53)
        _, exp = np.frexp(v.astype(np.float64))
        lz = self.bits - exp
        return np.minimum(self.levels, lz + 1)
