"""Residual moment estimation: F_{p,Res(k)} to additive accuracy via level
sets over nested subsampled universes.

Estimated coordinate powers are bucketed into geometric value bands below a
randomized ceiling zeta*M. Each band's population is counted on the subsample
level where its members would be heavy, rescaled by the sampling rate, and a
truncation budget of k coordinates is consumed from the largest band down.
The answer is the surviving population of each band times the band's value.

Space is independent of k: the budget only enters at query time, so one pass
serves any tail parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .hashing import SubsampleLadder
from .randsketch import CountSketch
from .stream import UpdateError


@dataclass(frozen=True)
class ResidualConfig:
    """Derived shape of the level-set estimator.

    eta is eps/100; L bands cover value ratios (1+eta) down from the ceiling;
    P subsample levels and R repetitions feed the band counts; gamma offsets
    how early subsampling kicks in (large gamma defers it until coordinate
    powers are genuinely tiny relative to the ceiling).
    """

    n: int
    m: int
    p: float
    eps: float
    gamma: float = 2.0**20
    c_levels: float = 2.0      # scales L
    c_sample: float = 2.0      # scales P
    c_reps: float = 8.0        # scales R
    reps: int | None = None
    cs_delta: float = 0.05
    cs_accuracy: float | None = None
    value_rule: str = "endpoint"  # or "literal"

    def __post_init__(self) -> None:
        if not 1.0 <= self.p <= 2.0:
            raise ValueError("p must be in [1, 2]")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must be in (0, 1)")
        if self.value_rule not in ("endpoint", "literal"):
            raise ValueError("value_rule must be 'endpoint' or 'literal'")

    @property
    def eta(self) -> float:
        return self.eps / 100.0

    @property
    def log_nm(self) -> float:
        return math.log2(max(self.n, 2) * max(self.m, 2))

    @property
    def levels(self) -> int:
        return math.ceil(self.c_levels * self.log_nm / self.eta)

    @property
    def sample_levels(self) -> int:
        return max(1, math.ceil(self.c_sample * self.log_nm))

    @property
    def repetitions(self) -> int:
        if self.reps is not None:
            return max(1, int(self.reps))
        inner = max(2.0, math.log2(max(self.n, 4)) / self.eta)
        return max(1, math.ceil(self.c_reps * math.log2(inner)))

    @property
    def moment_ceiling(self) -> float:
        """Power of two M with m^p <= M < 2 m^p."""
        return 2.0 ** math.ceil(self.p * math.log2(max(self.m, 2)))

    @property
    def accuracy(self) -> float:
        return self.cs_accuracy if self.cs_accuracy is not None else self.eta**3

    def sample_level(self, level: int) -> int:
        """Subsample depth for value band ``level`` (1-based, largest first):
        max(1, floor(level*log2(1+eta) - log2(gamma^2*log2(nm)/eta^3)))."""
        if not 1 <= level <= self.levels:
            raise ValueError(f"level {level} out of range [1, {self.levels}]")
        offset = math.log2(self.gamma**2 * self.log_nm / self.eta**3)
        raw = math.floor(level * math.log2(1.0 + self.eta) - offset)
        return min(max(1, raw), self.sample_levels)

    @property
    def effective_sample_levels(self) -> int:
        """Deepest subsample level any *useful* band can ask for.

        Bands whose value range sits below the reporting floor of 0.25 can
        never count an integer-frequency coordinate, so the levels only they
        would touch never need live sketches. Uses the worst-case ceiling
        (zeta = 2) so the cap is valid for every instance.
        """
        ceiling = 2.0 * self.moment_ceiling
        deepest_useful = math.ceil(math.log(ceiling / 0.25) / math.log1p(self.eta))
        return self.sample_level(min(self.levels, max(1, deepest_useful)))


@dataclass
class LevelEstimate:
    """Per-band diagnostics emitted by detailed queries."""

    level: int
    sample_level: int
    raw_counts: list[int]
    gamma_hat: float
    t_ell: float
    contribution: float
    value: float = field(default=0.0)


class ResidualMomentEstimator:
    """One-pass estimator of F_{p,Res(k)} with additive error
    eps * F_{p,Res((1-eps)k)} (success probability a constant above 1/2;
    wrap in a robust ensemble for adaptive streams)."""

    def __init__(self, n: int, m: int, p: float, eps: float, seed: int = 0,
                 config: ResidualConfig | None = None, **overrides):
        if config is None:
            config = ResidualConfig(n=n, m=m, p=p, eps=eps, **overrides)
        self.cfg = config
        self.n, self.m, self.p, self.eps = int(n), int(m), float(p), float(eps)
        seeds = np.random.SeedSequence(seed).spawn(3)
        self.zeta = 1.0 + float(np.random.default_rng(seeds[0]).uniform())
        self.levels_alloc = config.effective_sample_levels
        self.reps = config.repetitions
        self.ladder = SubsampleLadder(n, levels=self.levels_alloc,
                                      repetitions=self.reps,
                                      seed=int(seeds[1].generate_state(1)[0]))
        sketch_seeds = seeds[2].spawn(self.levels_alloc * self.reps)
        self.sketches = [
            [CountSketch(n, m, accuracy=config.accuracy, delta=config.cs_delta,
                         seed=int(sketch_seeds[(i - 1) * self.reps + r].generate_state(1)[0]))
             for r in range(self.reps)]
            for i in range(1, self.levels_alloc + 1)
        ]
        self._depth_cache: list[dict[int, int]] = [dict() for _ in range(self.reps)]

    def update(self, index: int, delta: int) -> None:
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        for r in range(self.reps):
            depth = self._depth_cache[r].get(index)
            if depth is None:
                depth = self.ladder.deepest_level(r, index)
                self._depth_cache[r][index] = depth
            for i in range(1, min(depth, self.levels_alloc) + 1):
                self.sketches[i - 1][r].update(index, delta)

    def extend(self, indices, deltas) -> None:
        indices = np.asarray(indices, dtype=np.int64)
        deltas = np.asarray(deltas, dtype=np.int64)
        for r in range(self.reps):
            depth = self.ladder.deepest_level_many(r, indices)
            for i in range(1, self.levels_alloc + 1):
                mask = depth >= i
                if not mask.any():
                    break
                self.sketches[i - 1][r].extend(indices[mask], deltas[mask])

    def _band_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        ls = np.arange(1, cfg.levels + 1, dtype=np.float64)
        ceiling = self.zeta * cfg.moment_ceiling
        lo = ceiling * np.exp(-ls * math.log1p(cfg.eta))
        hi = np.empty_like(lo)
        hi[1:] = lo[:-1]
        hi[0] = ceiling * (1.0 + 1e-12)  # top band closed at the ceiling
        return lo, hi

    def _estimated_powers(self, i: int, r: int) -> np.ndarray:
        """Sorted estimated |f_x|^p over the (i, r) subsample, with the same
        reporting floor CountSketch uses."""
        xs = np.flatnonzero(self.ladder.member_many(i, r, np.arange(self.n)))
        if xs.size == 0:
            return np.empty(0)
        est = np.abs(self.sketches[i - 1][r].point_many(xs))
        tau = max(self.cfg.accuracy ** self.p * self.cfg.moment_ceiling, 0.25)
        powers = est ** self.p
        return np.sort(powers[powers >= tau])

    def query(self, k: int) -> float:
        return self.query_detailed(k)[0]

    def query_detailed(self, k: int) -> tuple[float, list[LevelEstimate]]:
        if k < 0:
            raise ValueError("k must be >= 0")
        cfg = self.cfg
        lo, hi = self._band_bounds()
        level_i = np.minimum(
            np.maximum(1, np.floor(np.arange(1, cfg.levels + 1)
                                   * math.log2(1.0 + cfg.eta)
                                   - math.log2(cfg.gamma**2 * cfg.log_nm / cfg.eta**3)
                                   ).astype(np.int64)),
            self.levels_alloc)
        counts = np.zeros((cfg.levels, self.reps), dtype=np.float64)
        for i in np.unique(level_i):
            sel = level_i == i
            for r in range(self.reps):
                powers = self._estimated_powers(int(i), r)
                counts[sel, r] = (np.searchsorted(powers, hi[sel], side="left")
                                  - np.searchsorted(powers, lo[sel], side="left"))
        rates = np.minimum(1.0, 2.0 ** (1.0 - level_i.astype(np.float64)))
        gamma_hat = np.median(counts, axis=1) / rates
        if cfg.value_rule == "endpoint":
            values = lo
        else:
            values = (1.0 + cfg.eta) ** (2.0 * np.arange(1, cfg.levels + 1))
        # insignificant bands contribute nothing: few estimated members and a
        # negligible share of the estimated total
        totals = gamma_hat * values
        grand = float(np.sum(totals))
        cutoff = cfg.eps**2 * cfg.eta / (100.0 * cfg.p * cfg.log_nm)
        small = (gamma_hat <= 1.0 / (200.0 * cfg.eta**3))
        insignificant = small & (totals < cutoff * grand) if grand > 0 else small
        # truncation budget consumed from the largest band down
        prefix = np.concatenate([[0.0], np.cumsum(gamma_hat)[:-1]])
        avail = np.maximum(float(k) - prefix, 0.0)
        t_ell = np.maximum(gamma_hat - avail, 0.0)
        contrib = t_ell * values
        contrib[insignificant] = 0.0
        total = float(np.sum(contrib))
        rows = [
            LevelEstimate(level=int(l + 1), sample_level=int(level_i[l]),
                          raw_counts=[int(c) for c in counts[l]],
                          gamma_hat=float(gamma_hat[l]), t_ell=float(t_ell[l]),
                          contribution=float(contrib[l]), value=float(values[l]))
            for l in np.flatnonzero(gamma_hat > 0)
        ]
        return total, rows

    def counter_count(self) -> int:
        return sum(sk.counter_count() for row in self.sketches for sk in row)
