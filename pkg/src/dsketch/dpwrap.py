"""Differential-privacy robustness wrapper.

An ensemble of independently seeded oblivious sketch instances answers each
query through a private median (exponential mechanism over a fixed answer
grid). The privacy noise breaks the feedback loop an adaptive adversary
needs, so a budget of Q adaptive queries stays correct with an instance count
scaling like sqrt(Q) times polylog factors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .randsketch import CountSketch, L0Estimator


class BudgetExhaustedError(Exception):
    """The ensemble's adaptive-query budget is spent."""


def make_grid(hi: float, ratio: float, lo: float = 1.0,
              signed: bool = False, include_zero: bool = True) -> np.ndarray:
    """Geometric candidate grid spanning [lo, hi], optionally mirrored to
    negative values, with a dedicated zero atom."""
    if not hi >= lo > 0:
        raise ValueError("need hi >= lo > 0")
    if ratio <= 1.0:
        raise ValueError("ratio must exceed 1")
    count = int(math.floor(math.log(hi / lo) / math.log(ratio))) + 1
    pos = lo * ratio ** np.arange(count, dtype=np.float64)
    parts = [pos]
    if signed:
        parts.append(-pos)
    if include_zero:
        parts.append(np.zeros(1))
    return np.unique(np.concatenate(parts))


def snap_to_grid(values: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Nearest grid element; equidistant values snap to the smaller one."""
    values = np.clip(np.asarray(values, dtype=np.float64), grid[0], grid[-1])
    right = np.searchsorted(grid, values)
    right = np.clip(right, 1, len(grid) - 1)
    left = right - 1
    pick_left = (values - grid[left]) <= (grid[right] - values)
    return np.where(pick_left, grid[left], grid[right])


@dataclass(frozen=True)
class PrivMedConfig:
    """Private-median parameters: privacy eps, candidate grid, failure prob."""

    dp_epsilon: float
    grid: np.ndarray
    delta_fail: float = 0.05

    def __post_init__(self) -> None:
        if self.dp_epsilon <= 0:
            raise ValueError("dp_epsilon must be positive")
        if len(self.grid) == 0:
            raise ValueError("grid must be non-empty")

    def rank_slack(self) -> float:
        """Rank error bound: with prob >= 1-delta the output has at least
        |S|/2 - slack elements on each side."""
        return (2.0 / self.dp_epsilon) * math.log(len(self.grid) / self.delta_fail)


def private_median(values, cfg: PrivMedConfig, rng: np.random.Generator) -> float:
    """Exponential-mechanism median over cfg.grid.

    Values are snapped onto the grid first (otherwise a multiset living
    strictly between two atoms would leave every candidate at the worst
    utility). Utility of a candidate x is then
    -max(N/2 - #{v <= x}, N/2 - #{v >= x}, 0), which has sensitivity 1 and
    is uniquely maximized by true medians.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("private_median needs at least one value")
    svals = np.sort(snap_to_grid(values, cfg.grid))
    N = svals.size
    cnt_le = np.searchsorted(svals, cfg.grid, side="right")
    cnt_ge = N - np.searchsorted(svals, cfg.grid, side="left")
    utility = -np.maximum(np.maximum(N / 2.0 - cnt_le, N / 2.0 - cnt_ge), 0.0)
    scores = 0.5 * cfg.dp_epsilon * utility + rng.gumbel(size=len(cfg.grid))
    return float(cfg.grid[int(np.argmax(scores))])


def schedule_instances(budget: int, delta: float, delta0: float, c1: float = 4.0) -> int:
    """Ensemble size for a Q-query adaptive budget:
    ceil(c1 * sqrt(Q) * ln^2(Q / (delta * delta0)))."""
    q = max(1, int(budget))
    return max(1, math.ceil(c1 * math.sqrt(q) * math.log(q / (delta * delta0)) ** 2))


def dp_epsilon_for(instances: int, grid_size: int, delta: float) -> float:
    """Per-query privacy parameter 1/r chosen so the private median's rank
    slack is a quarter of the ensemble, keeping the aggregate meaningful."""
    return 8.0 * math.log(max(grid_size, 2) / delta) / max(1, instances)


class RobustEnsemble:
    """k independent instances answering through a private median.

    Every update goes to every instance; queries debit a budget of Q and
    raise BudgetExhaustedError beyond it. Instance seeds are spawned from a
    single master seed; the mechanism randomness is a separate stream that
    advances per query.
    """

    def __init__(self, factory: Callable[[int], object], count: int,
                 query_budget: int, privmed: PrivMedConfig, seed: int):
        seeds = np.random.SeedSequence(seed).spawn(count + 1)
        self.instances = [factory(int(s.generate_state(1)[0])) for s in seeds[:count]]
        self._rng = np.random.default_rng(seeds[count])
        self.privmed = privmed
        self.query_budget = int(query_budget)
        self.queries_used = 0

    def __len__(self) -> int:
        return len(self.instances)

    def update(self, index: int, delta: int) -> None:
        for inst in self.instances:
            inst.update(index, delta)

    def extend(self, indices, deltas) -> None:
        for inst in self.instances:
            inst.extend(indices, deltas)

    def _debit(self, amount: int = 1) -> None:
        if self.queries_used + amount > self.query_budget:
            raise BudgetExhaustedError(
                f"budget {self.query_budget} exhausted ({self.queries_used} used, "
                f"{amount} requested)")
        self.queries_used += amount

    def query(self, qfn: Callable[[object], float]) -> float:
        self._debit(1)
        values = np.array([qfn(inst) for inst in self.instances], dtype=np.float64)
        return private_median(values, self.privmed, self._rng)

    def query_batch(self, qfn: Callable[[object], np.ndarray]) -> np.ndarray:
        """Aggregate a vector answer coordinate-wise; debits one query per
        coordinate."""
        values = np.stack([np.asarray(qfn(inst), dtype=np.float64)
                           for inst in self.instances])
        self._debit(values.shape[1])
        return np.array([
            private_median(values[:, j], self.privmed, self._rng)
            for j in range(values.shape[1])
        ])


class RobustL0:
    """Adaptive-safe factor-2 distinct count: a private median over
    independent L0Estimator instances."""

    def __init__(self, n: int, query_budget: int, delta: float = 0.05,
                 delta0: float = 0.25, c1: float = 4.0, seed: int = 0,
                 instances: int | None = None, est_reps: int | None = None,
                 grid_ratio: float = 1.25):
        self.n = int(n)
        count = instances if instances is not None else schedule_instances(
            query_budget, delta, delta0, c1)
        grid = make_grid(hi=max(2.0 * n, 2.0), ratio=grid_ratio)
        cfg = PrivMedConfig(dp_epsilon=dp_epsilon_for(count, len(grid), delta),
                            grid=grid, delta_fail=delta)
        self.ensemble = RobustEnsemble(
            factory=lambda s: L0Estimator(n, delta=delta0, reps=est_reps, seed=s),
            count=count, query_budget=query_budget, privmed=cfg, seed=seed)

    def update(self, index: int, delta: int) -> None:
        self.ensemble.update(index, delta)

    def extend(self, indices, deltas) -> None:
        self.ensemble.extend(indices, deltas)

    def query(self) -> float:
        return self.ensemble.query(lambda inst: float(inst.query()))

    def counter_count(self) -> int:
        return sum(inst.counter_count() for inst in self.ensemble.instances)


class RobustCountSketch:
    """Adaptive-safe heavy hitters: CountSketch instances aggregated by a
    per-coordinate private median.

    threshold is the heavy-hitter eps the reports are sized for; internal
    sketch accuracy is threshold/16 so estimates stay sharp enough for the
    two-sided membership rule across a block of pending updates. The budget
    is rounds * candidate_cap coordinate aggregations.
    """

    def __init__(self, n: int, m: int, threshold: float, rounds: int, p: float,
                 delta: float = 0.05, delta0: float = 0.25, c1: float = 4.0,
                 seed: int = 0, instances: int | None = None,
                 candidate_cap: int | None = None, grid_ratio: float | None = None):
        self.n = int(n)
        self.p = float(p)
        self.threshold = float(threshold)
        if candidate_cap is None:
            candidate_cap = min(n, math.ceil((4.0 / threshold) ** p))
        self.candidate_cap = int(candidate_cap)
        budget = max(1, int(rounds)) * self.candidate_cap
        count = instances if instances is not None else schedule_instances(
            budget, delta, delta0, c1)
        ratio = grid_ratio if grid_ratio is not None else 1.0 + threshold / 8.0
        grid = make_grid(hi=float(n) * float(m) ** 2, ratio=ratio, signed=True)
        cfg = PrivMedConfig(dp_epsilon=dp_epsilon_for(count, len(grid), delta),
                            grid=grid, delta_fail=delta)
        self.ensemble = RobustEnsemble(
            factory=lambda s: CountSketch(n, m, accuracy=self.threshold / 16.0,
                                          delta=delta0, seed=s),
            count=count, query_budget=budget, privmed=cfg, seed=seed)

    def update(self, index: int, delta: int) -> None:
        self.ensemble.update(index, delta)

    def extend(self, indices, deltas) -> None:
        self.ensemble.extend(indices, deltas)

    def point_robust(self, x: int) -> float:
        return self.ensemble.query(lambda inst: inst.point(x))

    def heavy_hitters(self, report_eps: float | None = None) -> list[tuple[int, float]]:
        """Report of (index, aggregated estimate) at the given eps cut.

        Candidates are the union of each instance's largest estimates; each
        candidate costs one budgeted aggregation.
        """
        eps = self.threshold if report_eps is None else float(report_eps)
        per_inst = []
        candidates: set[int] = set()
        xs = np.arange(self.n)
        for inst in self.ensemble.instances:
            est = inst.point_many(xs)
            per_inst.append(est)
            mags = np.abs(est)
            top = np.argpartition(mags, -min(self.candidate_cap, self.n))[-self.candidate_cap:]
            candidates.update(int(t) for t in top if mags[t] > 0)
        if not candidates:
            return []
        cand = np.array(sorted(candidates), dtype=np.int64)
        self.ensemble._debit(len(cand))
        stack = np.stack([est[cand] for est in per_inst])
        agg = np.array([
            private_median(stack[:, j], self.ensemble.privmed, self.ensemble._rng)
            for j in range(len(cand))
        ])
        mags = np.abs(agg)
        powers = np.sort(mags ** self.p)[::-1]
        top_total = float(np.sum(powers[: self.candidate_cap]))
        norm_hat = top_total ** (1.0 / self.p) if top_total > 0 else 0.0
        keep = (mags >= 0.75 * eps * norm_hat) & (mags > 0)
        order = np.lexsort((cand[keep], -mags[keep]))
        return [(int(x), float(v)) for x, v in zip(cand[keep][order], agg[keep][order])]

    def counter_count(self) -> int:
        return sum(inst.counter_count() for inst in self.ensemble.instances)
