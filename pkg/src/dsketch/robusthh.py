"""Adversarially robust heavy hitters via dense-sparse switching.

A deterministic residue sketch answers while the vector is sparse (its output
is a pure function of the stream, so adaptivity buys the adversary nothing).
A DP-wrapped CountSketch ensemble takes over when a robust distinct-count
gate says the support is large - exactly the regime where integer frequencies
force the adversary to spend many updates to move anything, so a block-start
snapshot stays valid across the block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .detsketch import ResidueHeavyHitters, plan_hh_tables
from .dpwrap import RobustCountSketch, RobustL0, schedule_instances
from .randsketch import countsketch_dims
from .stream import StreamError, UpdateError

SPARSE = "SPARSE"
DENSE = "DENSE"


@dataclass(frozen=True)
class RobustHHConfig:
    """Derived parameters of the switching algorithm.

    t is the support scale m^(p/(4p-3)); blocks are ell updates long with the
    gate (a robust factor-2 L0 estimate vs 100t) evaluated at block ends.
    The deterministic sketch is sized for support 200t: the gate guarantees
    at most 2 * 100t true nonzeros whenever it reports SPARSE.
    """

    n: int
    m: int
    p: float
    eps: float
    c_t: float = 1.0
    block_len: int | None = None
    delta: float = 0.05
    delta0: float = 0.25
    c1: float = 4.0
    l0_instances: int | None = None
    l0_reps: int | None = None
    cs_instances: int | None = None

    @property
    def t(self) -> int:
        return max(1, math.ceil(self.c_t * self.m ** (self.p / (4 * self.p - 3))))

    @property
    def ell(self) -> int:
        if self.block_len is not None:
            return max(1, int(self.block_len))
        return max(1, math.floor((self.eps / 100.0) * self.t ** (1.0 / self.p)))

    @property
    def blocks(self) -> int:
        return math.ceil(self.m / self.ell)

    @property
    def rounds(self) -> int:
        return max(1, math.ceil(100.0 * self.m / (self.eps * self.t ** (1.0 / self.p))))

    @property
    def support_bound(self) -> int:
        return 200 * self.t

    @property
    def gate_threshold(self) -> float:
        return 100.0 * self.t


class RobustHeavyHitters:
    """eps-heavy-hitter reports correct at every step of an adaptive
    turnstile stream of length m."""

    def __init__(self, n: int, m: int, p: float, eps: float, seed: int = 0,
                 config: RobustHHConfig | None = None, **overrides):
        if config is None:
            config = RobustHHConfig(n=n, m=m, p=p, eps=eps, **overrides)
        self.cfg = config
        self.n, self.m, self.p, self.eps = int(n), int(m), float(p), float(eps)
        seeds = np.random.SeedSequence(seed).spawn(2)
        self.dethh = ResidueHeavyHitters(n, support_bound=config.support_bound,
                                         threshold=eps / 16.0, p=p)
        self.rcs = RobustCountSketch(
            n, m, threshold=eps / 16.0, rounds=config.blocks, p=p,
            delta=config.delta, delta0=config.delta0, c1=config.c1,
            instances=config.cs_instances, seed=int(seeds[0].generate_state(1)[0]))
        self.l0 = RobustL0(
            n, query_budget=config.blocks + 1, delta=config.delta,
            delta0=config.delta0, c1=config.c1, instances=config.l0_instances,
            est_reps=config.l0_reps, seed=int(seeds[1].generate_state(1)[0]))
        self.mode = SPARSE
        self.mode_at_block_start = SPARSE
        self.block_pos = 0
        self.updates_seen = 0
        self.cached_report: list[tuple[int, float]] = []
        self.last_gate_value: float | None = None

    def update(self, index: int, delta: int) -> None:
        if self.updates_seen >= self.m:
            raise StreamError(f"stream length bound m={self.m} exceeded")
        if not 0 <= index < self.n:
            raise UpdateError(f"index {index} out of range [0, {self.n})")
        self.dethh.update(index, delta)
        self.rcs.update(index, delta)
        self.l0.update(index, delta)
        self.updates_seen += 1
        self.block_pos += 1
        if self.block_pos == self.cfg.ell:
            self._gate()
            self.block_pos = 0

    def _gate(self) -> None:
        z = self.l0.query()
        self.last_gate_value = z
        self.mode = DENSE if z > self.cfg.gate_threshold else SPARSE
        self.mode_at_block_start = self.mode
        if self.mode == DENSE:
            # snapshot once per block; queries inside the block reuse it
            self.cached_report = self.rcs.heavy_hitters(report_eps=self.eps / 2.0)
        else:
            self.cached_report = []

    def query(self) -> list[tuple[int, float]]:
        """Heavy-hitter report for the problem eps.

        SPARSE blocks answer live from the deterministic sketch; DENSE blocks
        return the block-start ensemble snapshot (cut at eps/2, whose margins
        absorb the within-block drift of at most ell unit updates).
        """
        if self.mode_at_block_start == SPARSE:
            return self.dethh.query(report_eps=self.eps)
        return list(self.cached_report)

    def counter_count(self) -> int:
        return (self.dethh.counter_count() + self.rcs.counter_count()
                + self.l0.counter_count())


def space_plan(n: int, m: int, p: float, eps: float, *, c_t: float = 1.0,
               delta: float = 0.05, delta0: float = 0.25, c1: float = 4.0,
               l0_capacity: int = 64) -> dict[str, int]:
    """Counter allocation of the switching algorithm without building it.

    Used by the space-census tests: every component follows the same
    m^((2p-2)/(4p-3)) shape up to polylog factors.
    """
    cfg = RobustHHConfig(n=n, m=m, p=p, eps=eps, c_t=c_t, delta=delta,
                         delta0=delta0, c1=c1)
    det = plan_hh_tables(n, cfg.support_bound, eps / 16.0, p).counter_count
    # mirror RobustCountSketch's sizing
    cand_cap = min(n, math.ceil((4.0 / (eps / 16.0)) ** p))
    cs_budget = cfg.blocks * cand_cap
    cs_instances = schedule_instances(cs_budget, delta, delta0, c1)
    d, w = countsketch_dims(n, m, (eps / 16.0) / 16.0, delta0)
    cs = cs_instances * d * min(w, n)
    l0_instances = schedule_instances(cfg.blocks + 1, delta, delta0, c1)
    l0_reps = math.ceil(24.0 * math.log(1.0 / delta0))
    l0_levels = max(1, math.ceil(math.log2(max(n, 2)))) + 1
    l0 = l0_instances * l0_reps * l0_levels * l0_capacity
    return {"dethh": det, "robust_cs": cs, "robust_l0": l0,
            "total": det + cs + l0}
