import numpy as np
import pytest

from dsketch.robusthh import DENSE, SPARSE, RobustHeavyHitters, RobustHHConfig, space_plan
from dsketch.stream import StreamError, exact_fp, exact_heavy_hitters


def fast_rhh(n, m, p, eps, seed=0, **kw):
    kw.setdefault("l0_instances", 5)
    kw.setdefault("l0_reps", 3)
    kw.setdefault("cs_instances", 3)
    return RobustHeavyHitters(n, m, p, eps, seed=seed, **kw)


def test_config_derivations():
    cfg = RobustHHConfig(n=1 << 12, m=1 << 14, p=1.5, eps=0.25)
    assert cfg.t == int(np.ceil((1 << 14) ** (1.5 / 3.0)))
    assert cfg.ell >= 1
    assert cfg.blocks * cfg.ell >= cfg.m
    assert cfg.support_bound == 200 * cfg.t
    cfg2 = RobustHHConfig(n=64, m=1 << 14, p=1.5, eps=0.25, block_len=128)
    assert cfg2.ell == 128


def test_mode_stays_sparse_before_first_gate():
    s = fast_rhh(1 << 10, 1 << 12, 1.5, 0.25, block_len=64)
    for i in range(63):
        s.update(i, 1)
    assert s.mode == SPARSE
    assert s.last_gate_value is None
    s.update(63, 1)
    assert s.last_gate_value is not None


def test_single_key_sparse_path():
    n, m = 1 << 10, 1 << 12
    s = fast_rhh(n, m, 1.5, 0.25, block_len=64)
    for _ in range(m // 2):
        s.update(5, 1)
    report = dict(s.query())
    assert set(report) == {5}
    assert abs(report[5] - m // 2) <= (0.25 / 16) * (m // 2)


def test_zero_vector_empty_report():
    s = fast_rhh(1 << 10, 1 << 12, 1.5, 0.25, block_len=64)
    assert s.query() == []
    s.update(3, 1)
    s.update(3, -1)
    assert s.query() == []


def test_gate_flips_dense_and_back():
    n, m = 1 << 13, 1 << 15
    s = fast_rhh(n, m, 2.0, 0.5, c_t=0.25, block_len=256, seed=3)
    thr = s.cfg.gate_threshold
    distinct = int(min(n, 4 * thr))
    for i in range(distinct):
        s.update(i, 1)
    # gate has run on a vector with >= 2*threshold distinct keys
    assert s.last_gate_value > thr
    assert s.mode == DENSE
    # delete almost everything: next gates flip back
    for i in range(distinct - 10):
        s.update(i, -1)
    assert s.mode == SPARSE
    assert s.last_gate_value <= thr


def test_dense_snapshot_is_stable_within_block():
    n, m = 1 << 13, 1 << 15
    s = fast_rhh(n, m, 2.0, 0.5, c_t=0.25, block_len=256, seed=4)
    distinct = int(min(n, 4 * s.cfg.gate_threshold))
    for i in range(distinct):
        s.update(i, 1)
    assert s.mode_at_block_start == DENSE
    first = s.query()
    for i in range(100):  # stay inside the block
        s.update(i, 1)
    assert s.query() == first


def test_sparse_answers_are_live_and_deterministic():
    n, m = 1 << 10, 1 << 12
    def run():
        s = fast_rhh(n, m, 1.5, 0.25, block_len=64, seed=9)
        outs = []
        rng = np.random.default_rng(11)
        for t in range(512):
            i = int(rng.integers(0, 32))
            s.update(i, 1)
            outs.append(tuple(s.query()))
        return outs
    assert run() == run()


def test_sparse_report_matches_oracle_each_round():
    n, m, p, eps = 1 << 10, 1 << 12, 1.5, 0.25
    s = fast_rhh(n, m, p, eps, block_len=64, seed=5)
    rng = np.random.default_rng(6)
    f = np.zeros(n, dtype=np.int64)
    for t in range(1500):
        i = int(rng.integers(0, 40))
        d = 1 if rng.random() < 0.8 or f[i] <= 0 else -1
        s.update(i, d)
        f[i] += d
        report = dict(s.query())
        norm = exact_fp(f, p) ** (1 / p)
        for j, fj in enumerate(f):
            if fj != 0 and abs(fj) >= eps * norm:
                assert j in report, t
        for j in report:
            assert abs(f[j]) >= eps / 2 * norm * (1 - 1e-9), t


def test_stream_length_overflow():
    s = fast_rhh(64, 8, 1.5, 0.25, block_len=4)
    for i in range(8):
        s.update(i % 64, 1)
    with pytest.raises(StreamError):
        s.update(0, 1)


def test_space_plan_exponent():
    p = 1.5
    target = (2 * p - 2) / (4 * p - 3)
    a = space_plan(1 << 24, 1 << 40, p, 0.5)["total"]
    b = space_plan(1 << 24, 1 << 44, p, 0.5)["total"]
    measured = np.log(b / a) / np.log(16.0)
    assert abs(measured - target) <= 0.08
