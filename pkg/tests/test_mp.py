import csv
import io

import pytest
from hypothesis import given, strategies as st

from alloc_lab.classify import Reason
from alloc_lab.core import LffnConfig, LrnnConfig, Target, VerdictKind
from alloc_lab.errors import InvalidConfig
from alloc_lab.mp import (
    CSV_COLUMNS,
    FixedPolicy,
    LayerSplitPolicy,
    MpEstimate,
    RowPolicy,
    SolverOptions,
    estimate_mp,
    feasible_ks,
    k_threshold,
    lrnn_for_n,
    run_trial,
    run_trials,
    sweep_k,
    sweep_n,
    wilson_interval,
    worker_count,
    write_csv,
)
from alloc_lab.sampling import allocation_for

CFG = LrnnConfig(n=8, b=1, d=2, T=2, m=2)


class TestWilson:
    @given(st.integers(1, 500).flatmap(lambda n: st.tuples(st.integers(0, n), st.just(n))))
    def test_contains_point(self, counts):
        s, n = counts
        est = MpEstimate.from_counts(s, n)
        assert 0.0 <= est.ci_low <= est.point <= est.ci_high <= 1.0

    def test_known_value(self):
        lo, hi = wilson_interval(50, 100)
        assert lo == pytest.approx(0.4038, abs=1e-4) and hi == pytest.approx(0.5962, abs=1e-4)

    def test_rejects_bad_counts(self):
        with pytest.raises(ValueError):
            MpEstimate.from_counts(3, 2)
        with pytest.raises(ValueError):
            MpEstimate.from_counts(0, 0)


class TestRouting:
    def test_minimal_skips_solver(self):
        out = run_trial(CFG, RowPolicy(Target.RECURRENT, 1, "none"), 0)
        assert out.verdict.kind is VerdictKind.MINIMAL
        assert out.route == "minimal" and not out.solver_called and not out.matched

    def test_maximal_constructs(self):
        out = run_trial(CFG, RowPolicy(Target.RECURRENT, 2, "strict"), 0)
        assert out.route == "construct" and out.matched

    def test_undetermined_solves(self):
        out = run_trial(CFG, RowPolicy(Target.RECURRENT, 3, "strict"), 0, opts=SolverOptions(budget=5))
        assert out.verdict.kind is VerdictKind.UNDETERMINED
        assert out.route == "root_find" and out.solver_called

    def test_rows_system_option(self):
        out = run_trial(CFG, RowPolicy(Target.RECURRENT, 3, "strict"), 1, opts=SolverOptions(budget=5, recurrent_system="rows"))
        assert out.route == "root_find"

    def test_ff_split(self):
        cfg = LffnConfig((3, 6, 2), m=3)
        out = run_trial(cfg, LayerSplitPolicy(3), 0, opts=SolverOptions(budget=5))
        assert out.verdict.reason is Reason.MULTI_LAYER


class TestEstimate:
    def test_maximal_policy_is_one(self):
        est = estimate_mp(CFG, RowPolicy(Target.RECURRENT, 2, "strict"), trials=30)
        assert est.point == 1.0 and est.construct_failures == 0

    def test_row_cap_policy_is_zero(self):
        est = estimate_mp(CFG, RowPolicy(Target.RECURRENT, 1, "none"), trials=30)
        assert est.point == 0.0 and est.mean_restarts == 0.0

    def test_decoder_fixed(self):
        a = allocation_for(CFG, "decoder", [(0, 0), (0, 5), (1, 2), (1, 7)])
        assert estimate_mp(CFG, FixedPolicy(a), trials=10).point == 1.0

    def test_seed_reproducible(self):
        policy = RowPolicy(Target.RECURRENT, 3, "strict")
        a = estimate_mp(CFG, policy, trials=8, budget=6, seed=4)
        b = estimate_mp(CFG, policy, trials=8, budget=6, seed=4)
        assert (a.successes, a.mean_restarts, a.fingerprint) == (b.successes, b.mean_restarts, b.fingerprint)

    def test_trials_zero_rejected(self):
        with pytest.raises(InvalidConfig):
            estimate_mp(CFG, RowPolicy(Target.RECURRENT, 2), trials=0)
        with pytest.raises(InvalidConfig):
            sweep_k(CFG, [2], trials=0)

    def test_workers_match_serial(self, monkeypatch):
        monkeypatch.setenv("ALLOC_LAB_THREADS", "2")
        policy = RowPolicy(Target.RECURRENT, 3, "strict")
        opts = SolverOptions(budget=4)
        serial = run_trials(CFG, policy, 6, seed=2, opts=opts, workers=1)
        parallel = run_trials(CFG, policy, 6, seed=2, opts=opts, workers=2)
        assert [(o.index, o.matched, o.restarts) for o in serial] == [(o.index, o.matched, o.restarts) for o in parallel]

    def test_worker_cap(self, monkeypatch):
        monkeypatch.delenv("ALLOC_LAB_THREADS", raising=False)
        assert worker_count(8) == 1
        monkeypatch.setenv("ALLOC_LAB_THREADS", "3")
        assert worker_count(8) == 3 and worker_count(None) == 3
        monkeypatch.setenv("ALLOC_LAB_THREADS", "x")
        with pytest.raises(InvalidConfig):
            worker_count()


class TestSweeps:
    def test_threshold(self):
        assert k_threshold(lrnn_for_n(8)) == 2
        assert k_threshold(lrnn_for_n(16)) == 4

    def test_lrnn_for_n(self):
        assert lrnn_for_n(12, d=4) == LrnnConfig(n=12, b=1, d=4, T=6, m=6)
        with pytest.raises(InvalidConfig):
            lrnn_for_n(10)

    def test_feasible_ks(self):
        assert feasible_ks(lrnn_for_n(8)) == list(range(1, 9))

    def test_sweep_k_rows(self):
        rows = sweep_k(CFG, [1, 2], trials=5, caps="strict")
        assert [r.k for r in rows] == [1, 2]
        assert rows[0].estimate is None and rows[0].error
        assert rows[1].estimate.point == 1.0

    def test_sweep_n_transition(self):
        rows = sweep_n([8], k_fractions=[1 / 8, 2 / 8], trials=10, caps="auto")
        assert [(r.k, r.estimate.point) for r in rows] == [(1, 0.0), (2, 1.0)]

    def test_csv(self):
        rows = sweep_k(CFG, [1, 2], trials=5, caps="strict")
        buf = io.StringIO()
        write_csv(rows, buf)
        table = list(csv.DictReader(io.StringIO(buf.getvalue())))
        assert tuple(table[0]) == CSV_COLUMNS
        assert table[0]["mp"] == "" and table[0]["trials"] == "0"
        assert float(table[1]["mp"]) == 1.0
