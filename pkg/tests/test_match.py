import numpy as np
import pytest

from conftest import planted_instance
from alloc_lab.classify import classify
from alloc_lab.construct import construct
from alloc_lab.core import LrnnConfig, ReluConfig, VerdictKind
from alloc_lab.errors import EnumerationTooLarge
from alloc_lab.match import (
    iter_configurations,
    levenberg_marquardt,
    relu_match_exact,
    relu_match_opt,
    root_find,
    row_patterns,
)
from alloc_lab.reduce import reduce_recurrent_direct, reduce_recurrent_rows
from alloc_lab.sampling import EnsembleSpec, sample_allocation, sample_instance

LRNN = LrnnConfig(n=8, b=1, d=2, T=2, m=2)
RELU = ReluConfig(q=4, n=6, d=2, m=3)


def lrnn_case(seed, k, caps="strict"):
    a = sample_allocation(LRNN, "recurrent", k, caps=caps, seed=seed)
    return a, sample_instance(LRNN, a, EnsembleSpec(seed=seed))


class TestRootFind:
    def test_zero_budget(self):
        _, inst = lrnn_case(0, 3)
        rep = root_find(reduce_recurrent_direct(inst), budget=0)
        assert not rep.matched and rep.restarts_used == 0

    @pytest.mark.parametrize("method", ["hybr", "lm"])
    def test_minimal_never_matched(self, method):
        for seed in range(10):
            a, inst = lrnn_case(seed, 1, caps="none")
            assert classify(a, LRNN).kind is VerdictKind.MINIMAL
            rep = root_find(reduce_recurrent_direct(inst), budget=30, seed=seed, method=method)
            assert not rep.matched
            assert rep.best_residual > 1e-3

    def test_maximal_agrees_with_construct(self):
        for seed in range(10):
            a, inst = lrnn_case(seed, 2)
            assert classify(a, LRNN).kind is VerdictKind.MAXIMAL
            construct(inst)
            assert root_find(reduce_recurrent_direct(inst), budget=400, seed=seed).matched

    def test_planted_solution_found(self):
        a = sample_allocation(LRNN, "recurrent", 3, caps="strict", seed=5)
        inst = planted_instance(LRNN, [a], seed=5)
        assert root_find(reduce_recurrent_rows(inst), budget=100, seed=1).matched

    @pytest.mark.parametrize("method", ["hybr", "lm"])
    def test_budget_monotone(self, method):
        for seed in range(6):
            _, inst = lrnn_case(seed, 3)
            sys = reduce_recurrent_direct(inst)
            small = root_find(sys, budget=4, seed=seed, method=method)
            large = root_find(sys, budget=16, seed=seed, method=method)
            assert large.matched >= small.matched
            if small.matched:
                assert large.restarts_used == small.restarts_used
            assert large.best_residual <= small.best_residual or large.matched

    @pytest.mark.parametrize("method", ["hybr", "lm"])
    def test_deterministic(self, method):
        _, inst = lrnn_case(4, 3)
        sys = reduce_recurrent_direct(inst)
        a = root_find(sys, budget=8, seed=11, method=method)
        b = root_find(sys, budget=8, seed=11, method=method)
        assert a.same_outcome(b)

    def test_unknown_method(self):
        _, inst = lrnn_case(0, 3)
        with pytest.raises(ValueError):
            root_find(reduce_recurrent_direct(inst), method="adam")


class TestLevenbergMarquardt:
    def test_batched_linear(self, rng):
        A = rng.normal(size=(4, 4)) + 4 * np.eye(4)
        y = rng.normal(size=4)
        x0 = rng.normal(size=(3, 4))
        x, _ = levenberg_marquardt(
            lambda x: x @ A.T - y, lambda x: np.tile(A, x.shape[:-1] + (1, 1)), x0,
            lambda r: np.max(np.abs(r), axis=-1) < 1e-12,
        )
        assert np.allclose(x, np.linalg.solve(A, y))


class TestReluEnumeration:
    def test_row_patterns(self):
        assert len(row_patterns(3, 2)) == 4
        assert len(row_patterns(3, 0)) == 8

    def test_pruning_drops_configurations(self):
        pruned = list(iter_configurations(2, 3, [2, 1], 1, prune=True))
        full = list(iter_configurations(2, 3, [2, 1], 1, prune=False))
        assert (len(pruned), len(full)) == (19, 64)

    def test_bound(self):
        cfg = ReluConfig(q=6, n=12, d=4, m=6)
        a = sample_allocation(cfg, "layer", 6, caps="strict", seed=0, layer=0)
        inst = sample_instance(cfg, a, EnsembleSpec())
        with pytest.raises(EnumerationTooLarge):
            relu_match_exact(inst, a)

    def test_planted_matched(self):
        for seed in range(5):
            a = sample_allocation(RELU, "layer", 3, caps="strict", seed=seed, layer=0)
            inst = planted_instance(RELU, [a], seed=seed)
            assert relu_match_exact(inst, a).matched

    def test_prune_lossless(self):
        for seed in range(15):
            a = sample_allocation(RELU, "layer", 3, caps="strict", seed=seed, layer=0)
            inst = sample_instance(RELU, a, EnsembleSpec(seed=seed))
            assert relu_match_exact(inst, a, prune=True).matched == relu_match_exact(inst, a, prune=False).matched


class TestReluOptimizer:
    def test_agrees_with_enumeration(self):
        agree = false_match = 0
        for seed in range(20):
            a = sample_allocation(RELU, "layer", 3, caps="strict", seed=seed, layer=0)
            inst = sample_instance(RELU, a, EnsembleSpec(seed=seed))
            exact = relu_match_exact(inst, a).matched
            opt = relu_match_opt(inst, a, budget=100, seed=seed, mse_tol=1e-8, stall=None).matched
            agree += exact == opt
            false_match += opt and not exact
        assert false_match == 0
        assert agree >= 18

    def test_planted_matched(self):
        a = sample_allocation(RELU, "layer", 3, caps="strict", seed=2, layer=0)
        inst = planted_instance(RELU, [a], seed=2)
        assert relu_match_opt(inst, a, budget=50, seed=0).matched

    def test_deterministic(self):
        a = sample_allocation(RELU, "layer", 3, caps="strict", seed=3, layer=0)
        inst = sample_instance(RELU, a, EnsembleSpec(seed=3))
        assert relu_match_opt(inst, a, budget=6, seed=1).same_outcome(relu_match_opt(inst, a, budget=6, seed=1))
