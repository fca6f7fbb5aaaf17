import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from alloc_lab.core import (
    Allocation,
    LffnConfig,
    LrnnConfig,
    ProblemInstance,
    ReluConfig,
    Target,
    allocation_col_counts,
    allocation_row_counts,
    from_text,
    to_text,
    validate_config,
)
from alloc_lab.errors import InvalidConfig, InvalidInstance
from alloc_lab.sampling import EnsembleSpec, sample_instance


class TestValidateConfig:
    def test_td_exceeds_n(self):
        with pytest.raises(InvalidConfig) as exc:
            validate_config(LrnnConfig(n=8, b=1, d=4, T=4, m=4))
        assert exc.value.constraint == "T*d <= n"

    def test_ok(self):
        validate_config(LrnnConfig(n=16, b=1, d=4, T=4, m=4))

    def test_narrow_hidden_layer(self):
        with pytest.raises(InvalidConfig) as exc:
            validate_config(LffnConfig((4, 2, 6), m=4))
        assert "n_l >=" in exc.value.constraint

    def test_single_layer_rejected(self):
        with pytest.raises(InvalidConfig):
            validate_config(LffnConfig((4, 6), m=4))

    def test_samples_exceed_inputs(self):
        with pytest.raises(InvalidConfig) as exc:
            validate_config(LrnnConfig(n=16, b=1, d=2, T=4, m=5))
        assert exc.value.field == "m"

    def test_relaxed_mode_admits_experiment_grid(self):
        cfg = LrnnConfig(n=8, b=1, d=4, T=4, m=4)
        validate_config(cfg, strict=False)

    def test_relu(self):
        validate_config(ReluConfig(q=6, n=12, d=4, m=6))
        with pytest.raises(InvalidConfig):
            validate_config(ReluConfig(q=6, n=3, d=4, m=6))


class TestCounts:
    cfg = LffnConfig((3, 3, 2), m=3)

    def test_examples(self):
        a = Allocation(Target.LAYER, ((0, 0), (0, 1), (1, 2)), layer=1)
        assert allocation_row_counts(a, self.cfg) == [2, 1]

    def test_empty(self):
        a = Allocation(Target.LAYER, (), layer=1)
        assert allocation_row_counts(a, self.cfg) == [0, 0]

    def test_full(self):
        a = Allocation(Target.LAYER, tuple((i, j) for i in range(2) for j in range(3)), layer=1)
        assert allocation_row_counts(a, self.cfg) == [3, 3]

    @given(st.sets(st.tuples(st.integers(0, 5), st.integers(0, 6)), max_size=30))
    def test_row_and_column_totals_agree(self, entries):
        cfg = LrnnConfig(n=7, b=1, d=2, T=2, m=2)
        a = Allocation(Target.RECURRENT, tuple(entries))
        rows, cols = allocation_row_counts(a, cfg), allocation_col_counts(a, cfg)
        assert sum(rows) == sum(cols) == len(entries)


class TestRoundTrip:
    @given(
        st.sampled_from(["lrnn", "lffn", "relu"]),
        st.lists(st.integers(1, 20), min_size=5, max_size=5),
        st.sets(st.tuples(st.integers(0, 9), st.integers(0, 9)), max_size=12),
    )
    @settings(max_examples=60)
    def test_config_and_allocation(self, model, dims, entries):
        if model == "lrnn":
            cfg = LrnnConfig(*dims)
            a = Allocation(Target.RECURRENT, tuple(entries))
        elif model == "lffn":
            cfg = LffnConfig(tuple(dims[:4]), m=dims[4])
            a = Allocation(Target.LAYER, tuple(entries), layer=1)
        else:
            cfg = ReluConfig(*dims[:4])
            a = Allocation(Target.LAYER, tuple(entries), layer=0)
        cfg2, a2 = from_text(to_text(cfg, a))
        assert cfg2 == cfg
        assert a2 == a


class TestProblemInstance:
    cfg = LrnnConfig(n=8, b=1, d=2, T=2, m=2)
    a = Allocation(Target.RECURRENT, ((0, 0), (0, 1), (1, 0), (1, 1)))

    def test_labels_must_match_teacher(self):
        inst = sample_instance(self.cfg, self.a, EnsembleSpec(seed=1))
        Y = np.array(inst.Y)
        Y[0, 0] += 1e-3
        with pytest.raises(InvalidInstance):
            ProblemInstance(self.cfg, inst.teacher, inst.student, inst.allocations, inst.X, Y)

    def test_student_covers_complement(self):
        inst = sample_instance(self.cfg, self.a, EnsembleSpec(seed=1))
        student = {k: np.array(v) for k, v in inst.student.items()}
        student["W"][0, 0] = 0.5
        with pytest.raises(InvalidInstance):
            ProblemInstance(self.cfg, inst.teacher, student, inst.allocations, inst.X, inst.Y)

    def test_wrong_size_rejected(self):
        small = Allocation(Target.RECURRENT, ((0, 0),))
        with pytest.raises(InvalidInstance):
            sample_instance(self.cfg, small, EnsembleSpec())

    def test_immutable(self):
        inst = sample_instance(self.cfg, self.a, EnsembleSpec(seed=1))
        with pytest.raises(ValueError):
            inst.X[0, 0] = 1.0

    def test_realize_keeps_fixed_weights(self):
        inst = sample_instance(self.cfg, self.a, EnsembleSpec(seed=1))
        w = inst.realize(np.arange(4.0))
        mask = np.ones((8, 8), dtype=bool)
        mask[self.a.rows, self.a.cols] = False
        assert np.array_equal(w["W"][mask], np.asarray(inst.student["W"])[mask])
        assert np.array_equal(w["W"][self.a.rows, self.a.cols], np.arange(4.0))
