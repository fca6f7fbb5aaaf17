import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from alloc_lab.classify import (
    classify,
    classify_decoder,
    classify_encoder,
    classify_ff_layer,
    classify_recurrent,
    classify_relu,
    classify_size,
)
from alloc_lab.core import Allocation, LffnConfig, LrnnConfig, Reason, ReluConfig, Target, VerdictKind

MAX, MIN, UND = VerdictKind.MAXIMAL, VerdictKind.MINIMAL, VerdictKind.UNDETERMINED


def rows_alloc(target, counts, layer=None, ncols=None):
    """Entries filling each row i with ``counts[i]`` leading columns, staggered to spread columns."""
    entries = []
    for i, c in enumerate(counts):
        for j in range(c):
            entries.append((i, (i + j) % ncols if ncols else j))
    return Allocation(target, tuple(entries), layer)


class TestDecoder:
    cfg = LrnnConfig(n=8, b=1, d=2, T=4, m=3)

    def test_exact_rows(self):
        assert classify_decoder(rows_alloc(Target.DECODER, [3, 3]), self.cfg).kind is MAX

    def test_unbalanced(self):
        v = classify_decoder(rows_alloc(Target.DECODER, [4, 2]), self.cfg)
        assert v.kind is MIN and v.reason is Reason.ROW_COUNT_MISMATCH

    def test_one_row(self):
        assert classify_decoder(rows_alloc(Target.DECODER, [6, 0]), self.cfg).kind is MIN


class TestEncoder:
    cfg = LrnnConfig(n=8, b=2, d=2, T=2, m=2)  # row cap T*m = 4, column cap T*d = 4

    def test_within_caps(self):
        a = Allocation(Target.ENCODER, ((0, 0), (0, 1), (1, 0), (1, 1)))
        assert classify_encoder(a, self.cfg).kind is MAX

    def test_column_over_cap(self):
        cfg = LrnnConfig(n=8, b=2, d=2, T=1, m=2)  # column cap 2
        a = Allocation(Target.ENCODER, ((0, 0), (1, 0), (2, 0), (3, 1)))
        v = classify_encoder(a, cfg)
        assert v.kind is MIN and v.reason is Reason.COL_CAP_EXCEEDED

    def test_row_over_cap(self):
        cfg = LrnnConfig(n=8, b=4, d=3, T=1, m=2)  # row cap T*m = 2, r = 6
        a = Allocation(Target.ENCODER, ((0, 0), (0, 1), (0, 2), (1, 0), (2, 1), (3, 3)))
        v = classify_encoder(a, cfg)
        assert v.kind is MIN and v.reason is Reason.ROW_CAP_EXCEEDED


class TestRecurrent:
    cfg = LrnnConfig(n=16, b=1, d=4, T=4, m=4)

    def test_full_rows(self):
        v = classify_recurrent(rows_alloc(Target.RECURRENT, [4, 0, 4, 0, 4, 4], ncols=16), self.cfg)
        assert v.kind is MAX and v.reason is Reason.ROWS_FULL_OR_EMPTY

    def test_row_over_cap(self):
        v = classify_recurrent(rows_alloc(Target.RECURRENT, [5, 4, 4, 3], ncols=16), self.cfg)
        assert v.kind is MIN and v.reason is Reason.ROW_CAP_EXCEEDED

    def test_undetermined(self):
        a = rows_alloc(Target.RECURRENT, [3, 3, 3, 3, 2, 2], ncols=16)
        cols = np.bincount(a.cols, minlength=16)
        assert set(cols) - {0, 16} and max(cols) <= 16
        assert classify_recurrent(a, self.cfg).kind is UND

    def test_full_columns(self):
        cfg = LrnnConfig(n=16, b=2, d=2, T=2, m=4)  # T*d = 4
        a = Allocation(Target.RECURRENT, tuple((i, j) for j in (3, 7) for i in (0, 5, 9, 11)))
        v = classify_recurrent(a, cfg)
        assert v.kind is MAX and v.reason is Reason.COLS_FULL_OR_EMPTY

    @given(st.permutations(list(range(16))), st.integers(0, 3))
    @settings(max_examples=40)
    def test_row_permutation_invariance(self, perm, which):
        patterns = [[4, 4, 4, 4], [5, 4, 4, 3], [3, 3, 3, 3, 2, 2], [2] * 8]
        a = rows_alloc(Target.RECURRENT, patterns[which], ncols=16)
        b = Allocation(Target.RECURRENT, tuple((perm[i], j) for i, j in a.entries))
        assert classify_recurrent(a, self.cfg).kind is classify_recurrent(b, self.cfg).kind


class TestFeedForward:
    cfg = LffnConfig((4, 8, 8, 6), m=4)  # d*m = 24

    def test_rows_within_cap(self):
        a = rows_alloc(Target.LAYER, [4] * 6, layer=1, ncols=8)
        assert classify_ff_layer(a, self.cfg).kind is MAX

    def test_both_caps_broken(self):
        entries = [(0, j) for j in range(8)] + [(i, 0) for i in range(1, 8)]
        entries += [(i, j) for i in range(1, 8) for j in range(1, 3)][:9]
        a = Allocation(Target.LAYER, tuple(entries), 1)
        assert len(a) == 24
        assert classify_ff_layer(a, self.cfg).kind is MIN

    def test_last_layer_decoder_rule(self):
        a = rows_alloc(Target.LAYER, [4] * 6, layer=2, ncols=8)
        v = classify_ff_layer(a, self.cfg)
        assert v.kind is MAX and v.reason is Reason.ALL_ROWS_EXACT

    def test_multi_layer_undetermined(self):
        parts = (
            rows_alloc(Target.LAYER, [4, 4], layer=0, ncols=4),
            rows_alloc(Target.LAYER, [4, 4], layer=1, ncols=8),
            rows_alloc(Target.LAYER, [4, 4], layer=2, ncols=8),
        )
        assert classify(parts, self.cfg).kind is UND


class TestSize:
    cfg = LrnnConfig(n=16, b=1, d=4, T=4, m=4)

    def test_one_short(self):
        a = rows_alloc(Target.RECURRENT, [4, 4, 4, 3], ncols=16)
        assert classify_size(a, self.cfg).reason is Reason.TOO_FEW_WEIGHTS

    def test_exact_defers(self):
        assert classify_size(rows_alloc(Target.RECURRENT, [4] * 4, ncols=16), self.cfg) is None

    def test_empty(self):
        assert classify_size(Allocation(Target.RECURRENT, ()), self.cfg).kind is MIN


class TestRelu:
    cfg = ReluConfig(q=6, n=12, d=4, m=6)

    def test_row_over_m(self):
        a = Allocation(Target.LAYER, tuple((i, j) for i in range(4) for j in range(6)), 0)
        assert classify_relu(a, self.cfg).kind is UND
        cfg = ReluConfig(q=8, n=12, d=2, m=3)
        a = Allocation(Target.LAYER, tuple((0, j) for j in range(6)), 0)
        assert classify_relu(a, cfg).kind is MIN
