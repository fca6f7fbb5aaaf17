"""Maximal / minimal / undetermined verdicts from row and column counts alone."""

from .core import (
    LffnConfig,
    LrnnConfig,
    Reason,
    ReluConfig,
    Target,
    Verdict,
    VerdictKind,
    allocation_col_counts,
    allocation_row_counts,
    check_allocation,
)

MAXIMAL, MINIMAL, UNDETERMINED = VerdictKind.MAXIMAL, VerdictKind.MINIMAL, VerdictKind.UNDETERMINED


def classify_size(a, cfg):
    """Minimal when fewer than ``d*m`` weights are learnable, else ``None`` (defer)."""
    if len(a) < cfg.r:
        return Verdict(MINIMAL, Reason.TOO_FEW_WEIGHTS)
    return None


def _rows_exactly(a, cfg, count):
    if all(c == count for c in allocation_row_counts(a, cfg)):
        return Verdict(MAXIMAL, Reason.ALL_ROWS_EXACT)
    return Verdict(MINIMAL, Reason.ROW_COUNT_MISMATCH)


def _within_caps(a, cfg, row_cap, col_cap):
    if max(allocation_row_counts(a, cfg)) > row_cap:
        return Verdict(MINIMAL, Reason.ROW_CAP_EXCEEDED)
    if max(allocation_col_counts(a, cfg)) > col_cap:
        return Verdict(MINIMAL, Reason.COL_CAP_EXCEEDED)
    return Verdict(MAXIMAL, Reason.WITHIN_CAPS)


def classify_decoder(a, cfg):
    """Each decoder row must hold exactly m learnable weights."""
    return classify_size(a, cfg) or _rows_exactly(a, cfg, cfg.m)


def classify_encoder(a, cfg):
    return classify_size(a, cfg) or _within_caps(a, cfg, cfg.T * cfg.m, cfg.T * cfg.d)


def classify_recurrent(a, cfg):
    """Minimal past the T*b row / T*d column caps; maximal when rows or columns are full-or-empty."""
    small = classify_size(a, cfg)
    if small:
        return small
    rows, cols = allocation_row_counts(a, cfg), allocation_col_counts(a, cfg)
    row_cap, col_cap = cfg.T * cfg.b, cfg.T * cfg.d
    if max(rows) > row_cap:
        return Verdict(MINIMAL, Reason.ROW_CAP_EXCEEDED)
    if max(cols) > col_cap:
        return Verdict(MINIMAL, Reason.COL_CAP_EXCEEDED)
    if all(c in (0, row_cap) for c in rows):
        return Verdict(MAXIMAL, Reason.ROWS_FULL_OR_EMPTY)
    if all(c in (0, col_cap) for c in cols):
        return Verdict(MAXIMAL, Reason.COLS_FULL_OR_EMPTY)
    return Verdict(UNDETERMINED, Reason.NO_CONDITION_MET)


def classify_ff_layer(a, cfg):
    """Single-layer allocation in a linear FF chain.

    The last layer follows the decoder rule.  Any other layer is maximal when
    no row exceeds m *and* no column exceeds d; breaking either cap makes the
    selected Kronecker columns linearly dependent.
    """
    small = classify_size(a, cfg)
    if small:
        return small
    n_layers = cfg.L if isinstance(cfg, LffnConfig) else 2
    if a.layer == n_layers - 1:
        return _rows_exactly(a, cfg, cfg.m)
    return _within_caps(a, cfg, cfg.m, cfg.d)


def classify_relu(a, cfg):
    """ReLU first layer: rows past m can never be matched; everything else needs a solve."""
    small = classify_size(a, cfg)
    if small:
        return small
    if max(allocation_row_counts(a, cfg)) > cfg.m:
        return Verdict(MINIMAL, Reason.ROW_CAP_EXCEEDED)
    return Verdict(UNDETERMINED, Reason.NO_CONDITION_MET)


def classify_relu_output(a, cfg):
    """ReLU output layer: rows must hold exactly m weights, but exact zeros in the
    hidden activations can still make the row systems singular, so a solve decides."""
    small = classify_size(a, cfg)
    if small:
        return small
    verdict = _rows_exactly(a, cfg, cfg.m)
    if verdict.kind is MINIMAL:
        return verdict
    return Verdict(UNDETERMINED, Reason.NO_CONDITION_MET)


def classify(allocations, cfg):
    """Verdict for one allocation or a multi-matrix tuple of them."""
    if not isinstance(allocations, (tuple, list)):
        allocations = (allocations,)
    for a in allocations:
        check_allocation(a, cfg)
    if len(allocations) > 1:
        if sum(len(a) for a in allocations) < cfg.r:
            return Verdict(MINIMAL, Reason.TOO_FEW_WEIGHTS)
        return Verdict(UNDETERMINED, Reason.MULTI_LAYER)
    (a,) = allocations
    if isinstance(cfg, LrnnConfig):
        return {
            Target.DECODER: classify_decoder,
            Target.ENCODER: classify_encoder,
            Target.RECURRENT: classify_recurrent,
        }[a.target](a, cfg)
    if isinstance(cfg, ReluConfig):
        if a.layer == 0:
            return classify_relu(a, cfg)
        return classify_relu_output(a, cfg)
    return classify_ff_layer(a, cfg)
