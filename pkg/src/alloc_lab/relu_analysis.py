"""Counting and checking the activation configurations of a ReLU first layer.

A configuration P is an (m, k) 0/1 matrix: entry (i, s) says whether the
s-th allocated row is active on sample i.  Two necessary conditions prune
it: every allocated row s needs at least ``r_s`` active samples, and every
sample needs at least ``d`` active allocated rows.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb

import numpy as np

from .core import ReluConfig, allocation_row_counts
from .linalg import numerical_rank
from .match import relu_match_exact
from .reduce import reduce_relu, relu_rows
from .sampling import EnsembleSpec, rng_for, sample_instance

BRUTE_FORCE_BOUND = 24  # k*m above this is not enumerated


def _row_counts(a, cfg):
    counts = allocation_row_counts(a, cfg)
    return [int(counts[i]) for i in relu_rows(a)]


def count_feasible_configs(cfg, a=None, row_counts=None):
    """Closed-form number of configurations kept by the per-row condition.

    ``prod_s sum_{j >= r_s} C(m, j)``.  Either an allocation or the list of
    per-row counts ``r_s`` may be given.
    """
    if row_counts is None:
        row_counts = _row_counts(a, cfg)
    m = cfg.m
    total = 1
    for r in row_counts:
        total *= sum(comb(m, j) for j in range(r, m + 1))
    return total


def count_sample_patterns(k, d):
    """Activation patterns of one sample over k rows with at least d ones."""
    return sum(comb(k, j) for j in range(d, k + 1))


def flags(P, row_counts, d):
    """Which pruning conditions reject configuration ``P``: ``(few_per_sample, few_per_row)``."""
    P = np.asarray(P)
    return bool(np.any(P.sum(axis=1) < d)), bool(np.any(P.sum(axis=0) < np.asarray(row_counts)))


def _all_configs(k, m):
    for bits in itertools.product((0, 1), repeat=k * m):
        yield np.array(bits, dtype=np.int8).reshape(m, k)


def brute_force_counts(cfg, row_counts):
    """Enumerate all ``2^(k m)`` configurations.

    Returns a dict with the totals kept by the per-row rule, by the
    per-sample rule, and by both.
    """
    k, m, d = len(row_counts), cfg.m, cfg.d
    if k * m > BRUTE_FORCE_BOUND:
        raise ValueError(f"k*m = {k * m} exceeds the brute-force bound {BRUTE_FORCE_BOUND}")
    out = {"total": 0, "row_rule": 0, "sample_rule": 0, "both": 0}
    for P in _all_configs(k, m):
        few_sample, few_row = flags(P, row_counts, d)
        out["total"] += 1
        out["row_rule"] += not few_row
        out["sample_rule"] += not few_sample
        out["both"] += not (few_row or few_sample)
    return out


def feasible_fraction(m, row_counts):
    """Share of configurations kept by the per-row rule."""
    return float(np.prod([sum(comb(m, j) for j in range(r, m + 1)) / 2.0**m for r in row_counts]))


@dataclass(frozen=True)
class PruningReport:
    instances: int
    checked: int
    flagged_sample: int
    flagged_row: int
    violations: int


def _flagged_sample(rng, k, m, row_counts, d, exhaustive):
    """Rejected configurations: all of them when enumerable, else a targeted draw.

    Each drawn violation starts from the all-active configuration and breaks
    one rule at a single sample or row, so each rule is exercised on its own
    wherever the other one leaves room; fully random configurations are
    added on top.
    """
    if exhaustive is not None:
        return exhaustive
    out = []
    for _ in range(8):
        P = np.ones((m, k), dtype=np.int8)
        i = rng.integers(m)
        P[i] = 0
        P[i, rng.choice(k, size=rng.integers(0, min(d, k + 1)), replace=False)] = 1
        out.append(P)
    rows = [s for s in range(k) if row_counts[s] > 0]
    for _ in range(8 if rows else 0):
        P = np.ones((m, k), dtype=np.int8)
        s = rows[rng.integers(len(rows))]
        P[:, s] = 0
        P[rng.choice(m, size=rng.integers(0, row_counts[s]), replace=False), s] = 1
        out.append(P)
    out.extend(rng.integers(0, 2, size=(8, m, k)).astype(np.int8))
    out.append(np.zeros((m, k), dtype=np.int8))
    return out


def verify_pruning_lemmas(cfg, a, trials=100, seed=0, gain=1.0, exhaustive_bound=12):
    """Check that every rejected configuration gives a rank-deficient system.

    For each of ``trials`` random instances, rejected configurations are
    either all enumerated (``k m <= exhaustive_bound``) or drawn at random
    so that each rule is exercised.  A violation is a rejected
    configuration whose linear system reaches full rank ``d m``.
    """
    if not isinstance(cfg, ReluConfig):
        raise TypeError("pruning applies to ReLU configurations")
    row_counts = _row_counts(a, cfg)
    k, m, d = len(row_counts), cfg.m, cfg.d
    exhaustive = None
    if k * m <= exhaustive_bound:
        exhaustive = [P for P in _all_configs(k, m) if any(flags(P, row_counts, d))]
    checked = fs = fr = viol = 0
    for t in range(trials):
        inst = sample_instance(cfg, a, EnsembleSpec(gain=gain, seed=seed), stream=(t,))
        rng = rng_for(seed, (13, t))
        for P in _flagged_sample(rng, k, m, row_counts, d, exhaustive):
            few_sample, few_row = flags(P, row_counts, d)
            if not (few_sample or few_row):
                continue
            system, _ = reduce_relu(inst, a, P)
            checked += 1
            fs += few_sample
            fr += few_row
            if numerical_rank(system.A) >= d * m:
                viol += 1
    return PruningReport(trials, checked, fs, fr, viol)


def pruning_is_lossless(cfg, a, trials=20, seed=0, gain=1.0):
    """Number of instances where pruned and full enumeration disagree."""
    mismatches = 0
    for t in range(trials):
        inst = sample_instance(cfg, a, EnsembleSpec(gain=gain, seed=seed), stream=(t,))
        if relu_match_exact(inst, a, prune=True).matched != relu_match_exact(inst, a, prune=False).matched:
            mismatches += 1
    return mismatches
