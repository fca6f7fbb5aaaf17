"""Domain types: model configurations, allocations, verdicts and problem instances.

All indices are zero-based.  Weight matrices are addressed by a short key:
``"W"``, ``"B"``, ``"D"`` for the recurrent network and ``"L0"``, ``"L1"``, ...
for the layers of feed-forward (linear or ReLU) networks, ``L0`` being the
layer that touches the input.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Union

import numpy as np

from .errors import InvalidAllocation, InvalidConfig, InvalidInstance


@dataclass(frozen=True)
class LrnnConfig:
    """Linear recurrent network: hidden size n, input b, output d, T steps, m samples."""

    n: int
    b: int
    d: int
    T: int
    m: int

    @property
    def r(self):
        return self.d * self.m

    @property
    def model(self):
        return "lrnn"


@dataclass(frozen=True)
class LffnConfig:
    """Linear feed-forward chain with widths ``[q, n_1, ..., n_{L-1}, d]``."""

    layer_widths: tuple
    m: int

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))

    @property
    def q(self):
        return self.layer_widths[0]

    @property
    def d(self):
        return self.layer_widths[-1]

    @property
    def L(self):
        return len(self.layer_widths) - 1

    @property
    def r(self):
        return self.d * self.m

    @property
    def model(self):
        return "lffn"


@dataclass(frozen=True)
class ReluConfig:
    """Two-layer ReLU network ``y = W2 relu(W1 x)`` with W1 of shape n x q."""

    q: int
    n: int
    d: int
    m: int

    @property
    def r(self):
        return self.d * self.m

    @property
    def model(self):
        return "relu"


Config = Union[LrnnConfig, LffnConfig, ReluConfig]


def validate_config(cfg, strict=True):
    """Raise :class:`InvalidConfig` naming the first violated constraint.

    For recurrent networks ``strict=True`` enforces ``T*b <= n`` and
    ``T*d <= n``.  With ``strict=False`` only the exact non-degeneracy bound
    ``T*b*d <= n*(d+b)`` is required, which admits the experiment grids where
    ``T*d`` exceeds ``n``.
    """
    if isinstance(cfg, LrnnConfig):
        for name in ("n", "b", "d", "T", "m"):
            if getattr(cfg, name) < 1:
                raise InvalidConfig(name, f"{name} >= 1")
        if cfg.n < cfg.b:
            raise InvalidConfig("n", "n >= b")
        if cfg.n < cfg.d:
            raise InvalidConfig("n", "n >= d")
        if strict:
            if cfg.T * cfg.b > cfg.n:
                raise InvalidConfig("T", "T*b <= n")
            if cfg.T * cfg.d > cfg.n:
                raise InvalidConfig("T", "T*d <= n")
        elif cfg.T * cfg.b * cfg.d > cfg.n * (cfg.d + cfg.b):
            raise InvalidConfig("T", "T*b*d <= n*(d+b)")
        if cfg.m > cfg.T * cfg.b:
            raise InvalidConfig("m", "m <= T*b")
    elif isinstance(cfg, LffnConfig):
        widths = cfg.layer_widths
        if len(widths) < 3:
            raise InvalidConfig("layer_widths", "at least one hidden layer")
        if any(w < 1 for w in widths) or cfg.m < 1:
            raise InvalidConfig("layer_widths", "all sizes >= 1")
        for w in widths[1:-1]:
            if w < cfg.q:
                raise InvalidConfig("layer_widths", "n_l >= q")
            if w < cfg.d:
                raise InvalidConfig("layer_widths", "n_l >= d")
    elif isinstance(cfg, ReluConfig):
        for name in ("q", "n", "d", "m"):
            if getattr(cfg, name) < 1:
                raise InvalidConfig(name, f"{name} >= 1")
        if cfg.n < cfg.d:
            raise InvalidConfig("n", "n >= d")
    else:
        raise InvalidConfig("model", "one of lrnn, lffn, relu")


class Target(enum.Enum):
    DECODER = "decoder"
    ENCODER = "encoder"
    RECURRENT = "recurrent"
    LAYER = "layer"


_LRNN_KEYS = {Target.DECODER: "D", Target.ENCODER: "B", Target.RECURRENT: "W"}


@dataclass(frozen=True)
class Allocation:
    """A set of learnable coordinates inside one weight matrix.

    Entries are kept sorted (row-major), which fixes the order in which
    learnable weights appear as unknowns everywhere downstream.
    """

    target: Target
    entries: tuple
    layer: int | None = None

    def __post_init__(self):
        target = Target(self.target)
        object.__setattr__(self, "target", target)
        entries = tuple(sorted((int(i), int(j)) for i, j in self.entries))
        if len(set(entries)) != len(entries):
            raise InvalidAllocation("duplicate entries")
        if any(i < 0 or j < 0 for i, j in entries):
            raise InvalidAllocation("negative index")
        if (target is Target.LAYER) != (self.layer is not None):
            raise InvalidAllocation("layer index is required exactly for layer targets")
        object.__setattr__(self, "entries", entries)

    def __len__(self):
        return len(self.entries)

    @property
    def key(self):
        if self.target is Target.LAYER:
            return f"L{self.layer}"
        return _LRNN_KEYS[self.target]

    @property
    def rows(self):
        return np.array([e[0] for e in self.entries], dtype=int)

    @property
    def cols(self):
        return np.array([e[1] for e in self.entries], dtype=int)


def target_shape(cfg, target, layer=None):
    target = Target(target)
    if isinstance(cfg, LrnnConfig):
        return {
            Target.RECURRENT: (cfg.n, cfg.n),
            Target.ENCODER: (cfg.n, cfg.b),
            Target.DECODER: (cfg.d, cfg.n),
        }[target]
    if target is not Target.LAYER:
        raise InvalidAllocation(f"{target.value} is not a target of a feed-forward model")
    widths = cfg.layer_widths if isinstance(cfg, LffnConfig) else (cfg.q, cfg.n, cfg.d)
    if not 0 <= layer < len(widths) - 1:
        raise InvalidAllocation(f"layer {layer} out of range")
    return widths[layer + 1], widths[layer]


def weight_shapes(cfg):
    """Shapes of every weight matrix of the model, keyed like the instances."""
    if isinstance(cfg, LrnnConfig):
        return {"W": (cfg.n, cfg.n), "B": (cfg.n, cfg.b), "D": (cfg.d, cfg.n)}
    widths = cfg.layer_widths if isinstance(cfg, LffnConfig) else (cfg.q, cfg.n, cfg.d)
    return {f"L{l}": (widths[l + 1], widths[l]) for l in range(len(widths) - 1)}


def input_shape(cfg):
    if isinstance(cfg, LrnnConfig):
        return cfg.T * cfg.b, cfg.m
    return cfg.q, cfg.m


def check_allocation(a, cfg):
    rows, cols = target_shape(cfg, a.target, a.layer)
    for i, j in a.entries:
        if i >= rows or j >= cols:
            raise InvalidAllocation(f"entry ({i}, {j}) outside {rows}x{cols} {a.key}")


def allocation_row_counts(a, cfg):
    rows, _ = target_shape(cfg, a.target, a.layer)
    return np.bincount(a.rows, minlength=rows).tolist() if len(a) else [0] * rows


def allocation_col_counts(a, cfg):
    _, cols = target_shape(cfg, a.target, a.layer)
    return np.bincount(a.cols, minlength=cols).tolist() if len(a) else [0] * cols


class VerdictKind(enum.Enum):
    MAXIMAL = "maximal"
    MINIMAL = "minimal"
    UNDETERMINED = "undetermined"


class Reason(enum.Enum):
    TOO_FEW_WEIGHTS = "too_few_weights"
    ROW_COUNT_MISMATCH = "row_count_mismatch"
    ROW_CAP_EXCEEDED = "row_cap_exceeded"
    COL_CAP_EXCEEDED = "col_cap_exceeded"
    ALL_ROWS_EXACT = "all_rows_exact"
    WITHIN_CAPS = "within_caps"
    ROWS_FULL_OR_EMPTY = "rows_full_or_empty"
    COLS_FULL_OR_EMPTY = "cols_full_or_empty"
    NO_CONDITION_MET = "no_condition_met"
    MULTI_LAYER = "multi_layer"


_MINIMAL_REASONS = {
    Reason.TOO_FEW_WEIGHTS,
    Reason.ROW_COUNT_MISMATCH,
    Reason.ROW_CAP_EXCEEDED,
    Reason.COL_CAP_EXCEEDED,
}
_MAXIMAL_REASONS = {
    Reason.ALL_ROWS_EXACT,
    Reason.WITHIN_CAPS,
    Reason.ROWS_FULL_OR_EMPTY,
    Reason.COLS_FULL_OR_EMPTY,
}


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    reason: Reason

    def __post_init__(self):
        ok = {
            VerdictKind.MINIMAL: self.reason in _MINIMAL_REASONS,
            VerdictKind.MAXIMAL: self.reason in _MAXIMAL_REASONS,
            VerdictKind.UNDETERMINED: self.reason in {Reason.NO_CONDITION_MET, Reason.MULTI_LAYER},
        }[self.kind]
        if not ok:
            raise ValueError(f"reason {self.reason.value} inconsistent with {self.kind.value}")

    def __str__(self):
        return f"{self.kind.value} ({self.reason.value})"


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    """One teacher/student draw.

    ``student`` holds the fixed student weights with NaN at every learnable
    coordinate, so nothing downstream can silently read a value it does not
    own.  ``Y`` must equal the teacher forward pass on ``X``.
    """

    config: object
    teacher: Mapping
    student: Mapping
    allocations: tuple
    X: np.ndarray
    Y: np.ndarray
    seed: int | None = None
    stream: tuple = field(default=())

    def __post_init__(self):
        from .models import forward

        object.__setattr__(self, "teacher", {k: _frozen(v) for k, v in self.teacher.items()})
        object.__setattr__(self, "student", {k: _frozen(v) for k, v in self.student.items()})
        object.__setattr__(self, "X", _frozen(self.X))
        object.__setattr__(self, "Y", _frozen(self.Y))
        if isinstance(self.allocations, Allocation):
            object.__setattr__(self, "allocations", (self.allocations,))
        object.__setattr__(self, "allocations", tuple(self.allocations))

        shapes = weight_shapes(self.config)
        for name, mats in (("teacher", self.teacher), ("student", self.student)):
            if set(mats) != set(shapes):
                raise InvalidInstance(f"{name} weights must be {sorted(shapes)}")
            for k, shape in shapes.items():
                if mats[k].shape != shape:
                    raise InvalidInstance(f"{name} {k} has shape {mats[k].shape}, expected {shape}")
        if self.X.shape != input_shape(self.config):
            raise InvalidInstance(f"X has shape {self.X.shape}, expected {input_shape(self.config)}")

        keys = [a.key for a in self.allocations]
        if len(set(keys)) != len(keys):
            raise InvalidInstance("at most one allocation per weight matrix")
        for a in self.allocations:
            check_allocation(a, self.config)
        total = sum(len(a) for a in self.allocations)
        if total != self.config.r:
            raise InvalidInstance(f"allocation has {total} weights, the problem needs r = d*m = {self.config.r}")
        for k, mat in self.student.items():
            expected = np.zeros(mat.shape, dtype=bool)
            for a in self.allocations:
                if a.key == k:
                    expected[a.rows, a.cols] = True
            if not np.array_equal(np.isnan(mat), expected):
                raise InvalidInstance(f"fixed student weights of {k} must cover exactly the complement of the allocation")

        Y_teacher = forward(self.config, self.teacher, self.X)
        if self.Y.shape != Y_teacher.shape or not np.allclose(self.Y, Y_teacher, rtol=1e-12, atol=1e-12):
            raise InvalidInstance("labels do not match the teacher forward pass")

    @property
    def scale(self):
        """Residual scale ``||Y||_inf`` used by relative tolerances."""
        return float(np.max(np.abs(self.Y))) if self.Y.size else 0.0

    def realize(self, values):
        """Student weights with the learnable coordinates set to ``values``.

        ``values`` is a flat vector ordered allocation by allocation, each in
        its sorted entry order, or a mapping from matrix key to such vectors.
        """
        out = {k: np.array(v) for k, v in self.student.items()}
        if not isinstance(values, Mapping):
            flat = np.asarray(values, dtype=float).ravel()
            values, start = {}, 0
            for a in self.allocations:
                values[a.key] = flat[start:start + len(a)]
                start += len(a)
        for a in self.allocations:
            out[a.key][a.rows, a.cols] = values[a.key]
        return out

    def fixed_part(self, key):
        """Fixed student weights of ``key`` with learnable entries zeroed."""
        return np.nan_to_num(np.array(self.student[key]), nan=0.0)


# ---------------------------------------------------------------------------
# flat key = value text format


def _parse_value(text):
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def parse_kv(text):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig("config", f"'key = value' on line {lineno}")
        key, value = line.split("=", 1)
        out[key.strip()] = _parse_value(value)
    return out


def config_to_dict(cfg):
    if isinstance(cfg, LrnnConfig):
        return {"model": "lrnn", "n": cfg.n, "b": cfg.b, "d": cfg.d, "T": cfg.T, "m": cfg.m}
    if isinstance(cfg, LffnConfig):
        return {"model": "lffn", "widths": ",".join(map(str, cfg.layer_widths)), "m": cfg.m}
    return {"model": "relu", "q": cfg.q, "n": cfg.n, "d": cfg.d, "m": cfg.m}


def config_from_dict(d):
    model = d.get("model", "lrnn")
    try:
        if model == "lrnn":
            return LrnnConfig(int(d["n"]), int(d["b"]), int(d["d"]), int(d["T"]), int(d["m"]))
        if model == "lffn":
            widths = str(d["widths"]).split(",")
            return LffnConfig(tuple(int(w) for w in widths), int(d["m"]))
        if model == "relu":
            return ReluConfig(int(d["q"]), int(d["n"]), int(d["d"]), int(d["m"]))
    except KeyError as exc:
        raise InvalidConfig(exc.args[0], "a value") from None
    raise InvalidConfig("model", "one of lrnn, lffn, relu")


def allocation_to_dict(a):
    out = {"alloc.target": a.target.value}
    if a.layer is not None:
        out["alloc.layer"] = a.layer
    out["alloc.entries"] = " ".join(f"{i}:{j}" for i, j in a.entries)
    return out


def allocation_from_dict(d):
    entries = []
    for tok in str(d.get("alloc.entries", "")).replace(",", " ").split():
        i, j = tok.split(":")
        entries.append((int(i), int(j)))
    layer = d.get("alloc.layer")
    return Allocation(Target(d["alloc.target"]), tuple(entries), None if layer is None else int(layer))


def to_text(*objs):
    lines = []
    for obj in objs:
        d = allocation_to_dict(obj) if isinstance(obj, Allocation) else config_to_dict(obj)
        lines.extend(f"{k} = {v}" for k, v in d.items())
    return "\n".join(lines) + "\n"


def from_text(text):
    """Return ``(config, allocation_or_None)`` parsed from :func:`to_text` output."""
    d = parse_kv(text)
    cfg = config_from_dict(d) if "model" in d else None
    alloc = allocation_from_dict(d) if "alloc.target" in d else None
    return cfg, alloc
