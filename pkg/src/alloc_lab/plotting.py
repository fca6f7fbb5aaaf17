"""Static SVG rendering of sweep CSVs: MP against k (or k/n), one curve per n."""

from __future__ import annotations

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import EmptyTable, MissingColumn  # noqa: E402

REQUIRED = ("k", "n", "mp", "ci_low", "ci_high")

STYLE = {
    "svg.hashsalt": "alloc-lab",  # stable element ids
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.labelsize": 10,
    "legend.fontsize": 8,
    "lines.linewidth": 1.2,
    "lines.markersize": 4,
    "figure.figsize": (4.2, 3.0),
}


def read_sweep(path):
    """Rows with a numeric ``mp``, grouped by n and sorted by k."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise MissingColumn(f"{path}: missing column(s) {', '.join(missing)}")
        rows = list(reader)
    if not rows:
        raise EmptyTable(f"{path}: no data rows")
    curves = defaultdict(list)
    for row in rows:
        if row["mp"] == "":
            continue  # infeasible k, recorded without an estimate
        curves[int(row["n"])].append(
            (int(row["k"]), float(row["mp"]), float(row["ci_low"]), float(row["ci_high"]))
        )
    if not curves:
        raise EmptyTable(f"{path}: no row carries an estimate")
    return {n: sorted(pts) for n, pts in sorted(curves.items())}


def emit_plot(csv_path, out_path, title=None, x="k"):
    """Render MP with its 95% band; ``x`` is ``"k"`` or ``"fraction"`` (k/n).

    Output is byte-identical for identical input.
    """
    if x not in ("k", "fraction"):
        raise ValueError("x must be 'k' or 'fraction'")
    curves = read_sweep(csv_path)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for n, pts in curves.items():
            ks, mp, lo, hi = zip(*pts)
            xs = [k / n for k in ks] if x == "fraction" else list(ks)
            (line,) = ax.plot(xs, mp, marker="o", label=f"n = {n}")
            ax.fill_between(xs, lo, hi, color=line.get_color(), alpha=0.2, linewidth=0)
        ax.set_xlabel("learnable rows k / n" if x == "fraction" else "learnable rows k")
        ax.set_ylabel("match probability")
        ax.set_ylim(-0.03, 1.03)
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(out_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return out_path
