#!/usr/bin/env python3
"""Figure regeneration from simulator output directories.

Reads only the documented CSV/JSON files (see docs/formats.md in the
repository root) and renders:

  trajectories      ground-truth target paths plus the spoofed trajectory
  consensus_labels  node-3 consensus positions colored by label representative
  cardinality       mean estimated cardinality per condition over time
  ecdf              empirical CDF of instantaneous OSPA per condition

Usage:
  plots.py --kind <kind> --in <dir> --out <file.png> [--condition stealthy]

For `trajectories` and `consensus_labels` the input may be a single-run
directory or a Monte Carlo output directory (the sample run
`runs/<condition>/run_000` is used). Rendering is deterministic: colors are
assigned from a fixed palette in sorted key order.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"]
KINDS = ("trajectories", "consensus_labels", "cardinality", "ecdf")


class SchemaError(ValueError):
    """Input file does not match the documented schema."""


def read_rows(path: Path, required: list[str]) -> list[dict]:
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with path.open() as f:
        reader = csv.DictReader(f)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise SchemaError(f"{path.name}: missing columns {missing}; header was {header}")
        return list(reader)


def resolve_run_dir(base: Path, condition: str) -> Path:
    """Accept either a run directory or an `mc` output directory."""
    if (base / "truth.csv").exists():
        return base
    candidates = sorted((base / "runs" / condition).glob("run_*")) if (base / "runs").exists() else []
    if candidates:
        return candidates[0]
    raise SchemaError(f"{base}: neither a run directory (truth.csv) nor an mc directory (runs/{condition}/run_*)")


def color_for(key, keys):
    return PALETTE[sorted(keys).index(key) % len(PALETTE)]


# -- series extraction (kept separate from drawing so tests can assert on data)


def trajectory_series(run_dir: Path) -> dict[str, list[tuple[int, float, float]]]:
    series: dict[str, list[tuple[int, float, float]]] = {}
    for row in read_rows(run_dir / "truth.csv", ["time", "target", "x", "y"]):
        series.setdefault(row["target"], []).append((int(row["time"]), float(row["x"]), float(row["y"])))
    attack = run_dir / "attack.csv"
    if attack.exists():
        for row in read_rows(attack, ["time", "stage", "x", "y"]):
            if row["x"] and row["x"] != "SILENCE":
                series.setdefault("spoofed", []).append((int(row["time"]), float(row["x"]), float(row["y"])))
    return series


def consensus_series(run_dir: Path, node: int = 3) -> dict[str, list[tuple[int, float, float]]]:
    series: dict[str, list[tuple[int, float, float]]] = {}
    for row in read_rows(run_dir / "consensus.csv", ["time", "node", "global_label_repr", "x", "y"]):
        if int(row["node"]) != node:
            continue
        series.setdefault(row["global_label_repr"], []).append(
            (int(row["time"]), float(row["x"]), float(row["y"]))
        )
    return series


def cardinality_series(base: Path) -> tuple[list[int], dict[str, list[float]]]:
    path = base / "cardinality_mean.csv"
    rows = read_rows(path, ["time"])
    with path.open() as f:
        header = csv.DictReader(f).fieldnames or []
    conditions = [c for c in header if c != "time"]
    times = [int(r["time"]) for r in rows]
    return times, {c: [float(r[c]) for r in rows] for c in conditions}


def ecdf_series(base: Path) -> dict[str, tuple[list[float], list[float]]]:
    out: dict[str, tuple[list[float], list[float]]] = {}
    for row in read_rows(base / "ecdf.csv", ["condition", "value", "fraction"]):
        xs, fs = out.setdefault(row["condition"], ([], []))
        xs.append(float(row["value"]))
        fs.append(float(row["fraction"]))
    return out


# -- rendering ----------------------------------------------------------------


def _plot_paths(ax, series, title):
    for key in sorted(series):
        pts = sorted(series[key])
        xs = [p[1] for p in pts]
        ys = [p[2] for p in pts]
        color = color_for(key, series.keys())
        ax.plot(xs, ys, "-", color=color, label=key, linewidth=1.2)
        if pts:
            ax.plot(xs[0], ys[0], "o", color=color, markersize=7)  # start
            ax.plot(xs[-1], ys[-1], "^", color=color, markersize=8)  # end
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_title(title)
    if series:
        ax.legend(loc="best", fontsize=8)


def render(kind: str, in_dir: Path, out_file: Path, condition: str = "stealthy") -> None:
    fig, ax = plt.subplots(figsize=(7.0, 4.5), dpi=130)
    if kind == "trajectories":
        run_dir = resolve_run_dir(in_dir, condition)
        _plot_paths(ax, trajectory_series(run_dir), f"Ground truth and spoofed trajectory ({condition})")
    elif kind == "consensus_labels":
        run_dir = resolve_run_dir(in_dir, condition)
        _plot_paths(ax, consensus_series(run_dir), f"Node-3 consensus by label representative ({condition})")
    elif kind == "cardinality":
        times, per_condition = cardinality_series(in_dir)
        for cond in sorted(per_condition):
            ax.plot(times, per_condition[cond], label=cond, color=color_for(cond, per_condition.keys()))
        ax.set_xlabel("time step")
        ax.set_ylabel("mean estimated cardinality")
        ax.set_title("Mean estimated cardinality")
        if per_condition:
            ax.legend(loc="best", fontsize=8)
    elif kind == "ecdf":
        per_condition = ecdf_series(in_dir)
        for cond in sorted(per_condition):
            xs, fs = per_condition[cond]
            ax.step(xs, fs, where="post", label=cond, color=color_for(cond, per_condition.keys()))
        ax.set_xlabel("instantaneous OSPA [m]")
        ax.set_ylabel("fraction of samples")
        ax.set_ylim(0.0, 1.02)
        ax.set_title("ECDF of instantaneous OSPA")
        if per_condition:
            ax.legend(loc="best", fontsize=8)
    else:
        raise SchemaError(f"unknown figure kind {kind!r}; expected one of {KINDS}")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    out_file.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_file)
    plt.close(fig)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--kind", required=True, choices=KINDS)
    parser.add_argument("--in", dest="in_dir", required=True, help="run or mc output directory")
    parser.add_argument("--out", required=True, help="output image path")
    parser.add_argument("--condition", default="stealthy", help="sample-run condition for mc inputs")
    args = parser.parse_args(argv)
    try:
        render(args.kind, Path(args.in_dir), Path(args.out), args.condition)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
