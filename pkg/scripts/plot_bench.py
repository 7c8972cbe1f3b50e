#!/usr/bin/env python3
"""Plot a benchmark run, or print a text summary when matplotlib is absent.

Reads timings.csv and storage.csv from a run_bench.py output directory
and writes timings.png and storage.png next to them.
"""

import argparse
import csv
import os
import sys
from collections import defaultdict


def load_timings(path: str) -> dict:
    # op -> n -> [micros]
    series: dict = defaultdict(lambda: defaultdict(list))
    with open(path) as fh:
        for row in csv.DictReader(fh):
            series[row["op"]][int(row["n"])].append(float(row["micros"]))
    return series


def load_storage(path: str) -> dict:
    # component -> [(ops, bytes)]
    series: dict = defaultdict(list)
    with open(path) as fh:
        for row in csv.DictReader(fh):
            series[row["storage"]].append((int(row["n"]), int(row["bytes"])))
    return series


def mean(values: list) -> float:
    return sum(values) / len(values)


def text_summary(timings: dict, storage: dict) -> None:
    for op in sorted(timings):
        parts = [f"n={n} {mean(v) / 1000:.3f}ms"
                 for n, v in sorted(timings[op].items())]
        print(f"{op:22s} " + "  ".join(parts))
    totals = sorted(storage.get("total", ()))
    if totals:
        ops, size = totals[-1]
        print(f"{'storage total':22s} {size / 1e6:.2f}MB after {ops} records")


def render(timings: dict, storage: dict, out_dir: str) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(9, 6))
    for op in sorted(timings):
        ns = sorted(timings[op])
        ax.plot(ns, [mean(timings[op][n]) for n in ns],
                marker="o", label=op)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("records")
    ax.set_ylabel("mean latency (us)")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.savefig(os.path.join(out_dir, "timings.png"), dpi=120)

    fig, ax = plt.subplots(figsize=(9, 6))
    for component in sorted(storage):
        points = sorted(storage[component])
        ax.plot([p[0] for p in points], [p[1] for p in points],
                marker=".", label=component)
    ax.set_xlabel("records")
    ax.set_ylabel("bytes")
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.savefig(os.path.join(out_dir, "storage.png"), dpi=120)
    print(f"wrote {out_dir}/timings.png and {out_dir}/storage.png")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("bench_dir", nargs="?", default="bench_out",
                    help="directory produced by run_bench.py")
    ap.add_argument("--text", action="store_true",
                    help="print the summary instead of plotting")
    args = ap.parse_args()

    timings_path = os.path.join(args.bench_dir, "timings.csv")
    if not os.path.exists(timings_path):
        ap.error(f"no timings.csv under {args.bench_dir}")
    timings = load_timings(timings_path)
    storage = load_storage(os.path.join(args.bench_dir, "storage.csv"))

    if args.text:
        text_summary(timings, storage)
        return 0
    try:
        render(timings, storage, args.bench_dir)
    except ImportError:
        text_summary(timings, storage)
    return 0


if __name__ == "__main__":
    sys.exit(main())
