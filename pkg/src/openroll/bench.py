"""Benchmark harness: operation latency and storage growth by scale.

Workloads are seeded and synthetic; timings are whatever the machine
gives.  Raw samples land in CSV so every derived statistic can be
recomputed without rerunning.
"""
from __future__ import annotations

import json
import os
import platform
import random
import shutil
import tempfile
import time
from dataclasses import dataclass, field

from .crypto import MasterKeys
from .merkle.log import verify_consistency
from .registry import Registry, verify_lookup
from .schema import ColumnSchema, ColumnSpec
from .synth import make_voters
from .workflows import register_voter, update_registration

OPS = ("add", "update", "lookup+prove", "verify",
       "prove-append-only", "verify-append-only")

TIMINGS_HEADER = "op,n,sample_idx,micros"
STORAGE_HEADER = "storage,n,bytes"


def bench_schema(record_size: int = 1024) -> ColumnSchema:
    """Default columns widened so one padded record is record_size bytes."""
    name = record_size // 4
    dob = record_size // 16
    address = record_size // 2
    status = record_size - name - dob - address
    return ColumnSchema((ColumnSpec("name", name), ColumnSpec("dob", dob),
                         ColumnSpec("address", address),
                         ColumnSpec("status", status, public_default=True)))


def _dir_bytes(path: str) -> dict:
    sizes: dict[str, int] = {}
    for root, _dirs, files in os.walk(path):
        for fname in files:
            full = os.path.join(root, fname)
            label = os.path.relpath(full, path).split(os.sep)[0]
            label = label.rsplit(".", 1)[0] if os.sep not in label else label
            sizes[label] = sizes.get(label, 0) + os.path.getsize(full)
    sizes["total"] = sum(sizes.values())
    return sizes


@dataclass
class BenchReport:
    sizes: list
    record_size: int
    machine: dict
    stats: dict = field(default_factory=dict)   # op -> n -> summary
    storage: dict = field(default_factory=dict)  # n -> component -> bytes
    storage_fit: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"sizes": self.sizes, "record_size": self.record_size,
                "machine": self.machine, "stats": self.stats,
                "storage": self.storage, "storage_fit": self.storage_fit}


def _summary(samples: list) -> dict:
    ordered = sorted(samples)
    k = len(ordered)
    return {"mean": sum(ordered) / k,
            "p50": ordered[k // 2],
            "p95": ordered[min(k - 1, int(0.95 * k))],
            "count": k}


def linear_fit(xs: list, ys: list) -> dict:
    """Least squares y = a*x + b with the coefficient of determination."""
    k = len(xs)
    mx = sum(xs) / k
    my = sum(ys) / k
    sxx = sum((x - mx) ** 2 for x in xs)
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    slope = sxy / sxx if sxx else 0.0
    intercept = my - slope * mx
    ss_res = sum((y - (slope * x + intercept)) ** 2
                 for x, y in zip(xs, ys))
    ss_tot = sum((y - my) ** 2 for y in ys)
    r2 = 1.0 - ss_res / ss_tot if ss_tot else 1.0
    return {"slope": slope, "intercept": intercept, "r2": r2}


class BenchRun:
    """One timed workload against a throwaway data directory."""

    def __init__(self, out_dir: str, record_size: int = 1024,
                 samples: int = 32, seed: int = 7,
                 epoch_batch: int = 10_000):
        self.out_dir = out_dir
        self.record_size = record_size
        self.samples = samples
        self.seed = seed
        self.epoch_batch = epoch_batch
        os.makedirs(out_dir, exist_ok=True)
        self.timing_rows: list[tuple] = []
        self.storage_rows: list[tuple] = []
        self.final_storage: dict[int, dict] = {}

    def _sample_storage(self, reg: Registry) -> dict:
        sizes = _dir_bytes(reg.data_dir)
        for label, size in sorted(sizes.items()):
            self.storage_rows.append((label, reg.log.size, size))
        return sizes

    def _fill(self, reg: Registry, n: int) -> list:
        voters = make_voters(n, self.seed, prefix=f"bench{n}")
        ids = []
        for lo in range(0, n, self.epoch_batch):
            for voter in voters[lo:lo + self.epoch_batch]:
                ids.append(register_voter(reg, voter.base_id, voter.values))
            reg.push_epoch()
            self._sample_storage(reg)
        return ids

    def _time_one(self, op: str, n: int, idx: int, fn) -> object:
        t0 = time.perf_counter_ns()
        out = fn()
        self.timing_rows.append((op, n, idx, (time.perf_counter_ns() - t0)
                                 / 1000.0))
        return out

    def run_size(self, n: int) -> None:
        rng = random.Random(self.seed + n)
        data_dir = tempfile.mkdtemp(prefix=f"bench-{n}-")
        try:
            master = MasterKeys.generate()
            reg = Registry(data_dir, master, create=True,
                           schema=bench_schema(self.record_size))
            ids = self._fill(reg, n)
            extra = make_voters(self.samples, self.seed + 1,
                                prefix=f"extra{n}")
            for i in range(self.samples):
                voter = extra[i]
                self._time_one("add", n, i, lambda: (
                    register_voter(reg, voter.base_id, voter.values),
                    reg.push_epoch()))
            for i in range(self.samples):
                vid = rng.choice(ids)
                row = dict(make_voters(1, self.seed + 2 + i)[0].values)
                self._time_one("update", n, i, lambda: (
                    update_registration(reg, vid, row), reg.push_epoch()))
            lookups = []
            for i in range(self.samples):
                vid = rng.choice(ids)
                result = self._time_one("lookup+prove", n, i,
                                        lambda: reg.lookup(vid))
                lookups.append((vid, result))
            public = master.public_key
            for i, (vid, result) in enumerate(lookups):
                ok = self._time_one("verify", n, i,
                                    lambda: verify_lookup(vid, result,
                                                          public))
                assert ok[0], ok[1]
            base_sizes = [e.commitment.log_size for e in reg.entries
                          if e.commitment.log_size > 0]
            proofs = []
            for i in range(self.samples):
                old = base_sizes[0] if i == 0 else rng.choice(base_sizes)
                proof = self._time_one(
                    "prove-append-only", n, i,
                    lambda: reg.log.prove_consistency(old, reg.log.size))
                proofs.append((old, proof))
            new_root = reg.log.root()
            for i, (old, proof) in enumerate(proofs):
                old_root = reg.log.root_at(old)
                ok = self._time_one(
                    "verify-append-only", n, i,
                    lambda: verify_consistency(old_root, new_root, proof))
                assert ok
            self.final_storage[n] = self._sample_storage(reg)
            reg.close()
        finally:
            shutil.rmtree(data_dir, ignore_errors=True)

    def write_outputs(self, sizes: list) -> BenchReport:
        timings_path = os.path.join(self.out_dir, "timings.csv")
        with open(timings_path, "w") as fh:
            fh.write(TIMINGS_HEADER + "\n")
            for op, n, idx, micros in self.timing_rows:
                fh.write(f"{op},{n},{idx},{micros:.3f}\n")
        storage_path = os.path.join(self.out_dir, "storage.csv")
        with open(storage_path, "w") as fh:
            fh.write(STORAGE_HEADER + "\n")
            for label, ops, size in self.storage_rows:
                fh.write(f"{label},{ops},{size}\n")

        report = BenchReport(sizes=list(sizes),
                             record_size=self.record_size,
                             machine={
                                 "platform": platform.platform(),
                                 "python": platform.python_version(),
                                 "cpus": os.cpu_count(),
                             })
        for op in OPS:
            per_n: dict = {}
            for n in sizes:
                samples = [micros for o, sn, _i, micros in self.timing_rows
                           if o == op and sn == n]
                if samples:
                    per_n[str(n)] = _summary(samples)
            report.stats[op] = per_n
        totals = [(ops, size) for label, ops, size in self.storage_rows
                  if label == "total"]
        for n in sizes:
            report.storage[str(n)] = self.final_storage.get(n, {})
        if len(totals) >= 3:
            xs = [ops for ops, _ in totals]
            ys = [size for _, size in totals]
            report.storage_fit = linear_fit(xs, ys)
        with open(os.path.join(self.out_dir, "report.json"), "w") as fh:
            json.dump(report.to_json(), fh, indent=2)
            fh.write("\n")
        self._write_plot_script()
        return report

    def _write_plot_script(self) -> None:
        script = """set datafile separator ','
set terminal pngcairo size 900,600
set output 'timings.png'
set logscale xy
set xlabel 'records (n)'
set ylabel 'microseconds'
set key outside
ops = "add update lookup+prove verify prove-append-only verify-append-only"
plot for [op in ops] \\
  sprintf("< awk -F, -v op=%s '$1==op' timings.csv", op) \\
  using 2:4 with points title op
set output 'storage.png'
unset logscale
set xlabel 'operations'
set ylabel 'bytes'
plot "< awk -F, '$1==\\"total\\"' storage.csv" \\
  using 2:3 with linespoints title 'total'
"""
        with open(os.path.join(self.out_dir, "plots.gp"), "w") as fh:
            fh.write(script)


def run_bench(sizes: list, record_size: int = 1024, samples: int = 32,
              seed: int = 7, out_dir: str = "bench_out",
              epoch_batch: int = 10_000) -> BenchReport:
    run = BenchRun(out_dir, record_size=record_size, samples=samples,
                   seed=seed, epoch_batch=epoch_batch)
    for n in sizes:
        run.run_size(n)
    return run.write_outputs(sizes)
