"""Evaluation pipeline: detection quality, resource cost, throughput,
and Pareto comparison across configurations.

A sweep runs a grid of (sketch config x detector setting) cells over
one labeled trace.  Each cell is scored against a ground-truth grid at
(bucket, epoch) granularity, costed with a simple memory model, and
optionally benchmarked for update throughput.  Cells on the Pareto
front (maximize f1 and throughput, minimize memory) are flagged in the
report.
"""

from __future__ import annotations

import gc
import json
import statistics
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .detectors import DetectorSetting, Verdict, run_detector
from .hashing import KeySpec
from .ingest import PacketRecord
from .oracle import ExactTracker
from .sketch import (
    CELL_BYTES,
    DEFAULT_MAX_CELLS,
    UPDATE_OPS,
    Sketch,
    SketchConfig,
    collect_epochs,
)

BENCH_MIN_PACKETS = 10_000


@dataclass(frozen=True)
class GroundTruthGrid:
    """Labels projected onto sketch coordinates: a (bucket, epoch) cell
    is anomalous iff at least one anomalous-labeled packet hashed into
    it during that epoch."""

    bucket_count: int
    epoch_count: int
    anomalous: frozenset[tuple[int, int]]

    def is_anomalous(self, bucket: int, epoch_index: int) -> bool:
        return (bucket, epoch_index) in self.anomalous

    @classmethod
    def from_tracker(cls, tracker: ExactTracker, epoch_count: int) -> "GroundTruthGrid":
        cells = frozenset(
            (b, e) for (b, e) in tracker.anomalous_cells() if e < epoch_count
        )
        return cls(tracker.config.bucket_count, epoch_count, cells)


@dataclass(frozen=True)
class QualityScores:
    """Confusion counts and exact rational quality metrics.  Ratios with
    a zero denominator are defined as 0."""

    tp: int
    fp: int
    fn: int
    tn: int
    precision: Fraction
    recall: Fraction
    f1: Fraction


def score(verdicts: Sequence[Verdict], grid: GroundTruthGrid) -> QualityScores:
    """Match verdicts against the grid cell by cell.

    The verdicts must cover exactly the grid's (bucket, epoch) domain,
    once each.
    """
    expected = grid.bucket_count * grid.epoch_count
    if len(verdicts) != expected:
        raise ValueError(
            f"verdicts cover {len(verdicts)} cells, grid has {expected}"
        )
    seen = set()
    tp = fp = fn = tn = 0
    for v in verdicts:
        if not 0 <= v.bucket < grid.bucket_count or not 0 <= v.epoch_index < grid.epoch_count:
            raise ValueError(
                f"verdict for ({v.bucket}, {v.epoch_index}) is outside the grid"
            )
        cell = (v.bucket, v.epoch_index)
        if cell in seen:
            raise ValueError(f"duplicate verdict for cell {cell}")
        seen.add(cell)
        truth = cell in grid.anomalous
        if v.anomalous and truth:
            tp += 1
        elif v.anomalous:
            fp += 1
        elif truth:
            fn += 1
        else:
            tn += 1
    precision = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
    recall = Fraction(tp, tp + fn) if tp + fn else Fraction(0)
    denom = 2 * tp + fp + fn
    f1 = Fraction(2 * tp, denom) if denom else Fraction(0)
    return QualityScores(tp, fp, fn, tn, precision, recall, f1)


@dataclass(frozen=True)
class ResourceCost:
    """Modeled footprint of a configuration.  memory_bytes counts every
    cell at a fixed 72-byte size (9 eight-byte metric words); update_ops
    is the constant number of metric-field mutations per packet."""

    memory_bytes: int
    update_ops: int


def resource_model(config: SketchConfig) -> ResourceCost:
    return ResourceCost(config.cell_count * CELL_BYTES, UPDATE_OPS)


@dataclass(frozen=True)
class BenchResult:
    """Throughput measurement: median packets/second over the runs."""

    pps: float
    runs: tuple[float, ...]
    packet_count: int
    mean_packet_bytes: float


def bench_throughput(
    config: SketchConfig,
    records: Sequence[PacketRecord],
    repetitions: int = 3,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> BenchResult:
    """Measure sketch update throughput on a fixed trace.

    Each repetition streams the whole trace through a fresh sketch and
    times only the update loop on the monotonic clock.  A warmup pass
    runs first and garbage collection is paused while timing.  The
    reported figure is the median over repetitions.
    """
    n = len(records)
    if n < BENCH_MIN_PACKETS:
        raise ValueError(
            f"benchmark needs at least {BENCH_MIN_PACKETS} packets, got {n}"
        )
    if repetitions < 3:
        raise ValueError("benchmark needs at least 3 repetitions")
    Sketch(config, max_cells=max_cells).update_many(records)  # warmup
    runs = []
    gc_was_enabled = gc.isenabled()
    gc.disable()
    try:
        for _ in range(repetitions):
            sketch = Sketch(config, max_cells=max_cells)
            start = time.perf_counter_ns()
            sketch.update_many(records)
            elapsed = time.perf_counter_ns() - start
            runs.append(n / (elapsed / 1e9))
    finally:
        if gc_was_enabled:
            gc.enable()
    mean_bytes = sum(r.length_bytes for r in records) / n
    return BenchResult(statistics.median(runs), tuple(runs), n, mean_bytes)


@dataclass
class ParetoPoint:
    """One configuration's objectives: f1 up, memory down, and (when
    benchmarked) throughput up."""

    config_id: str
    f1: float
    memory_bytes: int
    measured_pps: float | None = None
    dominated: bool = False


def _dominates(a: ParetoPoint, b: ParetoPoint, use_pps: bool) -> bool:
    """a dominates b: at least as good everywhere, better somewhere."""
    if a.f1 < b.f1 or a.memory_bytes > b.memory_bytes:
        return False
    better = a.f1 > b.f1 or a.memory_bytes < b.memory_bytes
    if use_pps:
        if a.measured_pps < b.measured_pps:
            return False
        better = better or a.measured_pps > b.measured_pps
    return better


def pareto_front(
    points: Sequence[ParetoPoint], use_pps: bool | None = None
) -> tuple[list[ParetoPoint], list[ParetoPoint]]:
    """Partition points into (front, dominated), flagging each point.

    Throughput participates as an objective only when every point has a
    measurement (or explicitly via use_pps).  Points with identical
    objective vectors do not dominate each other, so exact ties are all
    kept on the front.  The front is returned sorted by f1 descending,
    then memory ascending.
    """
    if not points:
        raise ValueError("pareto partition needs at least one point")
    if use_pps is None:
        use_pps = all(p.measured_pps is not None for p in points)
    elif use_pps and any(p.measured_pps is None for p in points):
        raise ValueError("use_pps requires a throughput measurement on every point")
    front: list[ParetoPoint] = []
    dominated: list[ParetoPoint] = []
    for p in points:
        p.dominated = any(
            q is not p and _dominates(q, p, use_pps) for q in points
        )
        (dominated if p.dominated else front).append(p)
    front.sort(key=lambda p: (-p.f1, p.memory_bytes))
    return front, dominated


@dataclass
class SweepRow:
    """One grid cell of a sweep: configuration, detection quality,
    resource cost, and optional throughput.  error is set (and the
    quality fields are None) when the cell failed."""

    config_id: str
    hash_width: int
    mem_stages: int
    epoch_ns: int
    key_spec: str
    detector_id: str
    detector_params: str
    tp: int | None = None
    fp: int | None = None
    fn: int | None = None
    tn: int | None = None
    precision: float | None = None
    recall: float | None = None
    f1: float | None = None
    memory_bytes: int | None = None
    update_ops: int | None = None
    measured_pps: float | None = None
    on_front: bool = False
    error: str | None = None


@dataclass
class SweepReport:
    rows: list[SweepRow]

    @property
    def failed_rows(self) -> list[SweepRow]:
        return [r for r in self.rows if r.error is not None]


def _config_id(config: SketchConfig, setting: DetectorSetting) -> str:
    return (
        f"W{config.hash_width}-S{config.mem_stages}-E{config.epoch_ns}"
        f"-{config.key_spec}-{setting.detector_id()}-{setting.params_str()}"
    )


def sweep(
    records: Sequence[PacketRecord],
    sketch_configs: Sequence[SketchConfig],
    detector_settings: Sequence[DetectorSetting],
    bench: bool = False,
    bench_repetitions: int = 3,
    max_cells: int = DEFAULT_MAX_CELLS,
) -> SweepReport:
    """Evaluate every (sketch config, detector setting) cell on a trace.

    Only completed epochs are scored; a trailing partial epoch is
    excluded from both verdicts and ground truth.  A failing cell does
    not abort the sweep: the failure is recorded on its row and the
    remaining cells still run.  Rows are ordered by config id.
    """
    if not sketch_configs or not detector_settings:
        raise ValueError("sweep needs at least one sketch config and one detector setting")
    if not records:
        raise ValueError("sweep needs a nonempty trace")
    ids = {
        _config_id(c, s) for c in sketch_configs for s in detector_settings
    }
    if len(ids) != len(sketch_configs) * len(detector_settings):
        raise ValueError("sweep grid contains duplicate cells")
    rows: list[SweepRow] = []
    for config in sketch_configs:
        cost = resource_model(config)
        shared_error: str | None = None
        completed = None
        grid = None
        bench_pps: float | None = None
        try:
            snapshots = collect_epochs(Sketch(config, max_cells=max_cells), records)
            completed = [s for s in snapshots if s.complete]
            tracker = ExactTracker(config)
            for record in records:
                tracker.update(record)
            grid = GroundTruthGrid.from_tracker(tracker, len(completed))
            if bench:
                bench_pps = bench_throughput(
                    config, records, repetitions=bench_repetitions, max_cells=max_cells
                ).pps
        except ValueError as exc:
            shared_error = str(exc)
        for setting in detector_settings:
            row = SweepRow(
                config_id=_config_id(config, setting),
                hash_width=config.hash_width,
                mem_stages=config.mem_stages,
                epoch_ns=config.epoch_ns,
                key_spec=str(config.key_spec),
                detector_id=setting.detector_id(),
                detector_params=setting.params_str(),
                memory_bytes=cost.memory_bytes,
                update_ops=cost.update_ops,
                measured_pps=bench_pps,
            )
            if shared_error is not None:
                row.error = shared_error
            else:
                try:
                    verdicts = run_detector(setting, completed)
                    quality = score(verdicts, grid)
                    row.tp, row.fp, row.fn, row.tn = (
                        quality.tp,
                        quality.fp,
                        quality.fn,
                        quality.tn,
                    )
                    row.precision = float(quality.precision)
                    row.recall = float(quality.recall)
                    row.f1 = float(quality.f1)
                except ValueError as exc:
                    row.error = str(exc)
            rows.append(row)
    clean = [r for r in rows if r.error is None]
    if clean:
        points = [
            ParetoPoint(r.config_id, r.f1, r.memory_bytes, r.measured_pps)
            for r in clean
        ]
        pareto_front(points, use_pps=bench)
        flags = {p.config_id: not p.dominated for p in points}
        for r in clean:
            r.on_front = flags[r.config_id]
    rows.sort(key=lambda r: r.config_id)
    return SweepReport(rows)


REPORT_HEADER = (
    "config_id,hash_width,mem_stages,epoch_ns,key_spec,detector_id,detector_params,"
    "tp,fp,fn,tn,precision,recall,f1,memory_bytes,update_ops,measured_pps,on_front"
)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_report_csv(path, rows: Sequence[SweepRow]) -> None:
    """Write sweep rows as CSV.  Failed rows keep their config columns
    and leave the quality fields empty; error details live in the JSON
    report."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(REPORT_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.config_id},{r.hash_width},{r.mem_stages},{r.epoch_ns},"
                f"{r.key_spec},{r.detector_id},{r.detector_params},"
                f"{_fmt(r.tp)},{_fmt(r.fp)},{_fmt(r.fn)},{_fmt(r.tn)},"
                f"{_fmt(r.precision)},{_fmt(r.recall)},{_fmt(r.f1)},"
                f"{_fmt(r.memory_bytes)},{_fmt(r.update_ops)},{_fmt(r.measured_pps)},"
                f"{'true' if r.on_front else 'false'}\n"
            )


def parse_report_csv(lines: Iterable[str]) -> list[SweepRow]:
    it = iter(lines)
    header = next(it, None)
    if header is None or header.rstrip("\n") != REPORT_HEADER:
        raise ValueError(f"bad report header: expected {REPORT_HEADER!r}")
    rows = []
    for raw in it:
        line = raw.rstrip("\n")
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 18:
            raise ValueError(f"expected 18 fields, got {len(fields)}")
        opt_int = lambda s: None if s == "" else int(s)
        opt_float = lambda s: None if s == "" else float(s)
        if fields[17] not in ("true", "false"):
            raise ValueError(f"bad on_front flag {fields[17]!r}")
        rows.append(
            SweepRow(
                config_id=fields[0],
                hash_width=int(fields[1]),
                mem_stages=int(fields[2]),
                epoch_ns=int(fields[3]),
                key_spec=fields[4],
                detector_id=fields[5],
                detector_params=fields[6],
                tp=opt_int(fields[7]),
                fp=opt_int(fields[8]),
                fn=opt_int(fields[9]),
                tn=opt_int(fields[10]),
                precision=opt_float(fields[11]),
                recall=opt_float(fields[12]),
                f1=opt_float(fields[13]),
                memory_bytes=opt_int(fields[14]),
                update_ops=opt_int(fields[15]),
                measured_pps=opt_float(fields[16]),
                on_front=fields[17] == "true",
            )
        )
    return rows


def write_report_json(path, rows: Sequence[SweepRow]) -> None:
    """Machine-readable report: same fields as the CSV plus per-row
    error messages."""
    payload = []
    for r in rows:
        payload.append(
            {
                "config_id": r.config_id,
                "hash_width": r.hash_width,
                "mem_stages": r.mem_stages,
                "epoch_ns": r.epoch_ns,
                "key_spec": r.key_spec,
                "detector_id": r.detector_id,
                "detector_params": r.detector_params,
                "tp": r.tp,
                "fp": r.fp,
                "fn": r.fn,
                "tn": r.tn,
                "precision": r.precision,
                "recall": r.recall,
                "f1": r.f1,
                "memory_bytes": r.memory_bytes,
                "update_ops": r.update_ops,
                "measured_pps": r.measured_pps,
                "on_front": r.on_front,
                "error": r.error,
            }
        )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
