"""Streaming sketch: hashed per-bucket traffic features over epochs.

The sketch keeps mem_stages equal-length epochs of state as a shift
register of stages.  Stage 0 accumulates the current epoch; when the
stream's timestamp crosses an epoch boundary the stages shift (stage 0
becomes stage 1 and so on), the oldest stage falls off, and a fresh
stage 0 starts.  Memory is fixed at mem_stages * 2**hash_width cells
regardless of traffic.

Epochs are anchored at the first packet's timestamp, so boundaries sit
at first_ts + k * epoch_ns.  Gaps in traffic still shift once per
elapsed epoch.  Inter-arrival tracking restarts each epoch: the first
packet a bucket sees in an epoch contributes no gap sample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from operator import attrgetter
from typing import Callable, Iterable, Iterator, Sequence

from .hashing import FlowKey, KeySpec, FIELD_WIDTHS, fold_plan, shift_xor_hash

# Resource model constants: a cell holds 9 metric words of 8 bytes, and
# one update mutates at most 9 metric fields.
CELL_BYTES = 72
UPDATE_OPS = 9

# Refuse configs whose cell count exceeds this unless the caller raises
# the budget explicitly.
DEFAULT_MAX_CELLS = 1 << 26

# Bucket folds are memoized per raw key value; the memo is cleared if
# key cardinality outgrows this, keeping memory bounded either way.
FOLD_MEMO_MAX = 1 << 16

# Slot layout of the internal list-backed cells.
_PKT, _BYTES, _BMIN, _BMAX, _LAST, _ISUM, _ICNT, _IMIN, _IMAX = range(9)


@dataclass(frozen=True)
class SketchConfig:
    """Dimensions of a sketch: hash width in bits, number of memory
    stages, epoch length, and the flow key layout."""

    hash_width: int
    mem_stages: int
    epoch_ns: int
    key_spec: KeySpec

    def __post_init__(self):
        if not 1 <= self.hash_width <= 24:
            raise ValueError(f"hash width must be in [1, 24], got {self.hash_width}")
        if self.mem_stages < 1:
            raise ValueError("mem_stages must be at least 1")
        if self.epoch_ns <= 0:
            raise ValueError("epoch_ns must be positive")
        if not isinstance(self.key_spec, KeySpec):
            raise ValueError("key_spec must be a KeySpec")

    @property
    def bucket_count(self) -> int:
        return 1 << self.hash_width

    @property
    def cell_count(self) -> int:
        return self.mem_stages * self.bucket_count


@dataclass
class StageCell:
    """Aggregated metrics for one bucket in one stage.

    Minima and maxima are None while no packet (or no inter-arrival
    gap) has been observed; counters and sums start at zero.
    """

    pkt_count: int = 0
    byte_sum: int = 0
    byte_min: int | None = None
    byte_max: int | None = None
    last_ts_ns: int | None = None
    iat_sum_ns: int = 0
    iat_count: int = 0
    iat_min_ns: int | None = None
    iat_max_ns: int | None = None

    @property
    def is_empty(self) -> bool:
        return self.pkt_count == 0


@dataclass(frozen=True)
class FeatureVector:
    """Queried view of a cell.  Averages are exact rationals computed
    from the stored sums at query time; absent values are None."""

    pkt_count: int
    byte_sum: int
    byte_avg: Fraction | None
    byte_min: int | None
    byte_max: int | None
    iat_avg_ns: Fraction | None
    iat_min_ns: int | None
    iat_max_ns: int | None
    stage: int


def _cell_to_stagecell(cell: list | None) -> StageCell:
    if cell is None:
        return StageCell()
    return StageCell(
        pkt_count=cell[_PKT],
        byte_sum=cell[_BYTES],
        byte_min=cell[_BMIN],
        byte_max=cell[_BMAX],
        last_ts_ns=cell[_LAST],
        iat_sum_ns=cell[_ISUM],
        iat_count=cell[_ICNT],
        iat_min_ns=cell[_IMIN],
        iat_max_ns=cell[_IMAX],
    )


def _cell_features(cell: list | None, stage: int) -> FeatureVector:
    if cell is None or cell[_PKT] == 0:
        return FeatureVector(0, 0, None, None, None, None, None, None, stage)
    iat_count = cell[_ICNT]
    return FeatureVector(
        pkt_count=cell[_PKT],
        byte_sum=cell[_BYTES],
        byte_avg=Fraction(cell[_BYTES], cell[_PKT]),
        byte_min=cell[_BMIN],
        byte_max=cell[_BMAX],
        iat_avg_ns=Fraction(cell[_ISUM], iat_count) if iat_count else None,
        iat_min_ns=cell[_IMIN],
        iat_max_ns=cell[_IMAX],
        stage=stage,
    )


class Sketch:
    """Fixed-memory feature extractor over a timestamp-sorted stream."""

    def __init__(self, config: SketchConfig, max_cells: int = DEFAULT_MAX_CELLS):
        if config.cell_count > max_cells:
            raise ValueError(
                f"config needs {config.cell_count} cells, budget is {max_cells}"
            )
        self._config = config
        self._bucket_count = config.bucket_count
        self._mask = self._bucket_count - 1
        # Cells materialize lazily: untouched buckets stay None.
        self._stages: list[list] = [
            [None] * self._bucket_count for _ in range(config.mem_stages)
        ]
        self._epoch_start: int | None = None
        self._epoch_index = 0
        self._last_ts: int | None = None
        key_bits = config.key_spec.total_bits
        self._pad_shift, self._halving_shifts = fold_plan(key_bits, config.hash_width)
        # (field name, left shift) pairs, big-endian concatenation order
        plan = []
        shift = key_bits
        for name in config.key_spec.fields:
            shift -= FIELD_WIDTHS[name]
            plan.append((name, shift))
        self._field_plan = tuple(plan)
        # Single-field keys read all three packet fields in one C call.
        self._getter = (
            attrgetter("timestamp_ns", "length_bytes", plan[0][0])
            if len(plan) == 1
            else None
        )
        self._fold_memo: dict[int, int] = {}

    @property
    def config(self) -> SketchConfig:
        return self._config

    @property
    def bucket_count(self) -> int:
        return self._bucket_count

    @property
    def cell_count(self) -> int:
        return self._config.cell_count

    @property
    def epoch_start_ns(self) -> int | None:
        """Start of the current (stage 0) epoch; None before any update."""
        return self._epoch_start

    @property
    def epoch_index(self) -> int:
        """Index of the current epoch; equals the number of completed epochs."""
        return self._epoch_index

    def bucket_of(self, key: FlowKey) -> int:
        return shift_xor_hash(key, self._config.hash_width)

    def update(self, packet) -> None:
        """Fold one packet into the sketch, rotating epochs as needed."""
        self.update_many((packet,))

    def _rows(self, packets: Iterable) -> Iterator[tuple[int, int, int]]:
        """Yield (timestamp, length, raw key) per packet.  Single-field
        keys go through one attrgetter call; wider keys concatenate."""
        if self._getter is not None:
            return map(self._getter, packets)
        field_plan = self._field_plan

        def rows():
            for pkt in packets:
                v = 0
                for name, shift in field_plan:
                    v |= getattr(pkt, name) << shift
                yield pkt.timestamp_ns, pkt.length_bytes, v

        return rows()

    def update_many(self, packets: Iterable) -> int:
        """Fold a timestamp-sorted batch of packets; returns the count.

        This is the hot path: the per-packet work is one field fetch, a
        memoized hash fold, one cell fetch, and nine field updates.
        Raises ValueError on a timestamp regression, including against
        packets from earlier calls.
        """
        config = self._config
        epoch_ns = config.epoch_ns
        width = config.hash_width
        mask = self._mask
        pad_shift = self._pad_shift
        halving = self._halving_shifts
        memo_get = self._fold_memo.get
        fold_memo = self._fold_memo
        stages = self._stages
        stage0 = stages[0]
        last_ts = self._last_ts if self._last_ts is not None else -1
        epoch_start = self._epoch_start
        boundary = None if epoch_start is None else epoch_start + epoch_ns
        count = 0
        try:
            for ts, nbytes, v in self._rows(packets):
                if ts < last_ts:
                    raise ValueError(f"timestamp regression: {ts} after {last_ts}")
                last_ts = ts
                if boundary is None:
                    epoch_start = ts
                    boundary = ts + epoch_ns
                elif ts >= boundary:
                    self._epoch_start = epoch_start
                    self._advance_epochs(ts)
                    epoch_start = self._epoch_start
                    boundary = epoch_start + epoch_ns
                    stage0 = stages[0]
                b = memo_get(v)
                if b is None:
                    x = v << pad_shift
                    if halving is not None:
                        for s in halving:
                            x ^= x >> s
                        b = x & mask
                    else:
                        b = 0
                        while x:
                            b ^= x & mask
                            x >>= width
                    if len(fold_memo) >= FOLD_MEMO_MAX:
                        fold_memo.clear()
                    fold_memo[v] = b
                cell = stage0[b]
                if cell is None:
                    cell = stage0[b] = [0, 0, None, None, None, 0, 0, None, None]
                cell[0] += 1
                cell[1] += nbytes
                lo = cell[2]
                if lo is None or nbytes < lo:
                    cell[2] = nbytes
                if cell[3] is None or nbytes > cell[3]:
                    cell[3] = nbytes
                prev = cell[4]
                if prev is not None:
                    gap = ts - prev
                    cell[5] += gap
                    cell[6] += 1
                    lo = cell[7]
                    if lo is None or gap < lo:
                        cell[7] = gap
                    if cell[8] is None or gap > cell[8]:
                        cell[8] = gap
                cell[4] = ts
                count += 1
        finally:
            self._last_ts = last_ts if last_ts >= 0 else None
            self._epoch_start = epoch_start
        return count

    def _advance_epochs(self, ts: int) -> None:
        """Rotate until the current epoch contains ts.  Gaps of at least
        mem_stages epochs clear every stage in one step, which is
        equivalent to rotating once per elapsed epoch."""
        epoch_ns = self._config.epoch_ns
        gap = (ts - self._epoch_start) // epoch_ns
        if gap >= self._config.mem_stages:
            for s in range(len(self._stages)):
                self._stages[s] = [None] * self._bucket_count
            self._epoch_index += gap
            self._epoch_start += gap * epoch_ns
        else:
            boundary = self._epoch_start + epoch_ns
            while ts >= boundary:
                self.rotate_epoch(boundary)
                boundary += epoch_ns

    def rotate_epoch(self, new_epoch_start_ns: int) -> None:
        """Shift the stages by one epoch and start a fresh stage 0.

        Stage s takes stage s-1's cells bit for bit; the oldest stage is
        discarded.  The new epoch must start after the current one.
        """
        if self._epoch_start is None:
            raise ValueError("cannot rotate a sketch with no current epoch")
        if new_epoch_start_ns <= self._epoch_start:
            raise ValueError("new epoch start must be after the current epoch start")
        stages = self._stages
        stages.pop()
        stages.insert(0, [None] * self._bucket_count)
        self._epoch_start = new_epoch_start_ns
        self._epoch_index += 1

    def query(self, key: FlowKey, stage: int = 0) -> FeatureVector:
        """Features of the bucket this key hashes to, at the given stage."""
        if not 0 <= stage < self._config.mem_stages:
            raise ValueError(f"stage must be in [0, {self._config.mem_stages})")
        bucket = shift_xor_hash(key, self._config.hash_width)
        return _cell_features(self._stages[stage][bucket], stage)

    def bucket_features(self, bucket: int, stage: int = 0) -> FeatureVector:
        if not 0 <= stage < self._config.mem_stages:
            raise ValueError(f"stage must be in [0, {self._config.mem_stages})")
        if not 0 <= bucket < self._bucket_count:
            raise ValueError("bucket out of range")
        return _cell_features(self._stages[stage][bucket], stage)

    def stage_cells(self, stage: int) -> list[StageCell]:
        """Copies of every cell in a stage, indexed by bucket."""
        if not 0 <= stage < self._config.mem_stages:
            raise ValueError(f"stage must be in [0, {self._config.mem_stages})")
        return [_cell_to_stagecell(c) for c in self._stages[stage]]

    def stage_packet_total(self, stage: int) -> int:
        """Sum of pkt_count over a stage, cheap even at large widths."""
        if not 0 <= stage < self._config.mem_stages:
            raise ValueError(f"stage must be in [0, {self._config.mem_stages})")
        return sum(c[_PKT] for c in self._stages[stage] if c is not None)

    def snapshot(self) -> list[tuple[int, int, StageCell]]:
        """Every cell as (stage, bucket, StageCell), stages then buckets
        ascending.  Always mem_stages * 2**hash_width rows."""
        rows = []
        for stage in range(self._config.mem_stages):
            cells = self._stages[stage]
            for bucket in range(self._bucket_count):
                rows.append((stage, bucket, _cell_to_stagecell(cells[bucket])))
        return rows


@dataclass(frozen=True)
class EpochSnapshot:
    """Stage-0 contents of one epoch, taken just before rotation (or at
    end of stream for the final, possibly partial, epoch)."""

    epoch_index: int
    epoch_start_ns: int
    complete: bool
    cells: tuple[StageCell, ...] = field(repr=False)


def replay_epochs(
    sketch: Sketch,
    packets: Iterable,
    visit: Callable[[Sketch, int, bool], None],
) -> int:
    """Stream packets through the sketch, calling visit(sketch,
    epoch_index, complete) for each finished epoch while its state is
    still in stage 0, and once more for the trailing partial epoch.

    The boundary arithmetic here mirrors update_many so both paths see
    identical epoch assignment.  Returns the packet count.
    """
    epoch_ns = sketch.config.epoch_ns
    count = 0
    for pkt in packets:
        ts = pkt.timestamp_ns
        while sketch.epoch_start_ns is not None and ts >= sketch.epoch_start_ns + epoch_ns:
            visit(sketch, sketch.epoch_index, True)
            sketch.rotate_epoch(sketch.epoch_start_ns + epoch_ns)
        sketch.update(pkt)
        count += 1
    if sketch.epoch_start_ns is not None:
        visit(sketch, sketch.epoch_index, False)
    return count


def collect_epochs(sketch: Sketch, packets: Iterable) -> list[EpochSnapshot]:
    """Run the stream and collect per-epoch stage-0 snapshots, one per
    completed epoch plus the final partial epoch.  Empty traces yield
    an empty list."""
    out: list[EpochSnapshot] = []

    def visit(sk: Sketch, index: int, complete: bool) -> None:
        out.append(
            EpochSnapshot(index, sk.epoch_start_ns, complete, tuple(sk.stage_cells(0)))
        )

    replay_epochs(sketch, packets, visit)
    return out


SNAPSHOT_HEADER = "stage,bucket,pkt_count,byte_sum,byte_min,byte_max,iat_count,iat_sum_ns,iat_min_ns,iat_max_ns"


def _opt(value: int | None) -> str:
    return "" if value is None else str(value)


def write_snapshot(path, rows: Sequence[tuple[int, int, StageCell]]) -> None:
    """Serialize snapshot rows to CSV.  last_ts_ns is transient stream
    state and is not exported."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(SNAPSHOT_HEADER + "\n")
        for stage, bucket, cell in rows:
            fh.write(
                f"{stage},{bucket},{cell.pkt_count},{cell.byte_sum},"
                f"{_opt(cell.byte_min)},{_opt(cell.byte_max)},{cell.iat_count},"
                f"{cell.iat_sum_ns},{_opt(cell.iat_min_ns)},{_opt(cell.iat_max_ns)}\n"
            )


def parse_snapshot(lines: Iterable[str]) -> list[tuple[int, int, StageCell]]:
    it = iter(lines)
    header = next(it, None)
    if header is None or header.rstrip("\n") != SNAPSHOT_HEADER:
        raise ValueError(f"bad snapshot header: expected {SNAPSHOT_HEADER!r}")
    rows = []
    for raw in it:
        line = raw.rstrip("\n")
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 10:
            raise ValueError(f"expected 10 fields, got {len(fields)}")
        opt = lambda s: None if s == "" else int(s)
        rows.append(
            (
                int(fields[0]),
                int(fields[1]),
                StageCell(
                    pkt_count=int(fields[2]),
                    byte_sum=int(fields[3]),
                    byte_min=opt(fields[4]),
                    byte_max=opt(fields[5]),
                    iat_count=int(fields[6]),
                    iat_sum_ns=int(fields[7]),
                    iat_min_ns=opt(fields[8]),
                    iat_max_ns=opt(fields[9]),
                ),
            )
        )
    return rows
