"""Packet trace ingestion and generation.

Traces are CSV files with a fixed header, one packet per row, sorted by
timestamp.  This module parses and serializes that format (round-trips
are byte-identical) and provides a seeded synthetic trace generator
that can inject labeled flood and port-scan anomalies.
"""

from __future__ import annotations

import enum
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence

TRACE_HEADER = "timestamp_ns,src_ip,dst_ip,src_port,dst_port,protocol,length_bytes,tcp_seq,label"

MAX_LENGTH_BYTES = 65535

_PROTO_TCP = 6
_PROTO_UDP = 17
_PROTO_ICMP = 1


class Label(enum.Enum):
    BENIGN = "benign"
    ANOMALOUS = "anomalous"


@dataclass(frozen=True, slots=True)
class PacketRecord:
    """One observed packet.  Addresses and ports are plain integers;
    ports and tcp_seq are 0 where the protocol has none."""

    timestamp_ns: int
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int
    length_bytes: int
    tcp_seq: int
    label: Label

    def __post_init__(self):
        if self.timestamp_ns < 0:
            raise ValueError("timestamp_ns must be nonnegative")
        if not 0 <= self.src_ip < (1 << 32):
            raise ValueError("src_ip out of range")
        if not 0 <= self.dst_ip < (1 << 32):
            raise ValueError("dst_ip out of range")
        if not 0 <= self.src_port < (1 << 16):
            raise ValueError("src_port out of range")
        if not 0 <= self.dst_port < (1 << 16):
            raise ValueError("dst_port out of range")
        if not 0 <= self.protocol < (1 << 8):
            raise ValueError("protocol out of range")
        if not 0 <= self.length_bytes <= MAX_LENGTH_BYTES:
            raise ValueError("length_bytes out of range")
        if not 0 <= self.tcp_seq < (1 << 32):
            raise ValueError("tcp_seq out of range")
        if not isinstance(self.label, Label):
            raise ValueError("label must be a Label")


@dataclass(frozen=True)
class TraceMeta:
    """Summary of a trace: row count, time span, anomalous row count."""

    record_count: int
    first_ts_ns: int
    last_ts_ns: int
    anomalous_count: int


class TraceFormatError(ValueError):
    """Malformed trace input.  line_no is 1-based and counts the header."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


def format_ip(value: int) -> str:
    return f"{(value >> 24) & 255}.{(value >> 16) & 255}.{(value >> 8) & 255}.{value & 255}"


def parse_ip(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4:
        raise ValueError(f"bad IPv4 address {text!r}")
    value = 0
    for part in parts:
        if not part.isdigit():
            raise ValueError(f"bad IPv4 address {text!r}")
        octet = int(part)
        if octet > 255:
            raise ValueError(f"bad IPv4 address {text!r}")
        value = (value << 8) | octet
    return value


def format_row(record: PacketRecord) -> str:
    return (
        f"{record.timestamp_ns},{format_ip(record.src_ip)},{format_ip(record.dst_ip)},"
        f"{record.src_port},{record.dst_port},{record.protocol},"
        f"{record.length_bytes},{record.tcp_seq},{record.label.value}"
    )


def parse_trace(lines: Iterable[str]) -> Iterator[PacketRecord]:
    """Parse trace CSV lines into records, validating as it goes.

    Raises TraceFormatError (with the offending line number) on a bad
    header, malformed fields, out-of-range values, or a timestamp
    regression.
    """
    it = iter(lines)
    try:
        header = next(it)
    except StopIteration:
        raise TraceFormatError(1, "missing header") from None
    if header.rstrip("\n") != TRACE_HEADER:
        raise TraceFormatError(1, f"bad header: expected {TRACE_HEADER!r}")
    prev_ts = -1
    line_no = 1
    for raw in it:
        line_no += 1
        line = raw.rstrip("\n")
        if not line:
            continue
        fields = line.split(",")
        if len(fields) != 9:
            raise TraceFormatError(line_no, f"expected 9 fields, got {len(fields)}")
        try:
            label_text = fields[8]
            if label_text == "benign":
                label = Label.BENIGN
            elif label_text == "anomalous":
                label = Label.ANOMALOUS
            else:
                raise ValueError(f"bad label {label_text!r}")
            record = PacketRecord(
                timestamp_ns=int(fields[0]),
                src_ip=parse_ip(fields[1]),
                dst_ip=parse_ip(fields[2]),
                src_port=int(fields[3]),
                dst_port=int(fields[4]),
                protocol=int(fields[5]),
                length_bytes=int(fields[6]),
                tcp_seq=int(fields[7]),
                label=label,
            )
        except ValueError as exc:
            raise TraceFormatError(line_no, str(exc)) from None
        if record.timestamp_ns < prev_ts:
            raise TraceFormatError(
                line_no,
                f"timestamp regression: {record.timestamp_ns} after {prev_ts}",
            )
        prev_ts = record.timestamp_ns
        yield record


def trace_meta(records: Sequence[PacketRecord]) -> TraceMeta:
    if not records:
        return TraceMeta(0, 0, 0, 0)
    anomalous = sum(1 for r in records if r.label is Label.ANOMALOUS)
    return TraceMeta(len(records), records[0].timestamp_ns, records[-1].timestamp_ns, anomalous)


def read_trace(path) -> tuple[list[PacketRecord], TraceMeta]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        records = list(parse_trace(fh))
    return records, trace_meta(records)


def write_trace(path, records: Sequence[PacketRecord]) -> TraceMeta:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(TRACE_HEADER + "\n")
        for record in records:
            fh.write(format_row(record) + "\n")
    return trace_meta(records)


class AnomalyKind(enum.Enum):
    FLOOD = "flood"
    PORT_SCAN = "portscan"


@dataclass(frozen=True)
class AnomalyProfile:
    """Injected attack burst.  The window is a fraction of the trace
    duration; packet count is rate_multiplier times the benign per-flow
    rate over that window."""

    kind: AnomalyKind
    rate_multiplier: float = 50.0
    window_start: float = 0.4
    window_stop: float = 0.5


@dataclass(frozen=True)
class SyntheticProfile:
    """Shape of a generated trace.

    timing selects how each benign flow spaces its packets: "uniform"
    draws offsets uniformly over the duration, "periodic" sends one
    packet every duration/packets_per_flow with a random phase.
    """

    flows: int = 10
    packets_per_flow: int = 100
    duration_ns: int = 10_000_000_000
    timing: str = "uniform"
    start_ts_ns: int = 0
    anomaly: AnomalyProfile | None = None


_BENIGN_SRC_BASE = parse_ip("10.0.0.1")
_DST_BASE = parse_ip("192.168.0.1")
_ATTACK_SRC = parse_ip("10.255.255.254")
_BENIGN_LENGTHS = (60, 576, 1500)


def _flow_times(rng: random.Random, profile: SyntheticProfile) -> list[int]:
    count = profile.packets_per_flow
    duration = profile.duration_ns
    if profile.timing == "uniform":
        return sorted(rng.randrange(duration) for _ in range(count))
    # periodic: fixed spacing with a random phase, entirely inside the trace
    period = duration // count
    phase = rng.randrange(period)
    return [phase + j * period for j in range(count)]


def generate_synthetic(profile: SyntheticProfile, seed: int) -> list[PacketRecord]:
    """Generate a timestamp-sorted labeled trace.

    Pure function of (profile, seed): the same arguments always produce
    the identical record sequence.
    """
    if profile.duration_ns <= 0:
        raise ValueError("profile duration must be positive")
    if profile.flows < 0:
        raise ValueError("flow count must be nonnegative")
    if profile.flows > 0 and profile.packets_per_flow < 1:
        raise ValueError("packets_per_flow must be at least 1")
    if profile.timing not in ("uniform", "periodic"):
        raise ValueError(f"unknown timing mode {profile.timing!r}")
    if profile.timing == "periodic" and profile.flows > 0 and profile.duration_ns < profile.packets_per_flow:
        raise ValueError("periodic timing needs duration_ns >= packets_per_flow")
    anomaly = profile.anomaly
    if anomaly is not None:
        if not 0.0 <= anomaly.window_start < anomaly.window_stop <= 1.0:
            raise ValueError("anomaly window must satisfy 0 <= start < stop <= 1")
        if anomaly.rate_multiplier <= 0:
            raise ValueError("anomaly rate_multiplier must be positive")

    rng = random.Random(seed)
    records: list[PacketRecord] = []

    for i in range(profile.flows):
        src = (_BENIGN_SRC_BASE + i) & 0xFFFFFFFF
        dst = (_DST_BASE + rng.randrange(16)) & 0xFFFFFFFF
        proto_pick = rng.random()
        if proto_pick < 0.7:
            protocol = _PROTO_TCP
        elif proto_pick < 0.95:
            protocol = _PROTO_UDP
        else:
            protocol = _PROTO_ICMP
        if protocol == _PROTO_ICMP:
            src_port = dst_port = 0
        else:
            src_port = rng.randrange(1024, 65536)
            dst_port = rng.choice((80, 443, 53, 8080))
        seq = rng.randrange(1 << 32) if protocol == _PROTO_TCP else 0
        times = _flow_times(rng, profile)
        for ts in times:
            records.append(
                PacketRecord(
                    timestamp_ns=profile.start_ts_ns + ts,
                    src_ip=src,
                    dst_ip=dst,
                    src_port=src_port,
                    dst_port=dst_port,
                    protocol=protocol,
                    length_bytes=rng.choice(_BENIGN_LENGTHS),
                    tcp_seq=seq,
                    label=Label.BENIGN,
                )
            )
            if protocol == _PROTO_TCP:
                seq = (seq + 1) & 0xFFFFFFFF

    if anomaly is not None:
        lo = int(anomaly.window_start * profile.duration_ns)
        hi = int(anomaly.window_stop * profile.duration_ns)
        span = anomaly.window_stop - anomaly.window_start
        count = round(anomaly.rate_multiplier * profile.packets_per_flow * span)
        times = sorted(lo + rng.randrange(hi - lo) for _ in range(count))
        seq = rng.randrange(1 << 32)
        for j, ts in enumerate(times):
            if anomaly.kind is AnomalyKind.FLOOD:
                dst_port = 80
            else:
                dst_port = 1 + (j % 65535)
            records.append(
                PacketRecord(
                    timestamp_ns=profile.start_ts_ns + ts,
                    src_ip=_ATTACK_SRC,
                    dst_ip=_DST_BASE,
                    src_port=40000,
                    dst_port=dst_port,
                    protocol=_PROTO_TCP,
                    length_bytes=60,
                    tcp_seq=(seq + j) & 0xFFFFFFFF,
                    label=Label.ANOMALOUS,
                )
            )

    records.sort(key=lambda r: r.timestamp_ns)
    return records
