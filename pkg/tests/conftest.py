"""Shared builders for tests."""

from __future__ import annotations

import random

from flowsketch.ingest import Label, PacketRecord, parse_ip
from flowsketch.sketch import EpochSnapshot, StageCell


def make_packet(
    ts: int = 0,
    src: str | int = "10.0.0.1",
    dst: str | int = "192.168.0.1",
    sport: int = 1234,
    dport: int = 80,
    proto: int = 6,
    length: int = 60,
    seq: int = 0,
    label: Label = Label.BENIGN,
) -> PacketRecord:
    return PacketRecord(
        timestamp_ns=ts,
        src_ip=parse_ip(src) if isinstance(src, str) else src,
        dst_ip=parse_ip(dst) if isinstance(dst, str) else dst,
        src_port=sport,
        dst_port=dport,
        protocol=proto,
        length_bytes=length,
        tcp_seq=seq,
        label=label,
    )


def random_records(
    rng: random.Random,
    n: int,
    span_ns: int = 5_000_000_000,
    pool: int = 8,
    anomalous_rate: float = 0.0,
) -> list[PacketRecord]:
    """Fully random packets from a small address pool, sorted by time."""
    times = sorted(rng.randrange(span_ns) for _ in range(n))
    out = []
    for ts in times:
        label = Label.ANOMALOUS if rng.random() < anomalous_rate else Label.BENIGN
        out.append(
            make_packet(
                ts=ts,
                src=rng.randrange(1, pool + 1),
                dst=rng.randrange(1, pool + 1) << 8,
                sport=rng.randrange(1024, 1024 + pool),
                dport=rng.choice((80, 443, 53)),
                proto=rng.choice((6, 17)),
                length=rng.choice((60, 576, 1500)),
                seq=rng.randrange(1 << 20),
                label=label,
            )
        )
    return out


def count_snapshot(epoch_index: int, pkt_counts: list[int]) -> EpochSnapshot:
    """Snapshot whose buckets hold the given packet counts, with byte
    sums derived so byte features stay consistent."""
    cells = tuple(
        StageCell(pkt_count=c, byte_sum=100 * c, byte_min=100 if c else None,
                  byte_max=100 if c else None)
        for c in pkt_counts
    )
    return EpochSnapshot(epoch_index, epoch_index * 1_000_000_000, True, cells)
