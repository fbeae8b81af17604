"""Sketch update, epoch rotation, query, and snapshot behavior."""

import random
from fractions import Fraction

import pytest

from flowsketch.hashing import FlowKey, KeySpec, extract_key, shift_xor_hash
from flowsketch.ingest import SyntheticProfile, generate_synthetic
from flowsketch.sketch import (
    CELL_BYTES,
    UPDATE_OPS,
    Sketch,
    SketchConfig,
    StageCell,
    collect_epochs,
    parse_snapshot,
    replay_epochs,
    write_snapshot,
)

from conftest import make_packet, random_records

SRC_KEY = KeySpec(("src_ip",))


def cfg(width=4, stages=1, epoch_ns=1000, key=SRC_KEY):
    return SketchConfig(width, stages, epoch_ns, key)


def test_config_validation():
    with pytest.raises(ValueError):
        cfg(width=0)
    with pytest.raises(ValueError):
        cfg(width=25)
    with pytest.raises(ValueError):
        cfg(stages=0)
    with pytest.raises(ValueError):
        cfg(epoch_ns=0)
    with pytest.raises(ValueError):
        SketchConfig(4, 1, 1000, "src_ip")


def test_cell_counts():
    assert cfg(width=4, stages=1).cell_count == 16
    assert cfg(width=5, stages=3).cell_count == 96
    assert cfg(width=1, stages=1).bucket_count == 2
    assert CELL_BYTES == 72
    assert UPDATE_OPS == 9


def test_memory_budget_enforced():
    with pytest.raises(ValueError):
        Sketch(cfg(width=10), max_cells=100)
    Sketch(cfg(width=10), max_cells=1024)


def test_single_update():
    sk = Sketch(cfg())
    pkt = make_packet(ts=500, length=60)
    sk.update(pkt)
    cell = sk.stage_cells(0)[sk.bucket_of(extract_key(pkt, SRC_KEY))]
    assert cell == StageCell(
        pkt_count=1, byte_sum=60, byte_min=60, byte_max=60, last_ts_ns=500,
        iat_sum_ns=0, iat_count=0, iat_min_ns=None, iat_max_ns=None,
    )
    assert sk.epoch_start_ns == 500
    assert sk.epoch_index == 0


def test_accumulation_within_epoch():
    sk = Sketch(cfg(epoch_ns=1_000_000))
    for ts, length in ((1000, 60), (4000, 1500), (9000, 60)):
        sk.update(make_packet(ts=ts, length=length))
    key = extract_key(make_packet(), SRC_KEY)
    cell = sk.stage_cells(0)[sk.bucket_of(key)]
    assert cell.pkt_count == 3
    assert cell.byte_sum == 1620
    assert cell.byte_min == 60
    assert cell.byte_max == 1500
    assert cell.last_ts_ns == 9000
    assert cell.iat_count == 2
    assert cell.iat_sum_ns == 8000
    assert cell.iat_min_ns == 3000
    assert cell.iat_max_ns == 5000
    fv = sk.query(key)
    assert fv.byte_avg == Fraction(1620, 3) == 540
    assert fv.iat_avg_ns == Fraction(8000, 2) == 4000


def test_empty_bucket_query():
    sk = Sketch(cfg())
    fv = sk.query(FlowKey(12345, 32))
    assert fv.pkt_count == 0 and fv.byte_sum == 0
    assert fv.byte_avg is None and fv.iat_avg_ns is None
    assert fv.byte_min is None and fv.iat_max_ns is None
    with pytest.raises(ValueError):
        sk.query(FlowKey(1, 32), stage=1)


def test_timestamp_regression_rejected():
    sk = Sketch(cfg())
    sk.update(make_packet(ts=100))
    with pytest.raises(ValueError):
        sk.update(make_packet(ts=99))
    with pytest.raises(ValueError):
        sk.update_many([make_packet(ts=200), make_packet(ts=150)])
    # packets before the regression stay applied, so 200 is the floor
    sk.update(make_packet(ts=200))  # equal timestamps are fine


def test_update_many_matches_single_updates():
    rng = random.Random(31)
    records = random_records(rng, 400, span_ns=10_000)
    for stages in (1, 3):
        a = Sketch(cfg(stages=stages))
        b = Sketch(cfg(stages=stages))
        assert a.update_many(records) == len(records)
        for r in records:
            b.update(r)
        assert a.snapshot() == b.snapshot()
        assert a.epoch_index == b.epoch_index
        assert a.epoch_start_ns == b.epoch_start_ns


def test_rotation_shifts_stages_bit_for_bit():
    rng = random.Random(41)
    for stages in (1, 2, 3):
        for _ in range(15):
            sk = Sketch(cfg(stages=stages, epoch_ns=10_000_000))
            sk.update_many(random_records(rng, rng.randrange(1, 120), span_ns=9_000_000))
            before = [sk.stage_cells(s) for s in range(stages)]
            index_before = sk.epoch_index
            sk.rotate_epoch(sk.epoch_start_ns + 10_000_000)
            empty = [StageCell() for _ in range(16)]
            assert sk.stage_cells(0) == empty
            for s in range(1, stages):
                assert sk.stage_cells(s) == before[s - 1]
            assert sk.epoch_index == index_before + 1


def test_rotation_drops_oldest_stage():
    sk = Sketch(cfg(stages=2, epoch_ns=1000))
    sk.update(make_packet(ts=0, length=111))
    sk.rotate_epoch(1000)
    oldest = sk.stage_cells(1)
    assert sum(c.pkt_count for c in oldest) == 1
    sk.rotate_epoch(2000)
    assert sum(c.pkt_count for c in sk.stage_cells(1)) == 0


def test_stage_contents_across_five_epochs():
    # One packet per epoch with a distinct size; S=3 keeps the last three.
    sk = Sketch(cfg(stages=3, epoch_ns=1000))
    for epoch in range(5):
        sk.update(make_packet(ts=epoch * 1000, length=60 + epoch))
    for stage, expected_len in ((0, 64), (1, 63), (2, 62)):
        sums = [c.byte_sum for c in sk.stage_cells(stage) if c.pkt_count]
        assert sums == [expected_len]
    assert sk.epoch_index == 4


def test_auto_rotation_skips_empty_epochs():
    sk = Sketch(cfg(stages=3, epoch_ns=1000))
    sk.update(make_packet(ts=100))
    sk.update(make_packet(ts=3100))  # epochs 1 and 2 are empty
    assert sk.epoch_index == 3
    assert sk.epoch_start_ns == 3100 - (3100 - 100) % 1000
    assert sum(c.pkt_count for c in sk.stage_cells(0)) == 1
    assert sum(c.pkt_count for c in sk.stage_cells(1)) == 0  # empty epoch 2
    assert sum(c.pkt_count for c in sk.stage_cells(2)) == 0  # empty epoch 1


def test_long_gap_equals_repeated_rotation():
    # A gap larger than the stage count takes a clearing fast path; it
    # must match rotating once per elapsed epoch.
    for gap_epochs in (3, 5, 50):
        fast = Sketch(cfg(stages=3, epoch_ns=1000))
        slow = Sketch(cfg(stages=3, epoch_ns=1000))
        first = make_packet(ts=0, length=99)
        late = make_packet(ts=gap_epochs * 1000 + 7)
        fast.update(first)
        fast.update(late)
        slow.update(first)
        for k in range(1, gap_epochs + 1):
            slow.rotate_epoch(k * 1000)
        slow.update(late)
        assert fast.snapshot() == slow.snapshot()
        assert fast.epoch_index == slow.epoch_index == gap_epochs
        assert fast.epoch_start_ns == slow.epoch_start_ns


def test_manual_rotation_validation():
    sk = Sketch(cfg())
    with pytest.raises(ValueError):
        sk.rotate_epoch(1000)  # nothing streamed yet
    sk.update(make_packet(ts=500))
    with pytest.raises(ValueError):
        sk.rotate_epoch(500)
    with pytest.raises(ValueError):
        sk.rotate_epoch(400)


def test_iat_restarts_each_epoch():
    # epochs anchor at the first packet, so 0 and 900 share epoch 0
    sk = Sketch(cfg(epoch_ns=1000))
    sk.update(make_packet(ts=0))
    sk.update(make_packet(ts=900))
    sk.update(make_packet(ts=1100))
    cell = sk.stage_cells(0)[sk.bucket_of(extract_key(make_packet(), SRC_KEY))]
    assert cell.pkt_count == 1
    assert cell.iat_count == 0
    assert cell.iat_min_ns is None


def test_colliding_keys_share_a_cell():
    # At width 1 any two keys with equal fold parity land together.
    sk = Sketch(cfg(width=1, epoch_ns=1_000_000))
    a = make_packet(src=1)
    b = make_packet(src=2)
    ka = extract_key(a, SRC_KEY)
    kb = extract_key(b, SRC_KEY)
    assert shift_xor_hash(ka, 1) == shift_xor_hash(kb, 1)
    for ts, pkt in ((10, a), (20, b), (30, a)):
        sk.update(make_packet(ts=ts, src=pkt.src_ip, length=100))
    fv = sk.query(ka)
    assert fv.pkt_count == 3
    assert fv.byte_sum == 300
    assert fv.iat_avg_ns == Fraction(20, 2)  # bucket-level gaps, both flows


def test_memory_is_fixed():
    rng = random.Random(51)
    sk = Sketch(cfg(width=3, stages=2, epoch_ns=500))
    assert sk.cell_count == 16
    sk.update_many(random_records(rng, 2000, span_ns=20_000, pool=32))
    rows = sk.snapshot()
    assert len(rows) == 16
    assert all(0 <= bucket < 8 and 0 <= stage < 2 for stage, bucket, _ in rows)


def test_snapshot_round_trip(tmp_path):
    rng = random.Random(61)
    sk = Sketch(cfg(width=3, stages=2, epoch_ns=2000))
    sk.update_many(random_records(rng, 50, span_ns=5000))
    path = tmp_path / "snap.csv"
    write_snapshot(path, sk.snapshot())
    with open(path, newline="") as fh:
        rows = parse_snapshot(fh)
    # last_ts_ns is stream state, not exported
    expected = [
        (s, b, StageCell(**{**cell.__dict__, "last_ts_ns": None}))
        for s, b, cell in sk.snapshot()
    ]
    assert rows == expected
    first = path.read_bytes()
    write_snapshot(path, rows)
    assert path.read_bytes() == first


def test_parse_snapshot_rejects_garbage(tmp_path):
    with pytest.raises(ValueError):
        parse_snapshot(["nope"])
    with pytest.raises(ValueError):
        parse_snapshot(["stage,bucket", "1,2"])


def test_collect_epochs_counts_and_flags():
    profile = SyntheticProfile(flows=6, packets_per_flow=40, duration_ns=3_500_000_000)
    records = generate_synthetic(profile, seed=13)
    config = SketchConfig(4, 1, 1_000_000_000, SRC_KEY)
    snaps = collect_epochs(Sketch(config), records)
    assert [s.complete for s in snaps] == [True] * (len(snaps) - 1) + [False]
    assert [s.epoch_index for s in snaps] == list(range(len(snaps)))
    t0 = records[0].timestamp_ns
    for s in snaps:
        assert s.epoch_start_ns == t0 + s.epoch_index * 1_000_000_000
        assert len(s.cells) == 16


def test_collect_epochs_empty_trace():
    assert collect_epochs(Sketch(cfg()), []) == []


def test_replay_matches_bulk_epoch_state():
    rng = random.Random(71)
    records = random_records(rng, 600, span_ns=50_000)
    config = cfg(epoch_ns=7000)
    bulk = Sketch(config)
    bulk.update_many(records)
    replayed = Sketch(config)
    replay_epochs(replayed, records, lambda *a: None)
    assert replayed.snapshot() == bulk.snapshot()
    assert replayed.epoch_index == bulk.epoch_index


def test_per_epoch_conservation():
    rng = random.Random(81)
    records = random_records(rng, 1500, span_ns=40_000, pool=16)
    config = cfg(width=4, epoch_ns=6000)
    snaps = collect_epochs(Sketch(config), records)
    t0 = records[0].timestamp_ns
    for snap in snaps:
        in_epoch = sum(
            1 for r in records if (r.timestamp_ns - t0) // 6000 == snap.epoch_index
        )
        assert sum(c.pkt_count for c in snap.cells) == in_epoch
