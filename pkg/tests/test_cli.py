"""Command-line behavior: flows, files, exit codes, flag precedence."""

import json

import pytest

from flowsketch.cli import main
from flowsketch.detectors import parse_verdicts
from flowsketch.evaluation import parse_report_csv
from flowsketch.ingest import read_trace
from flowsketch.sketch import parse_snapshot


def run(*argv):
    return main(list(argv))


def gen_trace(tmp_path, *extra, name="trace.csv"):
    path = tmp_path / name
    code = run(
        "generate", "--out", str(path),
        "--flows", "10", "--packets-per-flow", "60",
        "--duration-ns", "6000000000", "--seed", "21", *extra,
    )
    assert code == 0
    return path


def test_generate_writes_deterministic_trace(tmp_path, capsys):
    path = gen_trace(tmp_path, "--anomaly", "flood")
    out = capsys.readouterr().out
    assert "600" in out and "anomalous" in out
    records, meta = read_trace(path)
    assert meta.record_count == 600 + 300  # benign + 50 * 60 * 0.1 flood
    assert meta.anomalous_count == 300
    first = path.read_bytes()
    gen_trace(tmp_path, "--anomaly", "flood")
    assert path.read_bytes() == first


def test_generate_rejects_bad_window(tmp_path, capsys):
    code = run(
        "generate", "--out", str(tmp_path / "t.csv"),
        "--anomaly", "flood", "--window-start", "0.9", "--window-stop", "0.2",
    )
    assert code == 2
    assert "window" in capsys.readouterr().err


def test_usage_errors_exit_1(capsys):
    assert run("generate", "--no-such-flag") == 1
    assert run("frobnicate") == 1
    assert run("extract", "--trace", "x.csv") == 1  # missing --out-dir
    capsys.readouterr()


def test_help_exits_0(capsys):
    assert run("--help") == 0
    assert "generate" in capsys.readouterr().out


def test_extract_writes_epoch_snapshots(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    out_dir = tmp_path / "snaps"
    assert run("extract", "--trace", str(trace), "--out-dir", str(out_dir),
               "--hash-width", "4", "--epoch-ns", "1000000000") == 0
    files = sorted(p.name for p in out_dir.iterdir())
    assert files[0] == "epoch_0000.csv"
    assert files[-1].endswith("_partial.csv")
    assert all(f.startswith("epoch_") for f in files)
    with open(out_dir / files[0], newline="") as fh:
        rows = parse_snapshot(fh)
    assert len(rows) == 16  # one stage of 2**4 buckets
    assert sum(cell.pkt_count for _, _, cell in rows) > 0


def test_detect_writes_verdicts(tmp_path):
    trace = gen_trace(tmp_path, "--anomaly", "flood")
    out = tmp_path / "verdicts.csv"
    assert run(
        "detect", "--trace", str(trace), "--out", str(out),
        "--hash-width", "4", "--detector", "zscore", "--k", "3", "--train-epochs", "2",
    ) == 0
    with open(out, newline="") as fh:
        verdicts = parse_verdicts(fh)
    epochs = {v.epoch_index for v in verdicts}
    assert len(verdicts) == 16 * len(epochs)
    assert all(v.detector_id == "zscore" for v in verdicts)


def test_detect_missing_trace_exits_2(tmp_path, capsys):
    code = run("detect", "--trace", str(tmp_path / "missing.csv"),
               "--out", str(tmp_path / "v.csv"))
    assert code == 2
    capsys.readouterr()


def test_malformed_trace_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    trace = gen_trace(tmp_path)
    lines = trace.read_text().splitlines()
    lines[3] = lines[3].replace(",benign", ",sideways")
    bad.write_text("\n".join(lines) + "\n")
    code = run("extract", "--trace", str(bad), "--out-dir", str(tmp_path / "s"))
    assert code == 2
    assert "line 4" in capsys.readouterr().err


def test_sweep_writes_reports(tmp_path, capsys):
    trace = gen_trace(tmp_path, "--anomaly", "flood")
    out_dir = tmp_path / "sweep"
    code = run(
        "sweep", "--trace", str(trace), "--out-dir", str(out_dir),
        "--hash-widths", "4,5", "--mem-stages", "1",
        "--detector", "zscore", "--k", "3", "--train-epochs", "2",
    )
    assert code == 0
    with open(out_dir / "report.csv", newline="") as fh:
        rows = parse_report_csv(fh)
    assert len(rows) == 2
    assert {r.hash_width for r in rows} == {4, 5}
    assert any(r.on_front for r in rows)
    assert all(r.measured_pps is None for r in rows)  # bench off
    payload = json.loads((out_dir / "report.json").read_text())
    assert len(payload) == 2
    assert "front" in capsys.readouterr().out.lower()


def test_sweep_partial_failure_exits_3(tmp_path, capsys):
    trace = gen_trace(tmp_path, "--anomaly", "flood")
    out_dir = tmp_path / "sweep"
    config = tmp_path / "grid.json"
    config.write_text(json.dumps({
        "sweep": {
            "hash_widths": [4],
            "detectors": [
                {"detector": "zscore", "k": 3.0, "train_epochs": 2},
                {"detector": "zscore", "k": 3.0, "train_epochs": 99},
            ],
        }
    }))
    code = run("sweep", "--trace", str(trace), "--out-dir", str(out_dir),
               "--config", str(config))
    assert code == 3
    err = capsys.readouterr().err
    assert "train_epochs" in err
    payload = json.loads((out_dir / "report.json").read_text())
    errors = [e["error"] for e in payload]
    assert sum(1 for e in errors if e) == 1


def test_flag_precedence_cli_over_config(tmp_path):
    trace = gen_trace(tmp_path, "--anomaly", "flood")
    config = tmp_path / "conf.json"
    config.write_text(json.dumps({
        "sweep": {"hash_widths": [4], "k": 3.0, "train_epochs": 2}
    }))
    out_a = tmp_path / "a"
    assert run("sweep", "--trace", str(trace), "--out-dir", str(out_a),
               "--config", str(config)) == 0
    with open(out_a / "report.csv", newline="") as fh:
        assert {r.hash_width for r in parse_report_csv(fh)} == {4}
    out_b = tmp_path / "b"
    assert run("sweep", "--trace", str(trace), "--out-dir", str(out_b),
               "--config", str(config), "--hash-widths", "5") == 0
    with open(out_b / "report.csv", newline="") as fh:
        assert {r.hash_width for r in parse_report_csv(fh)} == {5}


def test_config_unknown_key_exits_2(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    config = tmp_path / "conf.json"
    config.write_text(json.dumps({"sketch": {"hash_wdith": 4}}))
    code = run("extract", "--trace", str(trace), "--out-dir", str(tmp_path / "s"),
               "--config", str(config))
    assert code == 2
    assert "hash_wdith" in capsys.readouterr().err


def test_config_invalid_json_exits_2(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    config = tmp_path / "conf.json"
    config.write_text("{not json")
    code = run("extract", "--trace", str(trace), "--out-dir", str(tmp_path / "s"),
               "--config", str(config))
    assert code == 2
    capsys.readouterr()


def test_pareto_command_prints_front(tmp_path, capsys):
    trace = gen_trace(tmp_path, "--anomaly", "flood")
    out_dir = tmp_path / "sweep"
    assert run("sweep", "--trace", str(trace), "--out-dir", str(out_dir),
               "--hash-widths", "4,5", "--detector", "zscore", "--k", "3",
               "--train-epochs", "2") == 0
    capsys.readouterr()
    assert run("pareto", "--report", str(out_dir / "report.csv")) == 0
    out = capsys.readouterr().out
    assert "on the front" in out


def test_bench_command(tmp_path, capsys):
    path = tmp_path / "big.csv"
    assert run("generate", "--out", str(path), "--flows", "100",
               "--packets-per-flow", "120", "--seed", "1") == 0
    capsys.readouterr()
    assert run("bench", "--trace", str(path), "--hash-width", "4") == 0
    out = capsys.readouterr().out
    assert "packets/s" in out
    assert "GB/s" in out


def test_bench_short_trace_exits_2(tmp_path, capsys):
    trace = gen_trace(tmp_path)
    assert run("bench", "--trace", str(trace)) == 2
    assert "10000" in capsys.readouterr().err
