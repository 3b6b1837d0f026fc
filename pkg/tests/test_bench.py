"""Benchmark plumbing: size parsing, CSV round-trips, CLI, stop rule."""

import pytest

from pgaslite import Config
from pgaslite.bench import avail
from pgaslite.bench.avail import (BenchSample, measure_availability,
                                  parse_sizes, read_avail_csv,
                                  write_avail_csv)
from pgaslite.bench.cli import balanced_factors, main
from pgaslite.errors import BenchmarkError, UsageError


def test_parse_sizes():
    assert parse_sizes("4096") == [4096]
    assert parse_sizes("64K") == [65536]
    assert parse_sizes("8K, 64K,1M") == [8192, 65536, 1048576]
    assert parse_sizes("1K..8K") == [1024, 2048, 4096, 8192]
    assert parse_sizes("2,4") == [2, 4]
    for bad in ("abc", "0", "-4", "3K..12K", "8K..4K", ""):
        with pytest.raises(UsageError):
            parse_sizes(bad)


def test_balanced_factors():
    assert balanced_factors(1) == (1, 1, 1)
    assert balanced_factors(7) == (7, 1, 1)
    assert balanced_factors(8) == (2, 2, 2)
    assert balanced_factors(12) == (3, 2, 2)
    assert balanced_factors(24) == (4, 3, 2)


def test_stop_point_clamps_overhead():
    s = BenchSample.at_stop_point(8192, "agent", "inter", 64,
                                  iter_t=9e-6, work_t=10e-6, base_t=100e-6)
    assert s.overhead == 0.0
    assert s.availability == 1.0
    s = BenchSample.at_stop_point(8192, "deferred", "inter", 64,
                                  iter_t=150e-6, work_t=30e-6, base_t=100e-6)
    assert s.overhead == pytest.approx(120e-6)
    assert s.availability == pytest.approx(-0.2)


def test_avail_csv_round_trip(tmp_path):
    samples = [
        BenchSample(65536, "agent", "inter", 512, 123.4e-6, 100.0e-6,
                    160.25e-6, 23.4e-6, 1 - 23.4 / 160.25),
        BenchSample(8192, "deferred", "intra", 64, 50e-6, 10e-6,
                    45e-6, 40e-6, 1 - 40 / 45),
    ]
    path = tmp_path / "avail.csv"
    write_avail_csv(samples, path, {"reps": 5, "note": "round trip"})
    back, meta = read_avail_csv(path)
    assert meta["reps"] == "5" and meta["note"] == "round trip"
    assert len(back) == 2
    for orig, echo in zip(samples, back):
        assert (echo.msg_size, echo.mode, echo.locality) == \
            (orig.msg_size, orig.mode, orig.locality)
        assert echo.work_iters == orig.work_iters
        assert echo.iter_t == pytest.approx(orig.iter_t)
        assert echo.availability == pytest.approx(orig.availability)


def test_nonconverging_work_loop_raises(monkeypatch):
    monkeypatch.setattr(avail, "MAX_WORK_ITERS", 4)
    cfg = Config(nodes=2, units_per_node=3, agents_per_node=1,
                 mode="deferred", net_latency=0.02, collective_timeout=2.0)
    # With the wire this slow, four spin iterations can never stretch the
    # loop past the stop factor, so the ramp must give up loudly.
    with pytest.raises(BenchmarkError):
        measure_availability(8192, "deferred", "inter", config=cfg, reps=1)


def test_cli_avail_writes_csv(tmp_path):
    out = tmp_path / "sweep.csv"
    rc = main(["avail", "--sizes", "2K", "--modes", "eager",
               "--locality", "intra", "--reps", "2", "--csv", str(out)])
    assert rc == 0
    samples, meta = read_avail_csv(out)
    assert len(samples) == 1
    assert samples[0].msg_size == 2048
    assert samples[0].mode == "eager-direct"
    assert samples[0].work_iters >= 1
    assert "spin_s_per_iter" in meta
    assert "agent_requests_received" in meta


def test_cli_rejects_bad_requests(capsys):
    assert main(["heat3d", "--decomposition", "2x2x2", "--units", "7",
                 "--iters", "1"]) == 2
    assert "error" in capsys.readouterr().err
    assert main(["avail", "--sizes", "3K..12K"]) == 2
    capsys.readouterr()
