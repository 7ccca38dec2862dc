import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xaitwin.errors import ConfigError, ValidationError
from xaitwin.regression import design_matrix
from xaitwin.trace import (CANONICAL_FIELDS, ColumnMapping, ContextSample, FieldError,
                           GeneratorConfig, RequestConfig, ServiceRequest,
                           bitrate_schema_mapping, canonical_mapping, parse_trace,
                           synthesize_requests, synthesize_trace, write_trace)

HEADER = ["Timestamp", "Speed", "RSRP", "RSRQ", "SNR", "CQI", "UL_bitrate", "DL_bitrate", "CellID"]


def sample(**kw):
    base = dict(timestamp=0.0, speed=40.0, rsrp=-90.0, rsrq=-11.0, sinr=10.0, cqi=9,
                uplink_rate=1.0, downlink_rate=30.0, gnb_id=0)
    base.update(kw)
    return ContextSample(**base)


def write_rows(path, rows, header=HEADER):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def test_sample_validation():
    with pytest.raises(FieldError, match="cqi out of range"):
        sample(cqi=22)
    with pytest.raises(FieldError):
        sample(speed=-1.0)
    with pytest.raises(FieldError):
        sample(rsrp=float("nan"))
    with pytest.raises(FieldError):
        sample(downlink_rate=-0.5)
    assert sample(sinr=10.0).sinr_linear == pytest.approx(10.0)
    assert sample(sinr=0.0).sinr_linear == pytest.approx(1.0)


def test_request_validation():
    with pytest.raises(ValidationError):
        ServiceRequest(0, 0, 0.0, 1.0, 1.0, 1.0, 1.0)
    r = ServiceRequest(0, 0, 1.0, 2.0, 3.0, 4.0, 5.0)
    assert r.delay_budget == 3.0


def test_kbps_scaling(tmp_path):
    p = tmp_path / "t.csv"
    write_rows(p, [["2018.01.01_10.00.00", "30", "-90", "-11", "8", "9", "500", "1000", "A"]])
    parsed = parse_trace(p, bitrate_schema_mapping())
    assert parsed.errors == []
    s = parsed.samples[0]
    assert s.downlink_rate == pytest.approx(1.0)
    assert s.uplink_rate == pytest.approx(0.5)
    assert s.gnb_id == 0


def test_cqi_out_of_range_row_error(tmp_path):
    p = tmp_path / "t.csv"
    write_rows(p, [["1", "30", "-90", "-11", "8", "22", "500", "1000", "A"],
                   ["2", "30", "-90", "-11", "8", "9", "500", "1000", "B"]])
    parsed = parse_trace(p, bitrate_schema_mapping())
    assert len(parsed.samples) == 1
    assert parsed.errors[0].row == 1
    assert parsed.errors[0].field == "cqi"
    assert parsed.errors[0].message == "cqi out of range"
    assert parsed.samples[0].gnb_id == 0  # labels indexed among accepted rows


def test_parse_is_total(tmp_path):
    p = tmp_path / "t.csv"
    rows = [["1", "30", "-90", "-11", "8", "9", "500", "1000", "A"],
            ["2", "x", "-90", "-11", "8", "9", "500", "1000", "A"],
            ["3", "30", "-90", "-11", "8", "9.5", "500", "1000", "B"],
            ["4", "30", "-90", "-11", "8", "9", "-5", "1000", "B"],
            ["5", "30", "-90", "-11", "8", "9", "500", "1000", ""],
            ["6", "30", "-90", "-11", "8", "9", "500", "1000", "C"]]
    write_rows(p, rows)
    parsed = parse_trace(p, bitrate_schema_mapping())
    assert len(parsed.samples) + len(parsed.errors) == parsed.rows == 6
    assert [e.row for e in parsed.errors] == [2, 3, 4, 5]


def test_gnb_count_check(tmp_path):
    p = tmp_path / "t.csv"
    write_rows(p, [[str(i), "30", "-90", "-11", "8", "9", "500", "1000", c]
                   for i, c in enumerate("ABC")])
    parsed = parse_trace(p, bitrate_schema_mapping(), num_gnbs=2)
    assert len(parsed.samples) == 2 and parsed.errors[0].field == "gnb_id"


def test_missing_column_and_file(tmp_path):
    p = tmp_path / "t.csv"
    write_rows(p, [["1", "2"]], header=["Timestamp", "Speed"])
    with pytest.raises(ConfigError, match="lacks mapped columns"):
        parse_trace(p, bitrate_schema_mapping())
    with pytest.raises(ConfigError):
        parse_trace(tmp_path / "absent.csv", bitrate_schema_mapping())


def test_round_robin_mapping(tmp_path):
    p = tmp_path / "t.csv"
    write_rows(p, [[str(i), "30", "-90", "-11", "8", "9", "500", "1000"] for i in range(5)],
               header=HEADER[:-1])
    m = ColumnMapping.from_dict({**bitrate_schema_mapping().to_dict(),
                                 "gnb_mode": "round_robin", "gnb_column": None})
    parsed = parse_trace(p, m, num_gnbs=3)
    assert [s.gnb_id for s in parsed.samples] == [0, 1, 2, 0, 1]


def test_mapping_validation():
    cols = {f: f for f in CANONICAL_FIELDS}
    with pytest.raises(ConfigError):
        ColumnMapping(columns={k: v for k, v in cols.items() if k != "cqi"})
    with pytest.raises(ConfigError):
        ColumnMapping(columns={**cols, "rsrq": "rsrp"})
    with pytest.raises(ConfigError):
        ColumnMapping(columns=cols, scales={"speed": 0.0})
    m = bitrate_schema_mapping()
    assert ColumnMapping.from_dict(m.to_dict()) == m


def test_three_row_round_trip(tmp_path):
    samples = synthesize_trace(GeneratorConfig(n_samples=3, num_gnbs=2), seed=4)
    p = tmp_path / "rt.csv"
    write_trace(samples, p, canonical_mapping())
    assert parse_trace(p, canonical_mapping()).samples == samples
    # kbps scaling divides then multiplies by 1e-3, so allow last-ulp drift
    write_trace(samples, p, bitrate_schema_mapping())
    back = parse_trace(p, bitrate_schema_mapping()).samples
    for a, b in zip(back, samples):
        for name in CANONICAL_FIELDS:
            assert getattr(a, name) == pytest.approx(getattr(b, name), rel=1e-14)
        assert a.gnb_id == b.gnb_id


@given(st.floats(1e-3, 1e4), st.floats(-1e3, 1e3).filter(lambda s: abs(s) > 1e-6))
def test_scaling_invertible(value, scale):
    assert (value * scale) / scale == pytest.approx(value, rel=1e-12)


def test_synthesis_deterministic():
    a = synthesize_trace(GeneratorConfig(n_samples=50), seed=11)
    b = synthesize_trace(GeneratorConfig(n_samples=50), seed=11)
    c = synthesize_trace(GeneratorConfig(n_samples=50), seed=12)
    assert a == b and a != c
    assert [repr(s) for s in a] == [repr(s) for s in b]


def test_noiseless_rates_are_linear():
    cfg = GeneratorConfig(n_samples=300, noise=(0.0, 0.0))
    samples = synthesize_trace(cfg, seed=2)
    rates = np.array([s.rates for s in samples])
    np.testing.assert_allclose(rates, design_matrix(samples) @ cfg.coefficient_matrix,
                               rtol=0, atol=1e-9)


def test_synthetic_envelopes():
    cfg = GeneratorConfig(n_samples=2000)
    samples = synthesize_trace(cfg, seed=0)
    speeds = np.array([s.speed for s in samples])
    assert speeds.min() >= cfg.speed_range[0] and speeds.max() <= cfg.speed_range[1]
    assert all(0 <= s.cqi <= 15 for s in samples)
    assert all(s.uplink_rate >= 0 and s.downlink_rate >= 0 for s in samples)
    assert {s.gnb_id for s in samples} == set(range(cfg.num_gnbs))


def test_generator_rejects_negative_rate_box():
    with pytest.raises(ConfigError, match="negative rates"):
        GeneratorConfig(coefficients=((0.0, 0.0),) + ((0.0, 1.0),) * 5)
    with pytest.raises(ConfigError):
        GeneratorConfig(gnb_offsets=(1.0, 2.0))
    with pytest.raises(ConfigError):
        GeneratorConfig.from_dict({"bogus": 1})


def test_requests():
    samples = synthesize_trace(GeneratorConfig(n_samples=40), seed=1)
    reqs = synthesize_requests(samples, RequestConfig(), seed=3)
    assert len(reqs) == 40
    assert reqs == synthesize_requests(samples, RequestConfig(), seed=3)
    for s, r in zip(samples, reqs):
        assert r.required_downlink == pytest.approx(max(s.downlink_rate, 1e-3))
        assert 0.5 <= r.upload_size <= 4.0
