import json

import numpy as np
import pytest

from fdmdeconv.chain import ResonatorSpec
from fdmdeconv.detector import EventTruth, SourceSpec
from fdmdeconv.io import (PRESETS, CalibrationEntry, CalibrationFile, Channel, ConfigError,
                          FormatError, RecordFile, RecordHeader, RecordWriter, RunConfig,
                          config_hash, fill_truth, load_config, preset, save_config)
from fdmdeconv.signal import Spectrum


def test_config_roundtrip_and_hash(tmp_path):
    cfg = RunConfig(seed=7)
    save_config(cfg, tmp_path / "c.json")
    back = load_config(tmp_path / "c.json")
    assert back.to_dict() == cfg.to_dict()
    assert config_hash(back) == config_hash(cfg) == cfg.config_hash()
    assert config_hash(cfg.replace(seed=8)) != config_hash(cfg)


@pytest.mark.parametrize("name", PRESETS)
def test_presets_roundtrip(name, tmp_path):
    cfg = preset(name)
    save_config(cfg, tmp_path / "p.json")
    assert load_config(tmp_path / "p.json").to_dict() == cfg.to_dict()


def test_partial_config_uses_defaults():
    cfg = RunConfig.from_dict({"seed": 3, "analysis": {"cfd_delay": 5e-9}})
    assert cfg.seed == 3 and cfg.analysis.cfd_delay == 5e-9
    assert cfg.analysis.cfd_fraction == 1.0


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"digitizer": {"bits": 4}},
    {"digitizer": {"colour": "red"}},
    {"resonators": [{"f0": 7e6}, {"f0": 7e6, "id": 1}]},
    {"resonators": [{"f0": 7e6, "id": 3}]},
    {"source": {"kind": "cs137_gamma", "detector_ids": [5]}},
    {"deconv": {"filter": {"cutoff_hz": 400e6}}},
    {"analysis": {"charge_gate_start": 1990}},
    {"seed": -1},
    {"seed": 1.5},
    {"shapes": {"gamma": {"tau_fast": 1e-9}}, "source": {"kind": "cf252_mixed"}},
    {"digitizer": "fast"},
])
def test_invalid_configs_raise(bad):
    with pytest.raises(ConfigError):
        RunConfig.from_dict(bad)


def test_load_config_rejects_non_json(tmp_path):
    p = tmp_path / "x.json"
    p.write_text("not json")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        preset("nope")


def _header(n=16, tags=()):
    return RecordHeader(2e-9, n, [Channel("a", "<i2", 0.5), Channel("b", "<i4", 0.25)],
                        "abc", 3, 2, list(tags), {"kind": "test"})


def test_record_file_roundtrip(tmp_path):
    h = _header(tags=["ident0"])
    rng = np.random.default_rng(0)
    events = [[EventTruth(100.0 + i, 1e-7 * i, "neutron" if i % 2 else "gamma", i % 2, i)]
              for i in range(5)]
    with RecordWriter(tmp_path / "r.fdm", h) as w:
        block = w.empty(5)
        block["a"] = rng.integers(-100, 100, (5, 16))
        block["b"] = rng.integers(-10_000, 10_000, (5, 16))
        block["tags"][:, 0] = [0, 1, 1, 0, 1]
        fill_truth(block, events)
        w.write(block)
    rf = RecordFile(tmp_path / "r.fdm")
    assert len(rf) == 5
    assert rf.header.to_dict() == h.to_dict()
    np.testing.assert_array_equal(rf.raw["a"], block["a"])
    np.testing.assert_allclose(rf.volts("b"), block["b"] * 0.25)
    np.testing.assert_array_equal(rf.tag("ident0"), [0, 1, 1, 0, 1])
    assert rf.truth() == events
    e, t, s = rf.truth_arrays(1)
    assert np.isnan(e[0]) and e[1] == 101.0 and s[1] == 1
    assert list(rf.chunks(2)) == [(0, 2), (2, 4), (4, 5)]


def test_header_only_file_is_valid(tmp_path):
    with RecordWriter(tmp_path / "e.fdm", _header()):
        pass
    rf = RecordFile(tmp_path / "e.fdm")
    assert len(rf) == 0 and rf.truth() == []


def test_format_errors(tmp_path):
    p = tmp_path / "bad.fdm"
    p.write_bytes(b"NOTREC" + b"\0" * 20)
    with pytest.raises(FormatError, match="magic|not a record"):
        RecordFile(p)
    with RecordWriter(tmp_path / "ok.fdm", _header()) as w:
        w.write(w.empty(2))
    data = (tmp_path / "ok.fdm").read_bytes()
    (tmp_path / "trunc.fdm").write_bytes(data[:-5])
    with pytest.raises(FormatError):
        RecordFile(tmp_path / "trunc.fdm")
    (tmp_path / "ver.fdm").write_bytes(data[:6] + bytes([99]) + data[7:])
    with pytest.raises(FormatError, match="version"):
        RecordFile(tmp_path / "ver.fdm")
    with pytest.raises(KeyError, match="missing channel 'zz'"):
        RecordFile(tmp_path / "ok.fdm").volts("zz")


def test_header_validation_and_truth_capacity():
    with pytest.raises(FormatError):
        RecordHeader(1e-9, 4, [Channel("a"), Channel("a")])
    with pytest.raises(FormatError):
        RecordHeader(1e-9, 4, [Channel("a", "<f4")])
    block = np.zeros(1, dtype=RecordHeader(1e-9, 4, [Channel("a")], max_truth=1).record_dtype)
    with pytest.raises(FormatError):
        fill_truth(block, [[EventTruth(1.0, 0.0), EventTruth(2.0, 0.0)]])


def test_calibration_file_roundtrip(tmp_path):
    rng = np.random.default_rng(1)
    bins = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    valid = np.array([0, 1, 1, 1, 1, 1, 1, 1], bool)
    cal = CalibrationFile(8, 2e-9, [CalibrationEntry(0, Spectrum(bins, 1 / 16e-9, valid), 100)],
                          "abc", {"note": "x"})
    cal.save(tmp_path / "c.json")
    back = CalibrationFile.load(tmp_path / "c.json")
    np.testing.assert_array_equal(back.response(0).bins, bins)
    np.testing.assert_array_equal(back.response(0).valid, valid)
    assert back.entries[0].records_averaged == 100 and back.config_hash == "abc"
    with pytest.raises(KeyError):
        back.response(3)
    d = json.loads((tmp_path / "c.json").read_text())
    d["entries"][0]["re"] = d["entries"][0]["re"][:4]
    (tmp_path / "bad.json").write_text(json.dumps(d))
    with pytest.raises(FormatError):
        CalibrationFile.load(tmp_path / "bad.json")
    (tmp_path / "junk.json").write_text("{}")
    with pytest.raises(FormatError):
        CalibrationFile.load(tmp_path / "junk.json")
