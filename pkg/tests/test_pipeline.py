import json

import numpy as np
import pytest

from fdmdeconv import pipeline
from fdmdeconv.analysis import FitError
from fdmdeconv.chain import DigitizerSpec, FanInSpec
from fdmdeconv.detector import SourceSpec
from fdmdeconv.io import RecordFile, RunConfig, preset


@pytest.fixture(scope="module")
def quiet_cfg():
    return RunConfig(digitizer=DigitizerSpec(noise_lsb=0.0), fanin=FanInSpec(noise_rms=0.0), seed=4)


def test_simulate_recover_file_matches_in_memory(tmp_path):
    cfg = RunConfig(seed=3)
    raw, rec = tmp_path / "raw.fdm", tmp_path / "rec.fdm"
    pipeline.simulate_file(cfg, 40, raw)
    pipeline.recover_file(cfg, raw, rec)
    rf = RecordFile(rec)
    assert len(rf) == 40
    assert {"anode0", "fanin0", "recovered0"} <= {c.name for c in rf.header.channels}
    from_file = pipeline.file_metrics(cfg, rec)
    in_mem = pipeline.run_metrics(cfg, 40)
    assert from_file["energy"].size == in_mem["energy"].size
    np.testing.assert_allclose(from_file["q_anode"], in_mem["q_anode"], rtol=1e-9, atol=1e-9)
    lsb = cfg.digitizer.lsb / pipeline.RECOVERED_SCALE_DIV
    ok = np.isfinite(from_file["q_rec"]) & np.isfinite(in_mem["q_rec"])
    assert np.abs(from_file["q_rec"][ok] - in_mem["q_rec"][ok]).max() < 0.05
    assert lsb > 0


def test_zero_records(tmp_path):
    cfg = RunConfig()
    pipeline.simulate_file(cfg, 0, tmp_path / "z.fdm")
    assert len(RecordFile(tmp_path / "z.fdm")) == 0


def test_noise_free_charge_agrees(quiet_cfg):
    m = pipeline.run_metrics(quiet_cfg, 200, quantized=False)
    s, _ = pipeline.summarize(quiet_cfg, m, "charge")
    assert s["difference"]["sigma"] < 0.1


def test_psd_single_species_raises():
    cfg = preset("ej309_cs137").replace(seed=2)
    m = pipeline.run_metrics(cfg, 300)
    with pytest.raises(FitError, match="single peak"):
        pipeline.summarize(cfg, m, "psd")


def test_spectrum_outputs(tmp_path):
    cfg = preset("cebr3").replace(seed=6)
    m = pipeline.run_metrics(cfg, 1500)
    s, tables = pipeline.summarize(cfg, m, "spectrum")
    assert s["anode"]["n_events"] == s["recovered"]["n_events"]
    assert 640 < s["anode"]["mu"] < 680
    path = pipeline.write_outputs(tmp_path, "spectrum", s, tables, cfg, cfg.seed)
    doc = json.loads(path.read_text())
    assert doc["config_hash"] == cfg.config_hash() and doc["seed"] == 6
    assert list(tmp_path.glob("spectrum*.csv"))


def test_calibration_from_file(tmp_path):
    cfg = RunConfig(seed=1)
    noise = tmp_path / "n.fdm"
    pipeline.simulate_noise_file(cfg, 300, noise)
    with pytest.warns(UserWarning):
        cal = pipeline.calibrate_file(cfg, noise, tmp_path / "c.json")
    H = pipeline.default_responses(cfg)
    for k, ref in enumerate(H):
        est = cal.response(k)
        band = ref.valid & est.valid
        err = np.abs(est.bins[band] - ref.bins[band]) / np.abs(ref.bins[band]).max()
        assert np.sqrt(np.mean(err ** 2)) < 0.05


def test_coincidence_summary():
    cfg = preset("coincidence").replace(seed=9)
    m = pipeline.run_metrics(cfg, 400)
    s, _ = pipeline.summarize(cfg, m, "coincidence")
    assert s["pairs"] > 100
    assert abs(s["anode"]["mu"] - s["truth_offset_ps"]) < 200


def test_unknown_analysis():
    with pytest.raises(ValueError):
        pipeline.summarize(RunConfig(), {}, "nonsense")
