import json

import pytest

from fdmdeconv.cli import EXIT_CONFIG, EXIT_FIT, EXIT_FORMAT, EXIT_OK, main
from fdmdeconv.io import PRESETS, load_config


@pytest.mark.parametrize("name", PRESETS)
def test_init_presets(tmp_path, name):
    out = tmp_path / "c.json"
    assert main(["init", "--out", str(out), "--preset", name, "--seed", "5"]) == EXIT_OK
    assert load_config(out).seed == 5
    assert main(["init", "--out", str(out)]) == EXIT_FORMAT
    assert main(["init", "--out", str(out), "--force"]) == EXIT_OK


def test_invalid_config_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"digitizer": {"bits": 3}}))
    assert main(["simulate", "--config", str(bad), "--records", "2",
                 "--out", str(tmp_path / "x.fdm")]) == EXIT_CONFIG


def test_missing_input_and_channel(tmp_path):
    assert main(["analyze", str(tmp_path / "none.fdm"), "--which", "charge",
                 "--out", str(tmp_path)]) == EXIT_FORMAT
    raw = tmp_path / "raw.fdm"
    assert main(["simulate", "--records", "3", "--out", str(raw)]) == EXIT_OK
    assert main(["analyze", str(raw), "--which", "charge", "--out", str(tmp_path / "a")]) == EXIT_FORMAT


def test_end_to_end(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    assert main(["init", "--out", str(cfg), "--preset", "cf252", "--seed", "12"]) == EXIT_OK
    common = ["--config", str(cfg)]
    noise, raw = tmp_path / "noise.fdm", tmp_path / "raw.fdm"
    assert main(["simulate", "--records", "50", "--which", "noise", "--out", str(noise)] + common) == 0
    assert main(["simulate", "--records", "60", "--out", str(raw)] + common) == 0
    with pytest.warns(UserWarning):
        assert main(["calibrate", str(noise), "--out", str(tmp_path / "cal.json")] + common) == 0
    rec = tmp_path / "rec.fdm"
    assert main(["recover", str(raw), "--calibration", str(tmp_path / "cal.json"),
                 "--out", str(rec)] + common) == 0
    out = tmp_path / "analysis"
    for which in ("charge", "timing", "reconstruction"):
        assert main(["analyze", str(rec), "--which", which, "--out", str(out)] + common) == 0
    assert main(["analyze", str(rec), "--which", "charge", "--channel", "0",
                 "--out", str(tmp_path / "ch0")] + common) == 0
    assert main(["analyze", str(rec), "--which", "charge", "--channel", "3",
                 "--out", str(tmp_path / "ch3")] + common) == EXIT_FIT
    doc = json.loads((out / "charge.json").read_text())
    assert doc["seed"] == 12 and doc["config_hash"]
    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    text = capsys.readouterr().out
    assert "== charge" in text and "== timing" in text


def test_recover_refuses_foreign_config(tmp_path):
    raw = tmp_path / "raw.fdm"
    assert main(["simulate", "--records", "2", "--out", str(raw)]) == 0
    out = str(tmp_path / "rec.fdm")
    assert main(["recover", str(raw), "--out", out, "--seed", "99"]) == EXIT_FORMAT
    assert main(["recover", str(raw), "--out", out, "--seed", "99", "--force"]) == EXIT_OK


def test_fit_failure_exit_code(tmp_path):
    cfg = tmp_path / "cfg.json"
    main(["init", "--out", str(cfg), "--preset", "ej309_cs137"])
    raw, rec = tmp_path / "raw.fdm", tmp_path / "rec.fdm"
    assert main(["simulate", "--records", "200", "--out", str(raw), "--config", str(cfg)]) == 0
    assert main(["recover", str(raw), "--out", str(rec), "--config", str(cfg)]) == 0
    assert main(["analyze", str(rec), "--which", "psd", "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == EXIT_FIT


def test_report_empty_dir(tmp_path):
    assert main(["report", str(tmp_path)]) == EXIT_FORMAT
