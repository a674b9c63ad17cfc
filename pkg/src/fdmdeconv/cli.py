"""Command-line entry point: ``fdm init | simulate | calibrate | recover | analyze | report``.

Exit codes: 0 success, 2 invalid configuration, 3 file format or
provenance mismatch, 4 fit failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import pipeline
from .analysis import FitError
from .io import (PRESETS, CalibrationFile, ConfigError, FormatError, RecordFile, RunConfig,
                 config_hash, load_config, preset, save_config)

log = logging.getLogger("fdmdeconv")

EXIT_OK, EXIT_CONFIG, EXIT_FORMAT, EXIT_FIT = 0, 2, 3, 4


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _check_out(path: Path, force: bool):
    if path.exists() and not force:
        raise FileExistsError(f"{path} exists; pass --force to overwrite")


def cmd_init(args) -> int:
    cfg = preset(args.preset)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    out = Path(args.out)
    _check_out(out, args.force)
    save_config(cfg, out)
    print(f"wrote {out} (config hash {config_hash(cfg)})")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force)
    if args.which == "noise":
        info = pipeline.simulate_noise_file(cfg, args.records, out)
    else:
        info = pipeline.simulate_file(cfg, args.records, out)
    print(json.dumps({"out": str(out), "config_hash": config_hash(cfg), "seed": cfg.seed, **info}))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    _check_out(out, args.force)
    cal = pipeline.calibrate_file(cfg, args.input, out)
    print(json.dumps({"out": str(out), "config_hash": cal.config_hash,
                      "records_averaged": cal.entries[0].records_averaged if cal.entries else 0}))
    return EXIT_OK


def cmd_recover(args) -> int:
    cfg = _config(args)
    rf = RecordFile(args.input)
    responses = None
    if args.calibration:
        cal = CalibrationFile.load(args.calibration)
        if cal.record_len != rf.header.record_len or abs(cal.dt - rf.header.dt) > 1e-9 * rf.header.dt:
            raise FormatError("calibration record length or sample period does not match the records")
        if cal.config_hash != rf.header.config_hash and not args.force:
            raise FormatError(f"calibration config hash {cal.config_hash} differs from record file "
                              f"hash {rf.header.config_hash}; pass --force to use it anyway")
        responses = [cal.response(k) for k in range(cfg.n_detectors)]
    if rf.header.config_hash != config_hash(cfg) and not args.force:
        raise FormatError(f"record file was produced by config {rf.header.config_hash}, not "
                          f"{config_hash(cfg)}; pass --force to recover anyway")
    out = Path(args.out)
    _check_out(out, args.force)
    info = pipeline.recover_file(cfg, args.input, out, responses)
    print(json.dumps({"out": str(out), "calibrated": responses is not None, **info}))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _config(args)
    try:
        m = pipeline.file_metrics(cfg, args.input)
    except KeyError as exc:
        raise FormatError(f"{exc.args[0]} (in {args.input}; run recover first)") from exc
    if args.channel is not None and m:
        keep = m["detector"] == args.channel
        m = {k: v[keep] for k, v in m.items()}
        if not np.isfinite(m["energy"]).any():
            raise FitError(f"no events on detector {args.channel}")
    summary, tables = pipeline.summarize(cfg, m, args.which)
    if args.channel is not None:
        summary["detector"] = args.channel
    seed = RecordFile(args.input).header.seed
    path = pipeline.write_outputs(args.out, args.which, summary, tables, cfg, seed)
    print(f"wrote {path}")
    return EXIT_OK


def _fmt(v):
    return f"{v:.4g}" if isinstance(v, float) else str(v)


def cmd_report(args) -> int:
    src = Path(args.input)
    files = sorted(src.glob("*.json")) if src.is_dir() else [src]
    if args.which:
        files = [f for f in files if f.stem == args.which]
    if not files:
        raise FormatError(f"no analysis summaries found in {src}")
    for f in files:
        doc = json.loads(f.read_text())
        print(f"== {doc.get('analysis', f.stem)} (config {doc.get('config_hash')}, seed {doc.get('seed')})")
        for key, val in doc.items():
            if isinstance(val, dict):
                core = {k: val[k] for k in ("mu", "mu_err", "sigma", "sigma_err", "fom", "n_events")
                        if k in val}
                if "fom" in val and isinstance(val["fom"], dict):
                    core = {"best_offset": val.get("best_offset"), "fom": val["fom"].get("fom")}
                print(f"  {key:<22} " + "  ".join(f"{k}={_fmt(v)}" for k, v in core.items()))
            elif not isinstance(val, list) and key not in ("analysis", "config_hash", "seed"):
                print(f"  {key:<22} {_fmt(val)}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fdm", description="Frequency-domain multiplexing "
                                "simulation, deconvolution and analysis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="run configuration (JSON); defaults if omitted")
        sp.add_argument("--seed", type=int, help="override the configured seed")
        sp.add_argument("--force", action="store_true", help="overwrite outputs, skip hash checks")

    sp = sub.add_parser("init", help="write a configuration file with every default")
    sp.add_argument("--out", required=True)
    sp.add_argument("--preset", choices=PRESETS, default="default")
    common(sp, config=False)
    sp.set_defaults(func=cmd_init)

    sp = sub.add_parser("simulate", help="simulate event or calibration-noise records")
    sp.add_argument("--records", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--which", choices=("events", "noise"), default="events")
    common(sp)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("calibrate", help="estimate resonator responses from noise records")
    sp.add_argument("input")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_calibrate)

    sp = sub.add_parser("recover", help="deconvolve fan-in channels")
    sp.add_argument("input")
    sp.add_argument("--calibration", help="calibration file; closed-form responses if omitted")
    sp.add_argument("--out", required=True)
    common(sp)
    sp.set_defaults(func=cmd_recover)

    sp = sub.add_parser("analyze", help="anode vs recovered comparisons")
    sp.add_argument("input")
    sp.add_argument("--which", choices=pipeline.ANALYSES, required=True)
    sp.add_argument("--channel", type=int, help="restrict to one detector id")
    sp.add_argument("--out", required=True, help="output directory")
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("report", help="print analysis summaries")
    sp.add_argument("input", help="analysis output directory or JSON file")
    sp.add_argument("--which", choices=pipeline.ANALYSES)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore", RuntimeWarning)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, FileExistsError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except FitError as exc:
        print(f"fit failure: {exc}", file=sys.stderr)
        return EXIT_FIT
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
