"""Chunked simulate -> recover -> measure -> summarize workflow.

Large runs never hold more than one chunk of records in memory: records
are produced (or read) ``chunk`` at a time, each chunk is reduced to a
small per-event metrics table, and summaries are computed from the
concatenated tables.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis as an
from .chain import analytic_response, calibration_noise, identify_detector, fanin_groups, simulate_batch
from .deconv import deconvolve
from .detector import GAMMA_SHAPE, sample_events
from .io import (CalibrationEntry, CalibrationFile, Channel, RecordFile, RecordHeader,
                 RecordWriter, RunConfig, canonical_json, config_hash, fill_truth)
from .signal import CorrelationEstimate, Trace
from .sysid import average_correlations, response_from_correlations

RECOVERED_SCALE_DIV = 64
ANALYSES = ("charge", "timing", "psd", "spectrum", "coincidence", "reconstruction")


def n_fanins(cfg: RunConfig) -> int:
    return len(fanin_groups(cfg.n_detectors, cfg.separate_fanins))


def _events_by_record(cfg: RunConfig, n_records: int, seed: int) -> list:
    if n_records == 0:
        return []
    out = [[] for _ in range(n_records)]
    for ev in sample_events(cfg.source, n_records, seed):
        out[ev.record].append(ev)
    return out


def simulate_chunks(cfg: RunConfig, n_records: int, *, seed: int | None = None,
                    chunk: int = 500, quantized: bool = True):
    """Yield ``(start, events, anode, fanin, clipped)`` blocks of records."""
    seed = cfg.seed if seed is None else seed
    events = _events_by_record(cfg, n_records, seed)
    for start in range(0, n_records, chunk):
        evs = events[start:start + chunk]
        anode, fanin, clipped = simulate_batch(
            evs, cfg.shapes, cfg.resonators, cfg.fanin, cfg.digitizer, calib=cfg.calib,
            separate_fanins=cfg.separate_fanins, seed=seed, first_record=start,
            quantized=quantized)
        yield start, evs, anode, fanin, clipped


def default_responses(cfg: RunConfig) -> list:
    """Closed-form chain responses, one per resonator."""
    return [analytic_response(r, cfg.fanin, cfg.digitizer) for r in cfg.resonators]


def recover_block(fanin: np.ndarray, cfg: RunConfig, responses) -> tuple[np.ndarray, np.ndarray]:
    """Deconvolve fan-in records ``(R, G, N)``.

    For shared fan-ins the detector is identified from the dominant spectral
    peak and the matching response is used.  Returns the recovered traces
    and the detector id used for each ``(record, fan-in)``.
    """
    groups = fanin_groups(cfg.n_detectors, cfg.separate_fanins)
    rec = np.zeros_like(fanin)
    ident = np.zeros(fanin.shape[:2], dtype=int)
    dt = cfg.digitizer.dt
    for g, members in enumerate(groups):
        if len(members) == 1:
            ident[:, g] = members[0]
        else:
            local = identify_detector(fanin[:, g], [cfg.resonators[k] for k in members], dt)
            ident[:, g] = np.asarray(members)[local]
        for d in members:
            sel = ident[:, g] == d
            if sel.any():
                rec[sel, g] = deconvolve(Trace(fanin[sel, g], dt), responses[d],
                                         cfg.deconv).samples
    return rec, ident


# -- files ---------------------------------------------------------------------

def _digitized_channels(cfg: RunConfig) -> list:
    lsb = cfg.digitizer.lsb
    chans = [Channel(f"anode{d}", "<i2", lsb) for d in range(cfg.n_detectors)]
    chans += [Channel(f"fanin{g}", "<i2", lsb) for g in range(n_fanins(cfg))]
    return chans


def simulate_file(cfg: RunConfig, n_records: int, out, *, seed: int | None = None,
                  chunk: int = 500) -> dict:
    """Write a record file with anode and fan-in channels plus truth."""
    seed = cfg.seed if seed is None else seed
    d = cfg.digitizer
    hdr = RecordHeader(d.dt, d.record_len, _digitized_channels(cfg), config_hash(cfg), seed,
                       max_truth=2, meta={"kind": "events", "source": cfg.source.kind})
    clipped = 0
    with RecordWriter(out, hdr) as w:
        for _, evs, anode, fanin, c in simulate_chunks(cfg, n_records, seed=seed, chunk=chunk):
            block = w.empty(len(evs))
            for k in range(cfg.n_detectors):
                block[f"anode{k}"] = np.rint(anode[:, k] / d.lsb)
            for g in range(fanin.shape[1]):
                block[f"fanin{g}"] = np.rint(fanin[:, g] / d.lsb)
            fill_truth(block, evs)
            w.write(block)
            clipped += c
    return {"records": n_records, "clipped_samples": clipped}


def simulate_noise_file(cfg: RunConfig, n_records: int, out, *, seed: int | None = None,
                        chunk: int = 500) -> dict:
    """Write calibration records: noise input and fan-in output per resonator."""
    seed = cfg.seed if seed is None else seed
    d, c = cfg.digitizer, cfg.calibration
    chans = []
    for k in range(cfg.n_detectors):
        chans += [Channel(f"cal_in{k}", "<i2", d.lsb), Channel(f"cal_out{k}", "<i2", d.lsb)]
    hdr = RecordHeader(d.dt, d.record_len, chans, config_hash(cfg), seed, max_truth=0,
                       meta={"kind": "noise", "noise_rms": c.noise_rms, "periodic": c.periodic})
    with RecordWriter(out, hdr) as w:
        for start in range(0, n_records, chunk):
            m = min(chunk, n_records - start)
            block = w.empty(m)
            for k, r in enumerate(cfg.resonators):
                x, y = calibration_noise(r, cfg.fanin, d, m, noise_rms=c.noise_rms,
                                         periodic=c.periodic, seed=seed + 7919 * k,
                                         first_record=start)
                block[f"cal_in{k}"] = np.rint(x / d.lsb)
                block[f"cal_out{k}"] = np.rint(y / d.lsb)
            w.write(block)
    return {"records": n_records}


def calibrate_file(cfg: RunConfig, records, out=None, *, chunk: int = 500) -> CalibrationFile:
    """Estimate every resonator's response from a noise record file."""
    rf = RecordFile(records)
    c = cfg.calibration
    if len(rf) < c.n_records:
        warnings.warn(f"calibrating from {len(rf)} records, fewer than the configured "
                      f"{c.n_records}", stacklevel=2)
    entries = []
    for k in range(cfg.n_detectors):
        r_yx = np.zeros(rf.header.record_len)
        r_xx = np.zeros(rf.header.record_len)
        for a, b in rf.chunks(chunk):
            est = average_correlations(rf.volts(f"cal_in{k}", a, b), rf.volts(f"cal_out{k}", a, b),
                                       c.correlation, c.normalization)
            r_yx += est.r_yx * est.records_averaged
            r_xx += est.r_xx * est.records_averaged
        m = max(len(rf), 1)
        resp = response_from_correlations(CorrelationEstimate(r_yx / m, r_xx / m, len(rf)),
                                          rf.header.dt)
        entries.append(CalibrationEntry(k, resp, len(rf)))
    cal = CalibrationFile(rf.header.record_len, rf.header.dt, entries, rf.header.config_hash,
                          {"source_file": Path(records).name, "correlation": c.correlation})
    if out is not None:
        cal.save(out)
    return cal


def calibrate_in_memory(cfg: RunConfig, resonator: int, n_records: int, *,
                        seed: int | None = None, chunk: int = 1000):
    """Response estimate for one resonator without writing records to disk."""
    seed = cfg.seed if seed is None else seed
    c, d = cfg.calibration, cfg.digitizer
    r_yx = np.zeros(d.record_len)
    r_xx = np.zeros(d.record_len)
    for start in range(0, n_records, chunk):
        m = min(chunk, n_records - start)
        x, y = calibration_noise(cfg.resonators[resonator], cfg.fanin, d, m,
                                 noise_rms=c.noise_rms, periodic=c.periodic,
                                 seed=seed + 7919 * resonator, first_record=start)
        est = average_correlations(x, y, c.correlation, c.normalization)
        r_yx += est.r_yx * m
        r_xx += est.r_xx * m
    est = CorrelationEstimate(r_yx / n_records, r_xx / n_records, n_records)
    return response_from_correlations(est, d.dt)


def recover_file(cfg: RunConfig, records, out, responses=None, *, chunk: int = 500) -> dict:
    """Copy a record file and add ``recovered{g}`` channels and ``ident{g}`` tags."""
    rf = RecordFile(records)
    hdr_in = rf.header
    responses = default_responses(cfg) if responses is None else responses
    d = cfg.digitizer
    n_g = n_fanins(cfg)
    scale = d.lsb / RECOVERED_SCALE_DIV
    chans = list(hdr_in.channels) + [Channel(f"recovered{g}", "<i4", scale) for g in range(n_g)]
    tags = list(hdr_in.tags) + [f"ident{g}" for g in range(n_g)]
    hdr = RecordHeader(hdr_in.dt, hdr_in.record_len, chans, hdr_in.config_hash, hdr_in.seed,
                       hdr_in.max_truth, tags, {**hdr_in.meta, "recovered": True})
    with RecordWriter(out, hdr) as w:
        for a, b in rf.chunks(chunk):
            src = rf.raw[a:b]
            block = w.empty(b - a)
            block["index"] = src["index"]
            for ch in hdr_in.channels:
                block[ch.name] = src[ch.name]
            block["n_truth"] = src["n_truth"]
            block["truth"] = src["truth"]
            block["tags"][:, :len(hdr_in.tags)] = src["tags"]
            fanin = np.stack([rf.volts(f"fanin{g}", a, b) for g in range(n_g)], axis=1)
            rec, ident = recover_block(fanin, cfg, responses)
            for g in range(n_g):
                block[f"recovered{g}"] = np.rint(rec[:, g] / scale)
                block["tags"][:, len(hdr_in.tags) + g] = ident[:, g]
            w.write(block)
    return {"records": len(rf)}


# -- per-event metrics ---------------------------------------------------------

@dataclass
class Thresholds:
    cfd_volts: float

    @classmethod
    def from_config(cls, cfg: RunConfig):
        shape = cfg.shapes.get("gamma", GAMMA_SHAPE)
        return cls(an.kevee_to_amplitude(cfg.analysis.cfd_threshold_kevee, shape,
                                          cfg.digitizer.dt, cfg.calib))


def _offsets(cfg):
    lo, hi = cfg.analysis.psd_offsets
    return list(range(lo, hi + 1))


def _pulse_metrics(x: np.ndarray, cfg: RunConfig, thr: Thresholds, prefix: str) -> dict:
    a, d = cfg.analysis, cfg.digitizer
    out = {}
    out[f"q_{prefix}"] = np.atleast_1d(an.integrate_charge(
        x, a.charge_gate_start, a.charge_gate_len, cfg.calib, dt=d.dt,
        baseline_samples=a.baseline_samples, polarity=a.polarity).charge_kevee)
    cfd = an.cfd_time(x, a.cfd_fraction, a.cfd_delay, dt=d.dt, threshold=thr.cfd_volts,
                      baseline_samples=a.baseline_samples, polarity=a.polarity,
                      interpolation=a.cfd_interpolation)
    out[f"t_{prefix}"] = np.atleast_1d(cfd.t_pickoff)
    try:
        qs, ql = an.psd_charges(x, _offsets(cfg), dt=d.dt, calib=cfg.calib, pre_peak=a.psd_pre_peak,
                                long_len=a.psd_long_len, baseline_samples=a.baseline_samples,
                                polarity=a.polarity)
    except ValueError:
        # some pulse peaks too close to an edge: fall back per record
        qs = np.full((x.shape[0], len(_offsets(cfg))), np.nan)
        ql = np.full(x.shape[0], np.nan)
        for i in range(x.shape[0]):
            try:
                qs[i], ql[i] = an.psd_charges(x[i:i + 1], _offsets(cfg), dt=d.dt, calib=cfg.calib,
                                              pre_peak=a.psd_pre_peak, long_len=a.psd_long_len,
                                              baseline_samples=a.baseline_samples,
                                              polarity=a.polarity)
            except ValueError:
                pass
    out[f"ql_{prefix}"] = ql
    out[f"qs_{prefix}"] = qs
    out[f"base_rms_{prefix}"] = x[:, :a.baseline_samples].std(axis=1)
    return out


def block_metrics(cfg: RunConfig, anode: np.ndarray, recovered: np.ndarray, ident: np.ndarray,
                  truth, first_record: int, fanin_codes_clipped: np.ndarray,
                  thr: Thresholds | None = None) -> dict:
    """Per-(record, detector) metrics for one block.

    ``anode`` is ``(R, D, N)``, ``recovered`` and ``ident`` are per fan-in;
    ``truth`` is a triple of ``(R, D)`` arrays (energy, arrival, species).
    Rows are emitted for every detector holding a true event.
    """
    thr = Thresholds.from_config(cfg) if thr is None else thr
    groups = fanin_groups(cfg.n_detectors, cfg.separate_fanins)
    energy, arrival, species = truth
    rows = []
    for d in range(cfg.n_detectors):
        g = next(i for i, m in enumerate(groups) if d in m)
        has = np.isfinite(energy[:, d])
        if not has.any():
            continue
        idx = np.flatnonzero(has)
        a = anode[idx, d]
        r = recovered[idx, g]
        m = {"record": first_record + idx, "detector": np.full(idx.size, d),
             "energy": energy[idx, d], "t_true": arrival[idx, d], "species": species[idx, d],
             "ident_ok": ident[idx, g] == d, "clipped": fanin_codes_clipped[idx, g]}
        m.update(_pulse_metrics(a, cfg, thr, "anode"))
        m.update(_pulse_metrics(r, cfg, thr, "rec"))
        res = a - r
        k = np.argmax(an._sign(cfg.analysis.polarity) * a, axis=1)
        lo = np.clip(k - 6, 0, None)
        win = np.arange(120)[None, :] + lo[:, None]
        win = np.clip(win, 0, a.shape[1] - 1)
        m["resid_rms_pulse"] = np.sqrt(np.mean(np.take_along_axis(res, win, 1) ** 2, axis=1))
        m["resid_rms_base"] = np.sqrt(np.mean(res[:, :cfg.analysis.baseline_samples] ** 2, axis=1))
        m["peak_anode"] = np.abs(a).max(axis=1)
        rows.append(m)
    if not rows:
        return {}
    return {k: np.concatenate([r[k] for r in rows]) for k in rows[0]}


def _concat(tables):
    tables = [t for t in tables if t]
    if not tables:
        return {}
    return {k: np.concatenate([t[k] for t in tables]) for k in tables[0]}


def _clip_flags(fanin_volts, d):
    lo, hi = d.code_range
    codes = np.rint(fanin_volts / d.lsb)
    return ((codes <= lo) | (codes >= hi)).any(axis=-1)


def _truth_matrix(events, n_det):
    r = len(events)
    e = np.full((r, n_det), np.nan)
    t = np.full((r, n_det), np.nan)
    s = np.full((r, n_det), -1)
    for i, evs in enumerate(events):
        for ev in evs:
            e[i, ev.detector_id] = ev.energy_kevee
            t[i, ev.detector_id] = ev.t_arrival
            s[i, ev.detector_id] = 0 if ev.species == "gamma" else 1
    return e, t, s


def run_metrics(cfg: RunConfig, n_records: int, *, seed: int | None = None, responses=None,
                chunk: int = 500, quantized: bool = True) -> dict:
    """Simulate, recover and measure in memory, chunk by chunk."""
    responses = default_responses(cfg) if responses is None else responses
    thr = Thresholds.from_config(cfg)
    tables = []
    for start, evs, anode, fanin, _ in simulate_chunks(cfg, n_records, seed=seed, chunk=chunk,
                                                       quantized=quantized):
        rec, ident = recover_block(fanin, cfg, responses)
        clip = _clip_flags(fanin, cfg.digitizer) if quantized else np.zeros(fanin.shape[:2], bool)
        tables.append(block_metrics(cfg, anode, rec, ident, _truth_matrix(evs, cfg.n_detectors),
                                    start, clip, thr))
    return _concat(tables)


def file_metrics(cfg: RunConfig, records, *, chunk: int = 500) -> dict:
    """Per-event metrics from a record file holding recovered channels."""
    rf = RecordFile(records)
    n_g = n_fanins(cfg)
    for g in range(n_g):
        rf.header.channel(f"recovered{g}")
    thr = Thresholds.from_config(cfg)
    tables = []
    for a, b in rf.chunks(chunk):
        anode = np.stack([rf.volts(f"anode{k}", a, b) for k in range(cfg.n_detectors)], axis=1)
        rec = np.stack([rf.volts(f"recovered{g}", a, b) for g in range(n_g)], axis=1)
        fanin = np.stack([rf.volts(f"fanin{g}", a, b) for g in range(n_g)], axis=1)
        ident = np.stack([rf.tag(f"ident{g}", a, b) for g in range(n_g)], axis=1)
        truth = [np.stack(v, axis=1) for v in zip(*(rf.truth_arrays(k, a, b)
                                                    for k in range(cfg.n_detectors)))]
        tables.append(block_metrics(cfg, anode, rec, ident, truth, a,
                                    _clip_flags(fanin, cfg.digitizer), thr))
    return _concat(tables)


# -- summaries -----------------------------------------------------------------

def _good(m):
    return m["ident_ok"] & ~m["clipped"]


def _fit_dict(fit):
    if fit is None:
        return None
    d = fit.to_dict()
    d.pop("scatter", None)
    return d


def _hist_rows(fit):
    return [(float(lo), float(hi), int(c)) for lo, hi, c in
            zip(fit.bin_edges[:-1], fit.bin_edges[1:], fit.counts)]


def summarize(cfg: RunConfig, m: dict, which: str) -> tuple[dict, dict]:
    """JSON-ready summary and CSV tables (name -> (header, rows)) for one analysis."""
    if which not in ANALYSES:
        raise ValueError(f"unknown analysis {which!r}; choose from {ANALYSES}")
    if not m:
        raise an.FitError("no events to analyze")
    a = cfg.analysis
    good = _good(m)
    out = {"analysis": which, "events": int(good.sum()),
           "excluded": int((~good).sum())}
    tables = {}
    if which == "charge":
        fit = an.difference_stats(m["q_anode"][good], m["q_rec"][good])
        out["difference"] = _fit_dict(fit)
        tables["charge_scatter"] = (("record", "detector", "energy_true", "q_anode", "q_recovered"),
                                    list(zip(m["record"][good].tolist(), m["detector"][good].tolist(),
                                             m["energy"][good].tolist(), m["q_anode"][good].tolist(),
                                             m["q_rec"][good].tolist())))
        tables["charge_difference_hist"] = (("lo", "hi", "count"), _hist_rows(fit))
    elif which == "timing":
        ok = good & np.isfinite(m["t_anode"]) & np.isfinite(m["t_rec"])
        ta, tr = m["t_anode"][ok] * 1e12, m["t_rec"][ok] * 1e12
        fit = an.difference_stats(ta, tr)
        out["difference_ps"] = _fit_dict(fit)
        out["valid_pairs"] = int(ok.sum())
        binned = an.binned_difference_stats(ta, tr, m["q_anode"][ok])
        out["by_energy"] = [{"lo": lo, "hi": hi, **({"fit": _fit_dict(f), "n": f.n_events}
                                                      if f is not None else {"fit": None, "n": 0})}
                            for (lo, hi), f in binned.items()]
        tables["timing_scatter"] = (("record", "q_anode", "t_anode_ps", "t_recovered_ps"),
                                    list(zip(m["record"][ok].tolist(), m["q_anode"][ok].tolist(),
                                             ta.tolist(), tr.tolist())))
        tables["timing_difference_hist"] = (("lo", "hi", "count"), _hist_rows(fit))
    elif which == "psd":
        offs = _offsets(cfg)
        res = {}
        curves = {}
        for ch in ("anode", "rec"):
            qs, ql = m[f"qs_{ch}"][good], m[f"ql_{ch}"][good]
            curve = an.fom_curve_from_charges(qs, ql, offs, a.psd_threshold_kevee, a.fom_bins)
            curves[ch] = curve
            scored = {k: v.fom for k, v in curve.items() if v is not None}
            if not scored:
                raise an.FitError("single peak: no short gate gives a two-peak fit")
            best = max(scored, key=lambda k: (scored[k], -k))
            res[ch] = {"best_offset": best, "fom": curve[best].to_dict()}
        out["anode"], out["recovered"] = res["anode"], res["rec"]
        j = offs.index(res["anode"]["best_offset"])
        keep = good & (m["ql_anode"] >= a.psd_threshold_kevee) & (m["ql_rec"] >= a.psd_threshold_kevee)
        ra = m["qs_anode"][keep, j] / m["ql_anode"][keep]
        rr = m["qs_rec"][keep, j] / m["ql_rec"][keep]
        if keep.sum() >= 10:
            out["ratio_difference"] = _fit_dict(an.difference_stats(ra, rr))
        tables["fom_curve"] = (("offset", "fom_anode", "fom_recovered"),
                               [(o, _fom(curves["anode"][o]), _fom(curves["rec"][o])) for o in offs])
        for ch, name in (("anode", "anode"), ("rec", "recovered")):
            jj = offs.index(res[ch]["best_offset"])
            sel = good & (m[f"ql_{ch}"] >= a.psd_threshold_kevee)
            tables[f"psd_hist2d_{name}"] = (("q_long_lo", "ratio_lo", "count"),
                                            _hist2d(m[f"ql_{ch}"][sel],
                                                    m[f"qs_{ch}"][sel, jj] / m[f"ql_{ch}"][sel]))
    elif which == "spectrum":
        fits = {}
        for ch, name in (("anode", "anode"), ("rec", "recovered")):
            fits[name] = an.fit_photopeak(m[f"q_{ch}"][good], a.photopeak_window, min_events=100)
            out[name] = _fit_dict(fits[name])
        out["events_anode"] = out["events_recovered"] = int(good.sum())
        out["photopeak_counts_agree"] = bool(an.photopeak_counts_agree(fits["anode"],
                                                                       fits["recovered"]))
        out["relative_broadening"] = fits["recovered"].sigma / fits["anode"].sigma - 1
        edges = np.arange(0.0, 1000.0 + 5.0, 5.0)
        ca, _ = np.histogram(m["q_anode"][good], edges)
        cr, _ = np.histogram(m["q_rec"][good], edges)
        tables["spectrum"] = (("lo", "hi", "count_anode", "count_recovered"),
                              list(zip(edges[:-1].tolist(), edges[1:].tolist(), ca.tolist(),
                                       cr.tolist())))
    elif which == "coincidence":
        if cfg.n_detectors < 2:
            raise an.FitError("coincidence analysis needs two detectors")
        recs = {}
        for d in (0, 1):
            sel = (m["detector"] == d) & good
            recs[d] = dict(zip(m["record"][sel].tolist(), np.flatnonzero(sel).tolist()))
        common = sorted(set(recs[0]) & set(recs[1]))
        i0 = np.array([recs[0][r] for r in common], dtype=int)
        i1 = np.array([recs[1][r] for r in common], dtype=int)
        out["pairs"] = len(common)
        if len(common) < 10:
            raise an.FitError("too few coincident records", {"pairs": len(common)})
        truth = (m["t_true"][i0] - m["t_true"][i1]) * 1e12
        out["truth_offset_ps"] = float(truth.mean())
        for ch, name in (("anode", "anode"), ("rec", "recovered")):
            fit = an.coincidence_delta(m[f"t_{ch}"][i0] * 1e12, m[f"t_{ch}"][i1] * 1e12,
                                       window=a.coincidence_window * 1e12)
            out[name] = _fit_dict(fit)
            tables[f"coincidence_hist_{name}"] = (("lo", "hi", "count"), _hist_rows(fit))
    else:
        out["resid_rms_pulse_mean"] = float(np.mean(m["resid_rms_pulse"][good]))
        out["resid_rms_baseline_mean"] = float(np.mean(m["resid_rms_base"][good]))
        out["baseline_rms_anode_mean"] = float(np.mean(m["base_rms_anode"][good]))
        out["baseline_rms_recovered_mean"] = float(np.mean(m["base_rms_rec"][good]))
        out["relative_resid_pulse_mean"] = float(np.mean(m["resid_rms_pulse"][good]
                                                         / m["peak_anode"][good]))
        tables["reconstruction"] = (("record", "peak_anode", "resid_rms_pulse", "resid_rms_baseline"),
                                    list(zip(m["record"][good].tolist(), m["peak_anode"][good].tolist(),
                                             m["resid_rms_pulse"][good].tolist(),
                                             m["resid_rms_base"][good].tolist())))
    return out, tables


def _fom(r):
    return float(r.fom) if r is not None else float("nan")


def _hist2d(ql, ratio, ql_bins=np.arange(0, 1050, 50), ratio_bins=np.linspace(0, 1, 51)):
    h, xe, ye = np.histogram2d(ql, ratio, [ql_bins, ratio_bins])
    return [(float(xe[i]), float(ye[j]), int(h[i, j]))
            for i in range(h.shape[0]) for j in range(h.shape[1]) if h[i, j]]


def write_outputs(out_dir, which: str, summary: dict, tables: dict, cfg: RunConfig,
                  seed: int) -> Path:
    """Write ``{which}.json`` plus one CSV per table; returns the JSON path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, (header, rows) in tables.items():
        with open(out_dir / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    doc = {"config_hash": config_hash(cfg), "seed": seed, **summary}
    path = out_dir / f"{which}.json"
    path.write_text(json.dumps(json.loads(canonical_json(_jsonable(doc))), indent=2,
                               sort_keys=True) + "\n")
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj
