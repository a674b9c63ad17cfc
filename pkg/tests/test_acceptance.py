"""End-to-end acceptance checks.

Each test records one PASS/FAIL line (printed in the terminal summary by
``conftest.py``) and then asserts.  Run on its own with
``pytest tests/test_acceptance.py -v`` or ``python tests/test_acceptance.py``.
"""

import filecmp
import time
import warnings

import numpy as np
import pytest

from fdmdeconv import analysis as an
from fdmdeconv import pipeline
from fdmdeconv.chain import DigitizerSpec, FanInSpec, ResonatorSpec, analytic_response, simulate_batch
from fdmdeconv.deconv import DeconvConfig, deconvolve
from fdmdeconv.detector import GAMMA_SHAPE, NEUTRON_SHAPE, EventTruth, SourceSpec, synth_pulses
from fdmdeconv.io import RunConfig, preset
from fdmdeconv.signal import FilterSpec, Trace, convolve, dft, idft

import oracles

RESULTS = {}


def record(n, ok, detail, elapsed, limit):
    within = elapsed < limit
    RESULTS[n] = (ok and within, f"{detail}; {elapsed:.1f} s (limit {limit:g} s)")
    return ok and within


@pytest.fixture(autouse=True)
def _quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


def test_c01_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for n in (8, 100, 2000):
        x = rng.standard_normal((50, n))
        h = rng.standard_normal((50, n))
        X = dft(Trace(x, 1.0)).bins
        ref = oracles.dft_sum(x)
        worst = max(worst, np.abs(X - ref).max() / np.abs(ref).max())
        back = idft(dft(Trace(x, 1.0))).samples
        worst = max(worst, np.abs(back - oracles.idft_sum(ref).real).max() / np.abs(x).max())
        for i in range(50):
            y = convolve(Trace(x[i], 1.0), Trace(h[i], 1.0)).samples
            yref = oracles.convolve_sum(x[i], h[i]) if n <= 100 else oracles.convolve_matrix(x[i], h[i])
            worst = max(worst, np.abs(y - yref).max() / np.abs(yref).max())
    ok = record(1, worst < 1e-9, f"max relative error {worst:.2e} (< 1e-9)",
                time.perf_counter() - t0, 30)
    assert ok, RESULTS[1]


def _noise_free_config():
    d = DigitizerSpec(noise_lsb=0.0)
    return RunConfig(digitizer=d, fanin=FanInSpec(noise_rms=0.0))


def test_c02_noise_free_inverse():
    t0 = time.perf_counter()
    cfg = _noise_free_config()
    d = cfg.digitizer
    rng = np.random.default_rng(202)
    events = [[EventTruth(float(e), float(t), "gamma", 0, i)]
              for i, (e, t) in enumerate(zip(rng.uniform(50, 1000, 100),
                                             rng.uniform(150e-9, 400e-9, 100)))]
    anode, fanin, _ = simulate_batch(events, cfg.shapes, cfg.resonators, cfg.fanin, d,
                                     calib=cfg.calib, seed=0, quantized=False)
    H = analytic_response(cfg.resonators[0], cfg.fanin, d)
    wide_open = DeconvConfig(filter=FilterSpec(cutoff_hz=1e12))
    rec = deconvolve(Trace(fanin[:, 0], d.dt), H, wide_open).samples
    a = anode[:, 0]
    err = (np.abs(rec - a).max(axis=1) / np.abs(a).max(axis=1)).max()
    ok = record(2, err < 1e-6, f"max error / peak {err:.2e} over 100 events (< 1e-6)",
                time.perf_counter() - t0, 10)
    assert ok, RESULTS[2]


def test_c03_system_identification():
    t0 = time.perf_counter()
    cfg = RunConfig(seed=303)
    d = cfg.digitizer
    truth = analytic_response(cfg.resonators[0], cfg.fanin, d).bins
    band = np.abs(np.fft.fftfreq(d.record_len, d.dt)) <= 180e6

    def rel_rms(n):
        H = pipeline.calibrate_in_memory(cfg, 0, n).bins
        return np.sqrt(np.mean(np.abs(H[band] - truth[band]) ** 2) / np.mean(np.abs(truth[band]) ** 2))

    r1 = rel_rms(10_000)
    r4 = rel_rms(40_000)
    ratio = r1 / r4
    ok = record(3, r1 < 0.01 and 1.4 <= ratio <= 2.6,
                f"rel RMS {r1:.2e} at 1e4 records (< 1e-2); 4x records ratio {ratio:.2f} (2 +- 30%)",
                time.perf_counter() - t0, 300)
    assert ok, RESULTS[3]


def test_c04_charge_recovery():
    t0 = time.perf_counter()
    base = RunConfig(seed=404)
    sigmas, means, errs = [], [], []
    for k in (1, 2, 4):
        f = FanInSpec(noise_rms=k * base.fanin.noise_rms)
        cfg = base.replace(fanin=f)
        m = pipeline.run_metrics(cfg, 10_000)
        good = m["ident_ok"] & ~m["clipped"]
        fit = an.difference_stats(m["q_anode"][good], m["q_rec"][good])
        sigmas.append(fit.sigma)
        means.append(fit.extra["mean"])
        errs.append(fit.mu_err)
    s = np.array(sigmas)
    lin = s / s[0] / np.array([1, 2, 4])
    ok = abs(means[0]) < 0.5 and np.all(np.isfinite(s)) and np.all(np.abs(lin - 1) <= 0.2)
    ok = record(4, ok, f"mean {means[0]:+.3f} keVee (|.| < 0.5); sigma "
                       f"{', '.join(f'{v:.2f}' for v in s)} keVee at 1x/2x/4x noise, "
                       f"sigma/(k sigma_1) {', '.join(f'{v:.3f}' for v in lin)} (1 +- 0.2); "
                       f"hardware reference 4.4 keVee",
                time.perf_counter() - t0, 300)
    assert ok, RESULTS[4]


def test_c05_spectrum_fidelity():
    t0 = time.perf_counter()
    cfg = preset("cebr3").replace(seed=505)
    m = pipeline.run_metrics(cfg, 100_000, chunk=1000)
    summary, _ = pipeline.summarize(cfg, m, "spectrum")
    sa, sr = summary["anode"]["sigma"], summary["recovered"]["sigma"]
    broad = summary["relative_broadening"]
    same = summary["events_anode"] == summary["events_recovered"] and summary["photopeak_counts_agree"]
    ok = sr >= sa and broad < 0.10 and same
    ok = record(5, ok, f"photopeak sigma anode {sa:.2f}, recovered {sr:.2f} keV "
                       f"(broadening {100 * broad:.1f}% < 10%); areas "
                       f"{summary['anode']['area']:.0f} vs {summary['recovered']['area']:.0f}, "
                       f"agree={summary['photopeak_counts_agree']}",
                time.perf_counter() - t0, 600)
    assert ok, RESULTS[5]


def test_c06_timing_trend():
    t0 = time.perf_counter()
    cfg = preset("ej309_cs137").replace(seed=606)
    m = pipeline.run_metrics(cfg, 10_000)
    summary, _ = pipeline.summarize(cfg, m, "timing")
    sig = [b["fit"]["sigma"] if b["fit"] else np.nan for b in summary["by_energy"]]
    ok = bool(np.all(np.isfinite(sig)) and np.all(np.diff(sig) < 0))
    ok = record(6, ok, "sigma by bin " + ", ".join(f"{b['lo']:g}-{b['hi']:g}: {s:.1f}"
                                                   for b, s in zip(summary["by_energy"], sig))
                + " ps (strictly decreasing)", time.perf_counter() - t0, 300)
    assert ok, RESULTS[6]


def test_c07_coincidence():
    t0 = time.perf_counter()
    cfg = preset("coincidence").replace(seed=707)
    m = pipeline.run_metrics(cfg, 5000)
    summary, _ = pipeline.summarize(cfg, m, "coincidence")
    truth = cfg.source.params["offset"] * 1e12
    a, r = summary["anode"], summary["recovered"]
    ok_a = abs(a["mu"] - truth) <= 2 * a["mu_err"]
    ok_r = abs(r["mu"] - truth) <= 2 * r["mu_err"]
    ok = r["sigma"] >= a["sigma"] and ok_a and ok_r
    ok = record(7, ok, f"sigma anode {a['sigma']:.0f}, recovered {r['sigma']:.0f} ps; "
                       f"mu {a['mu']:.0f}+-{a['mu_err']:.0f} / {r['mu']:.0f}+-{r['mu_err']:.0f} ps "
                       f"vs injected {truth:.0f} ps (within 2 sigma); reference 603 vs 617 ps",
                time.perf_counter() - t0, 300)
    assert ok, RESULTS[7]


def test_c08_psd_fom():
    t0 = time.perf_counter()
    cfg = preset("cf252").replace(seed=808)
    m = pipeline.run_metrics(cfg, 20_000)
    summary, _ = pipeline.summarize(cfg, m, "psd")
    fa = summary["anode"]["fom"]["fom"]
    fr = summary["recovered"]["fom"]["fom"]
    drop = 1 - fr / fa
    rng = np.random.default_rng(809)
    mix = np.concatenate([rng.normal(0.70, 0.02, 100_000), rng.normal(0.80, 0.025, 100_000)])
    closed = oracles.fom_closed_form(0.70, 0.02, 0.80, 0.025)
    got = an.compute_fom(mix).fom
    rel = abs(got / closed - 1)
    ok = fa > 0 and fr <= fa and drop < 0.25 and rel < 0.03
    ok = record(8, ok, f"FOM anode {fa:.3f} (offset {summary['anode']['best_offset']}), recovered "
                       f"{fr:.3f} (offset {summary['recovered']['best_offset']}), drop "
                       f"{100 * drop:.1f}% (< 25%); mixture FOM {got:.4f} vs closed form "
                       f"{closed:.4f} ({100 * rel:.2f}% < 3%)",
                time.perf_counter() - t0, 600)
    assert ok, RESULTS[8]


def test_c09_invariance_suite():
    t0 = time.perf_counter()
    d = DigitizerSpec()
    n = d.record_len
    energies = np.geomspace(100, 1000, 12)
    arrivals = np.full(12, 203.7e-9)
    p = synth_pulses(energies, arrivals, GAMMA_SHAPE, d.dt, n)
    thr = an.kevee_to_amplitude(80, GAMMA_SHAPE, d.dt)
    t = an.cfd_time(p, dt=d.dt, threshold=thr).t_pickoff
    cfd_drift = (t.max() - t.min()) * 1e12

    q = synth_pulses(np.full(2, 400.0), np.full(2, 203e-9), NEUTRON_SHAPE, d.dt, n)
    base = an.psd_param(q[:1], 8, dt=d.dt).ratio
    scaled = [an.psd_param(q[:1] * a, 8, dt=d.dt).ratio for a in (0.25, 3.0, 10.0)]
    psd_dev = max(abs(float(np.ravel(s)[0] - np.ravel(base)[0])) for s in scaled)

    rng = np.random.default_rng(909)
    r = np.concatenate([rng.normal(0.62, 0.03, 20_000), rng.normal(0.76, 0.02, 30_000)])
    f0 = an.compute_fom(r).fom
    fom_dev = max(abs(an.compute_fom(a * r + b).fom / f0 - 1) for a, b in ((3.0, 5.0), (0.1, -2.0)))

    x = rng.standard_normal((20, 2000))
    y = rng.standard_normal((20, 2000))
    X = dft(Trace(x, 1.0)).bins
    pars = np.abs(np.sum(np.abs(X) ** 2, axis=1) / 2000 / np.sum(x ** 2, axis=1) - 1).max()
    lin = dft(Trace(2.5 * x - 0.7 * y, 1.0)).bins - (2.5 * X - 0.7 * dft(Trace(y, 1.0)).bins)
    lin = np.abs(lin).max() / np.abs(X).max()

    ok = cfd_drift < 1.0 and psd_dev < 1e-12 and fom_dev < 1e-6 and pars < 1e-9 and lin < 1e-9
    ok = record(9, ok, f"CFD drift {cfd_drift:.2e} ps over 10x amplitude (< 1 ps); PSD ratio "
                       f"change {psd_dev:.1e}; FOM affine change {fom_dev:.1e}; Parseval "
                       f"{pars:.1e}; linearity {lin:.1e} (< 1e-9)",
                time.perf_counter() - t0, 60)
    assert ok, RESULTS[9]


def test_c10_reproducibility(tmp_path):
    t0 = time.perf_counter()
    cfg = RunConfig(seed=1010)
    outs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        pipeline.simulate_file(cfg, 300, d / "events.fdm")
        pipeline.recover_file(cfg, d / "events.fdm", d / "recovered.fdm")
        m = pipeline.file_metrics(cfg, d / "recovered.fdm")
        for which in ("charge", "timing"):
            summary, tables = pipeline.summarize(cfg, m, which)
            pipeline.write_outputs(d / "out", which, summary, tables, cfg, cfg.seed)
        outs.append(d)
    a, b = outs
    files = ["events.fdm", "recovered.fdm", "out/charge.json", "out/timing.json",
             "out/charge_scatter.csv"]
    same = [filecmp.cmp(a / f, b / f, shallow=False) for f in files]
    ok = record(10, all(same), f"{sum(same)}/{len(same)} outputs byte-identical across two runs",
                time.perf_counter() - t0, 120)
    assert ok, RESULTS[10]


if __name__ == "__main__":
    import sys
    sys.exit(pytest.main([__file__, "-v", "-p", "no:cacheprovider"]))
