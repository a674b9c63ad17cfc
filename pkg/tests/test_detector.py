import warnings

import numpy as np
import pytest

from scipy.integrate import trapezoid

from fdmdeconv.chain import DigitizerSpec
from fdmdeconv.detector import (CEBR3_SHAPE, DEFAULT_CALIB, GAMMA_SHAPE, NEUTRON_SHAPE, EventTruth,
                                PulseShape, SourceSpec, TruncatedPulseWarning, sample_events,
                                synth_pulse, synth_pulses)


def test_unit_pulse_has_unit_area():
    t = np.arange(-50e-9, 3e-6, 0.01e-9)
    for shape in (GAMMA_SHAPE, NEUTRON_SHAPE, CEBR3_SHAPE):
        assert trapezoid(shape.unit_pulse(t), t) == pytest.approx(1.0, rel=1e-3)
        assert shape.unit_cdf(3e-6) == pytest.approx(1.0, abs=1e-6)


def test_pulse_sum_matches_calibration():
    d = DigitizerSpec(record_len=4000)
    tr = synth_pulse(EventTruth(1.0, 100e-9), GAMMA_SHAPE, d)
    assert -tr.samples.sum() * d.dt == pytest.approx(DEFAULT_CALIB, rel=5e-3)


def test_pulse_is_linear_in_energy_and_negative():
    d = DigitizerSpec()
    a = synth_pulse(EventTruth(100.0, 200e-9), GAMMA_SHAPE, d).samples
    b = synth_pulse(EventTruth(300.0, 200e-9), GAMMA_SHAPE, d).samples
    np.testing.assert_allclose(b, 3 * a, rtol=1e-12, atol=1e-18)
    assert a.min() < 0 and a.max() <= 1e-15


def test_zero_energy_gives_flat_trace():
    tr = synth_pulse(EventTruth(0.0, 200e-9), GAMMA_SHAPE, DigitizerSpec())
    assert not tr.samples.any()


def test_truncation_warns_and_late_event_fails():
    d = DigitizerSpec()
    with pytest.warns(TruncatedPulseWarning):
        synth_pulse(EventTruth(100.0, 3.9e-6), GAMMA_SHAPE, d)
    with pytest.raises(ValueError):
        synth_pulse(EventTruth(100.0, 5e-6), GAMMA_SHAPE, d)


def test_neutron_tail_exceeds_gamma_tail():
    d = DigitizerSpec()
    g, n = synth_pulses([500.0, 500.0], [200e-9, 200e-9], GAMMA_SHAPE, d.dt, 2000), \
        synth_pulses([500.0], [200e-9], NEUTRON_SHAPE, d.dt, 2000)
    k = int(np.argmin(g[0]))
    tail = lambda p: p[k + 10:].sum() / p.sum()  # noqa: E731
    assert tail(n[0]) > tail(g[0])


def test_per_event_slow_fraction_override():
    d = DigitizerSpec()
    p = synth_pulses([100.0, 100.0], [200e-9] * 2, GAMMA_SHAPE, d.dt, 2000,
                     slow_fraction=[np.nan, NEUTRON_SHAPE.slow_fraction])
    q = synth_pulses([100.0, 100.0], [200e-9] * 2, GAMMA_SHAPE, d.dt, 2000)
    r = synth_pulses([100.0], [200e-9], NEUTRON_SHAPE, d.dt, 2000)
    np.testing.assert_allclose(p[0], q[0])
    np.testing.assert_allclose(p[1], r[0], rtol=1e-12, atol=1e-20)


def test_shape_and_event_validation():
    with pytest.raises(ValueError):
        PulseShape(tau_fast=200e-9, tau_slow=100e-9)
    with pytest.raises(ValueError):
        PulseShape(slow_fraction=1.0)
    with pytest.raises(ValueError):
        EventTruth(-1.0, 0.0)
    with pytest.raises(ValueError):
        EventTruth(1.0, 0.0, "alpha")
    with pytest.raises(ValueError):
        EventTruth(1.0, 0.0, slow_fraction=1.5)


def test_source_validation():
    with pytest.raises(ValueError):
        SourceSpec("am241")
    with pytest.raises(ValueError):
        SourceSpec("cs137_gamma", energy_params={"bogus": 1})
    with pytest.raises(ValueError):
        SourceSpec("cs137_gamma", energy_params={"p_photopeak": 0.9})
    with pytest.raises(ValueError):
        SourceSpec("na22_coincidence")


def test_sampling_is_reproducible():
    src = SourceSpec("cf252_mixed")
    a, b = sample_events(src, 200, 9), sample_events(src, 200, 9)
    assert a == b
    assert a != sample_events(src, 200, 10)


def test_cs137_photopeak_resolution():
    from fdmdeconv.analysis import fit_photopeak
    ev = sample_events(SourceSpec("cs137_gamma"), 100_000, 3)
    e = np.array([x.energy_kevee for x in ev])
    fit = fit_photopeak(e, (600, 730))
    assert fit.mu == pytest.approx(662, abs=0.3)
    assert fit.sigma == pytest.approx(13.5, abs=0.2)
    compton = e[e < 550]
    assert compton.max() < 477 + 5 * 13.5 and compton.min() >= 1.0


def test_cf252_species_and_energy_range():
    ev = sample_events(SourceSpec("cf252_mixed"), 5000, 4)
    sp = np.array([x.species for x in ev])
    assert 0.35 < np.mean(sp == "neutron") < 0.45
    e = np.array([x.energy_kevee for x in ev])
    assert e.min() >= 50 and e.max() <= 1000
    f = np.array([x.slow_fraction for x in ev])
    assert np.all((f >= 0) & (f < 1))
    assert f[sp == "neutron"].mean() > f[sp == "gamma"].mean()


def test_coincidence_events_pair_up():
    src = SourceSpec("na22_coincidence", detector_ids=(0, 1))
    ev = sample_events(src, 3000, 5)
    assert len(ev) == 6000
    t0 = np.array([x.t_arrival for x in ev[0::2]])
    t1 = np.array([x.t_arrival for x in ev[1::2]])
    assert {x.detector_id for x in ev[0::2]} == {0}
    assert np.mean(t0 - t1) == pytest.approx(1e-9, abs=5e-11)
    assert np.std(t0 - t1) == pytest.approx(0.6e-9, rel=0.05)


def test_mono_and_arrival_window():
    src = SourceSpec("mono", arrival_window=(100e-9, 110e-9))
    ev = sample_events(src, 50, 0)
    assert all(x.energy_kevee == 662.0 for x in ev)
    assert all(100e-9 <= x.t_arrival <= 110e-9 for x in ev)
    with pytest.raises(ValueError):
        sample_events(src, 0, 0)
