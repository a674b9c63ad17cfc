"""Resonator, fan-in and digitizer models.

The resonator in series with the fan-in is a second-order resonant system
whose impulse response is an exponentially damped sine,
``h(n) = gain * exp(-alpha n dt) * sin(2 pi f0 n dt)`` with
``alpha = pi f0 / Q``.  The pass-through is ideal.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence

import numpy as np

from .detector import DEFAULT_CALIB, EventTruth, PulseShape, GAMMA_SHAPE, NEUTRON_SHAPE, synth_pulses
from .signal import Trace, Spectrum, convolve


@dataclass(frozen=True)
class ResonatorSpec:
    """Resonator (in series with the fan-in) described by its transfer behavior.

    With ``strict=True`` the Q-factor must lie in [10, 15], the envelope
    1/e time must stay below 2.5 us and the -3 dB bandwidth f0/Q below
    2 MHz.
    """

    f0: float
    q_factor: float = 12.0
    gain: float = 0.5
    id: int = 0
    strict: bool = True

    def __post_init__(self):
        if not self.f0 > 0 or not self.q_factor > 0:
            raise ValueError("f0 and q_factor must be positive")
        if self.strict:
            if not 10 <= self.q_factor <= 15:
                raise ValueError(f"Q-factor {self.q_factor} outside [10, 15]")
            if not self.decay_time < 2.5e-6:
                raise ValueError(f"decay time {self.decay_time:g} s exceeds 2.5 us")
            if not self.bandwidth < 2e6:
                raise ValueError(f"bandwidth {self.bandwidth:g} Hz exceeds 2 MHz")

    @property
    def alpha(self) -> float:
        return np.pi * self.f0 / self.q_factor

    @property
    def decay_time(self) -> float:
        """Envelope 1/e time in seconds."""
        return 1.0 / self.alpha

    @property
    def bandwidth(self) -> float:
        return self.f0 / self.q_factor


@dataclass(frozen=True)
class DigitizerSpec:
    sample_rate: float = 500e6
    bits: int = 14
    full_scale_vpp: float = 2.0
    record_len: int = 2000
    pre_trigger: int = 100
    # input-referred ADC noise in LSB, added before rounding in simulations;
    # it dithers the quantizer so small pulse tails are not rounded away
    noise_lsb: float = 0.5

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ValueError("sample rate must be positive")
        if not 8 <= self.bits <= 24:
            raise ValueError("bits must lie in 8..24")
        if self.record_len < 1:
            raise ValueError("record length must be at least 1")
        if not 0 <= self.pre_trigger < self.record_len:
            raise ValueError("pre-trigger must lie inside the record")
        if self.noise_lsb < 0:
            raise ValueError("ADC noise must be non-negative")

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def lsb(self) -> float:
        return self.full_scale_vpp / 2 ** self.bits

    @property
    def code_range(self) -> tuple[int, int]:
        half = 2 ** (self.bits - 1)
        return -half, half - 1


DEFAULT_NOISE_RMS = 2 * DigitizerSpec().lsb


@dataclass(frozen=True)
class FanInSpec:
    gain: float = 2.0
    n_inputs: int = 4
    noise_rms: float = DEFAULT_NOISE_RMS

    def __post_init__(self):
        if not self.gain > 0:
            raise ValueError("fan-in gain must be positive")
        if self.n_inputs < 1:
            raise ValueError("fan-in needs at least one input")
        if self.noise_rms < 0:
            raise ValueError("noise rms must be non-negative")


def spec_to_dict(spec) -> dict:
    return asdict(spec)


def resonator_impulse_response(r: ResonatorSpec, d: DigitizerSpec, n: int | None = None) -> Trace:
    """Sampled damped sine of length ``n`` (default: the record length)."""
    return _impulse(r, d.dt, d.record_len if n is None else n)


def analytic_response(r: ResonatorSpec, f: FanInSpec, d: DigitizerSpec,
                      n: int | None = None) -> Spectrum:
    """Closed-form transfer function of resonator and fan-in at the DFT bins.

    This is the z-transform of the untruncated damped sine evaluated on the
    unit circle, i.e. what a perfect steady-state measurement returns.  It
    differs from ``dft`` of the record-length response by terms of order
    ``exp(-alpha * N * dt)``.
    """
    if not r.f0 < 0.5 * d.sample_rate:
        raise ValueError(f"f0 = {r.f0:g} Hz is not below Nyquist")
    n = d.record_len if n is None else n
    rho = np.exp(-r.alpha * d.dt)
    w0 = 2 * np.pi * r.f0 * d.dt
    zinv = np.exp(-2j * np.pi * np.arange(n) / n)
    h = rho * np.sin(w0) * zinv / (1 - 2 * rho * np.cos(w0) * zinv + rho ** 2 * zinv ** 2)
    return Spectrum(f.gain * r.gain * h, 1.0 / (n * d.dt))


def front_end(anode: Trace, r: ResonatorSpec, f: FanInSpec, rng=None) -> Trace:
    """Fan-in output for an anode trace: truncated convolution with the
    resonator response, fan-in gain, then additive white chain noise."""
    h = _impulse(r, anode.dt, anode.n)
    y = convolve(anode, h).samples * f.gain
    if f.noise_rms > 0:
        rng = np.random.default_rng(rng)
        y = y + f.noise_rms * rng.standard_normal(y.shape)
    return Trace(y, anode.dt, anode.t0)


def _impulse(r, dt, n):
    if not r.f0 < 0.5 / dt:
        raise ValueError(f"f0 = {r.f0:g} Hz is not below Nyquist")
    t = dt * np.arange(n)
    return Trace(r.gain * np.exp(-r.alpha * t) * np.sin(2 * np.pi * r.f0 * t), dt)


def quantize(samples, d: DigitizerSpec) -> tuple[np.ndarray, int]:
    """Integer ADC codes for ``samples`` (volts) and the number clipped."""
    lo, hi = d.code_range
    codes = np.rint(np.asarray(samples, dtype=float) / d.lsb)
    clipped = int(np.count_nonzero((codes < lo) | (codes > hi)))
    return np.clip(codes, lo, hi).astype(np.int32), clipped


def digitize(t: Trace, d: DigitizerSpec) -> tuple[Trace, int]:
    """Clip to the input range and round to the nearest ADC level.

    Returns the digitized trace (in volts) and the count of clipped samples.
    """
    if not np.isclose(t.dt, d.dt, rtol=1e-9, atol=0):
        raise ValueError(f"trace dt {t.dt:g} does not match digitizer dt {d.dt:g}")
    codes, clipped = quantize(t.samples, d)
    return Trace(codes * d.lsb, t.dt, t.t0), clipped


@dataclass
class SimulatedRecord:
    """One acquisition: digitized anode (pass-through) and fan-in channels.

    ``anode`` has one row per detector, ``fanin`` one row per fan-in.
    """

    anode: Trace
    fanin: Trace
    truth: list
    clipped: int = 0
    multi_detector: bool = False


DEFAULT_SHAPES = {"gamma": GAMMA_SHAPE, "neutron": NEUTRON_SHAPE}


def fanin_groups(n_detectors: int, separate: bool) -> list[list[int]]:
    if separate:
        return [[i] for i in range(n_detectors)]
    return [list(range(n_detectors))]


def simulate_batch(events_by_record: Sequence[Sequence[EventTruth]],
                   shapes: dict, resonators: Sequence[ResonatorSpec],
                   f: FanInSpec, d: DigitizerSpec, *,
                   calib=DEFAULT_CALIB, separate_fanins: bool = False,
                   seed: int = 0, first_record: int = 0,
                   quantized: bool = True):
    """Vectorized record simulation.

    Returns ``(anode, fanin, clipped)`` where ``anode`` has shape
    ``(n_records, n_detectors, N)`` and ``fanin`` ``(n_records, n_fanins, N)``
    in volts.  Chain noise for record ``i`` is drawn from a generator seeded
    with ``(seed, first_record + i)`` so chunks can be produced independently;
    with ``quantized=True`` ADC noise (``d.noise_lsb``) is added to every
    channel before rounding.
    """
    n_rec = len(events_by_record)
    n_det = len(resonators)
    n = d.record_len
    calib = np.broadcast_to(np.asarray(calib, dtype=float), (n_det,))
    groups = fanin_groups(n_det, separate_fanins)
    if separate_fanins and n_det > f.n_inputs * len(groups):
        raise ValueError("more detectors than fan-in inputs")
    if not separate_fanins and n_det > f.n_inputs:
        raise ValueError(f"{n_det} detectors exceed {f.n_inputs} fan-in inputs")

    anode = np.zeros((n_rec, n_det, n))
    flat = [(i, ev) for i, evs in enumerate(events_by_record) for ev in evs]
    for species, shape in shapes.items():
        sel = [(i, ev) for i, ev in flat if ev.species == species]
        if not sel:
            continue
        idx = np.array([i for i, _ in sel])
        det = np.array([ev.detector_id for _, ev in sel])
        if det.max() >= n_det:
            raise ValueError(f"event references detector {det.max()} but only {n_det} exist")
        fs = [np.nan if ev.slow_fraction is None else ev.slow_fraction for _, ev in sel]
        pulses = synth_pulses([ev.energy_kevee for _, ev in sel],
                              [ev.t_arrival for _, ev in sel], shape, d.dt, n, 1.0,
                              None if np.isnan(fs).all() else fs)
        np.add.at(anode, (idx, det), pulses * calib[det][:, None])

    fanin = np.zeros((n_rec, len(groups), n))
    for g, members in enumerate(groups):
        for k in members:
            h = _impulse(resonators[k], d.dt, n)
            fanin[:, g] += f.gain * convolve(Trace(anode[:, k], d.dt), h).samples
    if f.noise_rms > 0:
        for i in range(n_rec):
            rng = np.random.default_rng([seed, first_record + i])
            fanin[i] += f.noise_rms * rng.standard_normal((len(groups), n))

    clipped = 0
    if quantized:
        if d.noise_lsb > 0:
            for i in range(n_rec):
                rng = np.random.default_rng([seed, first_record + i, 2])
                anode[i] += d.noise_lsb * d.lsb * rng.standard_normal((n_det, n))
                fanin[i] += d.noise_lsb * d.lsb * rng.standard_normal((len(groups), n))
        codes, c1 = quantize(anode, d)
        anode = codes * d.lsb
        codes, c2 = quantize(fanin, d)
        fanin = codes * d.lsb
        clipped = c1 + c2
    return anode, fanin, clipped


def simulate_record(events: Sequence[EventTruth], shapes: dict | None,
                    r: ResonatorSpec | Sequence[ResonatorSpec], f: FanInSpec,
                    d: DigitizerSpec, *, calib=DEFAULT_CALIB,
                    separate_fanins: bool = False, seed: int = 0,
                    record_index: int = 0) -> SimulatedRecord:
    """Simulate one digitizer record holding ``events``.

    Events on more than one detector are allowed but flagged via
    ``multi_detector``; recovering them is outside the single-event regime.
    """
    resonators = [r] if isinstance(r, ResonatorSpec) else list(r)
    shapes = DEFAULT_SHAPES if shapes is None else shapes
    anode, fanin, clipped = simulate_batch(
        [list(events)], shapes, resonators, f, d, calib=calib,
        separate_fanins=separate_fanins, seed=seed, first_record=record_index)
    multi = len({ev.detector_id for ev in events}) > 1
    return SimulatedRecord(Trace(anode[0], d.dt), Trace(fanin[0], d.dt),
                           list(events), clipped, multi)


def identify_detector(fanin, resonators: Sequence[ResonatorSpec], dt: float | None = None) -> np.ndarray:
    """Index of the resonator whose f0 is nearest the dominant spectral peak.

    Accepts a :class:`Trace` or an array with time on the last axis; DC is
    excluded from the peak search.
    """
    if isinstance(fanin, Trace):
        dt, y = fanin.dt, fanin.samples
    else:
        y = np.asarray(fanin, dtype=float)
    n = y.shape[-1]
    mag = np.abs(np.fft.rfft(y - y.mean(axis=-1, keepdims=True), axis=-1))
    mag[..., 0] = 0
    f_peak = np.fft.rfftfreq(n, dt)[np.argmax(mag, axis=-1)]
    f0 = np.array([r.f0 for r in resonators])
    return np.argmin(np.abs(f_peak[..., None] - f0), axis=-1)


def calibration_noise(r: ResonatorSpec, f: FanInSpec, d: DigitizerSpec, n_records: int,
                      *, noise_rms: float = 0.02, periodic: bool = True,
                      seed: int = 0, first_record: int = 0, quantized: bool = True):
    """Noise-driven (input, fan-in output) record pairs for system identification.

    ``periodic=True`` models a generator replaying a white sequence whose
    period equals the record length, so each record sees the steady-state
    (circular) response.  ``periodic=False`` drives the chain with
    continuous noise that started one record length before the trigger.
    Returns two arrays of shape ``(n_records, N)`` in volts.
    """
    n = d.record_len
    x = np.empty((n_records, n))
    y = np.empty((n_records, n))
    hz = analytic_response(r, f, d).bins
    h_long = _impulse(r, d.dt, 2 * n).samples * f.gain
    for i in range(n_records):
        rng = np.random.default_rng([seed, first_record + i, 1])
        if periodic:
            xi = noise_rms * rng.standard_normal(n)
            yi = np.fft.ifft(np.fft.fft(xi) * hz).real
        else:
            xl = noise_rms * rng.standard_normal(2 * n)
            yl = np.fft.irfft(np.fft.rfft(xl, 4 * n) * np.fft.rfft(h_long, 4 * n), 4 * n)[:2 * n]
            xi, yi = xl[n:], yl[n:]
        x[i] = xi
        y[i] = yi + f.noise_rms * rng.standard_normal(n)
    if quantized:
        if d.noise_lsb > 0:
            for i in range(n_records):
                rng = np.random.default_rng([seed, first_record + i, 2])
                x[i] += d.noise_lsb * d.lsb * rng.standard_normal(n)
                y[i] += d.noise_lsb * d.lsb * rng.standard_normal(n)
        x = quantize(x, d)[0] * d.lsb
        y = quantize(y, d)[0] * d.lsb
    return x, y
