"""Synthetic scintillator anode pulses and source event streams.

The anode pulse is a two-component exponential decay blurred by a Gaussian
(PMT transit spread), i.e. a sum of exponentially modified Gaussians with
unit total area.  Energies are in keVee; the conversion to volts is a
single calibration constant in V*s per keVee.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict
from typing import Literal

import numpy as np
from scipy.special import erfc, erfcx, ndtr

from .signal import Trace

# V*s per keVee: puts a 662 keVee EJ-309 gamma at roughly -0.2 V peak.
DEFAULT_CALIB = 2.5e-12

SPECIES = ("gamma", "neutron")


class TruncatedPulseWarning(UserWarning):
    pass


@dataclass(frozen=True)
class PulseShape:
    rise_sigma: float = 1.5e-9
    tau_fast: float = 3.5e-9
    tau_slow: float = 130e-9
    slow_fraction: float = 0.20
    polarity: Literal["negative", "positive"] = "negative"

    def __post_init__(self):
        if not 0 < self.tau_fast < self.tau_slow:
            raise ValueError("need 0 < tau_fast < tau_slow")
        if not self.rise_sigma > 0:
            raise ValueError("rise_sigma must be positive")
        if not 0 <= self.slow_fraction < 1:
            raise ValueError("slow_fraction must lie in [0, 1)")
        if self.polarity not in ("negative", "positive"):
            raise ValueError(f"bad polarity {self.polarity!r}")

    @property
    def sign(self) -> float:
        return -1.0 if self.polarity == "negative" else 1.0

    def unit_pulse(self, t) -> np.ndarray:
        """Unit-area pulse value at times ``t`` (seconds after arrival)."""
        t = np.asarray(t, dtype=float)
        out = (1 - self.slow_fraction) * _emg(t, self.tau_fast, self.rise_sigma)
        if self.slow_fraction:
            out = out + self.slow_fraction * _emg(t, self.tau_slow, self.rise_sigma)
        return out

    def unit_cdf(self, t) -> np.ndarray:
        """Area of the unit pulse accumulated up to ``t``."""
        t = np.asarray(t, dtype=float)
        out = (1 - self.slow_fraction) * _emg_cdf(t, self.tau_fast, self.rise_sigma)
        if self.slow_fraction:
            out = out + self.slow_fraction * _emg_cdf(t, self.tau_slow, self.rise_sigma)
        return out


# EJ-309-like organic scintillator and CeBr3 defaults
GAMMA_SHAPE = PulseShape()
NEUTRON_SHAPE = PulseShape(slow_fraction=0.38)
CEBR3_SHAPE = PulseShape(tau_fast=20e-9, tau_slow=130e-9, slow_fraction=0.0)


def _emg(t, tau, s):
    # exp(-t/tau) / tau convolved with N(0, s); erfcx branch avoids overflow
    z = (s / tau - t / s) / np.sqrt(2.0)
    with np.errstate(over="ignore", under="ignore"):
        pos = 0.5 / tau * np.exp(-0.5 * (t / s) ** 2) * erfcx(np.maximum(z, 0.0))
        neg = 0.5 / tau * np.exp(0.5 * (s / tau) ** 2 - t / tau) * erfc(np.minimum(z, 0.0))
    return np.where(z > 0, pos, neg)


def _emg_cdf(t, tau, s):
    return ndtr(t / s) - tau * _emg(t, tau, s)


@dataclass(frozen=True)
class EventTruth:
    energy_kevee: float
    t_arrival: float
    species: Literal["gamma", "neutron"] = "gamma"
    detector_id: int = 0
    record: int = 0
    # per-event tail fraction; None uses the species shape's own value
    slow_fraction: float | None = None

    def __post_init__(self):
        if not self.energy_kevee >= 0:
            raise ValueError("energy must be non-negative")
        if self.slow_fraction is not None and not 0 <= self.slow_fraction < 1:
            raise ValueError("slow_fraction must lie in [0, 1)")
        if self.t_arrival < 0:
            raise ValueError("arrival time must be non-negative")
        if self.species not in SPECIES:
            raise ValueError(f"unknown species {self.species!r}")


_DEFAULT_PARAMS = {
    "mono": {"energy": 662.0},
    "cs137_gamma": {
        "photopeak": 662.0, "sigma": 13.5, "compton_edge": 477.0,
        "compton_slope": 0.5, "e_min": 30.0,
        "p_photopeak": 0.4, "p_compton": 0.6,
    },
    "na22_coincidence": {
        "compton_edge": 341.0, "compton_slope": 0.5, "e_min": 50.0,
        "sigma_at_edge": 15.0, "offset": 1.0e-9, "time_jitter": 0.6e-9,
    },
    "cf252_mixed": {
        "p_gamma": 0.6, "p_neutron": 0.4,
        "gamma_scale": 250.0, "neutron_scale": 200.0,
        "e_min": 50.0, "e_max": 1000.0,
        "pe_per_kevee": 0.9, "gamma_slow_fraction": GAMMA_SHAPE.slow_fraction,
        "neutron_slow_fraction": NEUTRON_SHAPE.slow_fraction,
    },
}


@dataclass
class SourceSpec:
    """Radioactive source stand-in.

    ``energy_params`` override the per-kind defaults; any ``p_*`` entries
    are branching probabilities and must sum to one.  Arrival times are
    drawn uniformly from ``arrival_window`` (seconds into the record).
    """

    kind: Literal["cs137_gamma", "na22_coincidence", "cf252_mixed", "mono"] = "cs137_gamma"
    rate_hint: float = 1e3
    energy_params: dict = field(default_factory=dict)
    arrival_window: tuple = (200e-9, 204e-9)
    detector_ids: tuple = (0,)

    def __post_init__(self):
        if self.kind not in _DEFAULT_PARAMS:
            raise ValueError(f"unknown source kind {self.kind!r}")
        unknown = set(self.energy_params) - set(_DEFAULT_PARAMS[self.kind])
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        probs = [v for k, v in self.params.items() if k.startswith("p_")]
        if probs and not np.isclose(sum(probs), 1.0):
            raise ValueError(f"branching probabilities sum to {sum(probs)}, not 1")
        lo, hi = self.arrival_window
        if not 0 <= lo <= hi:
            raise ValueError("arrival window must satisfy 0 <= lo <= hi")
        self.arrival_window = (float(lo), float(hi))
        self.detector_ids = tuple(int(d) for d in self.detector_ids)
        if self.kind == "na22_coincidence" and len(self.detector_ids) != 2:
            raise ValueError("coincidence source needs exactly two detectors")

    @property
    def params(self) -> dict:
        return {**_DEFAULT_PARAMS[self.kind], **self.energy_params}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arrival_window"] = list(self.arrival_window)
        d["detector_ids"] = list(self.detector_ids)
        return d


def shape_to_dict(shape: PulseShape) -> dict:
    return asdict(shape)


def synth_pulse(e: EventTruth, shape: PulseShape, digitizer,
                calib: float = DEFAULT_CALIB) -> Trace:
    """Analog anode trace for one event, sampled on the digitizer grid.

    ``calib`` is the pulse area in V*s per keVee.  Warns with
    :class:`TruncatedPulseWarning` when more than 0.1 % of the pulse area
    falls past the end of the record.
    """
    dt = 1.0 / digitizer.sample_rate
    n = int(digitizer.record_len)
    if e.t_arrival >= n * dt:
        raise ValueError("event arrives after the end of the record")
    contained = float(shape.unit_cdf(n * dt - e.t_arrival))
    if contained < 0.999:
        warnings.warn(f"only {contained:.4f} of the pulse area lies in the record",
                      TruncatedPulseWarning, stacklevel=2)
    t = dt * np.arange(n) - e.t_arrival
    return Trace(shape.sign * calib * e.energy_kevee * shape.unit_pulse(t), dt)


def synth_pulses(energies, arrivals, shape: PulseShape, dt: float, n: int,
                 calib: float = DEFAULT_CALIB, slow_fraction=None) -> np.ndarray:
    """Vectorized :func:`synth_pulse`: one row per event.

    ``slow_fraction`` optionally overrides the shape's tail fraction per
    event (NaN entries keep the shape's value).
    """
    energies = np.asarray(energies, dtype=float)[:, None]
    t = dt * np.arange(n)[None, :] - np.asarray(arrivals, dtype=float)[:, None]
    if slow_fraction is None:
        return shape.sign * calib * energies * shape.unit_pulse(t)
    f = np.asarray(slow_fraction, dtype=float)[:, None]
    f = np.where(np.isnan(f), shape.slow_fraction, f)
    unit = (1 - f) * _emg(t, shape.tau_fast, shape.rise_sigma) \
        + f * _emg(t, shape.tau_slow, shape.rise_sigma)
    return shape.sign * calib * energies * unit


def _compton(rng, n, p, sigma_of):
    """Linear-density continuum on [e_min, edge], smeared by the resolution."""
    lo, hi, slope = p["e_min"], p["compton_edge"], p["compton_slope"]
    # density ~ 1 + slope * (E - lo)/(hi - lo); inverse CDF of a linear ramp
    u = rng.random(n)
    if slope == 0:
        x = u
    else:
        x = (np.sqrt(1 + slope * (2 + slope) * u) - 1) / slope
    e = lo + x * (hi - lo)
    return e + rng.normal(size=n) * sigma_of(e)


def _truncated_exponential(rng, n, scale, lo, hi):
    u = rng.random(n)
    span = 1.0 - np.exp(-(hi - lo) / scale)
    return lo - scale * np.log1p(-u * span)


def sample_events(src: SourceSpec, n: int, rng_seed: int) -> list[EventTruth]:
    """Draw ``n`` records worth of events, reproducibly for a given seed.

    Each record holds one event, except for the coincidence source which
    places one event in each of its two detectors.
    """
    if n < 1:
        raise ValueError("need at least one record")
    rng = np.random.default_rng(rng_seed)
    p = src.params
    lo, hi = src.arrival_window
    species = np.zeros(n, dtype=int)
    slow = None

    if src.kind == "mono":
        energies = np.full(n, float(p["energy"]))
    elif src.kind == "cs137_gamma":
        def sigma_of(e):
            return p["sigma"] * np.sqrt(np.clip(e, 1e-9, None) / p["photopeak"])
        peak = rng.random(n) < p["p_photopeak"]
        energies = np.empty(n)
        energies[peak] = p["photopeak"] + p["sigma"] * rng.normal(size=peak.sum())
        energies[~peak] = _compton(rng, (~peak).sum(), p, sigma_of)
    elif src.kind == "cf252_mixed":
        species = (rng.random(n) < p["p_neutron"]).astype(int)
        scale = np.where(species == 1, p["neutron_scale"], p["gamma_scale"])
        energies = _truncated_exponential(rng, n, scale, p["e_min"], p["e_max"])
        if p["pe_per_kevee"] > 0:
            # photoelectron counting: the number landing in the slow
            # component is binomial, so the tail fraction scatters per event
            n_pe = np.maximum(np.rint(energies * p["pe_per_kevee"]), 1).astype(int)
            f0 = np.where(species == 1, p["neutron_slow_fraction"], p["gamma_slow_fraction"])
            slow = np.minimum(rng.binomial(n_pe, f0) / n_pe, 0.99)
    else:
        return _sample_coincidences(src, n, rng)

    energies = np.clip(energies, 1.0, None)
    arrivals = rng.uniform(lo, hi, size=n)
    dets = np.asarray(src.detector_ids)[rng.integers(len(src.detector_ids), size=n)]
    if slow is None:
        slow = [None] * n
    return [EventTruth(float(e), float(t), SPECIES[s], int(d), i,
                       None if f is None else float(f))
            for i, (e, t, s, d, f) in enumerate(zip(energies, arrivals, species, dets, slow))]


def _sample_coincidences(src, n, rng):
    p = src.params
    lo, hi = src.arrival_window

    def sigma_of(e):
        return p["sigma_at_edge"] * np.sqrt(np.clip(e, 1e-9, None) / p["compton_edge"])

    e1 = np.clip(_compton(rng, n, p, sigma_of), 1.0, None)
    e2 = np.clip(_compton(rng, n, p, sigma_of), 1.0, None)
    t1 = rng.uniform(lo, hi, size=n)
    # back-to-back annihilation photons: fixed geometric offset plus the
    # intrinsic scintillator/PMT time spread
    t2 = t1 - p["offset"] + p["time_jitter"] * rng.normal(size=n)
    t2 = np.clip(t2, 0.0, None)
    d1, d2 = src.detector_ids
    out = []
    for i in range(n):
        out.append(EventTruth(float(e1[i]), float(t1[i]), "gamma", d1, i))
        out.append(EventTruth(float(e2[i]), float(t2[i]), "gamma", d2, i))
    return out
