"""Discrete-signal primitives: traces, spectra, transforms, convolution,
correlation and the Butterworth low-pass used after deconvolution.

Transform convention: the forward DFT is unnormalized and the inverse
carries the 1/N factor.  Every array-valued routine treats the last axis
as time, so a batch of records with a common ``dt`` can be carried in a
single :class:`Trace` with ``samples.shape == (n_records, N)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from scipy import signal as sps
from scipy.fft import next_fast_len


@dataclass(frozen=True)
class Trace:
    """Uniformly sampled real waveform.

    Parameters
    ----------
    samples : ndarray, shape (..., N)
        Sample values; leading axes index independent records.
    dt : float
        Sample period in seconds.
    t0 : float
        Time of the first sample in seconds.
    """

    samples: np.ndarray
    dt: float
    t0: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim == 0 or s.shape[-1] < 1:
            raise ValueError("trace needs at least one sample")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(s)):
            raise ValueError("trace samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def n(self) -> int:
        return self.samples.shape[-1]

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n)

    def with_samples(self, samples) -> "Trace":
        return Trace(samples, self.dt, self.t0)


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT bins of a trace (last axis is frequency)."""

    bins: np.ndarray
    df: float
    valid: np.ndarray | None = None

    def __post_init__(self):
        b = np.asarray(self.bins, dtype=complex)
        object.__setattr__(self, "bins", b)
        if self.valid is None:
            object.__setattr__(self, "valid", np.ones(b.shape[-1], dtype=bool))
        else:
            v = np.asarray(self.valid, dtype=bool)
            if v.shape != (b.shape[-1],):
                raise ValueError("validity mask must match the number of bins")
            object.__setattr__(self, "valid", v)

    @property
    def n(self) -> int:
        return self.bins.shape[-1]

    @property
    def dt(self) -> float:
        return 1.0 / (self.n * self.df)

    def frequencies(self) -> np.ndarray:
        """Signed bin frequencies in Hz (negative for k > N/2)."""
        return np.fft.fftfreq(self.n, self.dt)


@dataclass
class CorrelationEstimate:
    r_yx: np.ndarray
    r_xx: np.ndarray
    records_averaged: int = 1

    def __post_init__(self):
        if np.shape(self.r_yx) != np.shape(self.r_xx):
            raise ValueError("r_yx and r_xx must have equal length")


@dataclass(frozen=True)
class FilterSpec:
    """Butterworth low-pass description.

    ``zero_phase=True`` applies the magnitude response only; ``False``
    applies the complex response of the causal analog prototype.
    """

    order: int = 4
    cutoff_hz: float = 180e6
    kind: Literal["butterworth_lowpass"] = "butterworth_lowpass"
    zero_phase: bool = True

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise ValueError("filter order must be a positive integer")
        if not self.cutoff_hz > 0:
            raise ValueError("cutoff must be positive")
        if self.kind != "butterworth_lowpass":
            raise ValueError(f"unsupported filter kind {self.kind!r}")

    def check_nyquist(self, dt: float):
        if not self.cutoff_hz < 0.5 / dt:
            raise ValueError(
                f"cutoff {self.cutoff_hz:g} Hz is not below Nyquist {0.5 / dt:g} Hz")


def dft(x: Trace) -> Spectrum:
    """Unnormalized DFT along the last axis."""
    return Spectrum(np.fft.fft(x.samples, axis=-1), 1.0 / (x.n * x.dt))


def idft(X: Spectrum, t0: float = 0.0, real: bool = True) -> Trace | np.ndarray:
    """Inverse DFT with the 1/N factor.

    With ``real=True`` (the default) the imaginary residue is dropped and a
    :class:`Trace` is returned; otherwise the complex array is returned.
    """
    x = np.fft.ifft(X.bins, axis=-1)
    if not real:
        return x
    return Trace(x.real, X.dt, t0)


def convolve(x: Trace, h: Trace) -> Trace:
    """Causal convolution truncated to the record length of ``x``.

    ``y(n) = sum_{m=0}^{n} x(m) h(n - m)`` for ``n < len(x)``.  Samples of
    ``h`` beyond the record never contribute.
    """
    if not np.isclose(x.dt, h.dt, rtol=1e-12, atol=0):
        raise ValueError(f"sample periods differ: {x.dt} vs {h.dt}")
    n = x.n
    hs = h.samples[..., :n]
    nfft = next_fast_len(n + hs.shape[-1] - 1, real=True)
    y = np.fft.irfft(np.fft.rfft(x.samples, nfft, axis=-1)
                     * np.fft.rfft(hs, nfft, axis=-1), nfft, axis=-1)[..., :n]
    return Trace(y, x.dt, x.t0)


def cross_correlate(y: Trace | np.ndarray, x: Trace | np.ndarray,
                    mode: Literal["linear", "circular"] = "linear",
                    normalization: Literal["biased", "unbiased", "none"] = "biased",
                    ) -> np.ndarray:
    """Correlation ``r_yx(m) = sum_n y(n) x(n - m)`` for lags ``m = 0..N-1``.

    ``linear`` sums over the valid overlap only; ``circular`` wraps the
    index of ``x`` modulo N.  ``biased`` divides by N, ``unbiased`` by the
    number of products at each lag.  Leading axes are kept (one row per
    record); averaging is left to the caller.
    """
    ys = y.samples if isinstance(y, Trace) else np.asarray(y, dtype=float)
    xs = x.samples if isinstance(x, Trace) else np.asarray(x, dtype=float)
    if ys.shape[-1] != xs.shape[-1]:
        raise ValueError(f"length mismatch: {ys.shape[-1]} vs {xs.shape[-1]}")
    n = ys.shape[-1]
    if mode == "circular":
        r = np.fft.irfft(np.fft.rfft(ys, axis=-1) * np.conj(np.fft.rfft(xs, axis=-1)),
                         n, axis=-1)
        counts = np.full(n, float(n))
    elif mode == "linear":
        nfft = next_fast_len(2 * n - 1, real=True)
        r = np.fft.irfft(np.fft.rfft(ys, nfft, axis=-1)
                         * np.conj(np.fft.rfft(xs, nfft, axis=-1)), nfft, axis=-1)[..., :n]
        counts = n - np.arange(n, dtype=float)
    else:
        raise ValueError(f"unknown correlation mode {mode!r}")
    if normalization == "biased":
        return r / n
    if normalization == "unbiased":
        return r / counts
    if normalization == "none":
        return r
    raise ValueError(f"unknown normalization {normalization!r}")


def butterworth_gain(f, spec: FilterSpec):
    """Magnitude ``1/sqrt(1 + (f/fc)^(2*order))``; accepts scalars or arrays."""
    f = np.abs(np.asarray(f, dtype=float))
    g = 1.0 / np.sqrt(1.0 + (f / spec.cutoff_hz) ** (2 * spec.order))
    return g if g.ndim else float(g)


def butterworth_response(f, spec: FilterSpec) -> np.ndarray:
    """Complex response of the causal analog prototype at signed frequencies ``f``."""
    f = np.asarray(f, dtype=float)
    b, a = sps.butter(spec.order, 2 * np.pi * spec.cutoff_hz, btype="low", analog=True)
    _, resp = sps.freqs(b, a, worN=2 * np.pi * np.abs(f))
    return np.where(f < 0, np.conj(resp), resp)


def lowpass_mask(n: int, dt: float, spec: FilterSpec) -> np.ndarray:
    f = np.fft.fftfreq(n, dt)
    if spec.zero_phase:
        return butterworth_gain(f, spec)
    resp = butterworth_response(f, spec)
    if n % 2 == 0:
        # the Nyquist bin is its own mirror; keep it real
        resp[n // 2] = np.abs(resp[n // 2])
    return resp


def apply_lowpass(X: Spectrum, spec: FilterSpec) -> Spectrum:
    return Spectrum(X.bins * lowpass_mask(X.n, X.dt, spec), X.df, X.valid)


def band_power(x: Trace, f_lo: float, f_hi: float = np.inf) -> float:
    """Mean power of ``x`` in the band ``f_lo <= |f| < f_hi`` (Parseval-scaled)."""
    X = np.fft.fft(x.samples, axis=-1)
    f = np.abs(np.fft.fftfreq(x.n, x.dt))
    sel = (f >= f_lo) & (f < f_hi)
    return float(np.sum(np.abs(X[..., sel]) ** 2) / x.n ** 2)
