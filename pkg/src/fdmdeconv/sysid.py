"""Impulse-response estimation from noise-driven input/output records.

Per-record cross-correlation (output with input) and autocorrelation (input)
are averaged over all records, each average is transformed once, and the
response is the bin-wise ratio ``S_yx / S_xx``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .signal import CorrelationEstimate, Spectrum, Trace, cross_correlate

DEFAULT_EPS = 1e-6


def _stack(pairs, dt):
    """Normalize the accepted input forms to two float arrays (M, N)."""
    if isinstance(pairs, tuple) and len(pairs) == 2 and not isinstance(pairs[0], tuple):
        x, y = pairs
        xs = x.samples if isinstance(x, Trace) else np.asarray(x, dtype=float)
        ys = y.samples if isinstance(y, Trace) else np.asarray(y, dtype=float)
        if dt is None and isinstance(x, Trace):
            dt = x.dt
        return np.atleast_2d(xs), np.atleast_2d(ys), dt
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one (input, output) pair")
    xs, ys = [], []
    for x, y in pairs:
        if isinstance(x, Trace):
            dt = x.dt if dt is None else dt
            x = x.samples
        if isinstance(y, Trace):
            y = y.samples
        xs.append(np.asarray(x, dtype=float))
        ys.append(np.asarray(y, dtype=float))
    return np.stack(xs), np.stack(ys), dt


def average_correlations(x, y, mode="circular", normalization="biased",
                         chunk: int = 1000) -> CorrelationEstimate:
    """Average per-record correlations in a fixed order (bit-reproducible)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ValueError(f"input/output shapes differ: {x.shape} vs {y.shape}")
    if x.shape[0] == 0:
        raise ValueError("need at least one (input, output) pair")
    r_yx = np.zeros(x.shape[-1])
    r_xx = np.zeros(x.shape[-1])
    for i in range(0, x.shape[0], chunk):
        xi, yi = x[i:i + chunk], y[i:i + chunk]
        r_yx += cross_correlate(yi, xi, mode, normalization).sum(axis=0)
        r_xx += cross_correlate(xi, xi, mode, normalization).sum(axis=0)
    m = x.shape[0]
    return CorrelationEstimate(r_yx / m, r_xx / m, m)


def response_from_correlations(est: CorrelationEstimate, dt: float,
                               eps: float = DEFAULT_EPS) -> Spectrum:
    s_yx = np.fft.fft(est.r_yx)
    s_xx = np.fft.fft(est.r_xx)
    mag = np.abs(s_xx)
    valid = mag >= eps * mag.max() if mag.max() > 0 else np.zeros(mag.shape, bool)
    h = np.zeros_like(s_yx)
    h[valid] = s_yx[valid] / s_xx[valid]
    return Spectrum(h, 1.0 / (len(h) * dt), valid)


def estimate_impulse_response(pairs, dt: float | None = None, *,
                              mode: str = "circular", normalization: str = "biased",
                              eps: float = DEFAULT_EPS) -> Spectrum:
    """Transfer function ``H(k) = S_yx(k) / S_xx(k)`` from averaged correlations.

    Parameters
    ----------
    pairs : list of (x, y) or tuple (X, Y)
        Input (pass-through) and output (fan-in) records, either as a list
        of pairs of :class:`Trace`/arrays or as two ``(M, N)`` arrays.
    dt : float, optional
        Sample period; taken from the traces when they are :class:`Trace`.
    mode : {"circular", "linear"}
        Correlation lag convention.  ``circular`` is exact for steady-state
        (record-periodic) excitation; ``linear`` suits continuous noise and
        should then be paired with ``normalization="unbiased"``.
    eps : float
        Bins with ``|S_xx| < eps * max|S_xx|`` are marked invalid and set to 0.
    """
    x, y, dt = _stack(pairs, dt)
    if dt is None:
        raise ValueError("dt is required when records are plain arrays")
    est = average_correlations(x, y, mode, normalization)
    return response_from_correlations(est, dt, eps)


@dataclass
class WhitenessReport:
    peak: float
    sidelobe_rms: float
    sidelobe_bound: float
    flatness: float
    max_bin_fraction: float
    records: int
    passed: bool
    messages: list = field(default_factory=list)


def whiten_check(x_records, dt: float | None = None, band=(0.0, 180e6)) -> WhitenessReport:
    """Check that calibration input records are white enough to divide by.

    The averaged biased autocorrelation is normalized by its zero-lag value;
    its RMS over non-zero lags must stay under ``3 / sqrt(M N)``.  Spectral
    flatness (geometric over arithmetic mean of the averaged power spectrum
    in ``band``) and the largest single-bin power fraction are reported too.
    """
    if isinstance(x_records, Trace):
        dt = x_records.dt if dt is None else dt
        x = np.atleast_2d(x_records.samples)
    else:
        items = list(x_records)
        if items and isinstance(items[0], Trace):
            dt = items[0].dt if dt is None else dt
            x = np.stack([t.samples for t in items])
        else:
            x = np.atleast_2d(np.asarray(items, dtype=float))
    m, n = x.shape
    if m < 10:
        raise ValueError(f"need at least 10 records, got {m}")
    dt = 1.0 if dt is None else dt

    r = cross_correlate(x, x, "linear", "biased").mean(axis=0)
    peak = float(r[0])
    msgs = []
    if peak <= 0:
        return WhitenessReport(0.0, np.inf, 3 / np.sqrt(m * n), 0.0, 1.0, m, False,
                               ["input has no power"])
    side = float(np.sqrt(np.mean((r[1:] / peak) ** 2))) if n > 1 else 0.0
    bound = 3.0 / np.sqrt(m * n)

    p = (np.abs(np.fft.rfft(x, axis=-1)) ** 2).mean(axis=0)
    f = np.fft.rfftfreq(n, dt)
    sel = (f >= band[0]) & (f <= band[1])
    pb = p[sel]
    total = pb.sum()
    max_frac = float(pb.max() / total) if total > 0 else 1.0
    with np.errstate(divide="ignore"):
        flat = float(np.exp(np.mean(np.log(pb))) / pb.mean()) if total > 0 else 0.0

    passed = side < bound
    if not passed:
        msgs.append(f"autocorrelation sidelobes {side:.3g} exceed bound {bound:.3g}")
    if p[1:].sum() <= 1e-12 * p.sum():
        passed = False
        msgs.append("no input power away from DC")
    if flat < 0.1:
        passed = False
        msgs.append(f"input spectrum is not flat (flatness {flat:.3g})")
    for msg in msgs:
        warnings.warn("calibration input is not white: " + msg, stacklevel=2)
    return WhitenessReport(peak, side, bound, flat, max_frac, m, passed, msgs)


class ImpulseResponseEstimator(BaseEstimator):
    """Estimate a chain transfer function from noise input/output records.

    ``fit(X, y)`` takes input records ``X`` and the matching output records
    ``y``, both shaped ``(n_records, N)``.  After fitting, ``response_`` is
    the estimated :class:`Spectrum` and ``impulse_response_`` its inverse
    transform.
    """

    def __init__(self, dt=2e-9, mode="circular", normalization="biased", eps=DEFAULT_EPS):
        self.dt = dt
        self.mode = mode
        self.normalization = normalization
        self.eps = eps

    def fit(self, X, y):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.atleast_2d(np.asarray(y, dtype=float))
        if X.shape != y.shape:
            raise ValueError(f"X and y shapes differ: {X.shape} vs {y.shape}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("records must be finite")
        est = average_correlations(X, y, self.mode, self.normalization)
        self.correlation_ = est
        self.response_ = response_from_correlations(est, self.dt, self.eps)
        self.n_records_ = est.records_averaged
        return self

    @property
    def impulse_response_(self) -> np.ndarray:
        check_is_fitted(self, "response_")
        return np.fft.ifft(self.response_.bins).real

    def predict(self, X):
        """Chain output predicted for input records ``X`` (circular model)."""
        check_is_fitted(self, "response_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.fft.ifft(np.fft.fft(X, axis=-1) * self.response_.bins, axis=-1).real
