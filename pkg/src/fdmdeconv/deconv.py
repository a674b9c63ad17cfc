"""Recover anode pulses from fan-in records by frequency-domain division.

``X(k) = Y(k) / H(k)`` on valid bins, followed by a Butterworth low-pass
in the same frequency-domain pass, then the inverse DFT.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .signal import FilterSpec, Spectrum, Trace, lowpass_mask
from .sysid import ImpulseResponseEstimator


@dataclass(frozen=True)
class DeconvConfig:
    filter: FilterSpec = field(default_factory=FilterSpec)
    h_floor: float = 1e-5
    invalid_bin_policy: Literal["zero", "clamp"] = "zero"
    # samples used for baseline restoration when the DC bin is unusable
    baseline_samples: int = 92
    # "ringdown" folds the resonator ringing that continues past the end of
    # the record back onto its start before dividing; "none" divides as is
    tail_correction: Literal["ringdown", "none"] = "ringdown"
    tail_fit_len: int = 400

    def __post_init__(self):
        if not 0 < self.h_floor < 1:
            raise ValueError("h_floor must lie in (0, 1)")
        if self.invalid_bin_policy not in ("zero", "clamp"):
            raise ValueError(f"unknown policy {self.invalid_bin_policy!r}")
        if self.tail_correction not in ("ringdown", "none"):
            raise ValueError(f"unknown tail correction {self.tail_correction!r}")


def inverse_filter(H: Spectrum, cfg: DeconvConfig, dt: float | None = None) -> tuple[np.ndarray, bool]:
    """Per-bin multiplier ``B(k) / H(k)`` and whether the DC bin is usable."""
    dt = H.dt if dt is None else dt
    h = H.bins
    mag = np.abs(h)
    peak = mag.max()
    if peak == 0 or not np.any(H.valid):
        raise ValueError("impulse response has no valid bins")
    valid = H.valid & (mag >= cfg.h_floor * peak)
    inv = np.zeros_like(h)
    inv[valid] = 1.0 / h[valid]
    if cfg.invalid_bin_policy == "clamp":
        unit = np.where(mag > 0, h / np.where(mag > 0, mag, 1.0), 1.0)
        inv[~valid] = 1.0 / (cfg.h_floor * peak * unit[~valid])
    inv = inv * lowpass_mask(H.n, dt, cfg.filter)
    return inv, bool(valid[0]) or cfg.invalid_bin_policy == "clamp"


def ringdown_poles(H: Spectrum) -> tuple[float, float] | None:
    """Second-order recursion ``h(n) = a1 h(n-1) + a2 h(n-2)`` fitted to the
    impulse response behind ``H``; ``None`` when it is not a stable
    resonance (e.g. a response that dies out within the record)."""
    h = np.fft.ifft(np.where(H.valid, H.bins, 0)).real
    if h.size < 8:
        return None
    A = np.column_stack([h[1:-1], h[:-2]])
    b = h[2:]
    if not np.any(A):
        return None
    (a1, a2), *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = b - A @ (a1, a2)
    if np.sum(resid ** 2) > 1e-2 * np.sum(b ** 2):
        return None
    roots = np.roots([1.0, -a1, -a2])
    if np.max(np.abs(roots)) >= 1:
        return None
    return float(a1), float(a2)


def _free_response(a1, a2, init, n):
    out = np.empty(n)
    out[:2] = init
    for i in range(2, n):
        out[i] = a1 * out[i - 1] + a2 * out[i - 2]
    return out


def fold_ringdown(y: np.ndarray, poles: tuple[float, float], fit_len: int = 400) -> np.ndarray:
    """Add the predicted post-record ringing of ``y`` onto its start.

    The last ``fit_len`` samples are least-squares fitted with the two free
    solutions of the resonator recursion; the fit is extrapolated until it
    has decayed and wrapped modulo the record length, which makes the record
    consistent with circular convolution by the untruncated response.
    Assumes the anode signal has ended before the fit window.
    """
    a1, a2 = poles
    n = y.shape[-1]
    fit_len = min(fit_len, n)
    rho = np.sqrt(max(-a2, 1e-300))
    n_ext = int(np.ceil(40.0 / max(-np.log(rho), 1e-9))) if rho < 1 else 0
    n_ext = min(n_ext, 64 * n)
    basis = np.stack([_free_response(a1, a2, (1.0, 0.0), fit_len + n_ext),
                      _free_response(a1, a2, (0.0, 1.0), fit_len + n_ext)])
    coef = np.linalg.lstsq(basis[:, :fit_len].T,
                           y[..., n - fit_len:].reshape(-1, fit_len).T, rcond=None)[0]
    ext = coef.T @ basis[:, fit_len:]
    pad = (-n_ext) % n
    wrap = np.pad(ext, ((0, 0), (0, pad))).reshape(ext.shape[0], -1, n).sum(axis=1)
    return y + wrap.reshape(y.shape)


def deconvolve(y: Trace, H: Spectrum, cfg: DeconvConfig | None = None) -> Trace:
    """Recovered anode estimate for fan-in record(s) ``y``.

    The output is real (the imaginary residue of the inverse transform is
    discarded, which is the same as enforcing conjugate symmetry).  When
    the DC bin of ``H`` is invalid and zeroed, the result is baseline
    restored with the mean of its first ``cfg.baseline_samples`` samples.
    """
    cfg = DeconvConfig() if cfg is None else cfg
    if y.n != H.n:
        raise ValueError(f"record length {y.n} does not match response length {H.n}")
    inv, dc_ok = inverse_filter(H, cfg, y.dt)
    ys = y.samples
    if cfg.tail_correction == "ringdown":
        poles = ringdown_poles(H)
        if poles is not None:
            ys = fold_ringdown(ys, poles, cfg.tail_fit_len)
    x = np.fft.ifft(np.fft.fft(ys, axis=-1) * inv, axis=-1).real
    if not dc_ok and cfg.baseline_samples > 0:
        x = x - x[..., :cfg.baseline_samples].mean(axis=-1, keepdims=True)
    return Trace(x, y.dt, y.t0)


@dataclass
class RecoveryReport:
    residual: Trace
    rms: float
    rms_pulse: float
    rms_baseline: float


def recovery_report(anode: Trace, recovered: Trace, *, baseline_samples: int = 92,
                    pulse_window: tuple[int, int] | None = None) -> RecoveryReport:
    """Residual statistics of ``anode - recovered``.

    The pulse window defaults to ``[peak - 6, peak + 114)`` around the
    anode's largest excursion; the baseline window is the first
    ``baseline_samples`` samples.
    """
    if anode.n != recovered.n or not np.isclose(anode.dt, recovered.dt):
        raise ValueError("traces must share length and dt")
    res = anode.samples - recovered.samples
    if pulse_window is None:
        k = int(np.argmax(np.abs(anode.samples - np.median(anode.samples))))
        pulse_window = (max(k - 6, 0), min(k + 114, anode.n))
    lo, hi = pulse_window

    def rms(a):
        return float(np.sqrt(np.mean(a ** 2))) if a.size else 0.0

    return RecoveryReport(Trace(res, anode.dt, anode.t0), rms(res), rms(res[..., lo:hi]),
                          rms(res[..., :baseline_samples]))


class Deconvolver(TransformerMixin, BaseEstimator):
    """Fan-in record to anode pulse transformer.

    Either pass a known ``response`` (a :class:`Spectrum`) or fit one from
    noise calibration records: ``fit(X, y)`` with ``X`` the fan-in output
    records and ``y`` the matching input (pass-through) records.
    ``transform(X)`` deconvolves fan-in records shaped ``(n_records, N)``.
    """

    def __init__(self, dt=2e-9, response=None, filter_order=4, cutoff_hz=180e6,
                 zero_phase=True, h_floor=1e-5, invalid_bin_policy="zero",
                 baseline_samples=92, tail_correction="ringdown", correlation="circular"):
        self.dt = dt
        self.response = response
        self.filter_order = filter_order
        self.cutoff_hz = cutoff_hz
        self.zero_phase = zero_phase
        self.h_floor = h_floor
        self.invalid_bin_policy = invalid_bin_policy
        self.baseline_samples = baseline_samples
        self.tail_correction = tail_correction
        self.correlation = correlation

    def _config(self):
        return DeconvConfig(FilterSpec(self.filter_order, self.cutoff_hz, zero_phase=self.zero_phase),
                            self.h_floor, self.invalid_bin_policy, self.baseline_samples,
                            self.tail_correction)

    def fit(self, X=None, y=None):
        cfg = self._config()
        cfg.filter.check_nyquist(self.dt)
        if self.response is not None:
            self.response_ = self.response
        else:
            if X is None or y is None:
                raise ValueError("fit needs calibration records X (output) and y (input) "
                                 "unless a response is given")
            est = ImpulseResponseEstimator(self.dt, mode=self.correlation).fit(y, X)
            self.response_ = est.response_
        self.config_ = cfg
        self.n_features_in_ = self.response_.n
        return self

    def transform(self, X):
        check_is_fitted(self, "response_")
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features_in_:
            raise ValueError(f"expected records of length {self.n_features_in_}, got {X.shape[-1]}")
        return deconvolve(Trace(X, self.dt), self.response_, self.config_).samples
