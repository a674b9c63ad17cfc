"""Pulse metrics and their statistics: charge, CFD timing, PSD, FOM, spectra.

Every per-pulse function accepts a single :class:`Trace`, a batch
``Trace`` with samples shaped ``(R, N)``, or a plain array together with
``dt``.  Batch inputs return result objects whose fields are arrays.

Pulses may be stored with either polarity; all metrics work on the
baseline-subtracted magnitude ``sign * (x - baseline)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.ndimage import uniform_filter1d
from scipy.optimize import curve_fit
from scipy.signal import find_peaks
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .detector import DEFAULT_CALIB
from .signal import Trace

FWHM_PER_SIGMA = 2.0 * np.sqrt(2.0 * np.log(2.0))

# energy ranges (keVee) for binned timing comparisons
TIMING_ENERGY_BINS = ((80, 150), (150, 200), (200, 300), (300, 400), (400, 500), (500, 600))


class FitError(RuntimeError):
    """A histogram fit did not converge or its input cannot be fitted."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def _samples(t, dt):
    if isinstance(t, Trace):
        return t.samples, t.dt
    x = np.asarray(t, dtype=float)
    if dt is None:
        raise ValueError("dt is required for plain arrays")
    return x, float(dt)


def _sign(polarity):
    if polarity in ("negative", -1):
        return -1.0
    if polarity in ("positive", 1):
        return 1.0
    raise ValueError(f"bad polarity {polarity!r}")


def magnitude(x, baseline_samples=92, polarity="negative"):
    """Baseline-subtracted pulse magnitude and the baseline used (volts)."""
    x = np.asarray(x, dtype=float)
    if not 1 <= baseline_samples <= x.shape[-1]:
        raise ValueError(f"baseline window of {baseline_samples} samples does not fit the record")
    base = x[..., :baseline_samples].mean(axis=-1)
    return _sign(polarity) * (x - base[..., None]), base


def _out(v):
    return v.item() if np.ndim(v) == 0 else v


# -- charge ------------------------------------------------------------------

@dataclass
class ChargeResult:
    charge_kevee: float | np.ndarray
    gate_start: int
    gate_len: int
    baseline: float | np.ndarray


def integrate_charge(t, gate_start: int, gate_len: int, calib: float = DEFAULT_CALIB, *,
                     dt: float | None = None, baseline_samples: int = 92,
                     polarity="negative") -> ChargeResult:
    """Area of the pulse within ``[gate_start, gate_start + gate_len)`` in keVee.

    ``calib`` is the pulse area per keVee in V*s.  The baseline is the mean
    of the first ``baseline_samples`` samples.
    """
    x, dt = _samples(t, dt)
    n = x.shape[-1]
    if gate_start < 0 or gate_len < 1 or gate_start + gate_len > n:
        raise ValueError(f"gate [{gate_start}, {gate_start + gate_len}) outside record of {n}")
    p, base = magnitude(x, baseline_samples, polarity)
    q = p[..., gate_start:gate_start + gate_len].sum(axis=-1) * dt / calib
    return ChargeResult(_out(q), gate_start, gate_len, _out(base))


# -- CFD ---------------------------------------------------------------------

@dataclass
class CfdResult:
    t_pickoff: float | np.ndarray
    fraction: float = 1.0
    delay: float = 7.2e-9
    valid: bool | np.ndarray = True


def _delayed(p, d):
    """``p(n - d)`` for a fractional delay ``d >= 0`` (linear interpolation,
    zero before the record start)."""
    k = int(np.floor(d))
    w = d - k
    out = np.zeros_like(p)
    if k < p.shape[-1]:
        out[..., k:] = (1 - w) * p[..., :p.shape[-1] - k]
        if w and k + 1 < p.shape[-1]:
            out[..., k + 1:] += w * p[..., :p.shape[-1] - k - 1]
    return out


def cfd_time(t, fraction: float = 1.0, delay: float = 7.2e-9, *, dt: float | None = None,
             threshold: float = 0.0, baseline_samples: int = 92, polarity="negative",
             interpolation: str = "linear") -> CfdResult:
    """Constant-fraction time pickoff.

    The bipolar signal is ``b(n) = fraction * p(n) - p(n - delay)`` with
    ``p`` the baseline-subtracted magnitude.  Starting from the maximum of
    ``b`` (on the pulse's leading edge) the first positive-to-negative
    crossing is located and refined between the two bracketing samples,
    linearly or with a local cubic.  Pulses whose peak magnitude is below
    ``threshold`` volts, or with no crossing, are marked invalid (NaN time).
    Times are absolute: ``t0 + index * dt``.
    """
    if interpolation not in ("linear", "cubic"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if not fraction > 0 or not delay > 0:
        raise ValueError("fraction and delay must be positive")
    t0 = t.t0 if isinstance(t, Trace) else 0.0
    x, dt = _samples(t, dt)
    p, _ = magnitude(np.atleast_2d(x), baseline_samples, polarity)
    b = fraction * p - _delayed(p, delay / dt)
    n = b.shape[-1]
    idx = np.arange(n - 1)
    start = np.argmax(b, axis=-1)
    cross = (b[:, :-1] >= 0) & (b[:, 1:] < 0) & (idx[None, :] >= start[:, None])
    found = cross.any(axis=-1)
    k = np.argmax(cross, axis=-1)
    rows = np.arange(b.shape[0])
    b0, b1 = b[rows, k], b[rows, k + 1]
    frac = np.where(found, b0 / np.where(found, b0 - b1, 1.0), 0.0)
    pos = k + frac
    if interpolation == "cubic":
        for i in np.flatnonzero(found):
            lo = max(k[i] - 1, 0)
            hi = min(k[i] + 3, n)
            if hi - lo < 4:
                continue
            cs = CubicSpline(np.arange(lo, hi), b[i, lo:hi])
            roots = cs.roots(extrapolate=False)
            roots = roots[(roots >= k[i]) & (roots <= k[i] + 1)]
            if roots.size:
                pos[i] = roots[0]
    valid = found & (p.max(axis=-1) >= threshold)
    tp = np.where(valid, t0 + pos * dt, np.nan)
    if np.ndim(x) == 1:
        return CfdResult(float(tp[0]), fraction, delay, bool(valid[0]))
    return CfdResult(tp, fraction, delay, valid)


def kevee_to_amplitude(energy_kevee: float, shape, dt: float, calib: float = DEFAULT_CALIB) -> float:
    """Peak magnitude (volts) of a pulse of the given shape and energy."""
    t = dt * np.arange(-20, 400) + 0.5 * dt
    fine = np.linspace(t[0], t[-1], 20 * t.size)
    return float(energy_kevee * calib * shape.unit_pulse(fine).max())


# -- PSD ---------------------------------------------------------------------

@dataclass
class PsdResult:
    q_short: float | np.ndarray
    q_long: float | np.ndarray
    ratio: float | np.ndarray
    classified: str | np.ndarray | None


def _psd_gates(p, pre=6, long_len=120):
    peak = np.argmax(p, axis=-1)
    start = peak - pre
    n = p.shape[-1]
    if np.any(start < 0) or np.any(start + long_len > n):
        raise ValueError("pulse too close to the record edge for the PSD gates")
    csum = np.concatenate([np.zeros(p.shape[:-1] + (1,)), np.cumsum(p, axis=-1)], axis=-1)
    return peak, start, csum


def psd_param(t, short_stop_offset: int, *, dt: float | None = None, calib: float = DEFAULT_CALIB,
              pre_peak: int = 6, long_len: int = 120, baseline_samples: int = 92,
              polarity="negative", threshold_kevee: float = 80.0,
              split: float | None = None) -> PsdResult:
    """Charge-integration discrimination parameter ``Q_S / Q_L``.

    ``Q_L`` integrates ``[peak - pre_peak, peak - pre_peak + long_len)`` and
    ``Q_S`` stops at ``peak + short_stop_offset``.  Pulses with
    ``Q_L < threshold_kevee`` are classified ``below_threshold``; otherwise
    ratios above ``split`` are gammas and the rest neutrons.  Without a
    ``split`` the classification of pulses above threshold is ``None``.
    """
    if not 0 <= short_stop_offset + pre_peak <= long_len:
        raise ValueError("short gate must end inside the long gate")
    x, dt = _samples(t, dt)
    p, _ = magnitude(np.atleast_2d(x), baseline_samples, polarity)
    peak, start, csum = _psd_gates(p, pre_peak, long_len)
    rows = np.arange(p.shape[0])
    q_long = (csum[rows, start + long_len] - csum[rows, start]) * dt / calib
    q_short = (csum[rows, peak + short_stop_offset] - csum[rows, start]) * dt / calib
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = q_short / q_long
    cls = np.full(p.shape[0], None, dtype=object)
    if split is not None:
        cls[:] = np.where(ratio > split, "gamma", "neutron")
    cls[q_long < threshold_kevee] = "below_threshold"
    if np.ndim(x) == 1:
        return PsdResult(float(q_short[0]), float(q_long[0]), float(ratio[0]), cls[0])
    return PsdResult(q_short, q_long, ratio, cls)


# -- histogram fits ----------------------------------------------------------

def gaussian(x, amplitude, mu, sigma):
    return amplitude * np.exp(-0.5 * ((x - mu) / sigma) ** 2)


@dataclass
class HistogramFit:
    bin_edges: np.ndarray
    counts: np.ndarray
    mu: float
    sigma: float
    amplitude: float
    mu_err: float = 0.0
    sigma_err: float = 0.0
    amplitude_err: float = 0.0
    window: tuple = (np.nan, np.nan)
    chi2_dof: float = np.nan
    n_events: int = 0
    poor: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def fwhm(self) -> float:
        return FWHM_PER_SIGMA * self.sigma

    @property
    def area(self) -> float:
        """Events under the fitted Gaussian."""
        width = np.diff(self.bin_edges).mean()
        return float(self.amplitude * self.sigma * np.sqrt(2 * np.pi) / width)

    @property
    def area_err(self) -> float:
        # amplitude and sigma errors combined in quadrature (covariance ignored)
        a = self.area
        if a == 0:
            return 0.0
        return float(a * np.hypot(self.amplitude_err / self.amplitude, self.sigma_err / self.sigma))

    def to_dict(self) -> dict:
        return {
            "mu": self.mu, "sigma": self.sigma, "amplitude": self.amplitude,
            "mu_err": self.mu_err, "sigma_err": self.sigma_err,
            "amplitude_err": self.amplitude_err, "fwhm": self.fwhm,
            "area": self.area, "area_err": self.area_err,
            "window": [float(w) for w in self.window], "chi2_dof": self.chi2_dof,
            "n_events": self.n_events, "poor": self.poor, **self.extra,
        }


def fit_gaussian_histogram(values, window=None, bins=None, *, min_events=10,
                           chi2_limit=3.0) -> HistogramFit:
    """Least-squares Gaussian fit to the histogram of ``values`` in ``window``.

    Counts are weighted by ``1/sqrt(max(count, 1))``.  ``bins`` defaults to
    a width of a fifth of the sample standard deviation.  The result is
    flagged ``poor`` (with a warning) when chi-square per degree of freedom
    exceeds ``chi2_limit``.
    """
    v = np.asarray(values, dtype=float).ravel()
    v = v[np.isfinite(v)]
    if window is None:
        med = np.median(v) if v.size else 0.0
        mad = 1.4826 * np.median(np.abs(v - med)) if v.size else 0.0
        spread = mad if mad > 0 else (v.std() if v.size else 0.0)
        window = (med - 5 * spread, med + 5 * spread)
    lo, hi = map(float, window)
    sel = v[(v >= lo) & (v <= hi)]
    if sel.size < min_events:
        raise ValueError(f"only {sel.size} events in window, need {min_events}")
    if not hi > lo:
        raise FitError("degenerate fit window", {"window": (lo, hi)})
    if bins is None:
        s = sel.std()
        bins = int(np.clip(np.ceil((hi - lo) / (0.2 * s)) if s > 0 else 1, 10, 400))
    counts, edges = np.histogram(sel, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    scale = hi - lo
    u = (centers - lo) / scale
    mu0 = (sel.mean() - lo) / scale
    s0 = max(sel.std() / scale, (edges[1] - edges[0]) / scale)
    err = np.sqrt(np.maximum(counts, 1.0))
    try:
        popt, pcov = curve_fit(gaussian, u, counts, p0=(counts.max(), mu0, s0), sigma=err,
                               absolute_sigma=True, maxfev=10000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"Gaussian fit did not converge: {exc}",
                       {"window": (lo, hi), "n_events": int(sel.size)}) from exc
    perr = np.sqrt(np.abs(np.diag(pcov)))
    if not np.all(np.isfinite(popt)):
        raise FitError("Gaussian fit returned non-finite parameters", {"popt": popt})
    dof = max(len(u) - 3, 1)
    chi2 = float(np.sum(((counts - gaussian(u, *popt)) / err) ** 2) / dof)
    mu, sigma = lo + popt[1] * scale, abs(popt[2]) * scale
    # a Gaussian wider than the window is just fitting a flat background
    poor = chi2 > chi2_limit or sigma > 0.5 * scale or not lo <= mu <= hi
    if poor:
        warnings.warn(f"poor Gaussian fit: chi2/dof = {chi2:.2f}, sigma = {sigma:.4g}",
                      stacklevel=2)
    return HistogramFit(edges, counts, mu, sigma, popt[0],
                        perr[1] * scale, perr[2] * scale, perr[0], (lo, hi), chi2,
                        int(sel.size), poor)


def fit_photopeak(charges, window, bins=None, *, min_events=1000, chi2_limit=3.0) -> HistogramFit:
    """Single-Gaussian photopeak fit of a charge spectrum (keVee)."""
    return fit_gaussian_histogram(charges, window, bins, min_events=min_events,
                                  chi2_limit=chi2_limit)


def photopeak_counts_agree(a: HistogramFit, b: HistogramFit, k: float = 2.0) -> bool:
    """Whether two fitted photopeak areas agree within ``k`` combined errors."""
    return abs(a.area - b.area) <= k * np.hypot(a.area_err, b.area_err)


def difference_stats(a, b, window=None, bins=None) -> HistogramFit:
    """Gaussian fit of the paired differences ``a - b``.

    Identical inputs give ``sigma = 0`` without fitting.  The paired values
    are kept in ``extra["scatter"]`` for scatter plots.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    ok = np.isfinite(a) & np.isfinite(b)
    d = a[ok] - b[ok]
    if d.size == 0:
        raise ValueError("no finite pairs")
    if np.ptp(d) == 0:
        mu = float(d[0])
        return HistogramFit(np.array([mu - 0.5, mu + 0.5]), np.array([d.size]), mu, 0.0,
                            float(d.size), window=(mu, mu), chi2_dof=0.0, n_events=int(d.size),
                            extra={"scatter": (a, b)})
    fit = fit_gaussian_histogram(d, window, bins)
    fit.extra.update(scatter=(a, b), mean=float(d.mean()), std=float(d.std(ddof=1)))
    return fit


def binned_difference_stats(a, b, energy, edges=TIMING_ENERGY_BINS, *, min_events=10):
    """:func:`difference_stats` per energy range; ranges with too few events
    map to ``None``."""
    a, b, e = (np.asarray(v, dtype=float).ravel() for v in (a, b, energy))
    out = {}
    for lo, hi in edges:
        m = (e >= lo) & (e < hi) & np.isfinite(a) & np.isfinite(b)
        if m.sum() < min_events:
            out[(lo, hi)] = None
            continue
        out[(lo, hi)] = difference_stats(a[m], b[m])
    return out


def coincidence_delta(t1, t2, window: float | None = None, bins=None) -> HistogramFit:
    """Fit of ``t1 - t2`` over records where both pickoffs are valid.

    Accepts two :class:`CfdResult` batches or two sequences of results or
    times.  Pairs with ``|t1 - t2| > window`` are dropped; the number of
    skipped pairs is reported in ``extra["unpaired"]``.
    """
    def unpack(t):
        if isinstance(t, CfdResult):
            return (np.atleast_1d(np.asarray(t.t_pickoff, dtype=float)),
                    np.atleast_1d(np.asarray(t.valid, dtype=bool)))
        items = list(t)
        if items and isinstance(items[0], CfdResult):
            return (np.array([r.t_pickoff for r in items], dtype=float),
                    np.array([r.valid for r in items], dtype=bool))
        v = np.asarray(items, dtype=float)
        return v, np.isfinite(v)

    a, va = unpack(t1)
    b, vb = unpack(t2)
    if a.shape != b.shape:
        raise ValueError(f"unequal record counts: {a.size} vs {b.size}")
    ok = va & vb
    d = np.where(ok, a - b, np.nan)
    if window is not None:
        ok &= np.abs(d) <= window
    fit = difference_stats(a[ok], b[ok], bins=bins)
    fit.extra["unpaired"] = int((~ok).sum())
    return fit


# -- FOM ---------------------------------------------------------------------

@dataclass
class FomResult:
    mu_gamma: float
    mu_neutron: float
    fwhm_gamma: float
    fwhm_neutron: float
    fom: float
    sigma_gamma: float = np.nan
    sigma_neutron: float = np.nan
    amplitude_gamma: float = np.nan
    amplitude_neutron: float = np.nan
    bin_edges: np.ndarray | None = None
    counts: np.ndarray | None = None

    @property
    def split(self) -> float:
        """Ratio where the two fitted Gaussian densities cross between the peaks."""
        lo, hi = self.mu_neutron, self.mu_gamma
        x = np.linspace(lo, hi, 2001)
        dn = gaussian(x, self.amplitude_neutron, self.mu_neutron, self.sigma_neutron)
        dg = gaussian(x, self.amplitude_gamma, self.mu_gamma, self.sigma_gamma)
        return float(x[np.argmin(np.abs(dn - dg))])

    def to_dict(self) -> dict:
        return {k: float(getattr(self, k)) for k in (
            "mu_gamma", "mu_neutron", "fwhm_gamma", "fwhm_neutron", "fom",
            "sigma_gamma", "sigma_neutron")}


def _two_gaussians(x, a1, m1, s1, a2, m2, s2):
    return gaussian(x, a1, m1, s1) + gaussian(x, a2, m2, s2)


def compute_fom(ratios, bins: int = 200, smooth: int = 3, quantiles=(0.002, 0.998),
                min_significance: float = 3.0) -> FomResult:
    """Figure of merit of a two-population discrimination parameter sample.

    The histogram spans the given quantiles (padded by 10 %) so that it
    moves with any positive affine map of the data.  It is smoothed with a
    ``smooth``-bin boxcar, the two most prominent local maxima seed a
    two-Gaussian least-squares fit, and ``FWHM = 2.3548 sigma``.  The lower
    peak is the neutron population.  A maximum counts as a peak only if its
    prominence exceeds ``min_significance`` times the Poisson error of the
    peak-to-dip difference.  Samples under ``20 * bins`` entries are binned
    more coarsely.
    """
    r = np.asarray(ratios, dtype=float).ravel()
    r = r[np.isfinite(r)]
    if r.size < 20:
        raise FitError("too few ratios for a two-peak fit", {"n": int(r.size)})
    q_lo, q_hi = np.quantile(r, quantiles)
    if not q_hi > q_lo:
        raise FitError("single peak: no spread in the discrimination parameter")
    pad = 0.1 * (q_hi - q_lo)
    lo, hi = q_lo - pad, q_hi + pad
    # small samples get coarser bins so each holds ~20 entries on average
    bins = min(bins, max(20, r.size // 20))
    counts, edges = np.histogram(r, bins=bins, range=(lo, hi))
    u = (0.5 * (edges[:-1] + edges[1:]) - lo) / (hi - lo)
    width = 1.0 / bins
    sm = uniform_filter1d(counts.astype(float), smooth, mode="constant")
    peaks, props = find_peaks(np.concatenate([[0.0], sm, [0.0]]), prominence=0)
    peaks = peaks - 1
    # Poisson error of the peak-to-dip difference
    dip = sm[peaks] - props["prominences"]
    err = np.sqrt(np.maximum(sm[peaks] + dip, 1.0) / smooth)
    sig = props["prominences"] >= min_significance * err
    peaks, props = peaks[sig], {"prominences": props["prominences"][sig]}
    if peaks.size < 2:
        raise FitError("single peak in the discrimination histogram",
                       {"peaks": peaks.tolist()})
    best = peaks[np.argsort(props["prominences"])[-2:]]
    i1, i2 = np.sort(best)
    s0 = max(0.25 * (u[i2] - u[i1]), width)
    p0 = (sm[i1], u[i1], s0, sm[i2], u[i2], s0)
    err = np.sqrt(np.maximum(counts, 1.0))
    bounds = ([0, 0, width * 1e-3, 0, 0, width * 1e-3], [np.inf, 1, 1, np.inf, 1, 1])
    try:
        popt, _ = curve_fit(_two_gaussians, u, counts, p0=p0, sigma=err, bounds=bounds,
                            maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        raise FitError(f"two-Gaussian fit did not converge: {exc}", {"p0": p0}) from exc
    (a1, m1, s1), (a2, m2, s2) = popt[:3], popt[3:]
    if m1 > m2:
        (a1, m1, s1), (a2, m2, s2) = (a2, m2, s2), (a1, m1, s1)
    span = hi - lo
    mu_n, mu_g = lo + m1 * span, lo + m2 * span
    sg_n, sg_g = s1 * span, s2 * span
    fwhm_n, fwhm_g = FWHM_PER_SIGMA * sg_n, FWHM_PER_SIGMA * sg_g
    fom = (mu_g - mu_n) / (fwhm_g + fwhm_n)
    if fom > 100:
        warnings.warn(f"peaks narrower than the histogram bins; FOM {fom:.3g} is a lower "
                      "bound on an unresolved limit", stacklevel=2)
    return FomResult(mu_g, mu_n, fwhm_g, fwhm_n, fom, sg_g, sg_n, a2, a1, edges, counts)


def fom_curve(pulses, offsets=range(21), *, dt: float | None = None, calib: float = DEFAULT_CALIB,
              threshold_kevee: float = 80.0, pre_peak: int = 6, long_len: int = 120,
              baseline_samples: int = 92, polarity="negative", bins: int = 200):
    """FOM for every short-gate stop offset; failed fits map to ``None``."""
    if isinstance(pulses, Trace):
        x, dt = pulses.samples, pulses.dt
    else:
        items = list(pulses) if not isinstance(pulses, np.ndarray) else pulses
        if len(items) and isinstance(items[0], Trace):
            dt = items[0].dt if dt is None else dt
            x = np.stack([t.samples for t in items])
        else:
            x = np.asarray(items, dtype=float)
    if dt is None:
        raise ValueError("dt is required for plain arrays")
    q_short, q_long = psd_charges(x, offsets, dt=dt, calib=calib, pre_peak=pre_peak,
                                  long_len=long_len, baseline_samples=baseline_samples,
                                  polarity=polarity)
    return fom_curve_from_charges(q_short, q_long, offsets, threshold_kevee, bins)


def psd_charges(x, offsets, *, dt, calib=DEFAULT_CALIB, pre_peak=6, long_len=120,
                baseline_samples=92, polarity="negative"):
    """``Q_S`` for every offset (columns) and ``Q_L`` for a pulse batch, keVee."""
    p, _ = magnitude(np.atleast_2d(np.asarray(x, dtype=float)), baseline_samples, polarity)
    peak, start, csum = _psd_gates(p, pre_peak, long_len)
    rows = np.arange(p.shape[0])
    q_long = (csum[rows, start + long_len] - csum[rows, start]) * dt / calib
    offs = np.asarray(list(offsets), dtype=int)
    if np.any(offs + pre_peak < 0) or np.any(offs + pre_peak > long_len):
        raise ValueError("short gates must end inside the long gate")
    q_short = (csum[rows[:, None], peak[:, None] + offs[None, :]]
               - csum[rows, start][:, None]) * dt / calib
    return q_short, q_long


def fom_curve_from_charges(q_short, q_long, offsets, threshold_kevee=80.0, bins=200):
    """FOM per offset from precomputed gate charges (see :func:`psd_charges`)."""
    q_short = np.atleast_2d(q_short)
    keep = np.isfinite(q_long) & (q_long >= threshold_kevee)
    curve = {}
    for j, off in enumerate(offsets):
        try:
            curve[int(off)] = compute_fom(q_short[keep, j] / q_long[keep], bins=bins)
        except FitError as exc:
            warnings.warn(f"short-gate offset {off} skipped: {exc}", stacklevel=2)
            curve[int(off)] = None
    return curve


def optimize_short_gate(pulses, labels=None, offsets=range(21), **kwargs):
    """Exhaustive search of the short-gate stop offset maximizing the FOM.

    ``labels`` are accepted for API symmetry and ignored: the FOM is fitted
    on the unlabeled mixture.  Returns ``(best_offset, curve)``.
    """
    curve = fom_curve(pulses, offsets, **kwargs)
    scored = {k: v.fom for k, v in curve.items() if v is not None}
    if not scored:
        raise FitError("no short-gate offset produced a two-peak fit")
    best = max(scored, key=lambda k: (scored[k], -k))
    return best, curve


class ShortGateOptimizer(TransformerMixin, BaseEstimator):
    """Pick the PSD short gate on a pulse batch, then map pulses to ratios.

    ``fit(X)`` runs :func:`optimize_short_gate` over ``offsets`` on records
    ``X`` shaped ``(n_records, N)``; ``transform(X)`` returns ``Q_S/Q_L``
    at the selected offset (NaN below threshold).
    """

    def __init__(self, dt=2e-9, offsets=tuple(range(21)), calib=DEFAULT_CALIB,
                 threshold_kevee=80.0, pre_peak=6, long_len=120, baseline_samples=92,
                 polarity="negative", bins=200):
        self.dt = dt
        self.offsets = offsets
        self.calib = calib
        self.threshold_kevee = threshold_kevee
        self.pre_peak = pre_peak
        self.long_len = long_len
        self.baseline_samples = baseline_samples
        self.polarity = polarity
        self.bins = bins

    def _kw(self):
        return dict(dt=self.dt, calib=self.calib, threshold_kevee=self.threshold_kevee,
                    pre_peak=self.pre_peak, long_len=self.long_len,
                    baseline_samples=self.baseline_samples, polarity=self.polarity)

    def fit(self, X, y=None):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        self.best_offset_, self.curve_ = optimize_short_gate(X, offsets=self.offsets,
                                                             bins=self.bins, **self._kw())
        self.fom_ = self.curve_[self.best_offset_]
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "best_offset_")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        res = psd_param(X, self.best_offset_, **self._kw())
        return np.where(res.q_long >= self.threshold_kevee, res.ratio, np.nan)
