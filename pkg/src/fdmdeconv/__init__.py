"""Frequency-domain multiplexing of scintillator pulses: simulation,
deconvolution-based recovery, and anode-vs-recovered analysis."""

from .signal import (FilterSpec, Spectrum, Trace, convolve, cross_correlate, dft, idft,
                     apply_lowpass, band_power)
from .detector import (EventTruth, PulseShape, SourceSpec, GAMMA_SHAPE, NEUTRON_SHAPE,
                       CEBR3_SHAPE, sample_events, synth_pulse)
from .chain import (DigitizerSpec, FanInSpec, ResonatorSpec, analytic_response, front_end,
                    simulate_batch, simulate_record)
from .sysid import ImpulseResponseEstimator, estimate_impulse_response, whiten_check
from .deconv import DeconvConfig, Deconvolver, deconvolve, inverse_filter, recovery_report
from .analysis import (FitError, ShortGateOptimizer, cfd_time, compute_fom, fit_photopeak,
                       integrate_charge, psd_param)
from .io import RunConfig, RecordFile, CalibrationFile, load_config, save_config

__version__ = "0.1.0"
