"""Run configuration, binary record files and calibration files.

Record file layout (little-endian)::

    b"FDMREC" | version (u1) | header length (u4) | JSON header | records...

Every record is one fixed-size numpy structured element: ``index`` (u4),
one sample array per declared channel, ``n_truth`` (u1), ``truth``
(``max_truth`` entries of energy f8, arrival f8, species u1, detector u1)
and ``tags`` (i2 per declared tag, -1 when unset).  Channel samples are
integers; volts = integer * channel ``scale``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .chain import DigitizerSpec, FanInSpec, ResonatorSpec
from .deconv import DeconvConfig
from .detector import (CEBR3_SHAPE, DEFAULT_CALIB, GAMMA_SHAPE, NEUTRON_SHAPE, SPECIES,
                       EventTruth, PulseShape, SourceSpec)
from .signal import FilterSpec, Spectrum

MAGIC = b"FDMREC"
VERSION = 1
TRUTH_DTYPE = np.dtype([("energy", "<f8"), ("t_arrival", "<f8"),
                        ("species", "u1"), ("detector", "u1")])


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


class FormatError(ValueError):
    """A file is not a valid record/calibration file or does not match."""


# -- configuration -----------------------------------------------------------

@dataclass(frozen=True)
class AnalysisConfig:
    # fixed charge gate, in samples from the record start
    charge_gate_start: int = 94
    charge_gate_len: int = 120
    baseline_samples: int = 92
    polarity: str = "negative"
    cfd_fraction: float = 1.0
    cfd_delay: float = 7.2e-9
    cfd_threshold_kevee: float = 80.0
    cfd_interpolation: str = "linear"
    psd_pre_peak: int = 6
    psd_long_len: int = 120
    psd_offsets: tuple = (0, 20)
    psd_threshold_kevee: float = 80.0
    fom_bins: int = 200
    photopeak_window: tuple = (600.0, 730.0)
    coincidence_window: float = 20e-9

    def __post_init__(self):
        object.__setattr__(self, "psd_offsets", tuple(int(v) for v in self.psd_offsets))
        object.__setattr__(self, "photopeak_window",
                           tuple(float(v) for v in self.photopeak_window))
        if self.charge_gate_len < 1 or self.charge_gate_start < 0:
            raise ConfigError("charge gate must be non-empty and start inside the record")
        if self.cfd_interpolation not in ("linear", "cubic"):
            raise ConfigError(f"unknown CFD interpolation {self.cfd_interpolation!r}")
        lo, hi = self.psd_offsets
        if not 0 <= lo <= hi:
            raise ConfigError("psd_offsets must be an increasing (lo, hi) pair")


@dataclass(frozen=True)
class CalibrationConfig:
    n_records: int = 10000
    noise_rms: float = 0.02
    periodic: bool = True
    correlation: str = "circular"
    normalization: str = "biased"


def _default_resonators():
    return (ResonatorSpec(7.00e6, id=0), ResonatorSpec(15.25e6, id=1))


def _default_shapes():
    return {"gamma": GAMMA_SHAPE, "neutron": NEUTRON_SHAPE}


@dataclass(frozen=True)
class RunConfig:
    digitizer: DigitizerSpec = field(default_factory=DigitizerSpec)
    resonators: tuple = field(default_factory=_default_resonators)
    fanin: FanInSpec = field(default_factory=FanInSpec)
    separate_fanins: bool = False
    shapes: dict = field(default_factory=_default_shapes)
    calib: float = DEFAULT_CALIB
    source: SourceSpec = field(default_factory=SourceSpec)
    deconv: DeconvConfig = field(default_factory=DeconvConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    calibration: CalibrationConfig = field(default_factory=CalibrationConfig)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "resonators", tuple(self.resonators))
        f0s = [r.f0 for r in self.resonators]
        if not f0s:
            raise ConfigError("at least one resonator is required")
        if len(set(f0s)) != len(f0s):
            raise ConfigError("resonator frequencies must be pairwise distinct")
        if [r.id for r in self.resonators] != list(range(len(self.resonators))):
            raise ConfigError("resonator ids must be 0, 1, ... in list order")
        for d in self.source.detector_ids:
            if not 0 <= d < len(self.resonators):
                raise ConfigError(f"source references detector {d}, which has no resonator")
        for r in self.resonators:
            if not r.f0 < 0.5 * self.digitizer.sample_rate:
                raise ConfigError(f"resonator at {r.f0:g} Hz is above Nyquist")
        for s in self.shapes:
            if s not in SPECIES:
                raise ConfigError(f"unknown species {s!r} in shapes")
        if self.source.kind == "cf252_mixed" and "neutron" not in self.shapes:
            raise ConfigError("a mixed source needs a neutron pulse shape")
        n = len(self.resonators)
        if not self.separate_fanins and n > self.fanin.n_inputs:
            raise ConfigError(f"{n} resonators exceed {self.fanin.n_inputs} fan-in inputs")
        if not self.calib > 0:
            raise ConfigError("calib must be positive")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        try:
            self.deconv.filter.check_nyquist(self.digitizer.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.analysis.charge_gate_start + self.analysis.charge_gate_len > self.digitizer.record_len:
            raise ConfigError("charge gate extends past the record")
        if self.analysis.baseline_samples > self.digitizer.record_len:
            raise ConfigError("baseline window longer than the record")

    @property
    def n_detectors(self) -> int:
        return len(self.resonators)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {
            "digitizer": dataclasses.asdict(self.digitizer),
            "resonators": [dataclasses.asdict(r) for r in self.resonators],
            "fanin": dataclasses.asdict(self.fanin),
            "separate_fanins": self.separate_fanins,
            "shapes": {k: dataclasses.asdict(v) for k, v in self.shapes.items()},
            "calib": self.calib,
            "source": self.source.to_dict(),
            "deconv": dataclasses.asdict(self.deconv),
            "analysis": dataclasses.asdict(self.analysis),
            "calibration": dataclasses.asdict(self.calibration),
            "seed": self.seed,
        }
        return json.loads(json.dumps(d))

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {}
            if "digitizer" in d:
                kw["digitizer"] = _build(DigitizerSpec, d["digitizer"])
            if "resonators" in d:
                kw["resonators"] = tuple(_build(ResonatorSpec, r) for r in d["resonators"])
            if "fanin" in d:
                kw["fanin"] = _build(FanInSpec, d["fanin"])
            if "shapes" in d:
                kw["shapes"] = {k: _build(PulseShape, v) for k, v in d["shapes"].items()}
            if "source" in d:
                src = dict(d["source"])
                for key in ("arrival_window", "detector_ids"):
                    if key in src:
                        src[key] = tuple(src[key])
                kw["source"] = _build(SourceSpec, src)
            if "deconv" in d:
                dc = dict(d["deconv"])
                if "filter" in dc:
                    dc["filter"] = _build(FilterSpec, dc["filter"])
                kw["deconv"] = _build(DeconvConfig, dc)
            if "analysis" in d:
                kw["analysis"] = _build(AnalysisConfig, d["analysis"])
            if "calibration" in d:
                kw["calibration"] = _build(CalibrationConfig, d["calibration"])
            for key in ("separate_fanins", "calib", "seed"):
                if key in d:
                    kw[key] = d[key]
            return cls(**kw)
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def config_hash(self) -> str:
        return config_hash(self)


def _build(cls, d):
    if not isinstance(d, dict):
        raise ConfigError(f"{cls.__name__} must be a mapping")
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return cls(**d)


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=True)


def config_hash(cfg: RunConfig) -> str:
    """First 16 hex digits of the SHA-256 of the canonical config JSON."""
    return hashlib.sha256(canonical_json(cfg.to_dict()).encode()).hexdigest()[:16]


def save_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    return RunConfig.from_dict(d)


# preset used for the CeBr3 spectroscopy runs
CEBR3_SHAPES = {"gamma": CEBR3_SHAPE}

# organic scintillators show no Cs-137 photopeak and a broad Compton edge
EJ309_CS137 = {"p_photopeak": 0.0, "p_compton": 1.0, "sigma": 60.0}


def preset(name: str) -> RunConfig:
    """Named starting configurations for the standard measurements."""
    if name == "default":
        return RunConfig()
    if name == "ej309_cs137":
        return RunConfig(source=SourceSpec("cs137_gamma", energy_params=dict(EJ309_CS137)))
    if name == "cebr3":
        return RunConfig(shapes=dict(CEBR3_SHAPES), source=SourceSpec("cs137_gamma"))
    if name == "coincidence":
        return RunConfig(separate_fanins=True,
                         source=SourceSpec("na22_coincidence", detector_ids=(0, 1)))
    if name == "cf252":
        return RunConfig(source=SourceSpec("cf252_mixed"))
    raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")


PRESETS = ("default", "ej309_cs137", "cebr3", "coincidence", "cf252")


# -- record files --------------------------------------------------------------

@dataclass(frozen=True)
class Channel:
    name: str
    dtype: str = "<i2"
    scale: float = 1.0

    def to_dict(self):
        return {"name": self.name, "dtype": self.dtype, "scale": self.scale}


@dataclass
class RecordHeader:
    dt: float
    record_len: int
    channels: list
    config_hash: str = ""
    seed: int = 0
    max_truth: int = 2
    tags: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.channels = [c if isinstance(c, Channel) else Channel(**c) for c in self.channels]
        names = [c.name for c in self.channels]
        if len(set(names)) != len(names):
            raise FormatError("duplicate channel names")
        for c in self.channels:
            if np.dtype(c.dtype).kind != "i":
                raise FormatError(f"channel {c.name} must use a signed integer dtype")

    @property
    def channel_names(self) -> list:
        return [c.name for c in self.channels]

    def channel(self, name) -> Channel:
        for c in self.channels:
            if c.name == name:
                return c
        raise KeyError(f"missing channel {name!r}; file has {self.channel_names}")

    @property
    def record_dtype(self) -> np.dtype:
        fields = [("index", "<u4")]
        fields += [(c.name, c.dtype, (self.record_len,)) for c in self.channels]
        fields += [("n_truth", "u1"), ("truth", TRUTH_DTYPE, (self.max_truth,)),
                   ("tags", "<i2", (len(self.tags),))]
        return np.dtype(fields)

    def to_dict(self) -> dict:
        return {"dt": self.dt, "record_len": self.record_len,
                "channels": [c.to_dict() for c in self.channels],
                "config_hash": self.config_hash, "seed": self.seed,
                "max_truth": self.max_truth, "tags": list(self.tags), "meta": self.meta}

    def encode(self) -> bytes:
        blob = canonical_json(self.to_dict()).encode()
        return MAGIC + struct.pack("<BI", VERSION, len(blob)) + blob


def _read_header(fh) -> tuple[RecordHeader, int]:
    head = fh.read(len(MAGIC) + 5)
    if len(head) < len(MAGIC) + 5 or head[:len(MAGIC)] != MAGIC:
        raise FormatError("not a record file (bad magic)")
    version, length = struct.unpack("<BI", head[len(MAGIC):])
    if version != VERSION:
        raise FormatError(f"unsupported record file version {version}")
    blob = fh.read(length)
    if len(blob) != length:
        raise FormatError("truncated header")
    try:
        d = json.loads(blob)
        hdr = RecordHeader(**d)
    except (json.JSONDecodeError, TypeError) as exc:
        raise FormatError(f"corrupt header: {exc}") from exc
    return hdr, len(MAGIC) + 5 + length


class RecordWriter:
    """Append fixed-size records to a new file.  Use as a context manager."""

    def __init__(self, path, header: RecordHeader):
        self.path = Path(path)
        self.header = header
        self.dtype = header.record_dtype
        self._fh = None
        self.count = 0

    def __enter__(self):
        self._fh = open(self.path, "wb")
        self._fh.write(self.header.encode())
        return self

    def __exit__(self, *exc):
        self._fh.close()
        self._fh = None

    def empty(self, n: int) -> np.ndarray:
        """Zeroed record block with indices and unset tags filled in."""
        block = np.zeros(n, dtype=self.dtype)
        block["index"] = np.arange(self.count, self.count + n)
        block["tags"] = -1
        return block

    def write(self, block: np.ndarray) -> None:
        if block.dtype != self.dtype:
            raise FormatError("record block dtype does not match the header")
        self._fh.write(block.tobytes())
        self.count += len(block)


class RecordFile:
    """Read access to a record file (memory-mapped)."""

    def __init__(self, path):
        self.path = Path(path)
        with open(self.path, "rb") as fh:
            self.header, self.offset = _read_header(fh)
        size = os.path.getsize(self.path) - self.offset
        item = self.header.record_dtype.itemsize
        if size % item:
            raise FormatError(f"{path}: {size} data bytes is not a whole number of records")
        self.n_records = size // item
        if self.n_records:
            self._data = np.memmap(self.path, dtype=self.header.record_dtype, mode="r",
                                   offset=self.offset, shape=(self.n_records,))
        else:
            self._data = np.zeros(0, dtype=self.header.record_dtype)

    def __len__(self):
        return self.n_records

    @property
    def raw(self) -> np.ndarray:
        return self._data

    def volts(self, name, start=0, stop=None) -> np.ndarray:
        c = self.header.channel(name)
        return self._data[name][start:stop].astype(float) * c.scale

    def tag(self, name, start=0, stop=None) -> np.ndarray:
        i = self.header.tags.index(name)
        return np.asarray(self._data["tags"][start:stop, i])

    def truth(self, start=0, stop=None) -> list:
        """Per-record lists of :class:`EventTruth`."""
        blk = self._data[start:stop]
        out = []
        for rec in blk:
            evs = []
            for j in range(rec["n_truth"]):
                t = rec["truth"][j]
                evs.append(EventTruth(float(t["energy"]), float(t["t_arrival"]),
                                      SPECIES[int(t["species"])], int(t["detector"]),
                                      int(rec["index"])))
            out.append(evs)
        return out

    def truth_arrays(self, detector: int, start=0, stop=None):
        """Energy, arrival and species code of the event on ``detector`` in
        each record (NaN / -1 when absent)."""
        blk = self._data[start:stop]
        tr = blk["truth"]
        present = (np.arange(self.header.max_truth)[None, :] < blk["n_truth"][:, None]) \
            & (tr["detector"] == detector)
        has = present.any(axis=1)
        j = np.argmax(present, axis=1)
        rows = np.arange(len(blk))
        e = np.where(has, tr["energy"][rows, j], np.nan)
        t = np.where(has, tr["t_arrival"][rows, j], np.nan)
        s = np.where(has, tr["species"][rows, j].astype(int), -1)
        return e, t, s

    def chunks(self, size=1000):
        for i in range(0, self.n_records, size):
            yield i, min(i + size, self.n_records)


def fill_truth(block: np.ndarray, events_by_record) -> None:
    max_truth = block["truth"].shape[1]
    for i, evs in enumerate(events_by_record):
        if len(evs) > max_truth:
            raise FormatError(f"record holds {len(evs)} events, header allows {max_truth}")
        block["n_truth"][i] = len(evs)
        for j, ev in enumerate(evs):
            block["truth"][i, j] = (ev.energy_kevee, ev.t_arrival,
                                    SPECIES.index(ev.species), ev.detector_id)


# -- calibration files ---------------------------------------------------------

@dataclass
class CalibrationEntry:
    resonator_id: int
    response: Spectrum
    records_averaged: int


@dataclass
class CalibrationFile:
    record_len: int
    dt: float
    entries: list
    config_hash: str = ""
    meta: dict = field(default_factory=dict)

    def response(self, resonator_id: int) -> Spectrum:
        for e in self.entries:
            if e.resonator_id == resonator_id:
                return e.response
        raise KeyError(f"no calibration for resonator {resonator_id}")

    def to_dict(self) -> dict:
        return {
            "format": "fdm-calibration", "version": VERSION,
            "record_len": self.record_len, "dt": self.dt,
            "df": 1.0 / (self.record_len * self.dt),
            "config_hash": self.config_hash, "meta": self.meta,
            "entries": [{
                "resonator_id": e.resonator_id,
                "records_averaged": e.records_averaged,
                "re": e.response.bins.real.tolist(),
                "im": e.response.bins.imag.tolist(),
                "valid": e.response.valid.astype(int).tolist(),
            } for e in self.entries],
        }

    def save(self, path) -> None:
        Path(path).write_text(canonical_json(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationFile":
        try:
            d = json.loads(Path(path).read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise FormatError(f"{path}: not a calibration file ({exc})") from exc
        if not isinstance(d, dict) or d.get("format") != "fdm-calibration":
            raise FormatError(f"{path}: not a calibration file")
        if d.get("version") != VERSION:
            raise FormatError(f"unsupported calibration version {d.get('version')}")
        try:
            n, dt = int(d["record_len"]), float(d["dt"])
            entries = []
            for e in d["entries"]:
                re, im = np.asarray(e["re"], float), np.asarray(e["im"], float)
                valid = np.asarray(e["valid"], bool)
                if not re.size == im.size == valid.size == n:
                    raise FormatError(f"resonator {e['resonator_id']}: bin count does not "
                                      f"match record length {n}")
                entries.append(CalibrationEntry(int(e["resonator_id"]),
                                                Spectrum(re + 1j * im, 1.0 / (n * dt), valid),
                                                int(e["records_averaged"])))
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: malformed calibration file ({exc})") from exc
        return cls(n, dt, entries, d.get("config_hash", ""), d.get("meta", {}))
