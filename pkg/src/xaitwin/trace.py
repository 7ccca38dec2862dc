"""Trace ingest: typed samples, column mapping, CSV parsing and a synthetic generator.

All values are converted to canonical units at this boundary: Mbps for
rates, seconds, km/h, dBm for RSRP and dB for RSRQ/SINR.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .errors import ConfigError, ValidationError

CANONICAL_FIELDS = (
    "timestamp",
    "speed",
    "rsrp",
    "rsrq",
    "sinr",
    "cqi",
    "uplink_rate",
    "downlink_rate",
)
FEATURE_FIELDS = ("speed", "rsrp", "rsrq", "sinr", "cqi")
CQI_MAX = 15


class FieldError(ValidationError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name
        self.message = message


@dataclass(frozen=True)
class ContextSample:
    """One session observation: context tuple, observed rates and serving gNB."""

    timestamp: float
    speed: float
    rsrp: float
    rsrq: float
    sinr: float  # dB
    cqi: int
    uplink_rate: float
    downlink_rate: float
    gnb_id: int = 0

    def __post_init__(self):
        for name in CANONICAL_FIELDS:
            if not math.isfinite(getattr(self, name)):
                raise FieldError(name, "not finite")
        if not 0 <= self.cqi <= CQI_MAX:
            raise FieldError("cqi", "cqi out of range")
        if self.speed < 0:
            raise FieldError("speed", "negative speed")
        if self.uplink_rate < 0:
            raise FieldError("uplink_rate", "negative rate")
        if self.downlink_rate < 0:
            raise FieldError("downlink_rate", "negative rate")
        if self.gnb_id < 0:
            raise FieldError("gnb_id", "negative gnb id")

    @property
    def sinr_linear(self) -> float:
        return 10.0 ** (self.sinr / 10.0)

    @property
    def features(self) -> tuple[float, float, float, float, float]:
        """Features in regression column order: speed, RSRP, RSRQ, SINR (dB), CQI."""
        return (self.speed, self.rsrp, self.rsrq, self.sinr, float(self.cqi))

    @property
    def rates(self) -> tuple[float, float]:
        return (self.uplink_rate, self.downlink_rate)

    def check_gnb(self, num_gnbs: int) -> None:
        if self.gnb_id >= num_gnbs:
            raise FieldError("gnb_id", f"gnb_id {self.gnb_id} >= {num_gnbs} configured gNBs")


@dataclass(frozen=True)
class ServiceRequest:
    """Per-user demand. Sizes in Mb, delay in seconds, rates in Mbps."""

    service_id: int
    user_id: int
    upload_size: float
    download_size: float
    delay_budget: float
    required_uplink: float
    required_downlink: float

    def __post_init__(self):
        for name in ("upload_size", "download_size", "delay_budget",
                     "required_uplink", "required_downlink"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise FieldError(name, "must be strictly positive")
        if self.service_id < 0 or self.user_id < 0:
            raise FieldError("service_id", "indices must be non-negative")


@dataclass
class ColumnMapping:
    """Maps canonical field names to source CSV columns, with unit scales.

    ``scales[name]`` multiplies the raw cell value, e.g. 0.001 for kbps to Mbps.
    ``gnb_mode`` is ``"label"`` (use ``gnb_column``, indexed by first
    appearance) or ``"round_robin"`` (row index modulo the gNB count).
    """

    columns: dict[str, str]
    scales: dict[str, float] = field(default_factory=dict)
    gnb_column: str | None = None
    gnb_mode: str = "label"
    timestamp_format: str | None = None

    def __post_init__(self):
        missing = [f for f in CANONICAL_FIELDS if f not in self.columns]
        unknown = [f for f in self.columns if f not in CANONICAL_FIELDS]
        if missing:
            raise ConfigError(f"mapping missing canonical fields: {missing}")
        if unknown:
            raise ConfigError(f"mapping has unknown canonical fields: {unknown}")
        sources = list(self.columns.values())
        dupes = sorted({s for s in sources if sources.count(s) > 1})
        if dupes:
            raise ConfigError(f"source columns mapped more than once: {dupes}")
        for name, scale in self.scales.items():
            if name not in CANONICAL_FIELDS:
                raise ConfigError(f"scale for unknown field {name!r}")
            if not (math.isfinite(scale) and scale != 0):
                raise ConfigError(f"scale for {name!r} must be finite and nonzero")
        if self.gnb_mode not in ("label", "round_robin"):
            raise ConfigError(f"unknown gnb_mode {self.gnb_mode!r}")
        if self.gnb_mode == "label" and self.gnb_column is None:
            raise ConfigError("gnb_mode 'label' requires gnb_column")

    def scale(self, name: str) -> float:
        return self.scales.get(name, 1.0)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ColumnMapping":
        if "columns" not in data:
            raise ConfigError("mapping section needs a 'columns' table")
        gnb_column = data.get("gnb_column")
        return cls(
            columns=dict(data["columns"]),
            scales={k: float(v) for k, v in data.get("scales", {}).items()},
            gnb_column=gnb_column,
            gnb_mode=data.get("gnb_mode", "label" if gnb_column else "round_robin"),
            timestamp_format=data.get("timestamp_format"),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"columns": dict(self.columns), "scales": dict(self.scales),
                               "gnb_mode": self.gnb_mode}
        if self.gnb_column is not None:
            out["gnb_column"] = self.gnb_column
        if self.timestamp_format is not None:
            out["timestamp_format"] = self.timestamp_format
        return out


def bitrate_schema_mapping() -> ColumnMapping:
    """Mapping for traces with kbps ``DL_bitrate``/``UL_bitrate`` and a ``CellID`` column."""
    return ColumnMapping(
        columns={
            "timestamp": "Timestamp",
            "speed": "Speed",
            "rsrp": "RSRP",
            "rsrq": "RSRQ",
            "sinr": "SNR",
            "cqi": "CQI",
            "uplink_rate": "UL_bitrate",
            "downlink_rate": "DL_bitrate",
        },
        scales={"uplink_rate": 1e-3, "downlink_rate": 1e-3},
        gnb_column="CellID",
        gnb_mode="label",
        timestamp_format="%Y.%m.%d_%H.%M.%S",
    )


def canonical_mapping() -> ColumnMapping:
    """Identity mapping used by :func:`write_trace` for synthetic traces."""
    return ColumnMapping(columns={f: f for f in CANONICAL_FIELDS},
                         gnb_column="gnb_id", gnb_mode="label")


@dataclass(frozen=True)
class RowError:
    row: int  # 1-based data row index (header excluded)
    field: str
    message: str


@dataclass
class ParsedTrace:
    samples: list[ContextSample]
    errors: list[RowError]
    rows: int

    def __iter__(self):
        return iter(self.samples)

    def __len__(self):
        return len(self.samples)


def _parse_timestamp(cell: str, fmt: str | None) -> float:
    try:
        return float(cell)
    except ValueError:
        if fmt is None:
            raise
    dt = datetime.strptime(cell, fmt).replace(tzinfo=timezone.utc)
    return dt.timestamp()


def parse_trace(path: str | Path, mapping: ColumnMapping,
                num_gnbs: int | None = None) -> ParsedTrace:
    """Parse a CSV trace into samples; malformed rows become :class:`RowError` entries.

    Raises :class:`ConfigError` if the file lacks a mapped column.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"trace file not found: {path}")
    samples: list[ContextSample] = []
    errors: list[RowError] = []
    cell_index: dict[str, int] = {}
    rows = 0
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        needed = list(mapping.columns.values())
        if mapping.gnb_mode == "label":
            needed.append(mapping.gnb_column)
        missing = [c for c in needed if c not in header]
        if missing:
            raise ConfigError(f"trace header lacks mapped columns: {missing}")
        for rows, raw in enumerate(reader, start=1):
            values: dict[str, Any] = {}
            bad: RowError | None = None
            for name, column in mapping.columns.items():
                cell = (raw.get(column) or "").strip()
                try:
                    if name == "timestamp":
                        value = _parse_timestamp(cell, mapping.timestamp_format)
                    else:
                        value = float(cell) * mapping.scale(name)
                except ValueError:
                    bad = RowError(rows, name, f"unparseable value {cell!r}")
                    break
                if name == "cqi":
                    if not value.is_integer():
                        bad = RowError(rows, name, "cqi not an integer")
                        break
                    value = int(value)
                values[name] = value
            label = None
            if bad is None:
                if mapping.gnb_mode == "label":
                    label = (raw.get(mapping.gnb_column) or "").strip()
                    if not label:
                        bad = RowError(rows, "gnb_id", "missing gNB label")
                    else:
                        # only accepted rows claim a new index
                        values["gnb_id"] = cell_index.get(label, len(cell_index))
                else:
                    values["gnb_id"] = (rows - 1) % (num_gnbs or 1)
            if bad is None:
                try:
                    sample = ContextSample(**values)
                    if num_gnbs is not None:
                        sample.check_gnb(num_gnbs)
                except FieldError as exc:
                    bad = RowError(rows, exc.field, exc.message)
                else:
                    samples.append(sample)
                    if label is not None:
                        cell_index.setdefault(label, sample.gnb_id)
            if bad is not None:
                errors.append(bad)
    return ParsedTrace(samples=samples, errors=errors, rows=rows)


def write_trace(samples: Iterable[ContextSample], path: str | Path,
                mapping: ColumnMapping | None = None) -> None:
    """Write samples as CSV, inverting the mapping's unit scales."""
    mapping = mapping or canonical_mapping()
    header = [mapping.columns[f] for f in CANONICAL_FIELDS]
    if mapping.gnb_column is not None:
        header.append(mapping.gnb_column)
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in samples:
            row = []
            for name in CANONICAL_FIELDS:
                value = getattr(s, name)
                if name == "cqi":
                    row.append(str(value))
                else:
                    row.append(repr(float(value) / mapping.scale(name)))
            if mapping.gnb_column is not None:
                row.append(str(s.gnb_id))
            writer.writerow(row)


# --- synthetic generator ---------------------------------------------------

def _range(data: Mapping[str, Any], key: str, default: tuple[float, float]) -> tuple[float, float]:
    lo, hi = (float(v) for v in data.get(key, default))
    if not (math.isfinite(lo) and math.isfinite(hi)) or hi <= lo:
        raise ConfigError(f"empty or invalid range for {key}: [{lo}, {hi}]")
    return lo, hi


@dataclass
class GeneratorConfig:
    """Parameters of the synthetic trace generator.

    Rates are an exact linear map of the features (``coefficients``, rows
    intercept/speed/RSRP/RSRQ/SINR/CQI, columns uplink/downlink) plus uniform
    noise bounded by ``noise``.
    """

    n_samples: int = 2206
    num_gnbs: int = 5
    speed_range: tuple[float, float] = (0.0, 120.0)
    rsrp_range: tuple[float, float] = (-115.0, -65.0)
    rsrq_range: tuple[float, float] = (-20.0, -3.0)
    sinr_range: tuple[float, float] = (-5.0, 30.0)
    cqi_range: tuple[float, float] = (0.0, 15.0)
    # dB offsets applied to RSRP and SINR per gNB; drawn from gnb_offset_range when None
    gnb_offsets: tuple[float, ...] | None = None
    gnb_offset_range: tuple[float, float] = (-12.0, 4.0)
    # downlink grows about 3.2 Mbps per SINR dB, staying under 20 MHz Shannon
    # capacity above ~7 dB and exceeding it in poor coverage
    coefficients: tuple[tuple[float, float], ...] = (
        (2.2, 38.0),
        (-0.004, -0.05),
        (0.012, 0.1),
        (0.01, 0.3),
        (0.015, 2.5),
        (0.03, 1.5),
    )
    noise: tuple[float, float] = (0.02, 1.0)
    time_step: float = 1.0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ConfigError("n_samples must be >= 1")
        if self.num_gnbs < 1:
            raise ConfigError("num_gnbs must be >= 1")
        for key in ("speed_range", "rsrp_range", "rsrq_range", "sinr_range",
                    "cqi_range", "gnb_offset_range"):
            lo, hi = getattr(self, key)
            if not hi > lo:
                raise ConfigError(f"empty or invalid range for {key}: [{lo}, {hi}]")
        if self.speed_range[0] < 0:
            raise ConfigError("speed_range must be non-negative")
        if self.cqi_range[0] < 0 or self.cqi_range[1] > CQI_MAX:
            raise ConfigError("cqi_range must lie within [0, 15]")
        coef = np.asarray(self.coefficients, dtype=float)
        if coef.shape != (len(FEATURE_FIELDS) + 1, 2):
            raise ConfigError(f"coefficients must be 6x2, got {coef.shape}")
        if any(n < 0 for n in self.noise):
            raise ConfigError("noise amplitudes must be non-negative")
        if self.gnb_offsets is not None and len(self.gnb_offsets) != self.num_gnbs:
            raise ConfigError("gnb_offsets length must equal num_gnbs")
        # the map is linear, so its minimum over the feature box sits at a corner
        lows = np.array([self.speed_range[0], self.rsrp_range[0], self.rsrq_range[0],
                         self.sinr_range[0], self.cqi_range[0]])
        highs = np.array([self.speed_range[1], self.rsrp_range[1], self.rsrq_range[1],
                          self.sinr_range[1], self.cqi_range[1]])
        floor = coef[0] + np.minimum(coef[1:] * lows[:, None], coef[1:] * highs[:, None]).sum(axis=0)
        if np.any(floor - np.asarray(self.noise) < 0):
            raise ConfigError("coefficients and noise allow negative rates inside the feature box")

    @property
    def coefficient_matrix(self) -> np.ndarray:
        return np.asarray(self.coefficients, dtype=float)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "GeneratorConfig":
        base = cls.__dataclass_fields__
        kwargs: dict[str, Any] = {}
        for key in ("speed_range", "rsrp_range", "rsrq_range", "sinr_range",
                    "cqi_range", "gnb_offset_range"):
            if key in data:
                kwargs[key] = _range(data, key, (0.0, 0.0))
        for key in ("n_samples", "num_gnbs"):
            if key in data:
                kwargs[key] = int(data[key])
        if "time_step" in data:
            kwargs["time_step"] = float(data["time_step"])
        if "gnb_offsets" in data:
            kwargs["gnb_offsets"] = tuple(float(v) for v in data["gnb_offsets"])
        if "coefficients" in data:
            kwargs["coefficients"] = tuple(tuple(float(v) for v in row) for row in data["coefficients"])
        if "noise" in data:
            kwargs["noise"] = tuple(float(v) for v in data["noise"])
        unknown = set(data) - set(base)
        if unknown:
            raise ConfigError(f"unknown generator keys: {sorted(unknown)}")
        return cls(**kwargs)

    def offsets(self, rng: np.random.Generator) -> np.ndarray:
        if self.gnb_offsets is not None:
            return np.asarray(self.gnb_offsets, dtype=float)
        return rng.uniform(*self.gnb_offset_range, size=self.num_gnbs)


def synthesize_trace(config: GeneratorConfig, seed: int) -> list[ContextSample]:
    """Deterministic synthetic trace (numpy PCG64 seeded with ``seed``).

    gNB ids are assigned round-robin; each gNB shifts RSRP and SINR by its own
    offset so the arms are distinguishable.
    """
    rng = np.random.default_rng(seed)
    n = config.n_samples
    offsets = config.offsets(rng)
    gnb = np.arange(n) % config.num_gnbs

    def clip(x, bounds):
        return np.clip(x, bounds[0], bounds[1])

    speed = rng.uniform(*config.speed_range, size=n)
    rsrp_mid = 0.5 * sum(config.rsrp_range)
    rsrp = clip(rng.uniform(*config.rsrp_range, size=n) - 0.05 * speed + offsets[gnb],
                config.rsrp_range)
    sinr = clip(12.0 + 0.45 * (rsrp - rsrp_mid) + offsets[gnb] + rng.normal(0.0, 3.0, size=n),
                config.sinr_range)
    rsrq = clip(-11.0 + 0.15 * (rsrp - rsrp_mid) + rng.normal(0.0, 1.5, size=n),
                config.rsrq_range)
    cqi = np.rint(clip(0.45 * sinr + 4.0 + rng.normal(0.0, 1.0, size=n), config.cqi_range))
    cqi = clip(cqi, (math.ceil(config.cqi_range[0]), math.floor(config.cqi_range[1])))

    design = np.column_stack([np.ones(n), speed, rsrp, rsrq, sinr, cqi])
    rates = design @ config.coefficient_matrix
    noise = np.asarray(config.noise)
    rates = rates + rng.uniform(-1.0, 1.0, size=(n, 2)) * noise

    return [
        ContextSample(
            timestamp=i * config.time_step,
            speed=float(speed[i]),
            rsrp=float(rsrp[i]),
            rsrq=float(rsrq[i]),
            sinr=float(sinr[i]),
            cqi=int(cqi[i]),
            uplink_rate=float(rates[i, 0]),
            downlink_rate=float(rates[i, 1]),
            gnb_id=int(gnb[i]),
        )
        for i in range(n)
    ]


@dataclass
class RequestConfig:
    """Ranges for per-session IoE demands; required rates come from the observed rates."""

    num_services: int = 3
    upload_range: tuple[float, float] = (0.5, 4.0)
    download_range: tuple[float, float] = (200.0, 400.0)
    delay_range: tuple[float, float] = (8.0, 30.0)
    rate_floor: float = 1e-3

    def __post_init__(self):
        if self.num_services < 1:
            raise ConfigError("num_services must be >= 1")
        for key in ("upload_range", "download_range", "delay_range"):
            lo, hi = getattr(self, key)
            if not (lo > 0 and hi >= lo):
                raise ConfigError(f"invalid range for {key}: [{lo}, {hi}]")
        if self.rate_floor <= 0:
            raise ConfigError("rate_floor must be positive")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RequestConfig":
        kwargs: dict[str, Any] = {}
        for key in ("upload_range", "download_range", "delay_range"):
            if key in data:
                kwargs[key] = tuple(float(v) for v in data[key])
        if "num_services" in data:
            kwargs["num_services"] = int(data["num_services"])
        if "rate_floor" in data:
            kwargs["rate_floor"] = float(data["rate_floor"])
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown request keys: {sorted(unknown)}")
        return cls(**kwargs)


def synthesize_requests(samples: Sequence[ContextSample], config: RequestConfig,
                        seed: int) -> list[ServiceRequest]:
    """One request per session, user id = session index."""
    rng = np.random.default_rng(seed)
    n = len(samples)
    alpha = rng.uniform(*config.upload_range, size=n)
    beta = rng.uniform(*config.download_range, size=n)
    tau = rng.uniform(*config.delay_range, size=n)
    return [
        ServiceRequest(
            service_id=i % config.num_services,
            user_id=i,
            upload_size=float(alpha[i]),
            download_size=float(beta[i]),
            delay_budget=float(tau[i]),
            required_uplink=max(s.uplink_rate, config.rate_floor),
            required_downlink=max(s.downlink_rate, config.rate_floor),
        )
        for i, s in enumerate(samples)
    ]
