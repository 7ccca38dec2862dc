"""End-to-end service delay (uplink, M/G/1 queue plus execution, downlink) and
per-request feasibility against the allocation constraints.

Conventions: sizes in Mb, rates in Mbps, bandwidths in MHz, times in seconds.
SINR arrives in dB on the sample; the capacity and CQI formulas consume the
linear ratio ``10**(dB/10)``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

from .errors import ConfigError, InfeasibleRateError, InstabilityError, ValidationError
from .trace import ContextSample, ServiceRequest

CQI_COEFF = 0.5223
CQI_OFFSET = 4.6176
CQI_MAX = 15.0
MOMENT_TOL = 1e-9


@dataclass(frozen=True)
class ServiceClassParams:
    arrival_rate: float
    compute_capacity: float
    mean_service_time: float
    second_moment: float
    max_utilization: float = 0.8

    def __post_init__(self):
        if not self.arrival_rate > 0:
            raise ConfigError("arrival_rate must be > 0")
        if not self.compute_capacity > 0:
            raise ConfigError("compute_capacity must be > 0")
        if not self.mean_service_time >= 0:
            raise ConfigError("mean_service_time must be >= 0")
        if self.second_moment < self.mean_service_time ** 2 * (1 - MOMENT_TOL):
            raise ConfigError("second_moment must be >= mean_service_time**2")
        if not 0 < self.max_utilization <= 1:
            raise ConfigError("max_utilization must lie in (0, 1]")

    @property
    def squared_cv(self) -> float:
        """Var[S] / E[S]^2."""
        m = self.mean_service_time
        if m == 0:
            return 0.0
        return max(self.second_moment - m * m, 0.0) / (m * m)

    @classmethod
    def from_cv(cls, arrival_rate: float, compute_capacity: float, mean_service_time: float,
                squared_cv: float, max_utilization: float = 0.8) -> "ServiceClassParams":
        if squared_cv < 0:
            raise ConfigError("squared_cv must be >= 0")
        m = mean_service_time
        return cls(arrival_rate, compute_capacity, m, (1.0 + squared_cv) * m * m, max_utilization)

    def for_payload(self, upload_size: float) -> "ServiceClassParams":
        """Service-time moments for one request: E[S] = 1/mu with mu = lambda*alpha/gamma.

        The squared coefficient of variation of this class is preserved.
        """
        mu = service_rate(self, upload_size)
        if mu <= 0:
            raise InfeasibleRateError("zero payload gives an undefined service time")
        return ServiceClassParams.from_cv(self.arrival_rate, self.compute_capacity, 1.0 / mu,
                                          self.squared_cv, self.max_utilization)


@dataclass(frozen=True)
class LinkParams:
    uplink_bandwidth: float = 20.0  # MHz
    downlink_bandwidth: float = 20.0  # MHz
    cqi_coeff: float = CQI_COEFF
    cqi_offset: float = CQI_OFFSET
    min_cqi: float = 7.0

    def __post_init__(self):
        if not (self.uplink_bandwidth > 0 and self.downlink_bandwidth > 0):
            raise ConfigError("bandwidths must be > 0")
        if not 0 <= self.min_cqi <= CQI_MAX:
            raise ConfigError("min_cqi must lie in [0, 15]")


@dataclass(frozen=True)
class DelayBreakdown:
    uplink: float
    queue_wait: float
    execution: float
    downlink: float
    total: float

    @property
    def stable(self) -> bool:
        return math.isfinite(self.total)


def uplink_duration(upload_size: float, uplink_rate: float) -> float:
    if not uplink_rate > 0:
        raise InfeasibleRateError(f"uplink rate must be > 0, got {uplink_rate}")
    return upload_size / uplink_rate


def downlink_duration(download_size: float, downlink_rate: float) -> float:
    if not downlink_rate > 0:
        raise InfeasibleRateError(f"downlink rate must be > 0, got {downlink_rate}")
    return download_size / downlink_rate


def service_rate(params: ServiceClassParams, upload_size: float) -> float:
    """mu = lambda * alpha / gamma. Zero payload gives mu = 0 (undefined service time)."""
    return params.arrival_rate * upload_size / params.compute_capacity


@dataclass(frozen=True)
class Utilization:
    value: float
    unstable: bool

    def __float__(self):
        return self.value


def utilization(arrival_rate: float, rate: float, users: int = 1) -> Utilization:
    """omega = users * lambda / mu; values >= 1 are returned with ``unstable`` set."""
    if not rate > 0:
        raise ValidationError(f"service rate must be > 0, got {rate}")
    value = users * arrival_rate / rate
    return Utilization(value, value >= 1.0)


def pk_waiting_time(arrival_rate: float, second_moment: float, omega: float) -> float:
    """Pollaczek-Khinchin mean wait lambda*E[S^2] / (2(1 - omega))."""
    if omega >= 1:
        raise InstabilityError(f"utilization {omega} >= 1")
    return arrival_rate * second_moment / (2.0 * (1.0 - omega))


def execution_time(params: ServiceClassParams, omega: float) -> float:
    """(1 + (1 + C^2)/2 * omega/(1 - omega)) * E[S]; includes the queueing share."""
    if omega >= 1:
        raise InstabilityError(f"utilization {omega} >= 1")
    factor = 1.0 + 0.5 * (1.0 + params.squared_cv) * omega / (1.0 - omega)
    return factor * params.mean_service_time


def total_delay(uplink: float, queue_exec: float, downlink: float, *,
                service_time: float | None = None) -> DelayBreakdown:
    """Sum the three legs. ``queue_exec`` is the combined queue + execution term;
    when ``service_time`` is given it is split into wait and pure service parts.
    """
    for name, v in (("uplink", uplink), ("queue_exec", queue_exec), ("downlink", downlink)):
        if v < 0 or math.isnan(v):
            raise ValidationError(f"{name} delay must be >= 0, got {v}")
    if service_time is None:
        wait, exe = 0.0, queue_exec
    else:
        exe = min(service_time, queue_exec)
        wait = queue_exec - exe
    return DelayBreakdown(uplink, wait, exe, downlink, uplink + wait + exe + downlink)


def cqi_from_sinr(sinr_linear: float, link: LinkParams | None = None) -> float:
    """CQI estimate coeff * 10 * log2(sinr) + offset, clamped to [0, 15]."""
    if not sinr_linear > 0:
        raise ValidationError(f"linear SINR must be > 0, got {sinr_linear}")
    link = link or LinkParams()
    value = link.cqi_coeff * 10.0 * math.log2(sinr_linear) + link.cqi_offset
    return min(max(value, 0.0), CQI_MAX)


def shannon_capacity(bandwidth_mhz: float, sinr_linear: float) -> float:
    """Mbps, since 1 MHz * 1 bit/s/Hz = 1 Mbps."""
    return bandwidth_mhz * math.log2(1.0 + sinr_linear)


CONSTRAINT_NAMES = (
    "uplink_transfer",
    "downlink_transfer",
    "uplink_capacity",
    "downlink_capacity",
    "min_cqi",
    "delay_budget",
    "utilization_cap",
    "single_association",
)


@dataclass(frozen=True)
class ConstraintVerdict:
    uplink_transfer: bool
    downlink_transfer: bool
    uplink_capacity: bool
    downlink_capacity: bool
    min_cqi: bool
    delay_budget: bool
    utilization_cap: bool
    single_association: bool

    @property
    def flags(self) -> tuple[bool, ...]:
        return tuple(getattr(self, n) for n in CONSTRAINT_NAMES)

    @property
    def feasible(self) -> bool:
        return all(self.flags)

    def to_dict(self) -> dict[str, bool]:
        out = asdict(self)
        out["feasible"] = self.feasible
        return out


_REL = 1e-9


def check_constraints(request: ServiceRequest, sample: ContextSample,
                      allocation: tuple[float, float], delays: DelayBreakdown,
                      params: ServiceClassParams, link: LinkParams, *,
                      utilization: float,
                      association: Sequence[int] = (1,)) -> ConstraintVerdict:
    """Evaluate the eight allocation constraints for one request at one gNB.

    ``association`` is the request's 0/1 indicator vector over gNBs; the
    indicator for the evaluated gNB is taken as 1. Infeasibility is data,
    never an exception.
    """
    u, d = (float(v) for v in allocation)
    if not (math.isfinite(u) and math.isfinite(d)):
        raise ValidationError("allocation must be finite")
    sinr_lin = sample.sinr_linear

    def carried(size, rate, duration):
        # size must fit in rate * duration; durations are infinite when rate is zero
        return rate > 0 and math.isfinite(duration) and size <= rate * duration * (1 + _REL)

    return ConstraintVerdict(
        uplink_transfer=carried(request.upload_size, u, delays.uplink),
        downlink_transfer=carried(request.download_size, d, delays.downlink),
        uplink_capacity=shannon_capacity(link.uplink_bandwidth, sinr_lin) >= u,
        downlink_capacity=shannon_capacity(link.downlink_bandwidth, sinr_lin) >= d,
        min_cqi=cqi_from_sinr(sinr_lin, link) >= link.min_cqi,
        delay_budget=delays.total <= request.delay_budget,
        utilization_cap=utilization <= params.max_utilization,
        single_association=(all(a in (0, 1) for a in association)
                            and sum(association) == 1),
    )


@dataclass(frozen=True)
class RequestEvaluation:
    delays: DelayBreakdown
    utilization: float
    verdict: ConstraintVerdict
    pk_queue_wait: float
    stepwise_total: float  # uplink + P-K wait + execution + downlink, queue counted twice


def evaluate_request(request: ServiceRequest, sample: ContextSample,
                     allocation: tuple[float, float], params: ServiceClassParams,
                     link: LinkParams, *, users: int = 1,
                     association: Sequence[int] = (1,)) -> RequestEvaluation:
    """Batch-safe delay chain plus verdict: zero rates and unstable queues give
    infinite delays instead of raising.
    """
    u, d = (float(v) for v in allocation)
    up = request.upload_size / u if u > 0 else math.inf
    down = request.download_size / d if d > 0 else math.inf
    klass = params.for_payload(request.upload_size)
    omega = utilization(klass.arrival_rate, 1.0 / klass.mean_service_time, users).value
    if omega < 1:
        middle = execution_time(klass, omega)
        pk = pk_waiting_time(klass.arrival_rate, klass.second_moment, omega)
    else:
        middle = pk = math.inf
    if math.isfinite(middle):
        delays = total_delay(up if math.isfinite(up) else 0.0, middle,
                             down if math.isfinite(down) else 0.0,
                             service_time=klass.mean_service_time)
        if not (math.isfinite(up) and math.isfinite(down)):
            delays = DelayBreakdown(up, delays.queue_wait, delays.execution, down, math.inf)
    else:
        delays = DelayBreakdown(up, math.inf, klass.mean_service_time, down, math.inf)
    verdict = check_constraints(request, sample, (u, d), delays, klass, link,
                                utilization=omega, association=association)
    stepwise = up + pk + middle + down
    return RequestEvaluation(delays, omega, verdict, pk, stepwise)


def link_from_dict(data: Mapping) -> LinkParams:
    return LinkParams(**{k: float(v) for k, v in data.items()})


def service_from_dict(data: Mapping) -> ServiceClassParams:
    data = dict(data)
    if "squared_cv" in data:
        return ServiceClassParams.from_cv(
            float(data["arrival_rate"]), float(data["compute_capacity"]),
            float(data.get("mean_service_time", 1.0)), float(data["squared_cv"]),
            float(data.get("max_utilization", 0.8)))
    return ServiceClassParams(**{k: float(v) for k, v in data.items()})
