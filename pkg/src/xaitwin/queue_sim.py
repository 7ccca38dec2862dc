"""Seeded discrete-event simulation of a FIFO single-server queue and of
Poisson-sized transfers. Used as an independent check on the analytic delay
formulas; nothing here calls into :mod:`xaitwin.delay`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QueueStats:
    mean_wait: float
    mean_service: float
    mean_sojourn: float
    busy_fraction: float
    arrivals: int


def _lindley(interarrival: np.ndarray, service: np.ndarray) -> tuple[np.ndarray, float]:
    """Waiting times of successive customers and the simulated horizon."""
    n = len(service)
    wait = np.empty(n)
    w = 0.0
    wait[0] = 0.0
    for i in range(1, n):
        w = w + service[i - 1] - interarrival[i]
        if w < 0.0:
            w = 0.0
        wait[i] = w
    horizon = float(interarrival.sum() + wait[-1] + service[-1])
    return wait, horizon


def simulate_mg1(arrival_rate: float, mean_service: float, n_arrivals: int = 100_000,
                 *, service: str = "exponential", seed: int = 0,
                 antithetic: bool = True) -> QueueStats:
    """Simulate ``n_arrivals`` Poisson arrivals through one FIFO server.

    ``service`` is ``"exponential"`` or ``"deterministic"``. With
    ``antithetic`` the arrivals are split into two runs driven by ``U`` and
    ``1 - U``, which lowers the variance of the estimate for the same budget.
    """
    if arrival_rate <= 0 or mean_service <= 0:
        raise ValueError("arrival_rate and mean_service must be positive")
    if service not in ("exponential", "deterministic"):
        raise ValueError(f"unknown service distribution {service!r}")
    rng = np.random.default_rng(seed)
    runs = 2 if antithetic else 1
    size = n_arrivals // runs
    u_arr = rng.random(size)
    u_srv = rng.random(size)
    streams = [(u_arr, u_srv)]
    if antithetic:
        streams.append((1.0 - u_arr, 1.0 - u_srv))

    waits, services, horizon, busy = [], [], 0.0, 0.0
    for ua, us in streams:
        inter = -np.log1p(-ua) / arrival_rate
        if service == "exponential":
            svc = -np.log1p(-us) * mean_service
        else:
            svc = np.full(size, mean_service)
        w, h = _lindley(inter, svc)
        waits.append(w)
        services.append(svc)
        horizon += h
        busy += float(svc.sum())
    wait = np.concatenate(waits)
    svc = np.concatenate(services)
    return QueueStats(
        mean_wait=float(wait.mean()),
        mean_service=float(svc.mean()),
        mean_sojourn=float((wait + svc).mean()),
        busy_fraction=busy / horizon,
        arrivals=len(wait),
    )


def simulate_transfers(size: float, rate: float, n_arrivals: int = 10_000, *,
                       arrival_rate: float = 1.0, unit: float = 0.01,
                       seed: int = 0) -> float:
    """Mean transfer duration for Poisson-arriving requests whose payload is a
    Poisson number of ``unit``-Mb blocks with mean ``size``.

    Each request is carried at ``rate`` Mbps on its own link.
    """
    if rate <= 0:
        raise ValueError("rate must be positive")
    rng = np.random.default_rng(seed)
    arrivals = np.cumsum(rng.exponential(1.0 / arrival_rate, n_arrivals))
    blocks = rng.poisson(size / unit, n_arrivals)
    departures = arrivals + blocks * unit / rate
    return float(np.mean(departures - arrivals))
