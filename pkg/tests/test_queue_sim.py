import pytest

from oracles import md1_wait, mm1_wait
from xaitwin.delay import pk_waiting_time
from xaitwin.queue_sim import simulate_mg1, simulate_transfers


@pytest.mark.parametrize("omega", [0.3, 0.5, 0.7])
@pytest.mark.parametrize("service,second_moment", [("exponential", 2.0), ("deterministic", 1.0)])
def test_pk_matches_simulation(omega, service, second_moment):
    sim = simulate_mg1(omega, 1.0, n_arrivals=100_000, service=service, seed=0)
    analytic = pk_waiting_time(omega, second_moment, omega)
    assert sim.mean_wait == pytest.approx(analytic, rel=0.02)


def test_closed_forms_agree_with_pk():
    assert pk_waiting_time(0.6, 2.0, 0.6) == pytest.approx(mm1_wait(0.6, 1.0))
    assert pk_waiting_time(0.6, 1.0, 0.6) == pytest.approx(md1_wait(0.6, 1.0))


def test_simulation_basics():
    s = simulate_mg1(0.5, 1.0, n_arrivals=20_000, seed=3)
    assert s.arrivals == 20_000
    assert s.mean_sojourn == pytest.approx(s.mean_wait + s.mean_service)
    assert s.busy_fraction == pytest.approx(0.5, rel=0.05)
    d = simulate_mg1(0.5, 1.0, n_arrivals=2_000, service="deterministic", seed=3)
    assert d.mean_service == 1.0


def test_simulation_deterministic_and_validated():
    a = simulate_mg1(0.4, 1.0, n_arrivals=1000, seed=5)
    assert a == simulate_mg1(0.4, 1.0, n_arrivals=1000, seed=5)
    with pytest.raises(ValueError):
        simulate_mg1(0.0, 1.0)
    with pytest.raises(ValueError):
        simulate_mg1(0.5, 1.0, service="pareto")
    with pytest.raises(ValueError):
        simulate_transfers(1.0, 0.0)
