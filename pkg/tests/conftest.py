import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from quantile_alloc import ArrivalSchedule, Instance, QueryType, RewardDist

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def single_type_instance(T=100, C=50.0, dist=None):
    dist = dist or RewardDist.uniform(1.0, 2.0)
    return Instance([QueryType(np.array([1.0]), dist)], ArrivalSchedule.stationary(T, [1.0]),
                    np.array([float(C)]))


def drift_types():
    return [
        QueryType(np.array([1.0, 0.0]), RewardDist.uniform(1.0, 2.0)),
        QueryType(np.array([0.0, 1.0]), RewardDist.triangular(1.0, 3.0, 0.5, 2.0, 3.5)),
        QueryType(np.array([1.0, 1.0]),
                  RewardDist.mixture(0.5, RewardDist.uniform(1.5, 3.0), RewardDist.uniform(2.5, 4.0))),
    ]


def drift_instance(T=200, rho=0.3):
    sched = ArrivalSchedule.generate("sinusoidal", T, 3, amplitude=0.5, cycles=1.0)
    return Instance(drift_types(), sched, np.floor(np.array([rho, rho]) * T))


@pytest.fixture
def drift():
    return drift_instance()
