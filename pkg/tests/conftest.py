import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as hst

from aoii import Scenario, Strategy, paper_scenario

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def paper_sym():
    return paper_scenario(1.0)


def random_strategy(rng: np.random.Generator, E: int, cls: str = "hybrid") -> Strategy:
    pi = rng.uniform(0.0, 1.0, size=(4, E + 1))
    pi[:, 0] = 0.0
    if cls == "reactive":
        pi[[0, 3]] = 0.0
    elif cls == "random":
        pi[:] = pi[0]
    return Strategy(pi, cls)


def random_scenario(rng: np.random.Generator, U=None, E=None) -> Scenario:
    return Scenario(
        num_devices=int(U if U is not None else rng.integers(1, 50)),
        battery_capacity=int(E if E is not None else rng.integers(1, 6)),
        q01=float(rng.uniform(0.001, 0.3)),
        q10=float(rng.uniform(0.001, 0.3)),
        gamma0=float(rng.uniform(0.01, 0.5)),
        gamma1=float(rng.uniform(0.01, 0.5)),
    )


@hst.composite
def scenarios(draw, max_devices=50, max_battery=5):
    prob = hst.floats(0.001, 0.3)
    harvest = hst.floats(0.01, 0.5)
    return Scenario(
        num_devices=draw(hst.integers(1, max_devices)),
        battery_capacity=draw(hst.integers(1, max_battery)),
        q01=draw(prob),
        q10=draw(prob),
        gamma0=draw(harvest),
        gamma1=draw(harvest),
    )


@hst.composite
def strategies_for(draw, E: int, cls: str = "hybrid"):
    seed = draw(hst.integers(0, 2**32 - 1))
    return random_strategy(np.random.default_rng(seed), E, cls)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
