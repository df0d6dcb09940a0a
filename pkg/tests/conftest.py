import os
import sys
from fractions import Fraction

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from cfx.environments import gridworld as gw  # noqa: E402
from cfx.environments import replay as rp  # noqa: E402
from cfx.mmdp import MmdpSpec, PolicySet, compile_mmdp  # noqa: E402

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile(
    "thorough", max_examples=400, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def grid():
    return gw.build_gridworld()


@pytest.fixture(scope="session")
def grid_tau(grid):
    return rp.replay(rp.load_fixture(1), grid).trajectory


@pytest.fixture(scope="session")
def grid_queries(grid, grid_tau):
    return gw.standard_queries(grid, grid_tau)


def chain_model(n_states=2, horizon=2, row=(Fraction(3, 10), Fraction(7, 10))):
    """One agent with two actions; the next state ignores the action and follows ``row``."""
    states = list(range(n_states))
    acts = ("stay", "go")
    trans = {(s, (a,)): dict(zip(states, row)) for s in states for a in acts}
    mmdp = MmdpSpec(
        n=1,
        action_spaces=[acts],
        transition=trans,
        horizon=horizon,
        initial={0: 1},
        states=states,
        state_value=float,
        name="chain",
    )
    pi = PolicySet([{s: {"stay": Fraction(1, 2), "go": Fraction(1, 2)} for s in states}])
    return mmdp, pi, compile_mmdp(mmdp, pi)


def deterministic_model(horizon=2):
    """Two states, one agent; ``go`` moves to state 1, ``stay`` keeps the state; the policy always stays."""
    states = [0, 1]
    acts = ("stay", "go")
    trans = {(s, (a,)): {(1 if a == "go" else s): 1} for s in states for a in acts}
    mmdp = MmdpSpec(
        n=1,
        action_spaces=[acts],
        transition=trans,
        horizon=horizon,
        initial={0: 1},
        states=states,
        state_value=float,
        name="deterministic",
    )
    pi = PolicySet([{s: {"stay": 1} for s in states}])
    return mmdp, pi, compile_mmdp(mmdp, pi)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import summary_lines

    lines = summary_lines()
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
