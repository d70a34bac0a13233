import numpy as np
import pytest
from hypothesis import strategies as st

from unisoft_lab.features import builtin_example
from unisoft_lab.mdp import NoiseModel, TabularMdp


@pytest.fixture(scope="session")
def appf():
    mdp, fms, model = builtin_example("appendix-f")
    return mdp, fms, model


def random_mdp(rng, S, A, H, noise="deterministic", sparse=False):
    reward = rng.random((H, S, A))
    trans = rng.random((H, S, A, S))
    if sparse:
        trans[trans < 0.5] = 0.0
        trans[..., 0] += 1e-3
    trans /= trans.sum(-1, keepdims=True)
    init = rng.random(S)
    init /= init.sum()
    return TabularMdp(reward, trans, init, NoiseModel(noise))


@st.composite
def small_mdps(draw, max_s=4, max_a=4, max_h=4):
    S = draw(st.integers(1, max_s))
    A = draw(st.integers(1, max_a))
    H = draw(st.integers(1, max_h))
    seed = draw(st.integers(0, 2 ** 32 - 1))
    sparse = draw(st.booleans())
    return random_mdp(np.random.default_rng(seed), S, A, H, sparse=sparse)


# --------------------------------------------------------------------------- acceptance report

_ACCEPTANCE = []


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call":
        return
    status = "PASS" if call.excinfo is None else "FAIL"
    detail = dict(item.user_properties).get("detail", "")
    _ACCEPTANCE.append(f"criterion {mark.args[0]}: {status}  {detail}".rstrip())


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
