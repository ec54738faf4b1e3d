import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import strategies as st

from aggbounds.mdp_core import Mdp


def pytest_addoption(parser):
    parser.addoption("--allow-large", action="store_true", default=False,
                     help="run the full-scale patrol experiments")


def pytest_configure(config):
    config.addinivalue_line("markers", "large: full-scale run, needs --allow-large")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--allow-large"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --allow-large")
    for item in items:
        if "large" in item.keywords:
            item.add_marker(skip)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_mdp(rng, n=None, max_actions=3, discount=None, density=0.5, disturbances=False,
               uniform_actions=False):
    """Random MDP; every state gets 1..max_actions actions (the same number if ``uniform_actions``)."""
    n = n or int(rng.integers(1, 7))
    lam = float(rng.uniform(0.1, 0.95)) if discount is None else discount
    owner, acts = [], []
    k_all = int(rng.integers(1, max_actions + 1))
    for x in range(n):
        k = k_all if uniform_actions else int(rng.integers(1, max_actions + 1))
        owner += [x] * k
        acts += list(range(k))
    K = len(owner)
    R = rng.uniform(-1, 1, K)
    if disturbances:
        L = int(rng.integers(1, 4))
        p = rng.dirichlet(np.ones(L))
        succ = rng.integers(0, n, size=(K, L))
        return Mdp.from_disturbances(owner, acts, R, succ, p, lam, num_states=n)
    P = rng.uniform(size=(K, n)) * (rng.uniform(size=(K, n)) < density)
    P[np.arange(K), rng.integers(0, n, K)] += 0.1
    P /= P.sum(axis=1, keepdims=True)
    return Mdp(owner, acts, R, sp.csr_matrix(P), lam)


seeds = st.integers(0, 2 ** 32 - 1)


@pytest.fixture
def two_cycle():
    P = sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    return Mdp([0, 1], [0, 0], [1.0, 0.0], P, 0.5)
