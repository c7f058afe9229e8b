import time

import numpy as np
import pytest

from ovlasr.acoustic import OracleParams
from ovlasr.core import DEFAULT_VOCAB
from ovlasr.orchestrator import fit_oracle_head


@pytest.fixture(scope="session")
def vocab():
    return DEFAULT_VOCAB


@pytest.fixture(scope="session")
def noiseless():
    return OracleParams(noise_std=0.0, change_noise_std=0.0)


@pytest.fixture(scope="session")
def noiseless_head(noiseless, vocab):
    head, _ = fit_oracle_head(noiseless, vocab, seed=1)
    return head


@pytest.fixture(scope="session")
def degraded_head(vocab):
    head, _ = fit_oracle_head(OracleParams(), vocab, seed=1)
    return head


def unit(*v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


@pytest.fixture(scope="session")
def toy_recipe_run():
    """(result, scores, seconds) of the default toy recipe at seed 0."""
    from ovlasr.acoustic import ToyRecipe, run_toy_recipe
    t0 = time.perf_counter()
    res, scores = run_toy_recipe(ToyRecipe(), seed=0)
    return res, scores, time.perf_counter() - t0


# acceptance verdicts, repeated in the terminal summary so they survive output capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
