import numpy as np
import pytest

from tllfm.gibbs import ModelData
from tllfm.model import ModelState


@pytest.fixture
def rng():
    return np.random.default_rng(20161205)


def make_state(m=None, beta_S=None, beta_T=None, sigma2=None, F=None, zstar=None,
               phi_S=1.0, phi_T=1.0):
    P, K = np.shape(beta_S if beta_S is not None else m)
    m = np.zeros((P, K)) if m is None else m
    beta_S = m if beta_S is None else beta_S
    beta_T = beta_S if beta_T is None else beta_T
    sigma2 = np.ones(P) if sigma2 is None else sigma2
    return ModelState(m=m, beta_S=beta_S, beta_T=beta_T, sigma2=sigma2, F=F, zstar=zstar,
                      phi_S=phi_S, phi_T=phi_T)


def make_data(Z, binary=None, pop=None):
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    binary = np.zeros(Z.shape[1], bool) if binary is None else binary
    pop = np.zeros(Z.shape[0], np.int8) if pop is None else pop
    return ModelData(Z, binary, pop)


def within_mc(samples, expected, n_se=4.0):
    """Sample mean of each column within n_se Monte Carlo standard errors."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples[:, None]
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / np.sqrt(len(samples))
    z = np.abs(mean - np.asarray(expected)) / se
    assert np.all(z < n_se), f"z-scores {z} (mean {mean}, expected {expected})"


ACCEPTANCE_LINES: list[str] = []


def report_criterion(name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
