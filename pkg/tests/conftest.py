import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from stftr.forward import TrialDataset
from stftr.stft import build_dictionary

settings.register_profile(
    "invariants", max_examples=100, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("invariants")


def centered_design(q, p, rng):
    X = np.ones((q, p))
    if p > 1:
        extra = rng.standard_normal((q, p - 1))
        X[:, 1:] = extra - extra.mean(axis=0)
    return X


def random_dataset(rng, q=5, n=3, m=4, T=8, p=2, T0=4, tau0=2, kind="hann2", scale=1.0):
    """Small random dataset together with its dictionary."""
    d = build_dictionary(T, T0, tau0, kind)
    G = rng.standard_normal((n, m))
    X = centered_design(q, p, rng)
    M = scale * rng.standard_normal((q, n, T))
    return TrialDataset(M, G, X), d


def random_coefs(rng, m, s, p, density=1.0):
    Z = rng.standard_normal((m, s, p)) + 1j * rng.standard_normal((m, s, p))
    if density < 1.0:
        Z *= rng.random((m, s, p)) < density
    return Z


def brute_predict(Z, data, d, r):
    """Dense triple loop over sources, components and covariates."""
    n, T = data.n, data.T
    m, s, p = Z.shape
    out = np.zeros((n, T))
    for i in range(m):
        series = np.zeros(T, complex)
        for k in range(p):
            for j in range(s):
                series += data.X[r, k] * Z[i, j, k] * d.dict[j]
        out += np.outer(data.G[:, i], series.real)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
