import numpy as np
import pytest

from ecosom import pipeline, synthetic
from ecosom.telemetry import from_arrays


def make_session(n=512, rate=32.0, vs=80.0, pgp=30.0, erpm=2000.0, gp=10.0, bp=0.0, xacc=0.0,
                 driver="d", session="s"):
    t = np.arange(n) / rate
    full = lambda v: np.broadcast_to(np.asarray(v, dtype=float), (n,)).copy()
    return from_arrays(driver, session, t, rate_hz=rate, vs=full(vs), pgp=full(pgp), erpm=full(erpm),
                       gp=full(gp), bp=full(bp), xacc=full(xacc))


@pytest.fixture(scope="session")
def three_blob_set():
    return synthetic.three_blobs(per_blob=100, seed=0)


@pytest.fixture(scope="session")
def five_blob_set():
    return synthetic.five_blobs(per_blob=100, seed=0)


@pytest.fixture(scope="session")
def three_blob_fit(three_blob_set):
    return pipeline.fit(three_blob_set.windows, 3, seed=0)


@pytest.fixture(scope="session")
def five_blob_fit(five_blob_set):
    return pipeline.fit(five_blob_set.windows, 5, seed=0)


@pytest.fixture(scope="session")
def fleet_fit():
    windows = pipeline.fleet_windows(synthetic.fleet(2, 300, seed=0))
    model, cmap = pipeline.fit(windows, 5, seed=0)
    return windows, model, cmap


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[tuple, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
