import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tribeflow.corpus import EventLog
from tribeflow.windows import WindowSet

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_windows(users, items, taus=None, n_users=None, n_items=None):
    """WindowSet straight from arrays; windows must already be grouped by user."""
    users = np.asarray(users, dtype=np.int64)
    items = np.atleast_2d(np.asarray(items, dtype=np.int64))
    B = items.shape[1] - 1
    if taus is None:
        taus = np.empty((len(users), 0))
    else:
        taus = np.asarray(taus, dtype=np.float64).reshape(len(users), B)
    n_users = int(users.max()) + 1 if n_users is None else n_users
    n_items = int(items.max()) + 1 if n_items is None else n_items
    assert np.all(np.diff(users) >= 0)
    return WindowSet(users, items, taus, B, n_users, n_items,
                     np.bincount(users, minlength=n_users).astype(np.int64))


def make_log(seqs, times=None):
    """EventLog from lists of item ids (and optional timestamps) per user."""
    n_items = max((max(s) for s in seqs if len(s)), default=-1) + 1
    items = tuple(np.asarray(s, dtype=np.int64) for s in seqs)
    ts = None if times is None else tuple(np.asarray(t, dtype=np.float64) for t in times)
    return EventLog(tuple(f"u{u}" for u in range(len(seqs))),
                    tuple(f"i{i}" for i in range(n_items)), items, ts)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
