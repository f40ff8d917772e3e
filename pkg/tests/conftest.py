import pytest

from fltradeoff.data import make_federated_blobs


@pytest.fixture(scope="session")
def blobs():
    """Two clients with 16-record pools and a 400-record held-out set."""
    return make_federated_blobs(num_clients=2, pool_size=16, seed=0)


@pytest.fixture(scope="session")
def two_class_blobs():
    return make_federated_blobs(num_clients=2, pool_size=32, n_classes=2, seed=1)


_VERDICTS = pytest.StashKey[dict]()


@pytest.fixture
def verdict(request):
    """Record one PASS/FAIL line per acceptance criterion; printed in the summary."""
    store = request.config.stash.setdefault(_VERDICTS, {})

    def record(number: int, ok: bool, detail: str) -> bool:
        store[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(store[number])
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    store = config.stash.get(_VERDICTS, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for k in sorted(store):
            terminalreporter.write_line(store[k])
