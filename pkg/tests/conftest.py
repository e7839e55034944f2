import numpy as np
import pytest

from c2s import cochlea
from c2s.pipeline import PipelineConfig, calibrate


@pytest.fixture(scope="session")
def transfer_cache_dir(request):
    return request.config.cache.mkdir("c2s_transfers")


@pytest.fixture(scope="session")
def raw_transfer16(transfer_cache_dir):
    path = transfer_cache_dir / "transfer16.npz"
    return cochlea.cached_transfer(cochlea.BmParams(), 16000.0, str(path))


@pytest.fixture()
def transfer16(raw_transfer16):
    # fresh calibrated copy per test; H is shared read-only
    tr = cochlea.CochlearTransfer(raw_transfer16.positions, raw_transfer16.freqs, raw_transfer16.H,
                                  raw_transfer16.sample_rate, raw_transfer16.n_fft,
                                  raw_transfer16.params, 1.0, raw_transfer16._ir)
    raw_transfer16._ir = tr.impulse_responses()
    calibrate(tr, PipelineConfig())
    return tr


@pytest.fixture()
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = []


@pytest.fixture()
def criterion(request):
    """Record one acceptance line: criterion(n, ok, text)."""
    def record(n, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {text}"
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
