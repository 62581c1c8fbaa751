import pytest

from src.utils.buffers import BufferManager


# Register custom markers
def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: marks tests as slow (acceptance-scale Monte Carlo runs)"
    )


@pytest.fixture
def buffers():
    """A run log that does not echo to stderr."""
    return BufferManager(echo_progress=False)
