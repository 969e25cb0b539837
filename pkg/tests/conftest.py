import os

import pytest

from blindinv.gan import load_checkpoint

FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: desk-scale recovery runs (minutes); always on by default"
    )


@pytest.fixture(scope="session")
def desk_gan():
    """The committed desk-scale prior trained on synthetic bar images.

    Regenerate with tests/fixtures/regenerate.py (seeded, bit-stable).
    """
    return load_checkpoint(os.path.join(FIXTURE_DIR, "bars_gan.gpri"))
