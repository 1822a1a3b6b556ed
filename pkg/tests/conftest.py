import pytest

from calldetect.metrics import CallUniverse


@pytest.fixture
def mf():
    return CallUniverse(["malloc", "free"])
