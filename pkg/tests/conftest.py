import pytest

from tdchain.crypto import KeyPair


@pytest.fixture
def keys():
    """Deterministic named key pairs: ``keys("alice")``."""
    return lambda name: KeyPair.from_seed(name)


@pytest.fixture
def alice(keys):
    return keys("alice")


@pytest.fixture
def bob(keys):
    return keys("bob")
