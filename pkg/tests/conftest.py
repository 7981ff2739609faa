import pytest

from cotforge.mock_gateway import mock_gateway


@pytest.fixture
def gateway():
    return mock_gateway(embedding_dim=16)
