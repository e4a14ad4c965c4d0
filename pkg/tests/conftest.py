import pathlib

import pytest


@pytest.fixture(scope="session")
def fixtures() -> pathlib.Path:
    return pathlib.Path(__file__).parent / "fixtures"
