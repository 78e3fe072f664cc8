"""Shared fixtures: one interval and one small square domain per session."""

import pytest

from memheat.domain import build_domain


@pytest.fixture(scope="session")
def interval():
    return build_domain("interval", 65)


@pytest.fixture(scope="session")
def square():
    return build_domain("square", 17)
