"""
Shared fixture loaders for the test suite
"""

from pathlib import Path

import pytest

from market_io import load_domain, load_mechanism, load_profile, load_structure, read_json

FIXTURES = Path(__file__).parent / 'fixtures'


def fixture_path(name):
    return str(FIXTURES / name)


@pytest.fixture
def structure_from():
    return lambda name: load_structure(read_json(fixture_path(name)))


@pytest.fixture
def profile_from():
    def load(market, name):
        return load_profile(market, read_json(fixture_path(name)))
    return load


@pytest.fixture
def domain_from():
    def load(market, name):
        return load_domain(market, read_json(fixture_path(name)))
    return load


@pytest.fixture
def mechanism_from():
    return lambda name: load_mechanism(read_json(fixture_path(name)))


@pytest.fixture
def raw_fixture():
    return lambda name: read_json(fixture_path(name))


@pytest.fixture
def fixture_file():
    return fixture_path
