import pytest

from gridcert.caseio import builtin_case


@pytest.fixture(scope="session")
def ieee14():
    return builtin_case("ieee14")


@pytest.fixture(scope="session")
def ieee118():
    return builtin_case("ieee118")


@pytest.fixture(scope="session")
def gap_case():
    return builtin_case("three_bus_gap")
