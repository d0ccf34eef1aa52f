from __future__ import annotations

import pytest

from sgp.ontology import default_schema
from sgp.synthgen import GenConfig, generate_corpus
from sgp.triplets import Triplet


@pytest.fixture(scope="session")
def schema():
    return default_schema()


@pytest.fixture(scope="session")
def pilot(schema):
    """Pilot-shaped corpus: 75 instances x 3 artifacts."""
    return generate_corpus(schema, GenConfig(seed=7, n_instances=75))


@pytest.fixture(scope="session")
def small(schema):
    return generate_corpus(schema, GenConfig(seed=3, n_instances=12))


def T(s: str) -> Triplet:
    return Triplet.parse(s)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s[6:10]):
            terminalreporter.write_line(line)
