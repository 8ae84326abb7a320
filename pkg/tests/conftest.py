from pathlib import Path

import pytest

from tarl.executor import instrument
from tarl.lang import parse_file
from tarl.taintflow import taint_analyze
from tarl.world import ODOMETRY, VELOCITY, EnvConfig

DATA = Path(__file__).resolve().parents[1] / "src" / "tarl" / "data"
CORPUS = Path(__file__).resolve().parent / "corpus"
TRAVELLER = DATA / "traveller.mb"
SWAPPED = DATA / "traveller_swapped.mb"


def all_sources():
    return sorted(DATA.glob("*.mb")) + sorted(CORPUS.glob("*.mb"))


@pytest.fixture(scope="session")
def traveller():
    return parse_file(TRAVELLER)


@pytest.fixture(scope="session")
def traveller_report(traveller):
    return taint_analyze(traveller, ODOMETRY, VELOCITY)


@pytest.fixture(scope="session")
def traveller_iprog(traveller, traveller_report):
    return instrument(traveller, traveller_report)


@pytest.fixture(scope="session")
def config():
    return EnvConfig()
