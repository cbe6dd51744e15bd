import numpy as np
import pytest

from dpyr.filter_conv import Filter
from dpyr.model import Component, DpmModel, FeatureSpec, Part, RawDeformation

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_model(components, channels=1, stride=1, kind="external", name="toy"):
    return DpmModel(name, FeatureSpec(kind, channels, stride), tuple(components))


def root_only(weights, bias=0.0):
    return Component(Filter(np.asarray(weights, dtype=np.float32)), (), bias)


def part(weights, anchor, ax=1.0, bx=0.0, ay=1.0, by=0.0):
    return Part(Filter(np.asarray(weights, dtype=np.float32)), anchor, RawDeformation(ax, bx, ay, by))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
