import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from chaninv.entropy import FBox
from chaninv.model import ChannelPattern, MultiChannelSystem
from chaninv.subspace import column_span

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

FIXTURE_A = [[1.0, 0.0], [1.0, 1.0]]


@pytest.fixture
def fixture_system():
    """A=[[1,0],[1,1]], B1=e2, B2=e1, both unbounded."""
    return MultiChannelSystem.from_matrices(FIXTURE_A, [[[0.0], [1.0]], [[1.0], [0.0]]])


@pytest.fixture
def e1_line():
    return column_span(np.array([[1.0], [0.0]]))


@pytest.fixture
def unit_box():
    return FBox.from_vectors([[1.0, 0.0]])


@pytest.fixture
def not2():
    return ChannelPattern.without(2, 2)


@pytest.fixture
def fixture_json(tmp_path):
    sys_path = tmp_path / "fixture.json"
    sys_path.write_text('{"A": [[1, 0], [1, 1]], "channels": [{"B": [[0], [1]], "bound": null}, '
                        '{"B": [[1], [0]], "bound": null}]}')
    tgt = tmp_path / "V.json"
    tgt.write_text('{"basis": [[1], [0]], "F_box": {"center": [0], "half_widths": [1]}}')
    return sys_path, tgt
