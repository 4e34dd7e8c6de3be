from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from streamann.core import VectorDataset
from streamann.diskindex import DiskIndex
from streamann.memgraph import BuildParams, build_index

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


def gaussian(n: int, d: int, seed: int = 0, decimals: int | None = None) -> np.ndarray:
    x = np.random.default_rng(seed).standard_normal((n, d)).astype(np.float32)
    if decimals is not None:
        x = np.round(x, decimals).astype(np.float32)
    return x


@pytest.fixture
def small_data() -> VectorDataset:
    return VectorDataset(gaussian(600, 8, seed=3))


@pytest.fixture
def small_graph(small_data):
    return build_index(small_data, BuildParams(R=8, L_build=16))


@pytest.fixture
def small_index(tmp_path, small_data, small_graph):
    index = DiskIndex.create(small_graph, small_data, tmp_path / "ix", r_prime=9)
    yield index
    index.close()


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abc")), k)):
            terminalreporter.write_line(ACCEPTANCE[key])
