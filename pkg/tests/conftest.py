"""
Pytest fixtures and test utilities for the cdnsim tests.
"""
import pytest
import tempfile

import numpy as np

from src.dual_engine import AnticipatedFlows
from src.models import Catalog, ExperimentConfig, NetworkConfig, RequestEvent, RequestStream
from src.penalty import PenaltySpec
from src.placement import CacheState, MissLog


@pytest.fixture
def cache_penalty():
    """Cache-path penalty chi(x) = x^2 / 2."""
    return PenaltySpec.quadratic(1.0)


@pytest.fixture
def root_penalty():
    """Root-path penalty phi(y) = 10 y^2 / 2."""
    return PenaltySpec.quadratic(10.0)


@pytest.fixture
def small_network(cache_penalty, root_penalty):
    """One cache with ample link capacity."""
    return NetworkConfig.uniform(1, 10.0, 1000.0, 1000.0, cache_penalty, root_penalty)


@pytest.fixture
def toy_files():
    """Names, sizes and x values of the eight-file toy placement example."""
    names = "ABCDEFGH"
    sizes = np.array([4, 2, 2, 2, 2, 1, 2, 1], dtype=float)
    x = np.array([10, 8, 6, 3, 7, 5, 4, 2], dtype=float)
    return names, sizes, x


@pytest.fixture
def toy_cache_example(toy_files):
    """Cache of 10 holding A, B, C, D; E, F, G, H were just missed."""
    names, sizes, x = toy_files
    ids = {name: i for i, name in enumerate(names)}
    state = CacheState(10.0, sizes, [ids[n] for n in "ABCD"])
    log = MissLog()
    for slot, name in enumerate("EFGH"):
        log.record(ids[name], slot)
    return state, log, x, sizes, ids


@pytest.fixture
def output_dir():
    """Temporary directory for artifacts."""
    with tempfile.TemporaryDirectory() as path:
        yield path


class TestHelpers:
    """Helper methods for tests."""

    @staticmethod
    def names(ids, files):
        """Map file ids back to toy letters."""
        letters = {i: name for name, i in ids.items()}
        return {letters[f] for f in files}

    @staticmethod
    def stream(events):
        """Stream from (time, cache, file, volume) tuples."""
        return RequestStream.from_events([RequestEvent(*e) for e in events])

    @staticmethod
    def unit_catalog(files):
        return Catalog(np.ones(files))

    @staticmethod
    def config(network, policy, horizon, topology="two", **kwargs):
        return ExperimentConfig(topology=topology, policy=policy, network=network, horizon=horizon, **kwargs)

    @staticmethod
    def fixed_flows(x_rows):
        x = np.atleast_2d(np.asarray(x_rows, dtype=float))
        return AnticipatedFlows(x, np.zeros_like(x))


@pytest.fixture
def helpers():
    """The TestHelpers class."""
    return TestHelpers
