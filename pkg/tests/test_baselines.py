"""
Tests for the baselines module.
"""
import logging

import numpy as np
import pytest
from scipy.stats import chisquare

from src.baselines import (CacheChange, LFUCache, LRUCache, PRRCache, RandomCache, TwoLRUCache,
                           make_cache)
from src.errors import ConfigError
from src.models import PolicyName
from src.placement import MissLog

A, B, C, D = range(4)


def _serve(cache, files, start=0):
    return [cache.on_request(f, start + i) for i, f in enumerate(files)]


class TestLRU:
    """Tests for LRUCache."""

    def test_evicts_least_recent(self):
        """Test A, B, C with room for two."""
        cache = LRUCache(2.0, np.ones(4))
        assert _serve(cache, [A, B, C]) == [False, False, False]
        assert cache.stored == frozenset({B, C})

    def test_hit_refreshes_recency(self):
        """Test that a hit protects a file from the next eviction."""
        cache = LRUCache(2.0, np.ones(4))
        assert _serve(cache, [A, B, A, C]) == [False, False, True, False]
        assert cache.stored == frozenset({A, C})

    def test_request_reports_change(self):
        """Test the admitted and evicted files of one miss."""
        cache = LRUCache(1.0, np.ones(4))
        cache.request(A, 0)
        outcome = cache.request(B, 1)
        assert not outcome.hit
        assert outcome.change == CacheChange((B,), (A,))

    def test_stack_property(self):
        """Test that a larger cache hits on a superset of requests."""
        rng = np.random.default_rng(12)
        trace = rng.integers(0, 12, size=400).tolist()
        previous = None
        for capacity in range(1, 8):
            hits = _serve(LRUCache(float(capacity), np.ones(12)), trace)
            if previous is not None:
                assert all(h or not p for p, h in zip(previous, hits))
            previous = hits

    def test_variable_sizes(self):
        """Test that several files are evicted to make room for a large one."""
        cache = LRUCache(4.0, np.array([1.0, 1.0, 2.0, 3.0]))
        _serve(cache, [A, B, C, D])
        assert cache.stored == frozenset({D})
        assert cache.state.used <= 4.0


class TestLFU:
    """Tests for LFUCache."""

    def test_evicts_least_frequent(self):
        """Test A, A, B, C with room for two."""
        cache = LFUCache(2.0, np.ones(4))
        _serve(cache, [A, A, B, C])
        assert cache.stored == frozenset({A, C})

    def test_ties_go_to_least_recent(self):
        """Test that equal counts evict the older file."""
        cache = LFUCache(2.0, np.ones(4))
        _serve(cache, [A, B, C])
        assert cache.stored == frozenset({B, C})

    def test_counts_survive_eviction(self):
        """Test that a returning file keeps its history."""
        cache = LFUCache(1.0, np.ones(4))
        _serve(cache, [A, A, B])
        assert cache.counts[A] == 2
        assert cache.stored == frozenset({B})


class TestRandom:
    """Tests for RandomCache and PRRCache."""

    def test_seeded_reproducibility(self):
        """Test that the same seed gives the same evictions."""
        trace = np.random.default_rng(1).integers(0, 20, size=300).tolist()
        runs = []
        for _ in range(2):
            cache = RandomCache(5.0, np.ones(20), np.random.default_rng(42))
            _serve(cache, trace)
            runs.append(cache.stored)
        assert runs[0] == runs[1]

    def test_prr_staleness_weights(self):
        """Test that older last requests get proportionally higher eviction probability."""
        cache = PRRCache(3.0, np.ones(3))
        _serve(cache, [A, B, C], start=1)
        np.testing.assert_allclose(cache.eviction_probabilities([A, B, C]), [3 / 6, 2 / 6, 1 / 6])

    def test_prr_uniform_with_equal_timestamps(self):
        """Test that equal timestamps make eviction uniform (chi-square over 10^4 draws)."""
        files = 5
        cache = PRRCache(float(files), np.ones(files + 1), np.random.default_rng(2024))
        for f in range(files):
            cache.on_request(f, 3)
        counts = np.zeros(files)
        for _ in range(10_000):
            counts[cache._victim(frozenset())] += 1
        assert chisquare(counts).pvalue > 0.01


class TestTwoLRU:
    """Tests for TwoLRUCache."""

    def test_admits_on_second_request(self):
        """Test that a file is cached only once its id is already known."""
        cache = TwoLRUCache(2.0, np.ones(4), virtual_capacity=4)
        assert _serve(cache, [A, A, A]) == [False, False, True]

    def test_virtual_eviction_forgets_ids(self):
        """Test that an id pushed out of the virtual cache must be seen twice again."""
        cache = TwoLRUCache(2.0, np.ones(4), virtual_capacity=1)
        _serve(cache, [A, B, A])
        assert A not in cache

    def test_default_virtual_capacity(self):
        """Test the storage over mean file size default."""
        assert TwoLRUCache(10.0, np.array([1.0, 3.0])).virtual_capacity == 5


class TestPeriodicUpdate:
    """Tests for periodic_update()."""

    def test_lru_newest_first(self):
        """Test that newer misses are admitted first and the LRU files leave."""
        cache = LRUCache(2.0, np.ones(4))
        cache.preload([A, B])
        log = MissLog()
        log.record(C, 1)
        log.record(D, 2)
        change = cache.periodic_update(log, 3)
        assert change.admitted == (D, C)
        assert change.evicted == (A, B)
        assert cache.stored == frozenset({C, D})

    def test_admitted_files_are_protected(self):
        """Test that a round never evicts what it admitted."""
        cache = LRUCache(1.0, np.ones(4))
        cache.preload([A])
        log = MissLog()
        log.record(C, 1)
        log.record(D, 2)
        change = cache.periodic_update(log, 3)
        assert change.admitted == (D,)
        assert cache.stored == frozenset({D})

    def test_lfu_order_by_count(self):
        """Test that LFU admits the most requested missed file."""
        cache = LFUCache(1.0, np.ones(4))
        log = MissLog()
        for slot, f in enumerate([C, D, D]):
            cache.record_access(f, slot)
            log.record(f, slot)
        assert cache.periodic_update(log, 3).admitted == (D,)

    def test_empty_log(self):
        """Test that nothing changes without misses."""
        cache = RandomCache(2.0, np.ones(4))
        assert cache.periodic_update(MissLog(), 0).empty


class TestAdmission:
    """Tests for admission edge cases and make_cache()."""

    def test_oversized_file_warns_once(self, caplog):
        """Test that a file larger than the cache is served without caching."""
        cache = LRUCache(2.0, np.array([1.0, 5.0]))
        with caplog.at_level(logging.WARNING):
            assert _serve(cache, [B, B]) == [False, False]
        assert B not in cache
        assert caplog.text.count("exceeds cache storage") == 1

    @pytest.mark.parametrize("policy, cls", [
        ("lru", LRUCache), ("lfu", LFUCache), ("rr", RandomCache), ("prr", PRRCache), ("2lru", TwoLRUCache),
    ])
    def test_make_cache(self, policy, cls):
        """Test that every baseline name builds its cache."""
        cache = make_cache(policy, 3.0, np.ones(4))
        assert isinstance(cache, cls)
        assert cache.policy is PolicyName(policy)

    def test_make_cache_rejects_proposed(self):
        """Test that a flow-driven policy is not an eviction cache."""
        with pytest.raises(ConfigError):
            make_cache(PolicyName.TOP_X, 3.0, np.ones(4))
