"""Shared fixtures for the tapstab test suite."""
import numpy as np
import pytest

from tapstab.graph import DirectedGraph, generate_er, reachable_set
from tapstab.models import IndependentCascade, InfluenceSpec
from tapstab.rng import pair_ranks


@pytest.fixture
def path_graph():
    """0 -> 1 -> 2"""
    return DirectedGraph(3, [0, 1], [1, 2])


@pytest.fixture
def star_graph():
    """0 -> {1, 2, 3}, node 4 isolated."""
    return DirectedGraph(5, [0, 0, 0], [1, 2, 3])


@pytest.fixture
def small_er():
    return generate_er(40, 0.08, rng_seed=7)


@pytest.fixture(scope="session")
def ic():
    """ic(g, p) -> IC spec with every edge live with probability p."""

    def make(g, p):
        return InfluenceSpec(IndependentCascade(np.full(g.edge_count, float(p))))

    return make


@pytest.fixture(scope="session")
def brute_sketch():
    """Bottom-k pair ids of the pairs reachable from ``seeds``, by direct BFS in every world."""

    def compute(worlds, seeds, k, rank_seed):
        ell = len(worlds)
        pairs = []
        for i, w in enumerate(worlds):
            live_seeds = [s for s in seeds if not w.residual_graph.is_removed(s)]
            for v in reachable_set(w.residual_graph, live_seeds):
                pairs.append(v * ell + i)
        pairs = np.array(sorted(pairs), dtype=np.int64)
        if pairs.size == 0:
            return pairs
        ranks = pair_ranks(pairs // ell, pairs % ell, rank_seed)
        order = np.lexsort((pairs, ranks))
        return pairs[order][:k]

    return compute
