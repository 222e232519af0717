"""Tests for tapstab/stab.py"""
import numpy as np
import pytest

from tapstab.baselines import exhaustive_tap
from tapstab.errors import OracleMismatchError, TapInputError
from tapstab.graph import DirectedGraph, generate_er
from tapstab.models import IndependentCascade, InfluenceSpec, SampledWorld, influence_spec_from_document, sample_worlds
from tapstab.sketch import build_oracles
from tapstab.stab import (
    Estimator,
    LazyGainQueue,
    StabConfig,
    StopReason,
    _stalled,
    choose_sample_counts,
    lazy_greedy_wrapper,
    run_stab,
    sigma_hat_over_worlds,
)

RANK_SEED = 77


def _exact_setup(g, spec, ell, seed=0, threshold=1.0, **cfg_kwargs):
    """Worlds plus an oracle big enough that no sketch saturates."""
    worlds = sample_worlds(g, spec, ell, seed=seed)
    k = g.node_count * ell + 1
    cfg = StabConfig(threshold=threshold, ell_override=ell, k_override=k, **cfg_kwargs)
    return worlds, build_oracles(worlds, k, RANK_SEED), cfg


def _no_edges(n):
    g = DirectedGraph(n)
    return g, InfluenceSpec(IndependentCascade(np.zeros(0)))


# ── configuration ─────────────────────────────────────────────────────────────


def test_sample_counts_hoeffding():
    ell, k = choose_sample_counts(StabConfig(threshold=10, alpha=0.1, delta=0.01), 1000)
    assert ell == 265
    assert k == 332


def test_sample_counts_conservative_and_overrides():
    cfg = StabConfig(threshold=10, alpha=0.1, delta=0.01, ell_rule="conservative")
    assert choose_sample_counts(cfg, 1000)[0] == 530
    cfg = StabConfig(threshold=10, ell_override=7, k_override=5)
    assert choose_sample_counts(cfg, 1000) == (7, 5)


def test_sample_counts_alpha_t_rule():
    cfg = StabConfig(threshold=100, alpha=0.1, k_rule="alpha_t")
    # eps = alpha * T = 10
    assert choose_sample_counts(cfg, 1000)[1] == 2


def test_sample_counts_strict_eta():
    cfg = StabConfig(threshold=10, alpha=0.1, strict_eta=0.5)
    assert cfg.effective_delta(10) == pytest.approx(0.5 / 1000)
    assert choose_sample_counts(cfg, 10)[0] == 415


def test_threshold_above_n_rejected():
    with pytest.raises(TapInputError):
        choose_sample_counts(StabConfig(threshold=11), 10)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"threshold": 0},
        {"threshold": 5, "alpha": 0.0},
        {"threshold": 5, "alpha": 1.0},
        {"threshold": 5, "delta": 1.5},
        {"threshold": 5, "estimator": "c3"},
        {"threshold": 5, "ell_rule": "chernoff"},
        {"threshold": 5, "k_override": 0},
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        StabConfig(**kwargs)


def test_config_document_roundtrip():
    cfg = StabConfig(threshold=12.5, alpha=0.2, estimator="c1", lazy_eval=True)
    doc = cfg.to_document()
    assert doc["estimator"] == "c1"
    assert StabConfig.from_document(doc) == cfg


def test_config_document_unknown_key():
    with pytest.raises(TapInputError):
        StabConfig.from_document({"threshold": 3, "beta": 1})


def test_target():
    assert StabConfig(threshold=100, alpha=0.1).target == pytest.approx(90.0)


# ── greedy ────────────────────────────────────────────────────────────────────


@pytest.mark.parametrize("estimator", [Estimator.C1, Estimator.C2])
def test_star_needs_its_centre(star_graph, ic, estimator):
    spec = ic(star_graph, 1.0)
    _, oracle, cfg = _exact_setup(star_graph, spec, 2, threshold=4, estimator=estimator)
    sol = run_stab(star_graph, spec, cfg, oracle)
    assert sol.seeds == [0]
    assert sol.stopped_by == StopReason.THRESHOLD_MET
    assert sol.estimated_activation == pytest.approx(4.0)


def test_ties_go_to_smallest_id():
    g, spec = _no_edges(4)
    _, oracle, cfg = _exact_setup(g, spec, 2, threshold=2)
    sol = run_stab(g, spec, cfg, oracle)
    assert sol.seeds == [0, 1]
    assert [step.gain for step in sol.trace] == pytest.approx([1.0, 1.0])


def _externally_covered_worlds():
    # world 0: nodes 0 and 1 active from outside; world 1: everything active from outside
    w0 = SampledWorld(DirectedGraph(3, removed=[True, True, False]), 2, 0)
    w1 = SampledWorld(DirectedGraph(3, removed=[True, True, True]), 3, 1)
    return [w0, w1]


def test_gain_below_one_stops():
    g, spec = _no_edges(3)
    oracle = build_oracles(_externally_covered_worlds(), 8, RANK_SEED)
    cfg = StabConfig(threshold=3, ell_override=2, k_override=8)
    sol = run_stab(g, spec, cfg, oracle)
    assert oracle.offset == pytest.approx(2.5)
    assert sol.seeds == []
    assert sol.stopped_by == StopReason.MARGINAL_GAIN_BELOW_ONE
    assert sol.offset == pytest.approx(2.5)


def test_gain_below_one_ignored_without_cea_stop():
    g, spec = _no_edges(3)
    oracle = build_oracles(_externally_covered_worlds(), 8, RANK_SEED)
    cfg = StabConfig(threshold=3, ell_override=2, k_override=8, enforce_cea_stop=False)
    sol = run_stab(g, spec, cfg, oracle)
    assert sol.seeds == [2]
    assert sol.stopped_by == StopReason.THRESHOLD_MET
    assert sol.estimated_activation == pytest.approx(3.0)


def test_external_reach_alone_meets_threshold():
    g, spec = _no_edges(3)
    oracle = build_oracles(_externally_covered_worlds(), 8, RANK_SEED)
    cfg = StabConfig(threshold=2, ell_override=2, k_override=8)
    sol = run_stab(g, spec, cfg, oracle)
    assert sol.seeds == []
    assert sol.stopped_by == StopReason.THRESHOLD_MET


def test_stalled_rules():
    with_stop = StabConfig(threshold=3)
    without = StabConfig(threshold=3, enforce_cea_stop=False)
    assert _stalled(with_stop, 0.5) == StopReason.MARGINAL_GAIN_BELOW_ONE
    assert _stalled(with_stop, 1.0) is None
    assert _stalled(without, 0.5) is None
    assert _stalled(without, 0.0) == StopReason.EXHAUSTED
    assert _stalled(without, -0.1) == StopReason.EXHAUSTED


def test_oracle_mismatch_refused(star_graph, ic):
    spec = ic(star_graph, 1.0)
    _, oracle, _ = _exact_setup(star_graph, spec, 2, threshold=4)
    with pytest.raises(OracleMismatchError):
        run_stab(star_graph, spec, StabConfig(threshold=4, ell_override=3, k_override=11), oracle)
    other = DirectedGraph(6)
    with pytest.raises(OracleMismatchError):
        run_stab(other, InfluenceSpec(IndependentCascade(np.zeros(0))),
                 StabConfig(threshold=4, ell_override=2, k_override=11), oracle)


@pytest.fixture(scope="module")
def er_instance():
    g = generate_er(30, 0.1, rng_seed=21)
    spec = influence_spec_from_document({"model": "ic", "ip_max": 1.0, "param_seed": 8}, g)
    return g, spec


@pytest.mark.parametrize("estimator", [Estimator.C1, Estimator.C2])
def test_exact_sketches_track_sigma_hat(er_instance, estimator):
    g, spec = er_instance
    worlds, oracle, cfg = _exact_setup(g, spec, 4, seed=3, threshold=20, estimator=estimator, enforce_cea_stop=False)
    sol = run_stab(g, spec, cfg, oracle)
    assert sol.stopped_by == StopReason.THRESHOLD_MET
    assert sol.estimated_activation >= cfg.target
    assert sol.estimated_activation == pytest.approx(sigma_hat_over_worlds(worlds, sol.seeds))
    after = [step.sigma_hat_after for step in sol.trace]
    assert after == sorted(after)
    assert after[-1] == pytest.approx(sol.estimated_activation)


def test_lazy_matches_plain_on_exact_sketches(er_instance):
    g, spec = er_instance
    _, oracle, cfg = _exact_setup(g, spec, 4, seed=3, threshold=24, estimator=Estimator.C1, enforce_cea_stop=False)
    plain = run_stab(g, spec, cfg, oracle)
    lazy_cfg = StabConfig(**{**cfg.to_document(), "lazy_eval": True})
    lazy = run_stab(g, spec, lazy_cfg, oracle)
    assert lazy.seeds == plain.seeds
    assert lazy.evaluations <= plain.evaluations
    assert lazy_greedy_wrapper(g, spec, cfg, oracle).seeds == plain.seeds


def test_greedy_size_at_least_optimum():
    g = generate_er(12, 0.15, rng_seed=5)
    spec = influence_spec_from_document({"model": "ic", "ip_max": 1.0, "param_seed": 2}, g)
    worlds, oracle, cfg = _exact_setup(g, spec, 4, seed=1, threshold=8, enforce_cea_stop=False)
    sol = run_stab(g, spec, cfg, oracle)
    best = exhaustive_tap(g, worlds, cfg.target)
    assert sigma_hat_over_worlds(worlds, best) >= cfg.target
    assert len(best) <= len(sol.seeds)


def test_solution_document(star_graph, ic):
    spec = ic(star_graph, 1.0)
    _, oracle, cfg = _exact_setup(star_graph, spec, 2, threshold=4)
    doc = run_stab(star_graph, spec, cfg, oracle).to_document()
    assert set(doc) == {"seeds", "sigma_hat", "offset_O", "trace", "stopped_by", "evaluations", "config_echo"}
    assert doc["stopped_by"] == "ThresholdMet"
    assert doc["config_echo"]["ell"] == 2
    assert doc["trace"][0]["node"] == 0


# ── lazy queue ────────────────────────────────────────────────────────────────


def test_lazy_queue_refreshes_stale_heads():
    q = LazyGainQueue([(0, 5.0), (1, 4.0), (2, 3.0)])
    assert q.top(0, lambda u: 0.0) == (0, 5.0)
    q.pop()
    fresh = {1: 1.0, 2: 2.5}
    assert q.top(1, fresh.__getitem__) == (2, 2.5)
    assert q.evaluations == 5


def test_lazy_queue_ties_smallest_id():
    q = LazyGainQueue([(3, 1.0), (1, 1.0), (2, 1.0)])
    assert q.top(0, lambda u: 0.0) == (1, 1.0)


def test_lazy_queue_empty():
    q = LazyGainQueue([])
    assert q.top(0, lambda u: 0.0) is None
    assert len(q) == 0
