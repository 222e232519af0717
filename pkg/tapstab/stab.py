"""
STAB: greedy seed selection for the threshold activation problem against
sketch oracles, with the sample-size rules, stopping rules and a lazy
(CELF-style) driver.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import OracleMismatchError, TapInputError
from .graph import DirectedGraph, reach_count
from .models import InfluenceSpec, SampledWorld
from .sketch import (
    Sketch,
    SketchOracle,
    best_gamma_by_pair,
    c1_estimate,
    choose_k,
    merge_sketch,
    threshold_rank,
)

logger = logging.getLogger(__name__)


class Estimator(str, Enum):
    C1 = "c1"
    C2 = "c2"


class StopReason(str, Enum):
    THRESHOLD_MET = "ThresholdMet"
    MARGINAL_GAIN_BELOW_ONE = "MarginalGainBelowOne"
    EXHAUSTED = "Exhausted"


ELL_RULES = ("hoeffding", "conservative")
K_RULES = ("sketch_eps", "alpha_t")


@dataclass(frozen=True)
class StabConfig:
    threshold: float
    alpha: float = 0.1
    delta: float = 0.01
    c: float = 1.0
    estimator: Estimator = Estimator.C2
    lazy_eval: bool = False
    ell_override: Optional[int] = None
    k_override: Optional[int] = None
    enforce_cea_stop: bool = True
    ell_rule: str = "hoeffding"
    k_rule: str = "sketch_eps"
    eps_sketch: float = 0.25
    # when set, delta becomes strict_eta / n^3
    strict_eta: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "estimator", Estimator(self.estimator))
        if not self.threshold > 0:
            raise TapInputError(f"threshold must be positive, got {self.threshold}")
        if not 0 < self.alpha < 1:
            raise TapInputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.delta < 1:
            raise TapInputError(f"delta must lie in (0, 1), got {self.delta}")
        if self.c < 0:
            raise TapInputError(f"c must be >= 0, got {self.c}")
        if self.ell_rule not in ELL_RULES:
            raise TapInputError(f"ell_rule must be one of {ELL_RULES}")
        if self.k_rule not in K_RULES:
            raise TapInputError(f"k_rule must be one of {K_RULES}")
        if self.strict_eta is not None and not 0 < self.strict_eta < 1:
            raise TapInputError(f"strict_eta must lie in (0, 1), got {self.strict_eta}")
        for name in ("ell_override", "k_override"):
            value = getattr(self, name)
            if value is not None and value < 1:
                raise TapInputError(f"{name} must be >= 1, got {value}")

    @property
    def target(self) -> float:
        """The loop guard T - alpha * T."""
        return self.threshold - self.alpha * self.threshold

    def effective_delta(self, n: int) -> float:
        if self.strict_eta is not None:
            return self.strict_eta / float(n) ** 3
        return self.delta

    def to_document(self) -> Dict[str, Any]:
        doc = asdict(self)
        doc["estimator"] = self.estimator.value
        return doc

    @classmethod
    def from_document(cls, doc: Dict[str, Any]) -> "StabConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise TapInputError(f"unknown stab config keys: {sorted(unknown)}")
        return cls(**doc)


@dataclass
class TraceStep:
    node: int
    gain: float
    sigma_hat_after: float


@dataclass
class TapSolution:
    seeds: List[int]
    estimated_activation: float
    trace: List[TraceStep]
    stopped_by: StopReason
    offset: float = 0.0
    evaluations: int = 0
    config_echo: Dict[str, Any] = field(default_factory=dict)

    def to_document(self) -> Dict[str, Any]:
        return {
            "seeds": list(self.seeds),
            "sigma_hat": self.estimated_activation,
            "offset_O": self.offset,
            "trace": [asdict(step) for step in self.trace],
            "stopped_by": self.stopped_by.value,
            "evaluations": self.evaluations,
            "config_echo": self.config_echo,
        }


def choose_sample_counts(cfg: StabConfig, n: int) -> Tuple[int, int]:
    """
    Number of worlds ell and sketch size k.

    ell = ceil(ln(2/delta) / (2 alpha^2)), or without the 2 under the
    conservative rule; k from the configured preset; overrides win.
    """
    if cfg.threshold > n:
        raise TapInputError(f"threshold {cfg.threshold} exceeds node count {n}")
    if cfg.ell_override is not None:
        ell = cfg.ell_override
    else:
        denom = cfg.alpha ** 2 * (2.0 if cfg.ell_rule == "hoeffding" else 1.0)
        ell = math.ceil(math.log(2.0 / cfg.effective_delta(n)) / denom)
    if cfg.k_override is not None:
        k = cfg.k_override
    elif cfg.k_rule == "alpha_t":
        k = choose_k(n, cfg.c, cfg.alpha * cfg.threshold)
    else:
        k = choose_k(n, cfg.c, cfg.eps_sketch)
    return ell, k


# ---------------- estimator state ---------------- #


class _C1State:
    """Keeps the merged sketch X_A; a candidate costs one O(k) merge."""

    def __init__(self, oracle: SketchOracle):
        self.oracle = oracle
        self.x = Sketch.empty(oracle.k)
        self.tau = 0.0

    def gain(self, u: int) -> float:
        xu = self.oracle.sketch(u)
        if len(xu) == 0:
            return 0.0
        return c1_estimate(merge_sketch(self.x, xu), self.oracle) - self.tau

    def add(self, u: int) -> None:
        self.x = merge_sketch(self.x, self.oracle.sketch(u))
        self.tau = c1_estimate(self.x, self.oracle)


class _C2State:
    """
    Keeps, for every pair id held by some seed, the largest gamma among those
    seeds; a candidate's gain only touches its own k entries.
    """

    def __init__(self, oracle: SketchOracle):
        self.oracle = oracle
        self.pairs = np.zeros(0, dtype=np.int64)
        self.best = np.zeros(0)
        self.tau = 0.0
        self._body: Dict[int, Tuple[np.ndarray, float]] = {}

    def _entries(self, u: int) -> Tuple[np.ndarray, float]:
        cached = self._body.get(u)
        if cached is None:
            x = self.oracle.sketch(u)
            tr = threshold_rank(x, self.oracle.k)
            body = x.pairs[: self.oracle.k - 1] if tr.saturated else x.pairs
            cached = (body, tr.gamma)
            self._body[u] = cached
        return cached

    def gain(self, u: int) -> float:
        body, gamma = self._entries(u)
        if body.size == 0:
            return 0.0
        if self.pairs.size == 0:
            return body.size / gamma / self.oracle.ell
        idx = np.searchsorted(self.pairs, body)
        idx_c = np.minimum(idx, self.pairs.size - 1)
        found = self.pairs[idx_c] == body
        current = self.best[idx_c]
        delta = np.where(
            found,
            np.where(gamma > current, 1.0 / gamma - 1.0 / current, 0.0),
            1.0 / gamma,
        )
        return float(delta.sum()) / self.oracle.ell

    def add(self, u: int) -> None:
        body, gamma = self._entries(u)
        self.pairs, self.best = best_gamma_by_pair(
            np.concatenate((self.pairs, body)),
            np.concatenate((self.best, np.full(body.size, gamma))),
        )
        self.tau = float(np.sum(1.0 / self.best)) / self.oracle.ell


def _make_state(estimator: Estimator, oracle: SketchOracle):
    return _C1State(oracle) if estimator == Estimator.C1 else _C2State(oracle)


def _check_oracle(g: DirectedGraph, cfg: StabConfig, oracle: SketchOracle) -> None:
    if oracle.n != g.node_count:
        raise OracleMismatchError(f"oracle covers {oracle.n} nodes, graph has {g.node_count}")
    ell, k = choose_sample_counts(cfg, g.node_count)
    if (oracle.ell, oracle.k) != (ell, k):
        raise OracleMismatchError(
            f"oracle built with ell={oracle.ell}, k={oracle.k}; config needs ell={ell}, k={k}"
        )


def _config_echo(cfg: StabConfig, oracle: SketchOracle) -> Dict[str, Any]:
    echo = cfg.to_document()
    echo.update({"ell": oracle.ell, "k": oracle.k, "rank_seed": oracle.rank_seed})
    return echo


def _stalled(cfg: StabConfig, gain: float) -> Optional[StopReason]:
    if cfg.enforce_cea_stop and gain < 1.0:
        return StopReason.MARGINAL_GAIN_BELOW_ONE
    if gain <= 0.0:
        return StopReason.EXHAUSTED
    return None


def run_stab(
    g: DirectedGraph, spec: InfluenceSpec, cfg: StabConfig, oracle: SketchOracle
) -> TapSolution:
    """
    Greedy loop: while sigma_hat(A) < T - alpha T, add the node with the
    largest estimated marginal gain (smallest id on ties).
    """
    _check_oracle(g, cfg, oracle)
    spec.validate(g)
    if cfg.lazy_eval:
        return lazy_greedy_wrapper(g, spec, cfg, oracle)

    n = g.node_count
    state = _make_state(cfg.estimator, oracle)
    seeds: List[int] = []
    in_seeds = bytearray(n)
    trace: List[TraceStep] = []
    evaluations = 0
    sigma = state.tau + oracle.offset
    stopped = StopReason.THRESHOLD_MET

    while sigma < cfg.target:
        if len(seeds) == n:
            stopped = StopReason.EXHAUSTED
            break
        best_u, best_gain = -1, -math.inf
        for u in range(n):
            if in_seeds[u]:
                continue
            gain = state.gain(u)
            evaluations += 1
            if gain > best_gain:
                best_u, best_gain = u, gain
        reason = _stalled(cfg, best_gain)
        if reason is not None:
            stopped = reason
            break
        state.add(best_u)
        seeds.append(best_u)
        in_seeds[best_u] = 1
        sigma = state.tau + oracle.offset
        trace.append(TraceStep(best_u, best_gain, sigma))
        logger.debug("STAB picked %d gain=%.4f sigma_hat=%.4f", best_u, best_gain, sigma)

    logger.info("STAB-%s: %d seeds, sigma_hat=%.3f, %s",
                cfg.estimator.value.upper(), len(seeds), sigma, stopped.value)
    return TapSolution(seeds, sigma, trace, stopped, oracle.offset, evaluations,
                       _config_echo(cfg, oracle))


class LazyGainQueue:
    """
    Max-queue of marginal gains that may be stale.  Entries carry the round
    they were computed in; ``top`` refreshes stale heads until the head is
    current.  Ties resolve to the smaller node id.
    """

    def __init__(self, initial: Iterable[Tuple[int, float]]):
        self._heap = [(-gain, u, 0) for u, gain in initial]
        heapq.heapify(self._heap)
        self.evaluations = len(self._heap)

    def __len__(self) -> int:
        return len(self._heap)

    def top(self, round_: int, evaluate: Callable[[int], float]) -> Optional[Tuple[int, float]]:
        while self._heap:
            neg, u, stamp = self._heap[0]
            if stamp == round_:
                return u, -neg
            heapq.heapreplace(self._heap, (-evaluate(u), u, round_))
            self.evaluations += 1
        return None

    def pop(self) -> Tuple[int, float]:
        neg, u, _ = heapq.heappop(self._heap)
        return u, -neg


def lazy_greedy_wrapper(
    g: DirectedGraph, spec: InfluenceSpec, cfg: StabConfig, oracle: SketchOracle
) -> TapSolution:
    """
    run_stab with lazy re-evaluation.  Identical to the plain driver while the
    estimate is submodular on the sets visited; with a noisy estimate it is a
    heuristic.
    """
    _check_oracle(g, cfg, oracle)
    state = _make_state(cfg.estimator, oracle)
    queue = LazyGainQueue((u, state.gain(u)) for u in range(g.node_count))
    seeds: List[int] = []
    trace: List[TraceStep] = []
    sigma = state.tau + oracle.offset
    stopped = StopReason.THRESHOLD_MET

    while sigma < cfg.target:
        head = queue.top(len(seeds), state.gain)
        if head is None:
            stopped = StopReason.EXHAUSTED
            break
        u, gain = head
        reason = _stalled(cfg, gain)
        if reason is not None:
            stopped = reason
            break
        queue.pop()
        state.add(u)
        seeds.append(u)
        sigma = state.tau + oracle.offset
        trace.append(TraceStep(u, gain, sigma))
        logger.debug("lazy STAB picked %d gain=%.4f sigma_hat=%.4f", u, gain, sigma)

    logger.info("lazy STAB-%s: %d seeds, sigma_hat=%.3f, %d evaluations, %s",
                cfg.estimator.value.upper(), len(seeds), sigma, queue.evaluations, stopped.value)
    return TapSolution(seeds, sigma, trace, stopped, oracle.offset, queue.evaluations,
                       _config_echo(cfg, oracle))


def sigma_hat_over_worlds(worlds: Sequence[SampledWorld], seeds: Iterable[int]) -> float:
    """(1/ell) * sum_i sigma_i(A + A_i^ext), computed as residual reach plus external reach."""
    seed_list = [int(s) for s in seeds]
    total = sum(reach_count(w.residual_graph, seed_list) + w.external_reach_size for w in worlds)
    return total / len(worlds)
