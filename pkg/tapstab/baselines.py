"""
Ground truth and baselines: Monte Carlo evaluation of a seed set, the CELF
greedy for TAP, a plain greedy reference and the exhaustive optimum for tiny
instances.
"""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import Executor, ProcessPoolExecutor
from contextlib import ExitStack
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from .errors import InstanceTooLargeError, TapInputError
from .graph import DirectedGraph, NodeSet
from .models import InfluenceSpec, SampledWorld, exact_sigma_table, simulate_cascade
from .rng import stream
from .stab import LazyGainQueue, StopReason, TapSolution, TraceStep, sigma_hat_over_worlds

logger = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = 1
CSV_COLUMNS = [
    "schema_version",
    "threshold",
    "algorithm",
    "seeds",
    "mean",
    "stderr",
    "normalized",
    "runtime_ms",
    "eval_seed",
]

DEFAULT_EVAL_SAMPLES = 10_000
DEFAULT_CELF_SAMPLES = 1_000
DEFAULT_TIME_LIMIT = 60 * 60.0
EXHAUSTIVE_MAX_NODES = 14

Number = Union[float, Fraction]
SetEvaluator = Callable[[Sequence[int]], Number]


@dataclass
class EvalReport:
    mean_activation: float
    std_error: float
    samples: int
    normalized: Optional[float] = None
    rng_seed: int = 0

    def to_document(self) -> Dict[str, Any]:
        return asdict(self)

    def to_csv_row(self, threshold: float, algorithm: str, seed_count: int, runtime_ms: float) -> Dict[str, Any]:
        return {
            "schema_version": CSV_SCHEMA_VERSION,
            "threshold": threshold,
            "algorithm": algorithm,
            "seeds": seed_count,
            "mean": self.mean_activation,
            "stderr": self.std_error,
            "normalized": self.normalized if self.normalized is not None else "",
            "runtime_ms": round(runtime_ms, 3),
            "eval_seed": self.rng_seed,
        }


def _cascade_chunk(args) -> List[int]:
    g, spec, seeds, rng_seed, indices = args
    return [simulate_cascade(g, spec, seeds, stream(rng_seed, "cascade", j)) for j in indices]


def evaluate_seed_set(
    g: DirectedGraph,
    spec: InfluenceSpec,
    seeds: Iterable[int],
    num_samples: int = DEFAULT_EVAL_SAMPLES,
    rng_seed: int = 0,
    threshold: Optional[float] = None,
    workers: int = 1,
    pool: Optional[Executor] = None,
) -> EvalReport:
    """
    Mean and standard error of the cascade size over ``num_samples`` runs.
    Cascade ``j`` uses stream ("cascade", j), and values are summed in index
    order, so the report does not depend on ``workers``.

    A caller that evaluates many sets passes its own ``pool``; otherwise one is
    opened for this call.
    """
    if num_samples < 1:
        raise TapInputError(f"num_samples must be >= 1, got {num_samples}")
    seed_list = sorted(set(int(s) for s in seeds))
    indices = list(range(num_samples))
    if workers <= 1 or num_samples < 2 * workers:
        values = _cascade_chunk((g, spec, seed_list, rng_seed, indices))
    else:
        size = math.ceil(num_samples / workers)
        chunks = [indices[i:i + size] for i in range(0, num_samples, size)]
        tasks = [(g, spec, seed_list, rng_seed, c) for c in chunks]
        if pool is not None:
            values = [v for part in pool.map(_cascade_chunk, tasks) for v in part]
        else:
            with ProcessPoolExecutor(max_workers=len(chunks)) as own:
                values = [v for part in own.map(_cascade_chunk, tasks) for v in part]
    arr = np.asarray(values, dtype=float)
    mean = float(arr.mean())
    stderr = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else 0.0
    normalized = mean / threshold if threshold else None
    return EvalReport(mean, stderr, int(arr.size), normalized, int(rng_seed))


class _TimeLimit(Exception):
    pass


def _memoized(fn: SetEvaluator) -> SetEvaluator:
    memo: Dict[frozenset, Number] = {}

    def value(nodes: Sequence[int]) -> Number:
        key = frozenset(nodes)
        if key not in memo:
            memo[key] = fn(sorted(key))
        return memo[key]

    return value


def celf_tap(
    g: DirectedGraph,
    spec: InfluenceSpec,
    threshold: float,
    num_mc_samples: int = DEFAULT_CELF_SAMPLES,
    rng_seed: int = 0,
    evaluator: Optional[SetEvaluator] = None,
    time_limit: Optional[float] = DEFAULT_TIME_LIMIT,
    workers: int = 1,
) -> TapSolution:
    """
    Lazy greedy for TAP with Monte Carlo gains: add the node with the largest
    estimated gain until the estimated activation reaches ``threshold``.

    Every Monte Carlo estimate reuses the same cascade streams, so estimates of
    different sets share their randomness.  ``evaluator`` replaces Monte Carlo
    (for example with exact sigma).  When ``time_limit`` seconds pass the
    partial seed set is returned marked Exhausted.
    """
    n = g.node_count
    if threshold > n:
        raise TapInputError(f"threshold {threshold} exceeds node count {n}")
    with ExitStack() as stack:
        if evaluator is None:
            # one pool for the whole run, shared by every gain evaluation
            pool = None
            if workers > 1 and num_mc_samples >= 2 * workers:
                pool = stack.enter_context(ProcessPoolExecutor(max_workers=workers))

            def evaluator(nodes: Sequence[int]) -> float:
                return evaluate_seed_set(
                    g, spec, nodes, num_mc_samples, rng_seed, workers=workers, pool=pool
                ).mean_activation

        return _celf_loop(n, evaluator, threshold, time_limit, num_mc_samples, rng_seed)


def _celf_loop(
    n: int,
    evaluator: SetEvaluator,
    threshold: float,
    time_limit: Optional[float],
    num_mc_samples: int,
    rng_seed: int,
) -> TapSolution:
    started = time.monotonic()

    def timed(nodes: Sequence[int]) -> Number:
        if time_limit is not None and time.monotonic() - started > time_limit:
            raise _TimeLimit()
        return evaluator(nodes)

    sigma = _memoized(timed)
    seeds: List[int] = []
    trace: List[TraceStep] = []
    stopped = StopReason.THRESHOLD_MET
    queue: Optional[LazyGainQueue] = None
    current: Number = 0.0
    limit_hit = False
    try:
        base = sigma([])
        current = base
        queue = LazyGainQueue((u, sigma([u]) - base) for u in range(n))
        while current < threshold:
            head = queue.top(len(seeds), lambda u: sigma(seeds + [u]) - current)
            if head is None:
                stopped = StopReason.EXHAUSTED
                break
            u, gain = head
            queue.pop()
            seeds.append(u)
            current = sigma(seeds)
            trace.append(TraceStep(u, float(gain), float(current)))
            logger.debug("CELF picked %d gain=%.4f sigma=%.4f", u, float(gain), float(current))
    except _TimeLimit:
        stopped = StopReason.EXHAUSTED
        limit_hit = True
        logger.warning("CELF hit the %.0f s time limit with %d seeds", time_limit, len(seeds))
    logger.info("CELF: %d seeds, sigma=%.3f, %s", len(seeds), float(current), stopped.value)
    echo = {
        "algorithm": "celf",
        "threshold": threshold,
        "num_mc_samples": num_mc_samples,
        "rng_seed": rng_seed,
        "time_limit": time_limit,
        "time_limit_hit": limit_hit,
    }
    evaluations = queue.evaluations if queue is not None else 0
    return TapSolution(seeds, float(current), trace, stopped, 0.0, evaluations, echo)


def greedy_tap(g: DirectedGraph, evaluator: SetEvaluator, threshold: float) -> TapSolution:
    """Plain greedy: every round evaluates every candidate.  Reference for CELF."""
    n = g.node_count
    sigma = _memoized(evaluator)
    seeds: List[int] = []
    trace: List[TraceStep] = []
    current = sigma([])
    evaluations = 0
    stopped = StopReason.THRESHOLD_MET
    while current < threshold:
        candidates = [u for u in range(n) if u not in seeds]
        if not candidates:
            stopped = StopReason.EXHAUSTED
            break
        best_u, best_value = -1, None
        for u in candidates:
            value = sigma(seeds + [u])
            evaluations += 1
            if best_value is None or value > best_value:
                best_u, best_value = u, value
        trace.append(TraceStep(best_u, float(best_value - current), float(best_value)))
        seeds.append(best_u)
        current = best_value
    return TapSolution(seeds, float(current), trace, stopped, 0.0, evaluations,
                       {"algorithm": "greedy", "threshold": threshold})


def exhaustive_tap(
    g: DirectedGraph,
    objective: Union[InfluenceSpec, Sequence[SampledWorld], SetEvaluator],
    threshold: float,
    max_nodes: int = EXHAUSTIVE_MAX_NODES,
) -> NodeSet:
    """
    Smallest seed set whose objective value reaches ``threshold``; among sets
    of that size the lexicographically smallest.  The objective is exact sigma
    for an InfluenceSpec, sigma_hat for a list of worlds, or any set function.
    """
    n = g.node_count
    if n > max_nodes:
        raise InstanceTooLargeError(f"exhaustive search limited to {max_nodes} nodes, got {n}")
    if isinstance(objective, InfluenceSpec):
        # one enumeration of outcomes serves every subset
        table = exact_sigma_table(g, objective)

        def value(nodes):
            return table[frozenset(nodes)]
    elif callable(objective):
        value = objective
    else:
        worlds = list(objective)
        if not worlds:
            raise TapInputError("exhaustive_tap needs at least one world")

        def value(nodes):
            return sigma_hat_over_worlds(worlds, nodes)

    for size in range(n + 1):
        for combo in itertools.combinations(range(n), size):
            if value(list(combo)) >= threshold:
                return frozenset(combo)
    raise TapInputError(f"threshold {threshold} is not reachable even with every node seeded")
