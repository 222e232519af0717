"""
Influence models: the triggering model (IC, LT, generic), external influence,
their combination, world sampling, process-level cascades and the exact
enumeration oracle for tiny instances.
"""

from __future__ import annotations

import itertools
import logging
import pickle
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Callable, Dict, Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InstanceTooLargeError, TapInputError
from .graph import DirectedGraph, NodeSet, reach_count, reachable_set, remove_closed_set
from .rng import stream

logger = logging.getLogger(__name__)

# live-edge outcomes x external outcomes the exact oracle will enumerate
EXACT_OUTCOME_LIMIT = 1 << 16
EXACT_MAX_NODES = 20

# ---------------- triggering model ---------------- #


@dataclass(frozen=True, eq=False)
class IndependentCascade:
    """Edge ``e`` is live independently with probability ``edge_prob[e]``."""

    edge_prob: np.ndarray


@dataclass(frozen=True, eq=False)
class LinearThreshold:
    """Each node keeps at most one in-edge, edge ``e`` with probability ``edge_weight[e]``."""

    edge_weight: np.ndarray


@dataclass(frozen=True, eq=False)
class GenericTriggering:
    """
    ``sampler(v, in_neighbors, rng)`` returns the triggering set of ``v``,
    a subset of ``in_neighbors``.
    """

    sampler: Callable[[int, np.ndarray, np.random.Generator], Iterable[int]]


TriggeringSpec = Union[IndependentCascade, LinearThreshold, GenericTriggering]


# ---------------- external influence ---------------- #


@dataclass(frozen=True)
class NoExternal:
    pass


@dataclass(frozen=True, eq=False)
class IndependentBernoulli:
    """Node ``u`` is activated from outside with probability ``node_prob[u]``."""

    node_prob: np.ndarray


@dataclass(frozen=True, eq=False)
class GenericSubsetSampler:
    """``sampler(n, rng)`` returns the externally activated node set."""

    sampler: Callable[[int, np.random.Generator], Iterable[int]]


ExternalSpec = Union[NoExternal, IndependentBernoulli, GenericSubsetSampler]


@dataclass(frozen=True, eq=False)
class InfluenceSpec:
    """The combined model: internal triggering spread plus external activation."""

    trig: TriggeringSpec
    ext: ExternalSpec = field(default_factory=NoExternal)
    document: Optional[Dict[str, Any]] = None

    def validate(self, g: DirectedGraph) -> "InfluenceSpec":
        _validate_trig(self.trig, g)
        _validate_ext(self.ext, g.node_count)
        return self


@dataclass(frozen=True, eq=False)
class SampledWorld:
    """One residual world H_i and the size of the external closure removed from G_i."""

    residual_graph: DirectedGraph
    external_reach_size: int
    world_index: int
    live_graph: Optional[DirectedGraph] = None
    external_seeds: NodeSet = frozenset()


def _validate_trig(trig: TriggeringSpec, g: DirectedGraph) -> None:
    m = g.edge_count
    if isinstance(trig, IndependentCascade):
        p = np.asarray(trig.edge_prob, dtype=float)
        if p.shape != (m,):
            raise TapInputError(f"IC needs {m} edge probabilities, got shape {p.shape}")
        if np.any(~((p >= 0.0) & (p <= 1.0))):
            raise TapInputError("IC edge probabilities must lie in [0, 1]")
    elif isinstance(trig, LinearThreshold):
        w = np.asarray(trig.edge_weight, dtype=float)
        if w.shape != (m,):
            raise TapInputError(f"LT needs {m} edge weights, got shape {w.shape}")
        if np.any(~(w >= 0.0)):
            raise TapInputError("LT edge weights must be non-negative")
        incoming = np.bincount(g.targets, weights=w, minlength=g.node_count)
        if np.any(incoming > 1.0 + 1e-9):
            v = int(np.argmax(incoming))
            raise TapInputError(f"LT incoming weights of node {v} sum to {incoming[v]:.6g} > 1")
    elif isinstance(trig, GenericTriggering):
        if not callable(trig.sampler):
            raise TapInputError("generic triggering needs a callable sampler")
    else:
        raise TapInputError(f"unknown triggering spec {trig!r}")


def _validate_ext(ext: ExternalSpec, n: int) -> None:
    if isinstance(ext, NoExternal):
        return
    if isinstance(ext, IndependentBernoulli):
        p = np.asarray(ext.node_prob, dtype=float)
        if p.shape != (n,):
            raise TapInputError(f"external model needs {n} node probabilities, got shape {p.shape}")
        if np.any(~((p >= 0.0) & (p <= 1.0))):
            raise TapInputError("external node probabilities must lie in [0, 1]")
    elif isinstance(ext, GenericSubsetSampler):
        if not callable(ext.sampler):
            raise TapInputError("generic external model needs a callable sampler")
    else:
        raise TapInputError(f"unknown external spec {ext!r}")


# ---------------- JSON documents ---------------- #


def _uniform(rng: np.random.Generator, size: int, high: float, what: str) -> np.ndarray:
    if not (0.0 <= high <= 1.0):
        raise TapInputError(f"{what} must lie in [0, 1], got {high}")
    return rng.uniform(0.0, high, size=size)


def _cap_incoming(g: DirectedGraph, w: np.ndarray) -> np.ndarray:
    incoming = np.bincount(g.targets, weights=w, minlength=g.node_count)
    scale = np.where(incoming > 1.0, 1.0 / np.maximum(incoming, 1e-300), 1.0)
    return w * scale[g.targets]


def influence_spec_from_document(doc: Dict[str, Any], g: DirectedGraph) -> InfluenceSpec:
    """
    Build a frozen InfluenceSpec from its JSON document.

    Random parameters (``ip_max`` / ``ep_max``) are drawn once from streams
    keyed by ``param_seed`` and never resampled.
    """
    model = str(doc.get("model", "ic")).lower()
    param_seed = int(doc.get("param_seed", 0))
    m, n = g.edge_count, g.node_count

    if model == "ic":
        if "edge_prob" in doc:
            trig: TriggeringSpec = IndependentCascade(np.asarray(doc["edge_prob"], dtype=float))
        else:
            ip_max = float(doc.get("ip_max", 1.0))
            trig = IndependentCascade(_uniform(stream(param_seed, "edge_params"), m, ip_max, "ip_max"))
    elif model == "lt":
        if "edge_weight" in doc:
            trig = LinearThreshold(np.asarray(doc["edge_weight"], dtype=float))
        elif doc.get("weighting") == "in_degree":
            indeg = g.in_degree().astype(float)
            trig = LinearThreshold(1.0 / indeg[g.targets] if m else np.zeros(0))
        else:
            ip_max = float(doc.get("ip_max", 1.0))
            w = _uniform(stream(param_seed, "edge_params"), m, ip_max, "ip_max")
            trig = LinearThreshold(_cap_incoming(g, w))
    else:
        raise TapInputError(f"unknown influence model {model!r} (expected 'ic' or 'lt')")

    ext_doc = doc.get("ext") or {"kind": "none"}
    kind = str(ext_doc.get("kind", "none")).lower()
    if kind == "none":
        ext: ExternalSpec = NoExternal()
    elif kind == "bernoulli":
        if "node_prob" in ext_doc:
            ext = IndependentBernoulli(np.asarray(ext_doc["node_prob"], dtype=float))
        else:
            ep_max = float(ext_doc.get("ep_max", 0.0))
            ext = IndependentBernoulli(_uniform(stream(param_seed, "node_params"), n, ep_max, "ep_max"))
    else:
        raise TapInputError(f"unknown external kind {kind!r} (expected 'none' or 'bernoulli')")

    return InfluenceSpec(trig, ext, document=dict(doc)).validate(g)


def influence_spec_to_document(spec: InfluenceSpec) -> Dict[str, Any]:
    """The source document when there is one, otherwise explicit parameter arrays."""
    if spec.document is not None:
        return dict(spec.document)
    if isinstance(spec.trig, IndependentCascade):
        doc: Dict[str, Any] = {"model": "ic", "edge_prob": np.asarray(spec.trig.edge_prob).tolist()}
    elif isinstance(spec.trig, LinearThreshold):
        doc = {"model": "lt", "edge_weight": np.asarray(spec.trig.edge_weight).tolist()}
    else:
        raise TapInputError("generic triggering models have no document form")
    if isinstance(spec.ext, NoExternal):
        doc["ext"] = {"kind": "none"}
    elif isinstance(spec.ext, IndependentBernoulli):
        doc["ext"] = {"kind": "bernoulli", "node_prob": np.asarray(spec.ext.node_prob).tolist()}
    else:
        raise TapInputError("generic external models have no document form")
    return doc


def with_external(spec: InfluenceSpec, ext_doc: Dict[str, Any], g: DirectedGraph) -> InfluenceSpec:
    """Same triggering parameters, external part rebuilt from ``ext_doc``."""
    doc = dict(spec.document or influence_spec_to_document(spec))
    doc["ext"] = dict(ext_doc)
    ext = influence_spec_from_document(doc, g).ext
    return InfluenceSpec(spec.trig, ext, document=doc).validate(g)


# ---------------- sampling ---------------- #


def sample_live_edge_graph(
    g: DirectedGraph, trig: TriggeringSpec, rng: np.random.Generator
) -> DirectedGraph:
    """Draw one live-edge graph G_i of the triggering model."""
    if isinstance(trig, IndependentCascade):
        live = rng.random(g.edge_count) < trig.edge_prob
        return g.edge_subgraph(live)

    if isinstance(trig, LinearThreshold):
        # one draw per node; edge j of v's in-list is kept iff the draw falls
        # in [cum_{j-1}, cum_j) of v's cumulative in-weights
        draw = rng.random(g.node_count)
        w_in = np.asarray(trig.edge_weight, dtype=float)[g.in_edge_ids]
        cum_all = np.cumsum(w_in)
        group_base = np.concatenate(([0.0], cum_all))[g.in_ptr[:-1]]
        targets_in = g.targets[g.in_edge_ids]
        cum = cum_all - group_base[targets_in]
        r = draw[targets_in]
        pick = (cum - w_in <= r) & (r < cum)
        live = np.zeros(g.edge_count, dtype=bool)
        live[g.in_edge_ids[pick]] = True
        return g.edge_subgraph(live)

    if isinstance(trig, GenericTriggering):
        src: List[int] = []
        dst: List[int] = []
        for v in range(g.node_count):
            preds = g.predecessors(v)
            chosen = {int(u) for u in trig.sampler(v, preds, rng)}
            if v in chosen or not chosen.issubset(preds.tolist()):
                raise TapInputError(f"triggering set of node {v} is not a subset of its in-neighbors")
            src.extend(chosen)
            dst.extend([v] * len(chosen))
        return DirectedGraph(g.node_count, src, dst, g.removed)

    raise TapInputError(f"unknown triggering spec {trig!r}")


def sample_external_seeds(ext: ExternalSpec, n: int, rng: np.random.Generator) -> NodeSet:
    """Draw the externally activated set A_i^ext."""
    if isinstance(ext, NoExternal):
        return frozenset()
    if isinstance(ext, IndependentBernoulli):
        return frozenset(np.flatnonzero(rng.random(n) < ext.node_prob).tolist())
    if isinstance(ext, GenericSubsetSampler):
        seeds = frozenset(int(v) for v in ext.sampler(n, rng))
        if any(v < 0 or v >= n for v in seeds):
            raise TapInputError("external sampler returned a node id out of range")
        return seeds
    raise TapInputError(f"unknown external spec {ext!r}")


def make_world(
    g: DirectedGraph,
    spec: InfluenceSpec,
    world_index: int,
    rng: np.random.Generator,
    keep_live: bool = False,
) -> SampledWorld:
    """Sample G_i and A_i^ext, then cut the external closure out of G_i."""
    live = sample_live_edge_graph(g, spec.trig, rng)
    ext_seeds = sample_external_seeds(spec.ext, g.node_count, rng)
    closure = reachable_set(live, ext_seeds)
    residual = remove_closed_set(live, closure, check=False)
    return SampledWorld(
        residual_graph=residual,
        external_reach_size=len(closure),
        world_index=world_index,
        live_graph=live if keep_live else None,
        external_seeds=ext_seeds if keep_live else frozenset(),
    )


def _make_world_chunk(args) -> List[SampledWorld]:
    g, spec, seed, indices, keep_live = args
    return [make_world(g, spec, i, stream(seed, "world", i), keep_live) for i in indices]


def _is_picklable(obj) -> bool:
    try:
        pickle.dumps(obj)
    except Exception:
        return False
    return True


def sample_worlds(
    g: DirectedGraph,
    spec: InfluenceSpec,
    ell: int,
    seed: int,
    workers: int = 1,
    keep_live: bool = False,
) -> List[SampledWorld]:
    """
    Sample ``ell`` worlds.  World ``i`` always uses the stream ("world", i) of
    ``seed``, so the result does not depend on ``workers``.
    """
    if ell < 1:
        raise TapInputError(f"need at least one world, got ell={ell}")
    indices = list(range(ell))
    if workers > 1 and ell > 1 and not _is_picklable(spec):
        logger.warning("influence spec holds unpicklable callbacks; sampling worlds in-process")
        workers = 1
    if workers <= 1 or ell == 1:
        worlds = _make_world_chunk((g, spec, seed, indices, keep_live))
    else:
        chunks = [indices[w::workers] for w in range(workers) if indices[w::workers]]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_make_world_chunk, [(g, spec, seed, c, keep_live) for c in chunks]))
        worlds = sorted((w for part in parts for w in part), key=lambda w: w.world_index)
    logger.info(
        "sampled %d worlds (mean external reach %.3f)",
        ell,
        sum(w.external_reach_size for w in worlds) / ell,
    )
    return worlds


def live_edge_activation(
    g: DirectedGraph, spec: InfluenceSpec, seeds: Iterable[int], rng: np.random.Generator
) -> int:
    """One reachability sample: |reach of seeds and A^ext in a fresh live-edge graph|."""
    live = sample_live_edge_graph(g, spec.trig, rng)
    ext_seeds = sample_external_seeds(spec.ext, g.node_count, rng)
    return reach_count(live, set(seeds) | ext_seeds)


# ---------------- process-level simulation ---------------- #


def simulate_cascade(
    g: DirectedGraph, spec: InfluenceSpec, seeds: Iterable[int], rng: np.random.Generator
) -> int:
    """
    Run the discrete-time activation process once and return the number of
    active nodes at quiescence.  External activation happens once, at t = 0,
    alongside the seeds.
    """
    seed_list = [int(v) for v in seeds]
    if any(v < 0 or v >= g.node_count for v in seed_list):
        raise TapInputError("seed id out of range")
    ext_seeds = sample_external_seeds(spec.ext, g.node_count, rng)
    initial = sorted(set(seed_list) | ext_seeds)
    trig = spec.trig

    if isinstance(trig, IndependentCascade):
        return _ic_process(g, trig.edge_prob, initial, rng)
    if isinstance(trig, LinearThreshold):
        return _lt_process(g, trig.edge_weight, initial, rng)
    # generic: every node fixes T_v up front; v fires one step after any member of T_v
    live = sample_live_edge_graph(g, trig, rng)
    return reach_count(live, initial)


def _ic_process(g: DirectedGraph, prob: np.ndarray, initial: List[int], rng) -> int:
    ptr, targets = g._fwd
    active = bytearray(g.node_count)
    for v in initial:
        active[v] = 1
    count = len(initial)
    frontier = initial
    while frontier:
        nxt: List[int] = []
        for u in frontier:
            lo, hi = ptr[u], ptr[u + 1]
            if lo == hi:
                continue
            # each newly active node gets exactly one attempt per out-edge
            hits = np.flatnonzero(rng.random(hi - lo) < prob[lo:hi])
            for j in hits.tolist():
                w = targets[lo + j]
                if not active[w]:
                    active[w] = 1
                    nxt.append(w)
        count += len(nxt)
        frontier = nxt
    return count


def _lt_process(g: DirectedGraph, weight: np.ndarray, initial: List[int], rng) -> int:
    ptr, targets = g._fwd
    w = np.asarray(weight, dtype=float).tolist()
    # thresholds in (0, 1]
    theta = (1.0 - rng.random(g.node_count)).tolist()
    acc = [0.0] * g.node_count
    active = bytearray(g.node_count)
    for v in initial:
        active[v] = 1
    count = len(initial)
    frontier = initial
    while frontier:
        nxt: List[int] = []
        for u in frontier:
            for e in range(ptr[u], ptr[u + 1]):
                v = targets[e]
                if active[v]:
                    continue
                acc[v] += w[e]
                if acc[v] >= theta[v]:
                    active[v] = 1
                    nxt.append(v)
        count += len(nxt)
        frontier = nxt
    return count


# ---------------- exact enumeration ---------------- #


def _frac(p: float) -> Fraction:
    return Fraction(float(p))


def _live_edge_outcomes(g: DirectedGraph, trig: TriggeringSpec) -> Tuple[int, Iterator[Tuple[Fraction, List[int]]]]:
    """(outcome count, iterator of (probability, live edge ids))."""
    if isinstance(trig, IndependentCascade):
        p = np.asarray(trig.edge_prob, dtype=float)
        certain = np.flatnonzero(p == 1.0).tolist()
        uncertain = np.flatnonzero((p > 0.0) & (p < 1.0)).tolist()

        def ic_iter():
            for bits in itertools.product((False, True), repeat=len(uncertain)):
                prob = Fraction(1)
                live = list(certain)
                for e, on in zip(uncertain, bits):
                    pe = _frac(p[e])
                    if on:
                        prob *= pe
                        live.append(e)
                    else:
                        prob *= 1 - pe
                yield prob, live

        return 1 << len(uncertain), ic_iter()

    if isinstance(trig, LinearThreshold):
        w = np.asarray(trig.edge_weight, dtype=float)
        per_node: List[List[Tuple[Fraction, Optional[int]]]] = []
        for v in range(g.node_count):
            options: List[Tuple[Fraction, Optional[int]]] = []
            total = Fraction(0)
            for e in g.in_edges(v).tolist():
                if w[e] > 0.0:
                    options.append((_frac(w[e]), e))
                    total += _frac(w[e])
            if total < 1:
                options.append((1 - total, None))
            per_node.append(options)
        count = 1
        for options in per_node:
            count *= len(options)

        def lt_iter():
            for combo in itertools.product(*per_node):
                prob = Fraction(1)
                live = []
                for pe, e in combo:
                    prob *= pe
                    if e is not None:
                        live.append(e)
                yield prob, live

        return count, lt_iter()

    raise InstanceTooLargeError("generic triggering distributions cannot be enumerated")


def _external_outcomes(ext: ExternalSpec, n: int) -> Tuple[int, Iterator[Tuple[Fraction, int]]]:
    """(outcome count, iterator of (probability, external node bitmask))."""
    if isinstance(ext, NoExternal):
        return 1, iter([(Fraction(1), 0)])
    if isinstance(ext, IndependentBernoulli):
        p = np.asarray(ext.node_prob, dtype=float)
        certain = 0
        for v in np.flatnonzero(p == 1.0).tolist():
            certain |= 1 << v
        uncertain = np.flatnonzero((p > 0.0) & (p < 1.0)).tolist()

        def ext_iter():
            for bits in itertools.product((False, True), repeat=len(uncertain)):
                prob = Fraction(1)
                mask = certain
                for v, on in zip(uncertain, bits):
                    pv = _frac(p[v])
                    if on:
                        prob *= pv
                        mask |= 1 << v
                    else:
                        prob *= 1 - pv
                yield prob, mask

        return 1 << len(uncertain), ext_iter()
    raise InstanceTooLargeError("generic external distributions cannot be enumerated")


def _closure_masks(n: int, sources: np.ndarray, targets: np.ndarray, live: List[int]) -> List[int]:
    """reach[v] as a bitmask, for the graph made of the ``live`` edges."""
    succ: List[List[int]] = [[] for _ in range(n)]
    for e in live:
        succ[int(sources[e])].append(int(targets[e]))
    reach = [1 << v for v in range(n)]
    changed = True
    while changed:
        changed = False
        for v in range(n):
            acc = reach[v]
            for w in succ[v]:
                acc |= reach[w]
            if acc != reach[v]:
                reach[v] = acc
                changed = True
    return reach


def _closure_of(mask: int, reach: List[int]) -> int:
    out = 0
    v = 0
    while mask:
        if mask & 1:
            out |= reach[v]
        mask >>= 1
        v += 1
    return out


def _check_enumerable(g: DirectedGraph, spec: InfluenceSpec, limit: int) -> None:
    if g.node_count > EXACT_MAX_NODES:
        raise InstanceTooLargeError(f"exact oracle limited to {EXACT_MAX_NODES} nodes, got {g.node_count}")
    live_count, _ = _live_edge_outcomes(g, spec.trig)
    ext_count, _ = _external_outcomes(spec.ext, g.node_count)
    if live_count * ext_count > limit:
        raise InstanceTooLargeError(
            f"exact oracle would enumerate {live_count * ext_count} outcomes (limit {limit})"
        )


def exact_sigma(
    g: DirectedGraph, spec: InfluenceSpec, seeds: Iterable[int], limit: int = EXACT_OUTCOME_LIMIT
) -> Fraction:
    """
    Exact expected activation by enumerating every live-edge graph and every
    external set.  Only for tiny instances; raises InstanceTooLargeError past
    ``limit`` outcomes.
    """
    _check_enumerable(g, spec, limit)
    seed_mask = 0
    for v in seeds:
        v = int(v)
        if v < 0 or v >= g.node_count:
            raise TapInputError(f"seed id {v} out of range")
        seed_mask |= 1 << v
    ext_list = list(_external_outcomes(spec.ext, g.node_count)[1])
    total = Fraction(0)
    for p_live, live in _live_edge_outcomes(g, spec.trig)[1]:
        reach = _closure_masks(g.node_count, g.sources, g.targets, live)
        inner = Fraction(0)
        for p_ext, ext_mask in ext_list:
            inner += p_ext * bin(_closure_of(seed_mask | ext_mask, reach)).count("1")
        total += p_live * inner
    return total


def exact_sigma_table(
    g: DirectedGraph, spec: InfluenceSpec, limit: int = EXACT_OUTCOME_LIMIT
) -> Dict[NodeSet, Fraction]:
    """Exact sigma for every subset of V from a single enumeration."""
    _check_enumerable(g, spec, limit)
    n = g.node_count
    full = 1 << n
    ext_list = list(_external_outcomes(spec.ext, n)[1])
    acc = [Fraction(0)] * full
    for p_live, live in _live_edge_outcomes(g, spec.trig)[1]:
        reach = _closure_masks(n, g.sources, g.targets, live)
        # external mass grouped by the closure it produces
        ext_mass: Dict[int, Fraction] = {}
        for p_ext, ext_mask in ext_list:
            c = _closure_of(ext_mask, reach)
            ext_mass[c] = ext_mass.get(c, Fraction(0)) + p_ext
        closure = [0] * full
        expected: Dict[int, Fraction] = {}
        for a in range(1, full):
            low = a & -a
            closure[a] = closure[a ^ low] | reach[low.bit_length() - 1]
        for a in range(full):
            cl = closure[a]
            val = expected.get(cl)
            if val is None:
                val = sum(
                    (mass * bin(cl | c).count("1") for c, mass in ext_mass.items()),
                    Fraction(0),
                )
                expected[cl] = val
            acc[a] += p_live * val
    return {
        frozenset(v for v in range(n) if a >> v & 1): acc[a] for a in range(full)
    }
