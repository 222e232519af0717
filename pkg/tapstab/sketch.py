"""
Bottom-k reachability sketches over the residual worlds, and the two
average-reachability estimators built on them.

Every (node v, world i) pair carries a rank in (0, 1) and an integer pair id
``v * ell + i``.  Sketches hold pair ids ordered by (rank, pair id), so ties
fall back to (v, i) lexicographic order and merges dedupe on the id, never on
float equality.
"""

from __future__ import annotations

import logging
import math
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import TapInputError
from .graph import reach_count
from .models import SampledWorld
from .rng import pair_ranks

logger = logging.getLogger(__name__)

ORACLE_MAGIC = b"TAPO"
ORACLE_VERSION = 1
_ORACLE_HEADER = struct.Struct("<4sIQQIdQ")
_RECORD = np.dtype([("rank", "<f8"), ("v", "<u4"), ("i", "<u4")])
_MASK64 = (1 << 64) - 1


@dataclass(frozen=True, eq=False)
class Sketch:
    ranks: np.ndarray
    pairs: np.ndarray
    k: int

    def __len__(self) -> int:
        return int(self.ranks.size)

    @property
    def saturated(self) -> bool:
        return len(self) >= self.k

    @classmethod
    def empty(cls, k: int) -> "Sketch":
        return cls(np.zeros(0, dtype=np.float64), np.zeros(0, dtype=np.int64), k)


@dataclass(frozen=True)
class ThresholdRank:
    gamma: float
    saturated: bool


@dataclass(frozen=True, eq=False)
class SketchOracle:
    """Per-node sketches in one flat array, node ``u`` at ``ptr[u]:ptr[u+1]``."""

    n: int
    k: int
    ell: int
    offset: float
    rank_seed: int
    ptr: np.ndarray
    ranks: np.ndarray
    pairs: np.ndarray

    def sketch(self, u: int) -> Sketch:
        if u < 0 or u >= self.n:
            raise TapInputError(f"node id {u} out of range [0, {self.n})")
        lo, hi = self.ptr[u], self.ptr[u + 1]
        return Sketch(self.ranks[lo:hi], self.pairs[lo:hi], self.k)

    def pair_of(self, pair_id: int) -> Tuple[int, int]:
        """(node, world) of a pair id."""
        v, i = divmod(int(pair_id), self.ell)
        return v, i

    def sizes(self) -> np.ndarray:
        return np.diff(self.ptr)


def choose_k(n: int, c: float, eps: float) -> int:
    """ceil((2 + c) ln n / eps^2), never below 2 so that C1 stays defined."""
    if eps <= 0:
        raise TapInputError(f"sketch epsilon must be positive, got {eps}")
    return max(2, math.ceil((2.0 + c) * math.log(max(n, 1)) / (eps * eps)))


# ---------------- construction ---------------- #


def _world_sketches(H, pos: int, n: int, ell: int, k: int, rank_seed: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bottom-k sketches of one world: pairs (v, pos) visited in increasing rank,
    each running a reverse BFS in ``H`` that stops at nodes already holding k
    pairs of this world (everything upstream of them holds those k as well).
    """
    live = np.arange(n, dtype=np.int64) if H.removed is None else np.flatnonzero(~H.removed)
    ranks = pair_ranks(live, pos, rank_seed)
    order = np.lexsort((live, ranks))
    ptr, adj = H._rev
    sketches: List[List[int]] = [[] for _ in range(n)]
    sizes = [0] * n
    stamp = [0] * n
    gen = 0
    for v in live[order].tolist():
        if sizes[v] >= k:
            continue
        pid = v * ell + pos
        gen += 1
        stamp[v] = gen
        stack = [v]
        while stack:
            u = stack.pop()
            sketches[u].append(pid)
            sizes[u] += 1
            for w in adj[ptr[u]:ptr[u + 1]]:
                if stamp[w] != gen and sizes[w] < k:
                    stamp[w] = gen
                    stack.append(w)
    node_of = np.repeat(np.arange(n, dtype=np.int64), sizes)
    flat = np.fromiter((p for s in sketches for p in s), dtype=np.int64, count=int(sum(sizes)))
    return node_of, flat


def _bottom_k(n, ell, k, rank_seed, nodes, pairs) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per node, the k entries of smallest (rank, pair id); pair ids must be distinct per node."""
    ranks = pair_ranks(pairs // ell, pairs % ell, rank_seed)
    order = np.lexsort((pairs, ranks, nodes))
    nodes, pairs, ranks = nodes[order], pairs[order], ranks[order]
    counts = np.bincount(nodes, minlength=n)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    keep = np.arange(nodes.size) - starts[nodes] < k
    return nodes[keep], pairs[keep], ranks[keep]


def _partial_sketches(args) -> Tuple[np.ndarray, np.ndarray]:
    """
    Bottom-k sketches restricted to the given worlds.  Worlds are sketched one
    at a time and folded into the running bottom-k once enough entries are
    pending.
    """
    worlds, positions, n, ell, k, rank_seed = args
    nodes = np.zeros(0, dtype=np.int64)
    pairs = np.zeros(0, dtype=np.int64)
    pending_nodes: List[np.ndarray] = []
    pending_pairs: List[np.ndarray] = []
    pending = 0
    flush_at = max(n * k, 1 << 20)
    for pos, world in zip(positions, worlds):
        node_of, flat = _world_sketches(world.residual_graph, pos, n, ell, k, rank_seed)
        pending_nodes.append(node_of)
        pending_pairs.append(flat)
        pending += flat.size
        if pending >= flush_at:
            nodes, pairs, _ = _bottom_k(
                n, ell, k, rank_seed,
                np.concatenate([nodes] + pending_nodes), np.concatenate([pairs] + pending_pairs),
            )
            pending_nodes, pending_pairs, pending = [], [], 0
    if pending_nodes:
        nodes, pairs, _ = _bottom_k(
            n, ell, k, rank_seed,
            np.concatenate([nodes] + pending_nodes), np.concatenate([pairs] + pending_pairs),
        )
    return nodes, pairs


def _assemble(n, ell, k, rank_seed, parts) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Bottom-k per node of the union of partial sketches (their pair ids are disjoint)."""
    nodes, pairs, ranks = _bottom_k(
        n, ell, k, rank_seed,
        np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
    )
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(nodes, minlength=n), out=ptr[1:])
    return ptr, ranks, pairs


def build_oracles(
    worlds: Sequence[SampledWorld], k: int, rank_seed: int, workers: int = 1
) -> SketchOracle:
    """
    Build X_u for every node over all worlds.  World ``i`` of a pair is the
    world's position in ``worlds``.

    With ``workers > 1`` the worlds are split round-robin, each share is
    sketched independently and the partial sketches are merged; bottom-k of a
    union does not depend on how it was split, so the result is identical.
    """
    if not worlds:
        raise TapInputError("build_oracles needs at least one world")
    if k < 1:
        raise TapInputError(f"sketch size k must be >= 1, got {k}")
    n = worlds[0].residual_graph.node_count
    if any(w.residual_graph.node_count != n for w in worlds):
        raise TapInputError("all worlds must share one node id space")
    ell = len(worlds)
    positions = list(range(ell))

    if workers <= 1 or ell == 1:
        parts = [_partial_sketches((list(worlds), positions, n, ell, k, rank_seed))]
    else:
        shares = [positions[w::workers] for w in range(workers) if positions[w::workers]]
        jobs = [([worlds[p] for p in share], share, n, ell, k, rank_seed) for share in shares]
        with ProcessPoolExecutor(max_workers=len(jobs)) as pool:
            parts = list(pool.map(_partial_sketches, jobs))

    ptr, ranks, pairs = _assemble(n, ell, k, rank_seed, parts)
    offset = sum(w.external_reach_size for w in worlds) / ell
    oracle = SketchOracle(n, k, ell, offset, int(rank_seed), ptr, ranks, pairs)
    logger.info(
        "built oracles: n=%d ell=%d k=%d entries=%d saturated=%d offset=%.4f",
        n, ell, k, int(ptr[-1]), int(np.sum(np.diff(ptr) >= k)), offset,
    )
    return oracle


# ---------------- sketch algebra ---------------- #


def merge_sketch(xa: Sketch, xu: Sketch) -> Sketch:
    """Bottom-k of the union of two sketches, each pair counted once."""
    if xa.k != xu.k:
        raise TapInputError(f"cannot merge sketches with k={xa.k} and k={xu.k}")
    if len(xu) == 0:
        return xa
    if len(xa) == 0:
        return xu
    ranks = np.concatenate((xa.ranks, xu.ranks))
    pairs = np.concatenate((xa.pairs, xu.pairs))
    order = np.lexsort((pairs, ranks))
    ranks, pairs = ranks[order], pairs[order]
    fresh = np.ones(pairs.size, dtype=bool)
    fresh[1:] = pairs[1:] != pairs[:-1]
    ranks, pairs = ranks[fresh][: xa.k], pairs[fresh][: xa.k]
    return Sketch(ranks, pairs, xa.k)


def sketch_for_set(oracle: SketchOracle, seeds: Iterable[int]) -> Sketch:
    """X_A by folding merge_sketch over the seeds."""
    x = Sketch.empty(oracle.k)
    for u in sorted(set(int(s) for s in seeds)):
        x = merge_sketch(x, oracle.sketch(u))
    return x


def threshold_rank(x: Sketch, k: Optional[int] = None) -> ThresholdRank:
    k = x.k if k is None else k
    if len(x) >= k:
        return ThresholdRank(float(x.ranks[k - 1]), True)
    return ThresholdRank(1.0, False)


def c1_estimate(x: Sketch, oracle: SketchOracle) -> float:
    """
    (k - 1) / (ell * gamma) for a full sketch; an unsaturated sketch holds every
    reachable pair, so it returns the exact count |X| / ell.
    """
    tr = threshold_rank(x, oracle.k)
    if tr.saturated:
        return (oracle.k - 1) / (oracle.ell * tr.gamma)
    return len(x) / oracle.ell


def _c2_entries(oracle: SketchOracle, seeds: Iterable[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Non-threshold pair ids of every seed with that seed's gamma, concatenated."""
    pair_parts = []
    gamma_parts = []
    for u in sorted(set(int(s) for s in seeds)):
        x = oracle.sketch(u)
        tr = threshold_rank(x, oracle.k)
        body = x.pairs[: oracle.k - 1] if tr.saturated else x.pairs
        pair_parts.append(body)
        gamma_parts.append(np.full(body.size, tr.gamma))
    if not pair_parts:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    return np.concatenate(pair_parts), np.concatenate(gamma_parts)


def best_gamma_by_pair(pairs: np.ndarray, gammas: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Distinct pair ids (sorted) with the largest gamma seen for each."""
    if pairs.size == 0:
        return pairs, gammas
    order = np.lexsort((gammas, pairs))
    pairs, gammas = pairs[order], gammas[order]
    last = np.ones(pairs.size, dtype=bool)
    last[:-1] = pairs[1:] != pairs[:-1]
    return pairs[last], gammas[last]


def c2_estimate(seeds: Iterable[int], oracle: SketchOracle) -> float:
    """
    Sum over distinct non-threshold entries z of the seeds' sketches of
    1 / (largest gamma_u among seeds u holding z), divided by ell.
    """
    pairs, gammas = best_gamma_by_pair(*_c2_entries(oracle, seeds))
    return float(np.sum(1.0 / gammas)) / oracle.ell


def tau_exact(seeds: Iterable[int], worlds: Sequence[SampledWorld]) -> float:
    """Average residual reach of ``seeds`` over ``worlds`` by direct BFS."""
    seed_list = [int(s) for s in seeds]
    if not worlds:
        raise TapInputError("tau_exact needs at least one world")
    total = sum(reach_count(w.residual_graph, seed_list) for w in worlds)
    return total / len(worlds)


# ---------------- persistence ---------------- #


def write_oracle(oracle: SketchOracle, path: str | Path) -> Path:
    """TAPO file: header, then per node a u16 length and (rank, v, i) records."""
    if oracle.k > 0xFFFF:
        raise TapInputError(f"k={oracle.k} does not fit the u16 sketch length field")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = np.empty(oracle.pairs.size, dtype=_RECORD)
    records["rank"] = oracle.ranks
    records["v"] = oracle.pairs // oracle.ell
    records["i"] = oracle.pairs % oracle.ell
    raw = records.tobytes()
    sizes = oracle.sizes().tolist()
    ptr = oracle.ptr.tolist()
    length = struct.Struct("<H")
    with open(path, "wb") as f:
        f.write(_ORACLE_HEADER.pack(
            ORACLE_MAGIC, ORACLE_VERSION, oracle.n, oracle.ell, oracle.k,
            float(oracle.offset), int(oracle.rank_seed) & _MASK64,
        ))
        for u in range(oracle.n):
            f.write(length.pack(sizes[u]))
            f.write(raw[ptr[u] * _RECORD.itemsize: ptr[u + 1] * _RECORD.itemsize])
    return path


def read_oracle(path: str | Path) -> SketchOracle:
    path = Path(path)
    if not path.exists():
        raise TapInputError(f"oracle file not found: {path}")
    data = path.read_bytes()
    if len(data) < _ORACLE_HEADER.size:
        raise TapInputError(f"{path}: truncated oracle file")
    magic, version, n, ell, k, offset, rank_seed = _ORACLE_HEADER.unpack_from(data)
    if magic != ORACLE_MAGIC:
        raise TapInputError(f"{path}: not a TAPO oracle file")
    if version != ORACLE_VERSION:
        raise TapInputError(f"{path}: unsupported oracle version {version}")
    pos = _ORACLE_HEADER.size
    sizes = np.zeros(n, dtype=np.int64)
    chunks = []
    for u in range(n):
        if pos + 2 > len(data):
            raise TapInputError(f"{path}: truncated at node {u}")
        (size,) = struct.unpack_from("<H", data, pos)
        pos += 2
        end = pos + size * _RECORD.itemsize
        if end > len(data):
            raise TapInputError(f"{path}: truncated sketch of node {u}")
        chunks.append(np.frombuffer(data[pos:end], dtype=_RECORD))
        sizes[u] = size
        pos = end
    if pos != len(data):
        raise TapInputError(f"{path}: {len(data) - pos} trailing bytes")
    records = np.concatenate(chunks) if chunks else np.zeros(0, dtype=_RECORD)
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(sizes, out=ptr[1:])
    pairs = records["v"].astype(np.int64) * ell + records["i"].astype(np.int64)
    return SketchOracle(
        n, k, ell, offset, rank_seed, ptr, records["rank"].astype(np.float64), pairs
    )
