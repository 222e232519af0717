"""
Directed graph substrate: compact forward/reverse adjacency, reachability,
residual graphs, random generators, SNAP ingestion and the binary cache.
"""

from __future__ import annotations

import gzip
import hashlib
import logging
import struct
from collections import deque
from functools import cached_property
from pathlib import Path
from typing import FrozenSet, Iterable, List, Optional, Tuple

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .errors import ClosureViolationError, EdgeListParseError, TapInputError

logger = logging.getLogger(__name__)

NodeSet = FrozenSet[int]

CACHE_MAGIC = b"TAPG"
CACHE_VERSION = 1
_CACHE_HEADER = struct.Struct("<4sIQQ")


class DirectedGraph:
    """
    Immutable digraph over dense node ids ``[0, n)``.

    Edges are kept once, sorted by (source, target); parallel edges and
    self-loops are dropped at construction.  Edge ids are positions in that
    canonical order and are what per-edge parameter arrays are aligned to.

    Residual graphs keep the full id space and mark deleted nodes in
    ``removed``; tombstoned nodes have no edges and are never reached.
    """

    def __init__(
        self,
        node_count: int,
        sources: Iterable[int] = (),
        targets: Iterable[int] = (),
        removed: Optional[np.ndarray] = None,
    ):
        n = int(node_count)
        if n < 0:
            raise TapInputError(f"node_count must be >= 0, got {node_count}")
        src = _as_index_array(sources)
        dst = _as_index_array(targets)
        if src.shape != dst.shape:
            raise TapInputError("sources and targets must have the same length")
        if src.size and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= n):
            raise TapInputError(f"edge endpoint out of range [0, {n})")

        removed_mask = _as_removed_mask(removed, n)
        keep = src != dst
        if removed_mask is not None:
            keep &= ~removed_mask[src] & ~removed_mask[dst]
        src, dst = src[keep], dst[keep]

        # CSR construction collapses duplicates and sorts targets per row
        adj = sp.csr_matrix(
            (np.ones(src.size, dtype=np.bool_), (src, dst)), shape=(n, n)
        )
        adj.sum_duplicates()
        adj.sort_indices()
        out_ptr = adj.indptr.astype(np.int64)
        out_targets = adj.indices.astype(np.int64)
        out_sources = np.repeat(np.arange(n, dtype=np.int64), np.diff(out_ptr))
        self._init_canonical(n, out_sources, out_targets, removed_mask)

    @classmethod
    def _from_canonical(
        cls,
        n: int,
        sources: np.ndarray,
        targets: np.ndarray,
        removed: Optional[np.ndarray] = None,
    ) -> "DirectedGraph":
        """Build from an edge list already sorted, deduplicated and loop-free."""
        g = cls.__new__(cls)
        g._init_canonical(n, sources, targets, removed)
        return g

    def _init_canonical(self, n, sources, targets, removed) -> None:
        self.node_count = n
        self.sources = np.ascontiguousarray(sources, dtype=np.int64)
        self.targets = np.ascontiguousarray(targets, dtype=np.int64)
        self.edge_count = int(self.sources.size)
        self.removed = removed

        self.out_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.sources, minlength=n), out=self.out_ptr[1:])

        order = np.lexsort((self.sources, self.targets))
        self.in_edge_ids = order
        self.in_sources = self.sources[order]
        self.in_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(self.targets, minlength=n), out=self.in_ptr[1:])

        for arr in (self.sources, self.targets, self.out_ptr, self.in_ptr,
                    self.in_edge_ids, self.in_sources):
            arr.setflags(write=False)
        if self.removed is not None:
            self.removed.setflags(write=False)

    # ---------------- accessors ---------------- #

    def __repr__(self) -> str:
        tomb = 0 if self.removed is None else int(self.removed.sum())
        return f"DirectedGraph(n={self.node_count}, m={self.edge_count}, removed={tomb})"

    def successors(self, u: int) -> np.ndarray:
        return self.targets[self.out_ptr[u]:self.out_ptr[u + 1]]

    def predecessors(self, v: int) -> np.ndarray:
        return self.in_sources[self.in_ptr[v]:self.in_ptr[v + 1]]

    def in_edges(self, v: int) -> np.ndarray:
        """Edge ids of the edges entering ``v``, ordered by source."""
        return self.in_edge_ids[self.in_ptr[v]:self.in_ptr[v + 1]]

    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_ptr)

    def edge_list(self) -> List[Tuple[int, int]]:
        return list(zip(self.sources.tolist(), self.targets.tolist()))

    def is_removed(self, v: int) -> bool:
        return self.removed is not None and bool(self.removed[v])

    @property
    def removed_count(self) -> int:
        return 0 if self.removed is None else int(self.removed.sum())

    @property
    def live_node_count(self) -> int:
        return self.node_count - self.removed_count

    def edge_subgraph(self, edge_mask: np.ndarray) -> "DirectedGraph":
        """Same node ids, only the edges selected by the boolean ``edge_mask``."""
        mask = np.asarray(edge_mask, dtype=bool)
        return DirectedGraph._from_canonical(
            self.node_count, self.sources[mask], self.targets[mask], self.removed
        )

    def to_networkx(self) -> nx.DiGraph:
        G = nx.DiGraph()
        G.add_nodes_from(
            v for v in range(self.node_count) if not self.is_removed(v)
        )
        G.add_edges_from(self.edge_list())
        return G

    # plain lists make the Python BFS loops several times faster than ndarray indexing
    @cached_property
    def _fwd(self) -> Tuple[List[int], List[int]]:
        return self.out_ptr.tolist(), self.targets.tolist()

    @cached_property
    def _rev(self) -> Tuple[List[int], List[int]]:
        return self.in_ptr.tolist(), self.in_sources.tolist()


def _as_index_array(values) -> np.ndarray:
    if not isinstance(values, np.ndarray):
        values = list(values)
    return np.asarray(values, dtype=np.int64).ravel()


def _as_removed_mask(removed, n: int) -> Optional[np.ndarray]:
    if removed is None:
        return None
    mask = np.array(removed, dtype=bool).ravel()
    if mask.shape != (n,):
        raise TapInputError(f"removed mask must have length {n}")
    return mask if mask.any() else None


def _check_ids(g: DirectedGraph, nodes: Iterable[int]) -> List[int]:
    ids = [int(v) for v in nodes]
    for v in ids:
        if v < 0 or v >= g.node_count:
            raise TapInputError(f"node id {v} out of range [0, {g.node_count})")
    return ids


def _bfs(n: int, ptr: List[int], adj: List[int], starts: List[int], removed) -> List[int]:
    seen = bytearray(n)
    order: List[int] = []
    for s in starts:
        if not seen[s] and (removed is None or not removed[s]):
            seen[s] = 1
            order.append(s)
    queue = deque(order)
    while queue:
        u = queue.popleft()
        for w in adj[ptr[u]:ptr[u + 1]]:
            if not seen[w]:
                seen[w] = 1
                order.append(w)
                queue.append(w)
    return order


def reachable_set(g: DirectedGraph, seeds: Iterable[int]) -> NodeSet:
    """Forward closure of ``seeds`` (seeds included; tombstoned nodes never count)."""
    ids = _check_ids(g, seeds)
    ptr, adj = g._fwd
    return frozenset(_bfs(g.node_count, ptr, adj, ids, g.removed))


def reach_count(g: DirectedGraph, seeds: Iterable[int]) -> int:
    """``len(reachable_set(g, seeds))`` without building the frozenset."""
    ids = _check_ids(g, seeds)
    ptr, adj = g._fwd
    return len(_bfs(g.node_count, ptr, adj, ids, g.removed))


def reverse_reachable_set(g: DirectedGraph, targets: Iterable[int]) -> NodeSet:
    """Nodes that can reach some node of ``targets``."""
    ids = _check_ids(g, targets)
    ptr, adj = g._rev
    return frozenset(_bfs(g.node_count, ptr, adj, ids, g.removed))


def remove_closed_set(
    g: DirectedGraph, removed: Iterable[int], check: bool = True
) -> DirectedGraph:
    """
    Delete a reachability-closed node set together with its incident edges.

    Node ids are preserved; deleted nodes become tombstones.  With ``check``
    the closure property is verified and a ClosureViolationError raised when
    some node outside ``removed`` is reachable from it.
    """
    ids = _check_ids(g, removed)
    if not ids:
        return g
    if check:
        closure = reachable_set(g, ids)
        extra = closure.difference(ids)
        if extra:
            raise ClosureViolationError(
                f"removed set is not closed: {len(extra)} reachable node(s) outside it, "
                f"e.g. {min(extra)}"
            )
    mask = np.zeros(g.node_count, dtype=bool)
    if g.removed is not None:
        mask |= g.removed
    mask[ids] = True
    keep = ~mask[g.sources] & ~mask[g.targets]
    return DirectedGraph._from_canonical(
        g.node_count, g.sources[keep], g.targets[keep], mask
    )


# ---------------- generators ---------------- #


def _from_networkx(G: nx.Graph, n: int, both_directions: bool) -> DirectedGraph:
    edges = np.array(list(G.edges()), dtype=np.int64).reshape(-1, 2)
    src, dst = edges[:, 0], edges[:, 1]
    if both_directions:
        src, dst = np.concatenate([src, dst]), np.concatenate([dst, src])
    return DirectedGraph(n, src, dst)


def generate_er(n: int, edge_prob: float, rng_seed: int) -> DirectedGraph:
    """Directed G(n, p): every ordered pair u != v independently with ``edge_prob``."""
    if n < 1:
        raise TapInputError(f"ER graph needs n >= 1, got {n}")
    if not (0.0 <= edge_prob <= 1.0):
        raise TapInputError(f"edge probability must lie in [0, 1], got {edge_prob}")
    G = nx.fast_gnp_random_graph(n, edge_prob, seed=int(rng_seed), directed=True)
    g = _from_networkx(G, n, both_directions=False)
    logger.info("generated ER graph n=%d p=%.6g m=%d", n, edge_prob, g.edge_count)
    return g


def generate_ba(n: int, edges_per_node: int, rng_seed: int) -> DirectedGraph:
    """
    Barabasi-Albert preferential attachment.  Every attachment is stored as a
    pair of opposite directed edges.
    """
    if edges_per_node < 1 or n <= edges_per_node:
        raise TapInputError(
            f"BA graph needs n > edges_per_node >= 1, got n={n}, edges_per_node={edges_per_node}"
        )
    G = nx.barabasi_albert_graph(n, edges_per_node, seed=int(rng_seed))
    g = _from_networkx(G, n, both_directions=True)
    logger.info("generated BA graph n=%d m0=%d m=%d", n, edges_per_node, g.edge_count)
    return g


# ---------------- SNAP ingestion ---------------- #


def _open_text(path: Path):
    if path.suffix == ".gz":
        return gzip.open(path, "rt", encoding="utf-8", errors="replace")
    return open(path, encoding="utf-8", errors="replace")


def load_snap_edgelist(
    path: str | Path, symmetrize: bool = False
) -> Tuple[DirectedGraph, np.ndarray]:
    """
    Parse a SNAP edge list ("u v" per line, '#' comments, optional .gz).

    Returns the graph over dense ids and ``id_map`` where ``id_map[i]`` is the
    original id of dense node ``i``.  Only nodes incident to at least one
    non-loop edge are kept.
    """
    path = Path(path)
    if not path.exists():
        raise TapInputError(f"edge list not found: {path}")

    src: List[int] = []
    dst: List[int] = []
    with _open_text(path) as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise EdgeListParseError(path, lineno, line)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise EdgeListParseError(path, lineno, line) from None
            if u == v:
                continue
            src.append(u)
            dst.append(v)

    if not src:
        raise TapInputError(f"{path}: no edges found")

    raw_ids = np.array(src + dst, dtype=np.int64)
    id_map, dense = np.unique(raw_ids, return_inverse=True)
    half = len(src)
    s, t = dense[:half], dense[half:]
    if symmetrize:
        s, t = np.concatenate([s, t]), np.concatenate([t, s])
    g = DirectedGraph(id_map.size, s, t)
    logger.info("loaded %s: n=%d m=%d", path.name, g.node_count, g.edge_count)
    return g, id_map


# ---------------- binary cache ---------------- #


def _cache_bytes(g: DirectedGraph) -> bytes:
    header = _CACHE_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, g.node_count, g.edge_count)
    body = np.column_stack((g.sources, g.targets)).astype("<u4").tobytes()
    return header + body


def write_graph_cache(g: DirectedGraph, path: str | Path) -> Path:
    if g.removed is not None:
        raise TapInputError("residual graphs are not cached")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(_cache_bytes(g))
    return path


def read_graph_cache(path: str | Path) -> DirectedGraph:
    path = Path(path)
    if not path.exists():
        raise TapInputError(f"graph cache not found: {path}")
    data = path.read_bytes()
    if len(data) < _CACHE_HEADER.size:
        raise TapInputError(f"{path}: truncated graph cache")
    magic, version, n, m = _CACHE_HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise TapInputError(f"{path}: not a TAPG graph cache")
    if version != CACHE_VERSION:
        raise TapInputError(f"{path}: unsupported graph cache version {version}")
    body = data[_CACHE_HEADER.size:]
    if len(body) != 8 * m:
        raise TapInputError(f"{path}: expected {m} edges, found {len(body) // 8}")
    pairs = np.frombuffer(body, dtype="<u4").reshape(-1, 2).astype(np.int64)
    return DirectedGraph(n, pairs[:, 0], pairs[:, 1])


def graph_digest(g: DirectedGraph) -> str:
    """sha256 of the canonical cache encoding; pairs oracles with graphs."""
    return hashlib.sha256(_cache_bytes(g)).hexdigest()


def degree_stats(g: DirectedGraph) -> dict:
    out_deg, in_deg = g.out_degree(), g.in_degree()
    return {
        "n": g.node_count,
        "m": g.edge_count,
        "max_out_degree": int(out_deg.max()) if g.node_count else 0,
        "max_in_degree": int(in_deg.max()) if g.node_count else 0,
        "mean_out_degree": float(g.edge_count / g.node_count) if g.node_count else 0.0,
    }
