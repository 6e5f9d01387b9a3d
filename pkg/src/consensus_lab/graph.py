"""Undirected communication graphs, Laplacian spectra and switching signals."""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import Disconnected, DwellMisaligned, InvalidGraph, NoLeader
from .linalg import is_positive_definite, sym_eigvals


@dataclass(frozen=True)
class CommGraph:
    """Unweighted undirected graph on nodes ``0..node_count-1``.

    Edges are stored as sorted ``(i, j)`` tuples with ``i < j``. ``leader``
    marks a node that ignores its neighbours in leader-follower protocols;
    edges incident to it stay in the graph.
    """

    node_count: int
    edges: tuple
    leader: Optional[int] = None

    def __post_init__(self):
        if self.node_count < 1:
            raise InvalidGraph("graph needs at least one node")
        seen = set()
        for e in self.edges:
            i, j = (int(k) for k in e)
            if i == j:
                raise InvalidGraph(f"self-loop at node {i + 1}")
            if not (0 <= i < self.node_count and 0 <= j < self.node_count):
                raise InvalidGraph(f"edge ({i + 1}, {j + 1}) out of range 1..{self.node_count}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise InvalidGraph(f"duplicate edge ({key[0] + 1}, {key[1] + 1})")
            seen.add(key)
        object.__setattr__(self, "edges", tuple(sorted(seen)))
        if self.leader is not None and not 0 <= self.leader < self.node_count:
            raise InvalidGraph(f"leader {self.leader + 1} out of range")

    @classmethod
    def from_edges(cls, node_count: int, edges: Iterable, leader: Optional[int] = None,
                   one_based: bool = False) -> "CommGraph":
        shift = 1 if one_based else 0
        pairs = tuple((int(i) - shift, int(j) - shift) for i, j in edges)
        if leader is not None:
            leader = int(leader) - shift
        return cls(node_count, pairs, leader)

    def with_leader(self, leader: Optional[int]) -> "CommGraph":
        return CommGraph(self.node_count, self.edges, leader)

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.node_count, self.node_count))
        for i, j in self.edges:
            a[i, j] = a[j, i] = 1.0
        return a

    def neighbors(self, i: int) -> list:
        return [j if k == i else k for k, j in self.edges if i in (k, j)]


def parse_edge_list(text: str) -> list:
    """Parse the ``"i j"`` per line edge-list form (1-based, ``#`` comments)."""
    edges = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise InvalidGraph(f"line {lineno}: expected 'i j', got {raw!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise InvalidGraph(f"line {lineno}: node indices must be integers") from None
    return edges


def format_edge_list(g: CommGraph) -> str:
    return "".join(f"{i + 1} {j + 1}\n" for i, j in g.edges)


def complete_graph(n: int) -> CommGraph:
    return CommGraph(n, tuple((i, j) for i in range(n) for j in range(i + 1, n)))


def ring_graph(n: int) -> CommGraph:
    if n < 3:
        raise InvalidGraph("ring needs at least 3 nodes")
    return CommGraph(n, tuple((i, (i + 1) % n) for i in range(n)))


def path_graph(n: int) -> CommGraph:
    return CommGraph(n, tuple((i, i + 1) for i in range(n - 1)))


def star_graph(n: int, center: int = 0) -> CommGraph:
    return CommGraph(n, tuple((center, j) for j in range(n) if j != center))


def laplacian(g: CommGraph) -> np.ndarray:
    """Degree-minus-adjacency matrix, built in integers so row sums are exactly 0."""
    lap = np.zeros((g.node_count, g.node_count), dtype=np.int64)
    for i, j in g.edges:
        lap[i, j] -= 1
        lap[j, i] -= 1
        lap[i, i] += 1
        lap[j, j] += 1
    return lap.astype(float)


def is_connected(g: CommGraph) -> bool:
    adj = [[] for _ in range(g.node_count)]
    for i, j in g.edges:
        adj[i].append(j)
        adj[j].append(i)
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in adj[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    return len(seen) == g.node_count


def lambda2(g: CommGraph) -> float:
    """Algebraic connectivity: the smallest nonzero Laplacian eigenvalue."""
    if g.node_count < 2:
        raise Disconnected("algebraic connectivity needs at least two nodes")
    if not is_connected(g):
        raise Disconnected("graph is disconnected; lambda2 = 0")
    return float(sym_eigvals(laplacian(g))[1])


def lambda2_min(graphs: Sequence[CommGraph]) -> float:
    """Minimum algebraic connectivity over a list of connected graphs."""
    if not graphs:
        raise ValueError("empty graph list")
    return min(lambda2(g) for g in graphs)


def leader_order(g: CommGraph) -> list:
    """Node order with the leader first and followers in ascending order."""
    if g.leader is None:
        raise NoLeader("graph has no leader")
    return [g.leader] + [i for i in range(g.node_count) if i != g.leader]


def leader_partition(g: CommGraph):
    """Blocks ``(L1, L2)`` of the leader-respecting Laplacian.

    With the leader moved to position 0 the Laplacian reads
    ``[[0, 0], [L2, L1]]``: the leader row is zero because it listens to
    nobody, ``L1`` is the symmetric follower block (degrees include edges
    to the leader) and ``L2`` collects ``-a_i,leader``.
    """
    order = leader_order(g)
    lap = laplacian(g)[np.ix_(order, order)]
    return lap[1:, 1:].copy(), lap[1:, :1].copy()


def check_assumption1(g: CommGraph) -> bool:
    """True iff a leader-rooted spanning tree exists (the follower subgraph is undirected)."""
    if g.leader is None:
        raise NoLeader("graph has no leader")
    return is_connected(g)


def follower_block_positive_definite(g: CommGraph) -> bool:
    l1, _ = leader_partition(g)
    if l1.size == 0:
        return True
    return is_positive_definite(l1)[0]


@dataclass(frozen=True)
class SwitchingSignal:
    """Piecewise-constant choice among ``graphs``, constant on ``[k*dwell, (k+1)*dwell)``.

    ``mode="cyclic"`` walks the list in order; ``mode="random"`` draws a
    uniform index per interval from a generator keyed by ``(seed, k)``, so
    any interval can be queried independently and replays are identical.
    """

    graphs: tuple
    dwell: float
    mode: str = "cyclic"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "graphs", tuple(self.graphs))
        if not self.graphs:
            raise InvalidGraph("switching signal needs at least one graph")
        if not self.dwell > 0:
            raise InvalidGraph("dwell must be positive")
        if self.mode not in ("cyclic", "random"):
            raise InvalidGraph(f"unknown switching mode {self.mode!r}")
        n = self.graphs[0].node_count
        for k, g in enumerate(self.graphs):
            if g.node_count != n:
                raise InvalidGraph("all switching graphs must share the node count")
            if not is_connected(g):
                raise Disconnected(f"switching graph {k + 1} is disconnected")

    @property
    def node_count(self) -> int:
        return self.graphs[0].node_count

    def index_for_interval(self, k: int) -> int:
        if self.mode == "cyclic" or len(self.graphs) == 1:
            return k % len(self.graphs)
        rng = np.random.default_rng([int(self.seed) & 0xFFFFFFFF, int(k)])
        return int(rng.integers(len(self.graphs)))

    def interval(self, t: float) -> int:
        # times within 1e-9 dwell below a switch instant count as after it
        return int(math.floor(t / self.dwell + 1e-9))


def signal_at(s: SwitchingSignal, t: float) -> int:
    """Index into ``s.graphs`` of the graph active at time ``t`` (right-continuous)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    return s.index_for_interval(s.interval(t))


def steps_per_dwell(s: SwitchingSignal, step: float) -> int:
    ratio = s.dwell / step
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 1e-9 * max(1.0, ratio):
        raise DwellMisaligned(f"dwell {s.dwell} is not an integer multiple of step {step}")
    return k
