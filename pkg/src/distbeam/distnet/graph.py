"""Network topology: undirected graphs over integer node ids and BFS spanning trees."""
from __future__ import annotations

from collections import deque

import numpy as np


class GraphError(ValueError):
    pass


class NetGraph:
    """Undirected graph on node ids ``1..N``.

    After :func:`build_spanning_tree` the returned graph also carries
    ``root``, ``parent`` and ``children``; its edge set is the tree itself, so
    ``parent[k] | children[k] == neighbors(k)`` for every node.
    """

    def __init__(self, nodes, edges=()):
        self.nodes = sorted(int(n) for n in nodes)
        if len(set(self.nodes)) != len(self.nodes):
            raise GraphError("duplicate node ids")
        known = set(self.nodes)
        self.edges = set()
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise GraphError(f"self loop at node {a}")
            if a not in known or b not in known:
                raise GraphError(f"edge ({a}, {b}) references an unknown node")
            self.edges.add((min(a, b), max(a, b)))
        self._adj = {n: [] for n in self.nodes}
        for a, b in sorted(self.edges):
            self._adj[a].append(b)
            self._adj[b].append(a)
        for n in self._adj:
            self._adj[n].sort()
        self.root = None
        self.parent = None
        self.children = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def neighbors(self, node) -> list[int]:
        return self._adj[node]

    def degree(self, node) -> int:
        return len(self._adj[node])

    def index(self, node) -> int:
        """Position of ``node`` in the sorted node list."""
        return self.nodes.index(node)

    def directed_edges(self) -> list[tuple[int, int]]:
        """Both orientations of every edge, in a fixed order."""
        out = []
        for a, b in sorted(self.edges):
            out += [(a, b), (b, a)]
        return out

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        return len(_bfs_order(self, self.nodes[0])[0]) == self.n_nodes

    @property
    def has_tree(self) -> bool:
        return self.root is not None

    @property
    def leaves(self) -> list[int]:
        if not self.has_tree:
            raise GraphError("graph has no spanning tree")
        return [n for n in self.nodes if not self.children[n]]

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    def depth_order(self) -> list[int]:
        """Nodes sorted root first, by BFS depth."""
        if not self.has_tree:
            raise GraphError("graph has no spanning tree")
        return _bfs_order(self, self.root)[0]

    def __repr__(self):
        tree = f", root={self.root}, leaves={self.n_leaves}" if self.has_tree else ""
        return f"NetGraph(N={self.n_nodes}, edges={len(self.edges)}{tree})"


def _bfs_order(g: NetGraph, root):
    parent = {root: None}
    order = [root]
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for v in g.neighbors(u):  # ascending ids
            if v not in parent:
                parent[v] = u
                order.append(v)
                queue.append(v)
    return order, parent


def build_spanning_tree(g: NetGraph, root=None) -> NetGraph:
    """Breadth-first spanning tree; ties are broken by ascending node id."""
    root = g.nodes[0] if root is None else int(root)
    if root not in g._adj:
        raise GraphError(f"root {root} is not a node")
    order, parent = _bfs_order(g, root)
    if len(order) != g.n_nodes:
        raise GraphError("graph is not connected")
    t = NetGraph(g.nodes, [(v, p) for v, p in parent.items() if p is not None])
    t.root = root
    t.parent = parent
    t.children = {n: [] for n in g.nodes}
    for v in order[1:]:
        t.children[parent[v]].append(v)
    for n in t.children:
        t.children[n].sort()
    return t


# ---------------------------------------------------------------------------
# named generators
# ---------------------------------------------------------------------------

def chain(n: int) -> NetGraph:
    return NetGraph(range(1, n + 1), [(i, i + 1) for i in range(1, n)])


def ring(n: int) -> NetGraph:
    edges = [(i, i + 1) for i in range(1, n)]
    if n > 2:
        edges.append((n, 1))
    return NetGraph(range(1, n + 1), edges)


def star(n: int, hub: int = 1) -> NetGraph:
    return NetGraph(range(1, n + 1), [(hub, i) for i in range(1, n + 1) if i != hub])


def complete(n: int) -> NetGraph:
    return NetGraph(range(1, n + 1), [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1)])


def random_connected(n: int, extra_edges: int, rng) -> NetGraph:
    """Random tree plus ``extra_edges`` random chords."""
    edges = set()
    for i in range(2, n + 1):
        j = int(rng.integers(1, i))
        edges.add((j, i))
    candidates = [(i, j) for i in range(1, n + 1) for j in range(i + 1, n + 1) if (i, j) not in edges]
    if candidates and extra_edges:
        pick = rng.choice(len(candidates), size=min(extra_edges, len(candidates)), replace=False)
        edges.update(candidates[int(p)] for p in pick)
    return NetGraph(range(1, n + 1), edges)


GENERATORS = {"chain": chain, "ring": ring, "star": star, "complete": complete}


def make_topology(spec, n_nodes: int) -> NetGraph:
    """Build a graph from a name (``"ring"``), a dict or an explicit edge list.

    Dict form: ``{"kind": "star", "hub": 2}`` or ``{"edges": [[1, 2], ...]}``.
    """
    if isinstance(spec, str):
        spec = {"kind": spec}
    if isinstance(spec, (list, tuple)):
        spec = {"edges": spec}
    spec = dict(spec)
    if "edges" in spec:
        extra = set(spec) - {"edges", "nodes"}
        if extra:
            raise GraphError(f"unknown topology keys {sorted(extra)}")
        g = NetGraph(spec.get("nodes", range(1, n_nodes + 1)), spec["edges"])
    else:
        kind = spec.pop("kind", None)
        if kind not in GENERATORS:
            raise GraphError(f"unknown topology {kind!r}; expected one of {sorted(GENERATORS)}")
        if kind == "star":
            hub = spec.pop("hub", 1)
            g = star(n_nodes, hub)
        else:
            g = GENERATORS[kind](n_nodes)
        if spec:
            raise GraphError(f"unknown topology keys {sorted(spec)}")
    if g.nodes != list(range(1, n_nodes + 1)):
        raise GraphError(f"topology nodes {g.nodes} do not match the scene's 1..{n_nodes}")
    if not g.is_connected():
        raise GraphError("topology is not connected")
    return g


def sign(a: int, b: int) -> int:
    """Orientation of the edge ``a|b``: ``+1`` if ``a > b`` else ``-1``."""
    return int(np.sign(a - b))
