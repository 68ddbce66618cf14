"""Network graphs used by the experiments.

Besides cliques and lines this builds the two lower-bound families: the
``K_D`` network (two diameter-D lines hanging off one end of a third line)
and the gadget networks A and B, where B is a three-fold cover of the
gadget from A.
"""

from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Optional


class TopologyError(ValueError):
    pass


@dataclass
class Topology:
    adjacency: dict
    name: str = ""
    kind: str = "custom"
    labels: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        adj = {u: set(vs) for u, vs in self.adjacency.items()}
        for u, vs in list(adj.items()):
            if u in vs:
                raise TopologyError(f"self-loop at {u}")
            for v in vs:
                adj.setdefault(v, set()).add(u)
        self.adjacency = {u: frozenset(adj[u]) for u in sorted(adj)}
        self._diameter: Optional[int] = None

    @classmethod
    def from_edges(cls, nodes: Iterable[int], edges: Iterable[tuple], **kw) -> "Topology":
        adj = {u: set() for u in nodes}
        for u, v in edges:
            adj.setdefault(u, set()).add(v)
            adj.setdefault(v, set()).add(u)
        return cls(adj, **kw)

    @property
    def nodes(self) -> list:
        return list(self.adjacency)

    @property
    def n(self) -> int:
        return len(self.adjacency)

    def neighbors(self, u: int) -> frozenset:
        return self.adjacency[u]

    def edges(self) -> list:
        return sorted((u, v) for u in self.adjacency for v in self.adjacency[u] if u < v)

    def distances_from(self, src: int) -> dict:
        dist = {src: 0}
        todo = deque([src])
        while todo:
            u = todo.popleft()
            for v in self.adjacency[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    todo.append(v)
        return dist

    def is_connected(self) -> bool:
        if not self.adjacency:
            return False
        return len(self.distances_from(self.nodes[0])) == self.n

    @property
    def diameter(self) -> int:
        if self._diameter is None:
            self._diameter = diameter(self)
        return self._diameter

    def node(self, label: str) -> int:
        for u, lab in self.labels.items():
            if lab == label:
                return u
        raise KeyError(label)

    def relabel(self, mapping: dict, name: Optional[str] = None) -> "Topology":
        adj = {mapping[u]: {mapping[v] for v in vs} for u, vs in self.adjacency.items()}
        return Topology(adj, name=name or self.name, kind=self.kind,
                        labels={mapping[u]: lab for u, lab in self.labels.items()}, meta=dict(self.meta))

    def same_graph(self, other: "Topology") -> bool:
        return self.adjacency == other.adjacency


def diameter(topology: Topology) -> int:
    """Largest BFS eccentricity; rejects disconnected graphs."""
    best = 0
    for u in topology.nodes:
        dist = topology.distances_from(u)
        if len(dist) != topology.n:
            raise TopologyError("graph is disconnected")
        best = max(best, max(dist.values()))
    return best


def build_clique(n: int) -> Topology:
    if n < 2:
        raise TopologyError("clique needs n >= 2")
    return Topology.from_edges(range(n), combinations(range(n), 2), name=f"clique:n={n}", kind="clique")


def build_line(d: int, offset: int = 0) -> Topology:
    if d < 1:
        raise TopologyError("line needs d >= 1")
    nodes = range(offset, offset + d + 1)
    edges = [(u, u + 1) for u in range(offset, offset + d)]
    labels = {u: f"u{u - offset + 1}" for u in nodes}
    return Topology.from_edges(nodes, edges, name=f"line:d={d}", kind="line", labels=labels)


def build_kd(D: int) -> Topology:
    """Two copies of L_D joined through one endpoint of an L_{D-1} line.

    Layout: copy 1 is ``0..D``, copy 2 is ``D+1..2D+1`` and the connecting
    line is ``2D+2..3D+1`` with ``2D+2`` the endpoint adjacent to every node
    of both copies.
    """
    if D <= 1:
        raise TopologyError("K_D needs D > 1")
    copy1 = list(range(0, D + 1))
    copy2 = list(range(D + 1, 2 * D + 2))
    bridge = list(range(2 * D + 2, 3 * D + 2))
    edges = []
    for part in (copy1, copy2, bridge):
        edges += list(zip(part, part[1:]))
    endpoint = bridge[0]
    edges += [(u, endpoint) for u in copy1 + copy2]
    labels = {}
    for i, u in enumerate(copy1):
        labels[u] = f"L1:{i}"
    for i, u in enumerate(copy2):
        labels[u] = f"L2:{i}"
    for i, u in enumerate(bridge):
        labels[u] = f"M:{i}"
    meta = {"D": D, "copy1": copy1, "copy2": copy2, "bridge": bridge, "endpoint": endpoint}
    return Topology.from_edges(range(3 * D + 2), edges, name=f"kd:D={D}", kind="kd", labels=labels, meta=meta)


# --------------------------------------------------------------------------
# gadget networks


@dataclass(frozen=True)
class GadgetParams:
    D: int
    n: int
    d: int
    k: int

    @property
    def n_prime(self) -> int:
        return 3 * (self.d + self.k) + 12

    @property
    def gadget_size(self) -> int:
        return self.d + self.k + 4


def gadget_params(D: int, n: int) -> GadgetParams:
    if D < 4 or D % 2:
        raise TopologyError("gadget networks need an even D >= 4")
    if n < D:
        raise TopologyError("gadget networks need n >= D")
    d = (D - 2) // 2
    k = 0
    while 3 * (d + k) + 12 < n:
        k += 1
    if d == 1 and k > 0:
        # three-fold covers with leaves on c always have diameter >= 5
        raise TopologyError(f"D=4 admits no gadget pair for n={n} (needs k=0, n <= 15)")
    return GadgetParams(D, n, d, k)


def gadget_edges(d: int, k: int) -> list:
    """Edges of one gadget over position labels.

    ``c`` doubles as ``a0`` so the chain is c-a1-...-ad and the ``s`` leaves
    hang off ``a{d-1}``.  ``p2..p4`` are the a+ nodes.  For d=1 the chord
    c-p2 keeps every gadget node next to c, otherwise the diameter of A
    would be 6 instead of 4.
    """
    chain = ["c"] + [f"a{i}" for i in range(1, d + 1)]
    edges = list(zip(chain, chain[1:]))
    edges += [(chain[d - 1], f"s{j}") for j in range(1, k + 1)]
    edges += [("a1", "p2"), ("p2", "p3"), ("p3", "p4"), ("c", "p3"), ("c", "p4")]
    if d == 1:
        edges.append(("c", "p2"))
    return edges


def gadget_positions(d: int, k: int) -> list:
    return (["c"] + [f"a{i}" for i in range(1, d + 1)] + [f"s{j}" for j in range(1, k + 1)]
            + ["p2", "p3", "p4"])


ROTATE = {1: (1, 2, 0), 2: (2, 0, 1)}


def cover_permutations(d: int) -> dict:
    """Copy permutation per gadget edge for network B; identity elsewhere."""
    if d == 1:
        return {("c", "p4"): ROTATE[1], ("c", "p2"): ROTATE[1]}
    return {("c", "p3"): ROTATE[2], ("c", "p4"): ROTATE[1]}


def build_network_a(D: int, n: int) -> tuple:
    """Two gadgets whose c nodes meet at bridge q; q also heads clique C."""
    params = gadget_params(D, n)
    positions = gadget_positions(params.d, params.k)
    labels, index = {}, {}
    for g in (0, 1):
        for pos in positions:
            index[(g, pos)] = len(labels)
            labels[index[(g, pos)]] = f"g{g}:{pos}"
    q = len(labels)
    labels[q] = "q"
    clique = list(range(q + 1, q + 1 + params.gadget_size - 1))
    for i, u in enumerate(clique):
        labels[u] = f"C:{i}"
    edges = []
    for g in (0, 1):
        edges += [(index[(g, a)], index[(g, b)]) for a, b in gadget_edges(params.d, params.k)]
        edges.append((q, index[(g, "c")]))
    edges += [(q, u) for u in clique]
    edges += list(combinations(clique, 2))
    meta = {"D": D, "params": params, "q": q, "clique": clique,
            "gadgets": [[index[(g, p)] for p in positions] for g in (0, 1)],
            "index": index}
    topo = Topology.from_edges(labels, edges, name=f"netA:D={D},n={n}", kind="netA", labels=labels, meta=meta)
    return topo, params


@dataclass(frozen=True)
class NodeMapping:
    """For every gadget position, the three B nodes in that position."""

    copies: dict  # position -> (b0, b1, b2)

    def S(self, position: str) -> tuple:
        return self.copies[position]

    def for_network_a(self, topo_a: Topology, gadget: int) -> dict:
        """Map each node of one A gadget to its S_u set in B."""
        index = topo_a.meta["index"]
        return {index[(gadget, pos)]: self.copies[pos] for pos in self.copies}


def build_network_b(D: int, n: int, permutations: Optional[dict] = None) -> tuple:
    params = gadget_params(D, n)
    positions = gadget_positions(params.d, params.k)
    perms = cover_permutations(params.d) if permutations is None else permutations
    labels, index = {}, {}
    for i in range(3):
        for pos in positions:
            index[(i, pos)] = len(labels)
            labels[index[(i, pos)]] = f"b{i}:{pos}"
    edges = []
    for a, b in gadget_edges(params.d, params.k):
        sigma = perms.get((a, b), (0, 1, 2))
        edges += [(index[(i, a)], index[(sigma[i], b)]) for i in range(3)]
    mapping = NodeMapping({pos: tuple(index[(i, pos)] for i in range(3)) for pos in positions})
    meta = {"D": D, "params": params, "index": index, "mapping": mapping}
    topo = Topology.from_edges(labels, edges, name=f"netB:D={D},n={n}", kind="netB", labels=labels, meta=meta)
    if not validate_cover(topo, mapping, gadget_edges(params.d, params.k)):
        raise TopologyError("network B fails the cover property")
    return topo, mapping


def validate_cover(topo_b: Topology, mapping: NodeMapping, gadget: list) -> bool:
    """Each copy u' of u has exactly one neighbour in S_v per gadget neighbour v, and nothing else."""
    nbrs = {}
    for a, b in gadget:
        nbrs.setdefault(a, set()).add(b)
        nbrs.setdefault(b, set()).add(a)
    covered = {}
    for pos, copies in mapping.copies.items():
        for u in copies:
            covered[u] = pos
    if len(covered) != topo_b.n:
        return False
    for pos, copies in mapping.copies.items():
        for u in copies:
            adj = topo_b.neighbors(u)
            for v in nbrs.get(pos, ()):
                if len(adj & set(mapping.copies[v])) != 1:
                    return False
            if any(covered[w] not in nbrs.get(pos, ()) for w in adj):
                return False
    return True


# --------------------------------------------------------------------------
# misc


def build_random_connected(n: int, seed: int, extra_edges: Optional[int] = None) -> Topology:
    """Random spanning tree plus ``extra_edges`` chords (default n // 2)."""
    if n < 2:
        raise TopologyError("need n >= 2")
    rng = random.Random(seed)
    order = list(range(n))
    rng.shuffle(order)
    edges = set()
    for i in range(1, n):
        u, v = order[i], order[rng.randrange(i)]
        edges.add((min(u, v), max(u, v)))
    extra = n // 2 if extra_edges is None else extra_edges
    candidates = [e for e in combinations(range(n), 2) if e not in edges]
    rng.shuffle(candidates)
    edges.update(candidates[:extra])
    return Topology.from_edges(range(n), sorted(edges), name=f"random:n={n},seed={seed}", kind="random")


def load_topology(path) -> Topology:
    """Edge-list file: first non-comment line is ``n``, then ``u v`` pairs."""
    lines = []
    for no, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.strip()
        if line and not line.startswith("#"):
            lines.append((no, line))
    if not lines:
        raise TopologyError(f"{path}: empty topology file")
    try:
        n = int(lines[0][1])
    except ValueError:
        raise TopologyError(f"{path}:{lines[0][0]}: expected the node count, got {lines[0][1]!r}") from None
    edges = []
    for no, line in lines[1:]:
        parts = line.split()
        try:
            u, v = (int(x) for x in parts)
        except ValueError:
            raise TopologyError(f"{path}:{no}: expected 'u v', got {line!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise TopologyError(f"{path}:{no}: edge {u} {v} out of range")
        edges.append((u, v))
    topo = Topology.from_edges(range(n), edges, name=f"file:{path}", kind="file")
    if not topo.is_connected():
        raise TopologyError(f"{path}: graph is disconnected")
    return topo


def export_topology(topology: Topology, path) -> None:
    nodes = topology.nodes
    if nodes != list(range(topology.n)):
        raise TopologyError("export needs nodes labelled 0..n-1")
    lines = [f"# {topology.name}", str(topology.n)] + [f"{u} {v}" for u, v in topology.edges()]
    Path(path).write_text("\n".join(lines) + "\n")


def parse_topology(spec: str) -> Topology:
    """``clique:n=5 | line:d=4 | kd:D=4 | netA:D=4,n=4 | netB:D=4,n=4 | random:n=12,seed=1 | file:<path>``"""
    kind, _, rest = spec.partition(":")
    if kind == "file":
        return load_topology(rest)
    args = {}
    if rest:
        for part in rest.split(","):
            key, _, val = part.partition("=")
            args[key.strip()] = int(val)
    try:
        if kind == "clique":
            return build_clique(args["n"])
        if kind == "line":
            return build_line(args["d"])
        if kind == "kd":
            return build_kd(args["D"])
        if kind == "netA":
            return build_network_a(args["D"], args["n"])[0]
        if kind == "netB":
            return build_network_b(args["D"], args["n"])[0]
        if kind == "random":
            return build_random_connected(args["n"], args.get("seed", 0), args.get("extra"))
    except KeyError as exc:
        raise TopologyError(f"topology spec {spec!r} is missing {exc}") from None
    raise TopologyError(f"unknown topology kind {kind!r}")
