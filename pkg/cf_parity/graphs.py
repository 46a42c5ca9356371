"""
Acyclic directed mixed graphs and d-separation.

A bidirected edge ``A <-> U`` is read as ``A <- L -> U`` for a fresh latent
``L`` that is never conditioned on.
"""
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from itertools import chain
from pathlib import Path
from typing import FrozenSet, Iterable, Tuple

import networkx as nx

from cf_parity.errors import InputError, ModelError

logger = logging.getLogger(__name__)

REFERENCE_GRAPHS = ("unconfounded", "confounded", "pretreatment")

_NAME = r"[^\s<>#-]+"
_DIRECTED = re.compile(rf"^({_NAME})\s*->\s*({_NAME})$")
_BIDIRECTED = re.compile(rf"^({_NAME})\s*<->\s*({_NAME})$")
_NODE = re.compile(rf"^{_NAME}$")


@dataclass(frozen=True)
class Admg:
    """
    Immutable acyclic directed mixed graph.

    Bidirected edges are stored with their endpoints sorted so that
    ``("U", "A")`` and ``("A", "U")`` are the same edge.
    """

    nodes: Tuple[str, ...]
    directed_edges: Tuple[Tuple[str, str], ...] = ()
    bidirected_edges: Tuple[Tuple[str, str], ...] = ()
    _parents: dict = field(init=False, repr=False, compare=False)
    _children: dict = field(init=False, repr=False, compare=False)
    _spouses: dict = field(init=False, repr=False, compare=False)
    _order: tuple = field(init=False, repr=False, compare=False)
    _dag: nx.DiGraph = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        nodes = tuple(dict.fromkeys(self.nodes))
        directed = tuple(dict.fromkeys(tuple(e) for e in self.directed_edges))
        bidirected = tuple(dict.fromkeys(tuple(sorted(e)) for e in self.bidirected_edges))
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "directed_edges", directed)
        object.__setattr__(self, "bidirected_edges", bidirected)

        declared = set(nodes)
        for u, v in chain(directed, bidirected):
            for end in (u, v):
                if end not in declared:
                    raise InputError(f"Edge ({u}, {v}) uses undeclared node {end!r}")
            if u == v:
                raise ModelError(f"Self-loop on node {u!r} is not allowed")

        parents = {v: set() for v in nodes}
        children = {v: set() for v in nodes}
        spouses = {v: set() for v in nodes}
        for u, v in directed:
            parents[v].add(u)
            children[u].add(v)
        for u, v in bidirected:
            spouses[u].add(v)
            spouses[v].add(u)
        object.__setattr__(self, "_parents", {k: frozenset(s) for k, s in parents.items()})
        object.__setattr__(self, "_children", {k: frozenset(s) for k, s in children.items()})
        object.__setattr__(self, "_spouses", {k: frozenset(s) for k, s in spouses.items()})
        object.__setattr__(self, "_order", topological_order(self))

        dag = nx.DiGraph()
        dag.add_nodes_from(nodes)
        dag.add_edges_from(directed)
        object.__setattr__(self, "_dag", dag)

    def parents(self, node):
        return self._parents[node]

    def children(self, node):
        return self._children[node]

    def spouses(self, node):
        return self._spouses[node]

    def _check_nodes(self, nodes):
        unknown = [n for n in nodes if n not in self._parents]
        if unknown:
            raise InputError(f"Unknown node(s) {unknown}; graph has {list(self.nodes)}")


def topological_order(g: Admg) -> Tuple[str, ...]:
    """
    Topologically sort the directed part of a graph.

    Parameters
    ----------
    g : Admg
        Graph whose parent/child maps are already built.

    Returns
    -------
    tuple
        Nodes such that every directed edge points forward. Ties are broken by
        declaration order so the result is reproducible.

    Raises
    ------
    ModelError
        If the directed part contains a cycle; the nodes left unsorted are named.
    """
    in_degree = {v: len(g._parents[v]) for v in g.nodes}
    position = {v: i for i, v in enumerate(g.nodes)}
    queue = deque(v for v in g.nodes if in_degree[v] == 0)

    visited = []
    while queue:
        current = queue.popleft()
        visited.append(current)
        for child in sorted(g._children[current], key=position.get):
            in_degree[child] -= 1
            if in_degree[child] == 0:
                queue.append(child)

    if len(visited) != len(g.nodes):
        stuck = [v for v in g.nodes if in_degree[v] > 0]
        raise ModelError(f"Directed part of the graph has a cycle through {stuck}")
    return tuple(visited)


def ancestors(g: Admg, nodes: Iterable[str]) -> FrozenSet[str]:
    """Nodes with a directed path into ``nodes``, including ``nodes`` themselves."""
    nodes = list(nodes)
    g._check_nodes(nodes)
    found = set(nodes)
    for node in nodes:
        found |= nx.ancestors(g._dag, node)
    return frozenset(found)


def _check_query(g, src, dst, conditioning):
    conditioning = frozenset(conditioning or ())
    g._check_nodes([src, dst, *conditioning])
    if src == dst:
        raise InputError(f"src and dst must differ, got {src!r} twice")
    if src in conditioning or dst in conditioning:
        raise InputError("src and dst must not be in the conditioning set")
    return conditioning


def d_separated(g: Admg, src: str, dst: str, conditioning: Iterable[str] = ()) -> bool:
    """
    Decide whether ``src`` and ``dst`` are d-separated given ``conditioning``.

    Reachability over (node, direction) states. ``"up"`` means the node was
    entered against an edge (no arrowhead at it), ``"down"`` means it was
    entered through an arrowhead. A bidirected edge leaves like a move to a
    parent and arrives like a move from one.
    """
    conditioning = _check_query(g, src, dst, conditioning)
    active_colliders = ancestors(g, conditioning)

    seen = set()
    queue = deque([(src, "up")])
    while queue:
        node, direction = queue.popleft()
        if (node, direction) in seen:
            continue
        seen.add((node, direction))
        if node == dst:
            return False

        observed = node in conditioning
        if direction == "up" and not observed:
            queue.extend((p, "up") for p in g.parents(node))
            queue.extend((c, "down") for c in g.children(node))
            queue.extend((s, "down") for s in g.spouses(node))
        elif direction == "down":
            if not observed:
                queue.extend((c, "down") for c in g.children(node))
            if node in active_colliders:
                queue.extend((p, "up") for p in g.parents(node))
                queue.extend((s, "down") for s in g.spouses(node))
    return True


def latent_projection(g: Admg) -> nx.DiGraph:
    """Directed graph with every ``u <-> v`` replaced by ``u <- ("latent", u, v) -> v``."""
    dag = g._dag.copy()
    for u, v in g.bidirected_edges:
        latent = ("latent", u, v)
        dag.add_edge(latent, u)
        dag.add_edge(latent, v)
    return dag


def _path_is_open(dag, path, conditioning, active_colliders):
    for prev, node, nxt in zip(path, path[1:], path[2:]):
        if dag.has_edge(prev, node) and dag.has_edge(nxt, node):
            if node not in active_colliders:
                return False
        elif node in conditioning:
            return False
    return True


def d_separated_by_paths(g: Admg, src: str, dst: str, conditioning: Iterable[str] = ()) -> bool:
    """
    Exhaustive path-blocking check. Exponential; kept as a reference oracle.

    Every simple path of the latent projection is enumerated; a path is open
    when each non-collider on it is outside the conditioning set and each
    collider is an ancestor of it. Latents have no parents, so they are never
    colliders and never conditioned on.
    """
    conditioning = _check_query(g, src, dst, conditioning)
    dag = latent_projection(g)
    active_colliders = set(conditioning).union(*(nx.ancestors(dag, z) for z in conditioning))
    skeleton = dag.to_undirected(as_view=True)
    return not any(
        _path_is_open(dag, path, conditioning, active_colliders)
        for path in nx.all_simple_paths(skeleton, src, dst)
    )


def implies_dp(g: Admg, protected: str, predictor: str) -> bool:
    """True when the graph alone forces the predictor to be independent of the protected attribute."""
    return d_separated(g, protected, predictor, ())


def parse_graph(text: str) -> Admg:
    """
    Parse the edge-list format, one statement per line::

        A -> X
        A <-> U
        Yhat

    A bare identifier declares an isolated node. ``#`` starts a comment.
    Nodes are declared in order of first appearance.
    """
    nodes, directed, bidirected = [], [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if m := _BIDIRECTED.match(line):
            bidirected.append((m.group(1), m.group(2)))
            nodes.extend(m.groups())
        elif m := _DIRECTED.match(line):
            directed.append((m.group(1), m.group(2)))
            nodes.extend(m.groups())
        elif _NODE.match(line):
            nodes.append(line)
        else:
            raise InputError(f"Line {lineno}: cannot parse graph statement {raw.strip()!r}")
    graph = Admg(nodes=tuple(nodes), directed_edges=tuple(directed), bidirected_edges=tuple(bidirected))
    logger.debug("parsed graph with %d nodes, %d directed, %d bidirected edges",
                 len(graph.nodes), len(graph.directed_edges), len(graph.bidirected_edges))
    return graph


def load_graph(path) -> Admg:
    """Read a graph literal from a text file."""
    return parse_graph(Path(path).read_text(encoding="utf-8"))


def reference_graph(name: str) -> Admg:
    """
    One of the bundled three-structure literals over ``A, X, U, Xpre, Yhat``.

    ``unconfounded``: A -> X <- U -> Yhat. ``confounded``: the same plus A <-> U.
    ``pretreatment``: Xpre -> {A, X, Yhat}, A -> X.
    """
    if name not in REFERENCE_GRAPHS:
        raise InputError(f"Unknown reference graph {name!r}. Must be one of: {list(REFERENCE_GRAPHS)}")
    text = resources.files("cf_parity").joinpath("data").joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return parse_graph(text)
