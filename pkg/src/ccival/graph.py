"""
Graph values over p variables and the Markov-equivalence machinery.

Variables are dense indices 0..p-1 with a parallel name table. Edges are
index pairs: a directed edge ``(a, b)`` means ``a -> b``; an undirected
edge is stored once as ``(min, max)``.

All graph values are immutable. Subclasses tighten the invariants:

    Pdag    directed part acyclic, at most one edge per pair
    Dag     Pdag without undirected edges
    Mpdag   Pdag closed under the Meek rules with a consistent extension
    Cpdag   Mpdag that represents exactly one Markov equivalence class
"""

from __future__ import annotations

import itertools
import logging
import math
from collections import defaultdict
from collections.abc import Iterable, Iterator
from functools import lru_cache
from typing import TypeVar

import networkx as nx

from .errors import GraphError, InconsistentGraphError

logger = logging.getLogger(__name__)

Edge = tuple[int, int]

# Undirected components up to this many nodes are counted by enumeration.
DEFAULT_COUNT_LIMIT = 12

_G = TypeVar("_G", bound="Pdag")


def default_names(p: int) -> tuple[str, ...]:
    """Default variable labels X1..Xp."""
    return tuple(f"X{i + 1}" for i in range(p))


def _norm(a: int, b: int) -> Edge:
    return (a, b) if a < b else (b, a)


class Pdag:
    """Partially directed acyclic graph."""

    __slots__ = (
        "_p",
        "_names",
        "_directed",
        "_undirected",
        "_parents",
        "_children",
        "_neighbors",
        "_digraph",
        "_hash",
    )

    def __init__(
        self,
        p: int,
        directed: Iterable[Edge] = (),
        undirected: Iterable[Edge] = (),
        names: Iterable[str] | None = None,
    ) -> None:
        if p < 0:
            raise GraphError(f"negative variable count {p}")
        labels = tuple(names) if names is not None else default_names(p)
        if len(labels) != p:
            raise GraphError(f"expected {p} names, got {len(labels)}")

        arcs = frozenset((int(a), int(b)) for a, b in directed)
        lines = frozenset(_norm(int(a), int(b)) for a, b in undirected)

        seen: set[Edge] = set()
        for a, b in itertools.chain(arcs, lines):
            if not (0 <= a < p and 0 <= b < p):
                raise GraphError(f"edge ({a}, {b}) out of range for p={p}")
            if a == b:
                raise GraphError(f"self loop at {a}")
        for a, b in arcs:
            key = _norm(a, b)
            if key in seen or key in lines:
                raise GraphError(f"more than one edge between {a} and {b}")
            seen.add(key)

        self._assign(p, labels, arcs, lines)
        if not nx.is_directed_acyclic_graph(self.directed_graph()):
            raise GraphError("directed part contains a cycle")
        self._validate()

    @classmethod
    def _trusted(
        cls: type[_G],
        p: int,
        names: tuple[str, ...],
        directed: frozenset[Edge],
        undirected: frozenset[Edge],
    ) -> _G:
        """Build without validation; callers guarantee the invariants."""
        obj = cls.__new__(cls)
        obj._assign(p, names, directed, undirected)
        return obj

    @classmethod
    def from_pdag(cls: type[_G], g: Pdag) -> _G:
        """Re-validate an existing graph as this class."""
        return cls(g.p, g.directed_edges, g.undirected_edges, g.names)

    def _assign(
        self,
        p: int,
        names: tuple[str, ...],
        directed: frozenset[Edge],
        undirected: frozenset[Edge],
    ) -> None:
        parents: list[set[int]] = [set() for _ in range(p)]
        children: list[set[int]] = [set() for _ in range(p)]
        neighbors: list[set[int]] = [set() for _ in range(p)]
        for a, b in directed:
            children[a].add(b)
            parents[b].add(a)
        for a, b in undirected:
            neighbors[a].add(b)
            neighbors[b].add(a)
        self._p = p
        self._names = names
        self._directed = directed
        self._undirected = undirected
        self._parents = tuple(frozenset(s) for s in parents)
        self._children = tuple(frozenset(s) for s in children)
        self._neighbors = tuple(frozenset(s) for s in neighbors)
        self._digraph: nx.DiGraph | None = None
        self._hash = hash((p, directed, undirected))

    def _validate(self) -> None:
        pass

    @property
    def p(self) -> int:
        return self._p

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def directed_edges(self) -> frozenset[Edge]:
        return self._directed

    @property
    def undirected_edges(self) -> frozenset[Edge]:
        return self._undirected

    @property
    def is_directed(self) -> bool:
        """True when no undirected edge is left."""
        return not self._undirected

    def parents(self, i: int) -> frozenset[int]:
        return self._parents[i]

    def children(self, i: int) -> frozenset[int]:
        return self._children[i]

    def neighbors(self, i: int) -> frozenset[int]:
        """Undirected neighbors of ``i``."""
        return self._neighbors[i]

    def adjacent(self, a: int, b: int) -> bool:
        return b in self._parents[a] or b in self._children[a] or b in self._neighbors[a]

    def directed_graph(self) -> nx.DiGraph:
        """The directed part as a networkx graph over all p nodes."""
        if self._digraph is None:
            graph = nx.DiGraph()
            graph.add_nodes_from(range(self._p))
            graph.add_edges_from(sorted(self._directed))
            self._digraph = graph
        return self._digraph

    def skeleton(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self._p))
        graph.add_edges_from(sorted(_norm(a, b) for a, b in self._directed))
        graph.add_edges_from(sorted(self._undirected))
        return graph

    def v_structures(self) -> frozenset[tuple[int, int, int]]:
        """Unshielded colliders ``(a, c, b)`` with ``a -> c <- b`` and ``a < b``."""
        found = set()
        for c in range(self._p):
            for a, b in itertools.combinations(sorted(self._parents[c]), 2):
                if not self.adjacent(a, b):
                    found.add((a, c, b))
        return frozenset(found)

    def undirected_components(self) -> list[frozenset[int]]:
        """Connected components of the undirected part with at least two nodes."""
        graph = nx.Graph()
        graph.add_edges_from(sorted(self._undirected))
        return sorted((frozenset(c) for c in nx.connected_components(graph)), key=sorted)

    def with_names(self: _G, names: Iterable[str]) -> _G:
        labels = tuple(names)
        if len(labels) != self._p:
            raise GraphError(f"expected {self._p} names, got {len(labels)}")
        return type(self)._trusted(self._p, labels, self._directed, self._undirected)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Pdag):
            return NotImplemented
        return (
            self._p == other._p
            and self._directed == other._directed
            and self._undirected == other._undirected
        )

    def __hash__(self) -> int:
        return self._hash

    def __repr__(self) -> str:
        arcs = ", ".join(f"{a}->{b}" for a, b in sorted(self._directed))
        lines = ", ".join(f"{a}--{b}" for a, b in sorted(self._undirected))
        body = "; ".join(part for part in (arcs, lines) if part)
        return f"{type(self).__name__}(p={self._p}, [{body}])"


class Dag(Pdag):
    """Directed acyclic graph."""

    __slots__ = ()

    def _validate(self) -> None:
        if self._undirected:
            raise GraphError("a DAG has no undirected edges")

    def descendants(self, i: int) -> frozenset[int]:
        """Strict descendants of ``i``."""
        return frozenset(nx.descendants(self.directed_graph(), i))

    def ancestors(self, i: int) -> frozenset[int]:
        """Strict ancestors of ``i``."""
        return frozenset(nx.ancestors(self.directed_graph(), i))

    def topological_order(self) -> list[int]:
        return list(nx.lexicographical_topological_sort(self.directed_graph()))


class Mpdag(Pdag):
    """Maximally oriented PDAG."""

    __slots__ = ()

    def _validate(self) -> None:
        directed = set(self._directed)
        undirected = set(self._undirected)
        _meek_closure(directed, undirected)
        if directed != self._directed or undirected != self._undirected:
            raise GraphError("graph is not closed under the Meek rules")
        if first_extension(self) is None:
            raise InconsistentGraphError("graph has no consistent DAG extension")


class Cpdag(Mpdag):
    """Completed PDAG representing one Markov equivalence class."""

    __slots__ = ()

    def _validate(self) -> None:
        super()._validate()
        extension = first_extension(self)
        if extension is None or cpdag_of(extension) != self:
            raise GraphError("graph is not the CPDAG of its extensions")


# Meek closure


def _meek_closure(directed: set[Edge], undirected: set[Edge]) -> None:
    """Close edge sets under Meek rules R1-R4 in place."""
    parents: defaultdict[int, set[int]] = defaultdict(set)
    children: defaultdict[int, set[int]] = defaultdict(set)
    neighbors: defaultdict[int, set[int]] = defaultdict(set)
    for a, b in directed:
        children[a].add(b)
        parents[b].add(a)
    for a, b in undirected:
        neighbors[a].add(b)
        neighbors[b].add(a)

    def adjacent(a: int, b: int) -> bool:
        return b in parents[a] or b in children[a] or b in neighbors[a]

    def forced(x: int, y: int) -> bool:
        # R1: w -> x -- y, w and y not adjacent
        if any(not adjacent(w, y) for w in parents[x]):
            return True
        # R2: x -> w -> y
        if children[x] & parents[y]:
            return True
        # R3: x -- w1 -> y, x -- w2 -> y, w1 and w2 not adjacent
        wings = sorted(neighbors[x] & parents[y])
        for w1, w2 in itertools.combinations(wings, 2):
            if not adjacent(w1, w2):
                return True
        # R4: x -- w1 -> w2 -> y, x adjacent to w2, w1 and y not adjacent
        for w1 in neighbors[x]:
            if w1 == y or adjacent(w1, y):
                continue
            for w2 in children[w1] & parents[y]:
                if adjacent(x, w2):
                    return True
        return False

    changed = True
    while changed:
        changed = False
        for a, b in sorted(undirected):
            forward = forced(a, b)
            backward = forced(b, a)
            if forward and backward:
                raise InconsistentGraphError(f"Meek rules orient {a} -- {b} both ways")
            if not (forward or backward):
                continue
            x, y = (a, b) if forward else (b, a)
            undirected.discard((a, b))
            neighbors[a].discard(b)
            neighbors[b].discard(a)
            directed.add((x, y))
            children[x].add(y)
            parents[y].add(x)
            changed = True


def apply_meek_rules(g: Pdag) -> Mpdag:
    """
    Close a PDAG under the four Meek orientation rules.

    Raises:
        InconsistentGraphError: An edge is forced both ways, the closure
            creates a directed cycle, or no consistent extension exists.
    """
    directed = set(g.directed_edges)
    undirected = set(g.undirected_edges)
    _meek_closure(directed, undirected)
    closed = Mpdag._trusted(g.p, g.names, frozenset(directed), frozenset(undirected))
    if not nx.is_directed_acyclic_graph(closed.directed_graph()):
        raise InconsistentGraphError("Meek closure creates a directed cycle")
    if first_extension(closed) is None:
        raise InconsistentGraphError("graph has no consistent DAG extension")
    return closed


def cpdag_of(d: Dag) -> Cpdag:
    """CPDAG of the Markov equivalence class of ``d``."""
    collider_arcs = set()
    for a, c, b in d.v_structures():
        collider_arcs.add((a, c))
        collider_arcs.add((b, c))
    undirected = {_norm(a, b) for a, b in d.directed_edges if (a, b) not in collider_arcs}
    _meek_closure(collider_arcs, undirected)
    return Cpdag._trusted(d.p, d.names, frozenset(collider_arcs), frozenset(undirected))


# Consistent extensions


def _iter_orientations(g: Pdag) -> Iterator[frozenset[Edge]]:
    """
    Yield directed edge sets of all consistent extensions.

    Undirected edges are decided in sorted order, ``low -> high`` before
    ``high -> low``, so the output is lexicographic over orientations.
    """
    edges = sorted(g.undirected_edges)
    parents = [set(g.parents(i)) for i in range(g.p)]
    children = [set(g.children(i)) for i in range(g.p)]
    chosen: list[Edge] = []

    def reaches(source: int, target: int) -> bool:
        stack = [source]
        seen = {source}
        while stack:
            node = stack.pop()
            if node == target:
                return True
            for nxt in children[node]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def allowed(u: int, v: int) -> bool:
        if reaches(v, u):
            return False
        # u -> v is new, so every unshielded collider it completes is new
        return all(w == u or g.adjacent(w, u) for w in parents[v])

    def descend(k: int) -> Iterator[frozenset[Edge]]:
        if k == len(edges):
            yield g.directed_edges | frozenset(chosen)
            return
        a, b = edges[k]
        for u, v in ((a, b), (b, a)):
            if not allowed(u, v):
                continue
            children[u].add(v)
            parents[v].add(u)
            chosen.append((u, v))
            yield from descend(k + 1)
            chosen.pop()
            parents[v].discard(u)
            children[u].discard(v)

    yield from descend(0)


def consistent_extensions(g: Pdag) -> list[Dag]:
    """All consistent DAG extensions in lexicographic orientation order."""
    return [
        Dag._trusted(g.p, g.names, edges, frozenset()) for edges in _iter_orientations(g)
    ]


def first_extension(g: Pdag) -> Dag | None:
    """The lexicographically first consistent extension, if any."""
    edges = next(_iter_orientations(g), None)
    if edges is None:
        return None
    return Dag._trusted(g.p, g.names, edges, frozenset())


def _phi_sizes(size: int, prefixes: tuple[int, ...]) -> int:
    # orderings of a clique that start with none of the nested forbidden prefixes
    total = math.factorial(size)
    for k, prefix in enumerate(prefixes):
        total -= math.factorial(size - prefix) * _phi_sizes(prefix, prefixes[:k])
    return total


def _components_after(graph: nx.Graph, clique: frozenset[int]) -> list[frozenset[Edge]]:
    """Undirected components left after ``clique`` is placed first."""
    directed: set[Edge] = set()
    undirected: set[Edge] = set()
    for a, b in graph.edges:
        a, b = _norm(a, b)
        if a in clique:
            directed.add((a, b))
        elif b in clique:
            directed.add((b, a))
        else:
            undirected.add((a, b))
    _meek_closure(directed, undirected)
    rest = nx.Graph()
    rest.add_edges_from(sorted(undirected))
    return [
        frozenset(_norm(a, b) for a, b in rest.subgraph(nodes).edges)
        for nodes in sorted(nx.connected_components(rest), key=sorted)
    ]


@lru_cache(maxsize=4096)
def _count_orderings(edges: frozenset[Edge]) -> int:
    """Acyclic moral orientations of a connected chordal graph (clique picking)."""
    graph = nx.Graph()
    graph.add_edges_from(sorted(edges))
    cliques = sorted((frozenset(c) for c in nx.chordal_graph_cliques(graph)), key=sorted)
    if len(cliques) == 1:
        return math.factorial(len(cliques[0]))

    tree = nx.Graph()
    tree.add_nodes_from(range(len(cliques)))
    for a, b in itertools.combinations(range(len(cliques)), 2):
        shared = len(cliques[a] & cliques[b])
        if shared:
            tree.add_edge(a, b, weight=shared)
    tree = nx.maximum_spanning_tree(tree)
    paths = nx.single_source_shortest_path(tree, 0)

    total = 0
    for v in sorted(paths):
        clique = cliques[v]
        path = paths[v]
        # separators along the root path that lie inside the clique; nested
        separators = {cliques[a] & cliques[b] for a, b in itertools.pairwise(path)}
        prefixes = {s for s in separators if s <= clique}
        sizes = tuple(sorted(len(s) for s in prefixes))
        product = 1
        for component in _components_after(graph, clique):
            product *= _count_orderings(component)
        total += _phi_sizes(len(clique), sizes) * product
    return total


def _chain_structured(g: Pdag, components: list[frozenset[int]]) -> bool:
    """Whether |CE| factorises over chordal undirected components."""
    for nodes in components:
        shared = {g.parents(i) for i in nodes}
        if len(shared) != 1:
            return False
        if any(a in nodes and b in nodes for a, b in g.directed_edges):
            return False
        induced = nx.Graph()
        induced.add_edges_from(e for e in g.undirected_edges if e[0] in nodes)
        if not nx.is_chordal(induced):
            return False
    return True


def count_extensions(g: Pdag, limit: int = DEFAULT_COUNT_LIMIT) -> int:
    """
    Number of consistent DAG extensions.

    Enumerates when every undirected component has at most ``limit``
    nodes. Larger chain-structured graphs (every CPDAG) are counted per
    chordal component with the clique-picking recursion.
    """
    components = g.undirected_components()
    if not components:
        return 1
    if max(len(c) for c in components) > limit:
        if _chain_structured(g, components):
            total = 1
            for nodes in components:
                edges = frozenset(e for e in g.undirected_edges if e[0] in nodes)
                total *= _count_orderings(edges)
            return total
        logger.debug("graph is not chain structured; counting extensions by enumeration")
    return sum(1 for _ in _iter_orientations(g))


def local_orientation(c: Pdag, i: int, parents: Iterable[int]) -> Mpdag | None:
    """
    Orient every undirected edge at ``i`` and close under the Meek rules.

    ``parents`` are the undirected neighbors that point into ``i``; the
    rest point away. Returns None when the orientation adds a v-structure
    or has no consistent extension, so the extensions of the result are
    exactly the members of CE(c) with that parent set.
    """
    chosen = frozenset(parents)
    if not chosen <= c.neighbors(i):
        raise GraphError(f"{sorted(chosen)} are not undirected neighbors of {i}")
    directed = set(c.directed_edges)
    undirected = set(c.undirected_edges)
    for w in c.neighbors(i):
        undirected.discard(_norm(i, w))
        directed.add((w, i) if w in chosen else (i, w))
    try:
        _meek_closure(directed, undirected)
    except InconsistentGraphError:
        return None
    oriented = Mpdag._trusted(c.p, c.names, frozenset(directed), frozenset(undirected))
    if not nx.is_directed_acyclic_graph(oriented.directed_graph()):
        return None
    if oriented.v_structures() != c.v_structures():
        return None
    if first_extension(oriented) is None:
        return None
    return oriented


# Separation and adjustment


def _check_query(d: Dag, x: int, y: int, z: frozenset[int]) -> None:
    if x == y:
        raise GraphError(f"query needs two distinct variables, got {x} twice")
    if x in z or y in z:
        raise GraphError("conditioning set contains an endpoint")
    for node in (x, y, *z):
        if not 0 <= node < d.p:
            raise GraphError(f"variable {node} out of range for p={d.p}")


def is_d_separated(d: Dag, x: int, y: int, z: Iterable[int]) -> bool:
    """Bayes-Ball reachability: True iff ``z`` blocks every path between x and y."""
    given = frozenset(z)
    _check_query(d, x, y, given)

    opens_collider = set(given)
    for node in given:
        opens_collider |= d.ancestors(node)

    # "up": entered from a child; "down": entered from a parent
    stack: list[tuple[int, str]] = [(x, "up")]
    visited: set[tuple[int, str]] = set()
    while stack:
        node, direction = stack.pop()
        if (node, direction) in visited:
            continue
        visited.add((node, direction))
        if node == y:
            return False
        if direction == "up" and node not in given:
            stack.extend((parent, "up") for parent in d.parents(node))
            stack.extend((child, "down") for child in d.children(node))
        elif direction == "down":
            if node not in given:
                stack.extend((child, "down") for child in d.children(node))
            if node in opens_collider:
                stack.extend((parent, "up") for parent in d.parents(node))
    return True


def satisfies_adjustment_criterion(d: Dag, x: int, y: int, z: Iterable[int]) -> bool:
    """
    Adjustment criterion for the effect of x on y.

    (a) no member of z descends from a node other than x on a causal path
    from x to y, and (b) z d-separates x and y once the first edge of
    every proper causal path is removed.
    """
    given = frozenset(z)
    _check_query(d, x, y, given)

    causal = d.descendants(x) & (d.ancestors(y) | {y})
    forbidden: set[int] = set(causal)
    for w in causal:
        forbidden |= d.descendants(w)
    if given & forbidden:
        return False

    backdoor = Dag._trusted(
        d.p,
        d.names,
        d.directed_edges - {(x, w) for w in causal},
        frozenset(),
    )
    return is_d_separated(backdoor, x, y, given)


def identifies_effect(source: Dag, target: Dag, i: int, j: int) -> bool:
    """
    Whether the parents of i in ``source`` identify the effect of i on j in ``target``.

    A parent set containing j encodes a zero effect, which is right
    exactly when j does not descend from i in ``target``.
    """
    adjustment = source.parents(i)
    if j in adjustment:
        return j not in target.descendants(i)
    return satisfies_adjustment_criterion(target, i, j, adjustment)
