"""
CPDAG estimation with the order-independent (stable) PC algorithm.

Conditional independence is tested with Fisher's z-transform of the sample
partial correlation, computed from the inverse of a correlation submatrix.
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Iterable

import networkx as nx
import numpy as np
from scipy.stats import norm

from .errors import DegenerateDataError, InconsistentGraphError
from .graph import Cpdag, Dag, Edge, Pdag, apply_meek_rules, cpdag_of, first_extension
from .models import PcConfig
from .synth import Dataset

logger = logging.getLogger(__name__)


class FisherZ:
    """Fisher-z conditional independence test over one dataset."""

    def __init__(self, data: Dataset) -> None:
        self.n = data.n
        with np.errstate(invalid="ignore", divide="ignore"):
            self.corr = np.corrcoef(data.rows, rowvar=False).reshape(data.p, data.p)
        if not np.all(np.isfinite(self.corr)):
            constant = [k for k in range(data.p) if not np.isfinite(self.corr[k, k])]
            raise DegenerateDataError("constant column in data", constant)

    def statistic(self, i: int, j: int, z: Iterable[int]) -> float:
        """``sqrt(n - |z| - 3) * |atanh(pcorr(i, j | z))|``."""
        cond = sorted(z)
        if self.n <= len(cond) + 3:
            raise DegenerateDataError(
                f"{self.n} rows cannot test with {len(cond)} conditioning variables",
                (i, j, *cond),
            )
        index = [i, j, *cond]
        sub = self.corr[np.ix_(index, index)]
        try:
            precision = np.linalg.inv(sub)
        except np.linalg.LinAlgError as e:
            raise DegenerateDataError("singular correlation submatrix", index) from e
        denom = precision[0, 0] * precision[1, 1]
        if not denom > 0:
            raise DegenerateDataError("singular correlation submatrix", index)
        r = -precision[0, 1] / math.sqrt(denom)
        r = min(max(r, -1.0 + 1e-12), 1.0 - 1e-12)
        return math.sqrt(self.n - len(cond) - 3) * abs(math.atanh(r))

    def independent(self, i: int, j: int, z: Iterable[int], alpha: float) -> bool:
        return self.statistic(i, j, z) <= norm.ppf(1.0 - alpha / 2.0)


def fisher_z_independent(
    data: Dataset, i: int, j: int, z: Iterable[int], alpha: float
) -> bool:
    """True iff the Fisher-z test does not reject independence of i and j given z."""
    return FisherZ(data).independent(i, j, z, alpha)


def _skeleton(
    test: FisherZ, p: int, cfg: PcConfig
) -> tuple[list[set[int]], dict[Edge, frozenset[int]]]:
    adjacency = [set(range(p)) - {i} for i in range(p)]
    sepsets: dict[Edge, frozenset[int]] = {}
    threshold = norm.ppf(1.0 - cfg.alpha / 2.0)

    level = 0
    while cfg.max_cond_size is None or level <= cfg.max_cond_size:
        if level > test.n - 4:
            break
        snapshot = [frozenset(a) for a in adjacency]
        testable = False
        for i, j in itertools.combinations(range(p), 2):
            if j not in adjacency[i]:
                continue
            for x, y in ((i, j), (j, i)):
                candidates = sorted(snapshot[x] - {y})
                if len(candidates) < level:
                    continue
                testable = True
                separated = None
                for cond in itertools.combinations(candidates, level):
                    if test.statistic(x, y, cond) <= threshold:
                        separated = frozenset(cond)
                        break
                if separated is not None:
                    logger.debug(f"removed {i} -- {j} given {sorted(separated)}")
                    adjacency[i].discard(j)
                    adjacency[j].discard(i)
                    sepsets[(i, j)] = separated
                    break
        if not testable:
            break
        level += 1
    return adjacency, sepsets


def _orient_colliders(
    p: int, adjacency: list[set[int]], sepsets: dict[Edge, frozenset[int]]
) -> Pdag:
    proposals: set[Edge] = set()
    for c in range(p):
        for a, b in itertools.combinations(sorted(adjacency[c]), 2):
            if b in adjacency[a]:
                continue
            if c not in sepsets.get((a, b), frozenset()):
                proposals.add((a, c))
                proposals.add((b, c))

    conflicted = {(a, b) for a, b in proposals if (b, a) in proposals}
    if conflicted:
        logger.debug(f"leaving {len(conflicted) // 2} conflicting edges undirected")

    graph = nx.DiGraph()
    graph.add_nodes_from(range(p))
    for a, b in sorted(proposals - conflicted):
        if nx.has_path(graph, b, a):
            continue
        graph.add_edge(a, b)

    directed = set(graph.edges)
    undirected = {
        (a, b)
        for a in range(p)
        for b in adjacency[a]
        if a < b and (a, b) not in directed and (b, a) not in directed
    }
    return Pdag(p, directed, undirected)


def _project(pdag: Pdag) -> Cpdag:
    """A valid CPDAG as close as possible to ``pdag``."""
    try:
        closed = apply_meek_rules(pdag)
    except InconsistentGraphError:
        closed = None
    if closed is not None:
        extension = first_extension(closed)
        assert extension is not None
        result = cpdag_of(extension)
        if result != closed:
            logger.warning("learned graph is not a CPDAG; projecting onto its first extension")
        return result

    logger.warning("learned orientations are inconsistent; re-orienting along a topological order")
    topological = nx.lexicographical_topological_sort(pdag.directed_graph())
    order = {node: k for k, node in enumerate(topological)}
    arcs = set(pdag.directed_edges)
    for a, b in pdag.undirected_edges:
        arcs.add((a, b) if order[a] < order[b] else (b, a))
    return cpdag_of(Dag(pdag.p, arcs))


def pc_learn(data: Dataset, cfg: PcConfig | None = None) -> Cpdag:
    """
    Learn a CPDAG with the stable PC algorithm.

    Args:
        data: Observational samples.
        cfg: Significance level and conditioning-set bound.

    Returns:
        Valid CPDAG over the dataset's variables.

    Raises:
        DegenerateDataError: Fewer than p + 4 rows or singular correlations.
    """
    cfg = cfg or PcConfig()
    if data.n < data.p + 4:
        raise DegenerateDataError(f"need at least {data.p + 4} rows, got {data.n}")
    test = FisherZ(data)
    adjacency, sepsets = _skeleton(test, data.p, cfg)
    pdag = _orient_colliders(data.p, adjacency, sepsets)
    learned = _project(pdag).with_names(data.names)
    logger.info(
        f"learned CPDAG from {data.n} rows: {len(learned.directed_edges)} directed, "
        f"{len(learned.undirected_edges)} undirected edges"
    )
    return learned
