"""
Causal effect mixtures from a CPDAG and data.

For every possible parent set of ``V_i`` across the class, the effect of
``V_i`` on ``V_j`` is the coefficient of ``V_i`` when ``V_j`` is regressed
on ``V_i`` and that parent set (zero when ``V_j`` is itself a parent). The
mixture weights are the fractions of consistent extensions with each
parent set.
"""

from __future__ import annotations

import itertools
import logging
from collections.abc import Iterable
from fractions import Fraction
from functools import lru_cache

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import DegenerateDataError, GraphError, InconsistentGraphError, VariableMismatchError
from .graph import (
    Cpdag,
    Dag,
    Mpdag,
    Pdag,
    apply_meek_rules,
    consistent_extensions,
    count_extensions,
    first_extension,
    identifies_effect,
    local_orientation,
)
from .learn import pc_learn
from .models import EffectDistribution, GaussianComponent, PcConfig
from .synth import Dataset

logger = logging.getLogger(__name__)

# std of the forced zero effect when V_j is a parent of V_i
SIGMA_FLOOR = 1e-6


class Estimator(BaseModel):
    """A CPDAG with effect distributions for every ordered pair."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    graph: Cpdag
    effects: dict[tuple[int, int], EffectDistribution]
    sample_size: int

    @model_validator(mode="after")
    def _all_pairs(self) -> Estimator:
        p = self.graph.p
        expected = {(i, j) for i in range(p) for j in range(p) if i != j}
        if set(self.effects) != expected:
            raise ValueError("effects must cover every ordered pair of distinct variables")
        return self

    @property
    def p(self) -> int:
        return self.graph.p

    @property
    def names(self) -> tuple[str, ...]:
        return self.graph.names

    def effect(self, i: int, j: int) -> EffectDistribution:
        return self.effects[(i, j)]


class IdGraph(BaseModel):
    """
    A subclass of consistent extensions sharing one adjustment-set family.

    ``members`` are MPDAGs whose extension sets partition the subclass;
    a single member when the subclass is itself an MPDAG. ``representative``
    is the subclass's first extension in ``consistent_extensions`` order.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    members: tuple[Mpdag, ...]
    extension_count: int
    representative: Dag

    def extensions(self) -> list[Dag]:
        return [d for m in self.members for d in consistent_extensions(m)]


def regress_beta(data: Dataset, i: int, j: int, z: Iterable[int]) -> GaussianComponent:
    """
    OLS coefficient of ``V_i`` in ``V_j ~ V_i + z`` with its standard error.

    Raises:
        DegenerateDataError: Too few rows or a rank-deficient design.
    """
    if i == j:
        raise GraphError("regression needs two distinct variables")
    given = frozenset(z)
    if j in given:
        return GaussianComponent(mean=0.0, std=SIGMA_FLOOR, weight=1.0)

    cond = sorted(given)
    columns = [i, *cond]
    k = len(columns) + 1
    if data.n <= k:
        raise DegenerateDataError(f"{data.n} rows cannot fit {k} coefficients", (i, j, *cond))

    design = np.column_stack([np.ones(data.n), data.rows[:, columns]])
    response = data.rows[:, j]
    if np.linalg.matrix_rank(design) < k:
        raise DegenerateDataError("rank-deficient design matrix", (i, j, *cond))
    beta, *_ = np.linalg.lstsq(design, response, rcond=None)
    residual = response - design @ beta
    sigma2 = float(residual @ residual) / (data.n - k)
    covariance = sigma2 * np.linalg.inv(design.T @ design)
    std = max(float(np.sqrt(max(covariance[1, 1], 0.0))), SIGMA_FLOOR)
    return GaussianComponent(mean=float(beta[1]), std=std, weight=1.0)


@lru_cache(maxsize=1024)
def _local_classes(c: Pdag, i: int) -> tuple[tuple[frozenset[int], Mpdag, int], ...]:
    """(parent set, local MPDAG, extension count) for every feasible parent set of i."""
    neighbors = sorted(c.neighbors(i))
    found = []
    for size in range(len(neighbors) + 1):
        for chosen in itertools.combinations(neighbors, size):
            local = local_orientation(c, i, chosen)
            if local is None:
                continue
            found.append((c.parents(i) | frozenset(chosen), local, count_extensions(local)))
    return tuple(found)


def parent_set_weights(c: Pdag, i: int) -> list[tuple[frozenset[int], Fraction]]:
    """
    Distinct parent sets of ``i`` across CE(c) with exact extension fractions.

    Returns:
        ``(parent set, weight)`` pairs; weights sum to exactly 1.
    """
    total = count_extensions(c)
    return [(parents, Fraction(count, total)) for parents, _, count in _local_classes(c, i)]


def _mixture(
    data: Dataset, i: int, j: int, weights: list[tuple[frozenset[int], Fraction]]
) -> EffectDistribution:
    components = []
    for parents, weight in weights:
        fit = regress_beta(data, i, j, parents)
        components.append(GaussianComponent(mean=fit.mean, std=fit.std, weight=float(weight)))
    return EffectDistribution(components=tuple(components))


def ida_effect(data: Dataset, c: Cpdag, i: int, j: int) -> EffectDistribution:
    """Mixture of the possible effects of ``V_i`` on ``V_j`` over CE(c)."""
    if data.p != c.p:
        raise VariableMismatchError(c.p, data.p)
    return _mixture(data, i, j, parent_set_weights(c, i))


def estimate(data: Dataset, cfg: PcConfig | None = None) -> Estimator:
    """Learn a CPDAG with PC, then estimate effect mixtures for every ordered pair."""
    graph = pc_learn(data, cfg)
    effects: dict[tuple[int, int], EffectDistribution] = {}
    for i in range(data.p):
        weights = parent_set_weights(graph, i)
        for j in range(data.p):
            if i != j:
                effects[(i, j)] = _mixture(data, i, j, weights)
    return Estimator(graph=graph, effects=effects, sample_size=data.n)


def _merge(members: list[Mpdag], expected: int) -> Mpdag | None:
    """One MPDAG whose extensions are exactly the union of ``members``, if it exists."""
    first = members[0]
    directed = set(first.directed_edges)
    undirected = set(first.undirected_edges)
    for other in members[1:]:
        disagree = {e for e in directed if e not in other.directed_edges}
        directed -= disagree
        undirected |= {(min(a, b), max(a, b)) for a, b in disagree}
    try:
        merged = apply_meek_rules(Pdag(first.p, directed, undirected, first.names))
    except (GraphError, InconsistentGraphError):
        return None
    if count_extensions(merged) != expected:
        return None
    return merged


@lru_cache(maxsize=4096)
def id_graphs(c: Pdag, i: int, j: int) -> tuple[IdGraph, ...]:
    """
    Partition CE(c) into classes whose members share adjustment sets for (i, j).

    Extensions with equal parent sets of ``i`` are always in one class. Parent
    set groups join a class when each representative's parent set identifies
    the effect in the other representative.
    """
    groups: list[list[tuple[Mpdag, int, Dag]]] = []
    for _, local, count in _local_classes(c, i):
        representative = first_extension(local)
        assert representative is not None
        for group in groups:
            head = group[0][2]
            if identifies_effect(representative, head, i, j) and identifies_effect(
                head, representative, i, j
            ):
                group.append((local, count, representative))
                break
        else:
            groups.append([(local, count, representative)])

    # the first extension of each local MPDAG is also first in CE(c) order among its own
    edges = sorted(c.undirected_edges)

    def rank(d: Dag) -> tuple[bool, ...]:
        return tuple((b, a) in d.directed_edges for a, b in edges)

    classes = []
    for group in groups:
        members = [local for local, _, _ in group]
        count = sum(n for _, n, _ in group)
        if len(members) > 1:
            merged = _merge(members, count)
            if merged is not None:
                members = [merged]
        first = min((d for _, _, d in group), key=rank)
        classes.append(IdGraph(members=tuple(members), extension_count=count, representative=first))
    return tuple(classes)
