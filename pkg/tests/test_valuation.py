import math
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

from ccival.effects import Estimator, estimate
from ccival.errors import VariableMismatchError
from ccival.graph import (
    Cpdag,
    Dag,
    consistent_extensions,
    cpdag_of,
    satisfies_adjustment_criterion,
)
from ccival.models import EffectDistribution, GaussianComponent
from ccival.synth import fixture_sem, random_dag, random_sem, sample
from ccival.valuation import (
    dsid,
    falsely_identified_pairs,
    kl_gaussian,
    kl_mixture,
    pair_falsely_identified,
    v_dsid,
    v_kl,
    valuation,
)


def single_edge() -> Cpdag:
    return Cpdag(2, undirected=[(0, 1)])


def point_estimator(graph: Cpdag, means: dict[tuple[int, int], float]) -> Estimator:
    effects = {
        (i, j): EffectDistribution.point(means.get((i, j), 0.0), 1.0)
        for i in range(graph.p)
        for j in range(graph.p)
        if i != j
    }
    return Estimator(graph=graph, effects=effects, sample_size=100)


def adjusts(source: Dag, target: Dag, i: int, j: int) -> bool:
    """Whether the parents of i in ``source`` adjust for (i, j) in ``target``."""
    z = source.parents(i)
    if j in z:
        return j not in nx.descendants(target.directed_graph(), i)
    return satisfies_adjustment_criterion(target, i, j, z)


def brute_force_classes(c: Cpdag, i: int, j: int) -> list[tuple[Dag, Fraction]]:
    """Enumerated extensions grouped by mutual adjustment; first members represent."""
    extensions = consistent_extensions(c)
    classes: list[list[Dag]] = []
    for d in extensions:
        for members in classes:
            if adjusts(d, members[0], i, j) and adjusts(members[0], d, i, j):
                members.append(d)
                break
        else:
            classes.append([d])
    return [(members[0], Fraction(len(members), len(extensions))) for members in classes]


def brute_force_dsid(c1: Cpdag, c2: Cpdag) -> int:
    count = 0
    for i in range(c1.p):
        for j in range(c1.p):
            if i == j:
                continue
            targets = brute_force_classes(c2, i, j)
            for head, share in brute_force_classes(c1, i, j):
                if not any(
                    share == other_share and adjusts(head, other, i, j)
                    for other, other_share in targets
                ):
                    count += 1
                    break
    return count


class TestDsid:
    """Tests for pair_falsely_identified, falsely_identified_pairs and dsid."""

    def test_identity(self) -> None:
        """A CPDAG has no falsely identified pair against itself."""
        for k in range(200):
            c = cpdag_of(random_dag(2 + k % 6, 0.4, (59, k)))
            assert dsid(c, c) == 0

    def test_single_edge_vs_edgeless(self) -> None:
        """X -- Y against the empty graph gets both ordered pairs wrong."""
        assert pair_falsely_identified(single_edge(), Cpdag(2), 0, 1)
        assert dsid(single_edge(), Cpdag(2)) == 2
        assert falsely_identified_pairs(single_edge(), Cpdag(2)) == frozenset({(0, 1), (1, 0)})

    def test_edgeless_vs_single_edge(self) -> None:
        """The empty graph's point mass matches neither half of X -- Y."""
        assert dsid(Cpdag(2), single_edge()) == 2

    def test_valid_adjustment_is_not_false(self) -> None:
        """Collider adjustment sets stay valid in the empty graph."""
        collider = Cpdag(3, directed=[(0, 2), (1, 2)])
        assert not pair_falsely_identified(collider, Cpdag(3), 0, 2)
        assert not pair_falsely_identified(collider, Cpdag(3), 2, 0)
        assert dsid(collider, Cpdag(3)) == brute_force_dsid(collider, Cpdag(3))

    def test_chain_vs_collider(self) -> None:
        """The chain class against the collider matches the brute-force count."""
        chain = Cpdag(3, undirected=[(0, 1), (1, 2)])
        collider = Cpdag(3, directed=[(0, 2), (1, 2)])
        assert dsid(chain, collider) == brute_force_dsid(chain, collider)
        assert dsid(collider, chain) == brute_force_dsid(collider, chain)

    def test_representative_opens_collider(self) -> None:
        """A representative whose parents open a collider makes the pair false."""
        c1 = Cpdag(4, undirected=[(0, 2), (0, 3), (2, 3)])
        c2 = Cpdag(4, directed=[(1, 0), (2, 0), (3, 0)], undirected=[(1, 2)])
        # c1's first extension gives X4 the parents {X1, X3}; c2 has X4 -> X1 <- X2
        assert pair_falsely_identified(c1, c2, 3, 1)
        assert dsid(c1, c2) == brute_force_dsid(c1, c2)

    @pytest.mark.slow
    def test_matches_brute_force(self) -> None:
        """dsid agrees with grouping enumerated extensions on random pairs."""
        for k in range(200):
            p = 3 + k % 3
            c1 = cpdag_of(random_dag(p, 0.5, (61, k)))
            c2 = cpdag_of(random_dag(p, 0.5, (67, k)))
            assert dsid(c1, c2) == brute_force_dsid(c1, c2), (c1, c2)

    def test_variable_mismatch(self) -> None:
        """Both graphs must have the same variables."""
        with pytest.raises(VariableMismatchError):
            dsid(Cpdag(2), Cpdag(3))


class TestKl:
    """Tests for kl_gaussian and kl_mixture."""

    def test_identical(self) -> None:
        """A normal has no divergence from itself."""
        component = GaussianComponent(mean=1.0, std=2.0)
        assert kl_gaussian(component, component) == 0.0

    def test_mean_shift(self) -> None:
        """N(0, 1) against N(1, 1) diverges by one half."""
        p = GaussianComponent(mean=0.0, std=1.0)
        q = GaussianComponent(mean=1.0, std=1.0)
        assert kl_gaussian(p, q) == pytest.approx(0.5)

    def test_scale(self) -> None:
        """N(0, 2) against N(0, 1) by the closed form."""
        p = GaussianComponent(mean=0.0, std=2.0)
        q = GaussianComponent(mean=0.0, std=1.0)
        assert kl_gaussian(p, q) == pytest.approx(2.0 - math.log(2.0) - 0.5)

    def test_single_component_is_exact(self) -> None:
        """Single components skip sampling."""
        p = EffectDistribution.point(0.0, 1.0)
        q = EffectDistribution.point(1.0, 1.0)
        assert kl_mixture(p, q, mc_samples=1) == pytest.approx(0.5)

    def test_mixture_self_divergence(self) -> None:
        """A two-component mixture has (near) zero divergence from itself."""
        p = EffectDistribution(
            components=(
                GaussianComponent(mean=-1.0, std=0.5, weight=0.3),
                GaussianComponent(mean=2.0, std=1.0, weight=0.7),
            )
        )
        assert abs(kl_mixture(p, p, mc_samples=100_000)) <= 0.01

    def test_mixture_estimate(self) -> None:
        """A split copy of N(0, 1) against N(1, 1) estimates one half."""
        p = EffectDistribution(
            components=(
                GaussianComponent(mean=0.0, std=1.0, weight=0.5),
                GaussianComponent(mean=0.0, std=1.0, weight=0.5),
            )
        )
        q = EffectDistribution.point(1.0, 1.0)
        assert kl_mixture(p, q, mc_samples=100_000, seed=3) == pytest.approx(0.5, abs=0.01)

    def test_mixture_deterministic(self) -> None:
        """The same seed gives the same estimate."""
        p = EffectDistribution(
            components=(
                GaussianComponent(mean=0.0, std=1.0, weight=0.5),
                GaussianComponent(mean=3.0, std=1.0, weight=0.5),
            )
        )
        q = EffectDistribution.point(1.0, 2.0)
        assert kl_mixture(p, q, 5000, seed=(1, 2)) == kl_mixture(p, q, 5000, seed=(1, 2))
        assert kl_mixture(p, q, 5000) >= 0.0


class TestValuation:
    """Tests for v_dsid, v_kl and valuation."""

    def test_v_dsid_range(self) -> None:
        """Two wrong pairs out of two give -1."""
        e = point_estimator(single_edge(), {})
        b = point_estimator(Cpdag(2), {})
        assert v_dsid(e, b) == -1.0
        assert v_dsid(e, e) == 0.0

    def test_v_kl_one_pair(self) -> None:
        """A single pair with divergence 0.5 gives -0.5."""
        e = point_estimator(Cpdag(2), {})
        b = point_estimator(Cpdag(2), {(0, 1): 1.0})
        assert v_kl(e, b, {(0, 1)}) == pytest.approx(-0.5)
        assert v_kl(e, b, set()) == 0.0

    def test_composition(self) -> None:
        """v is v_dsid plus the mean divergence over correct pairs."""
        e = point_estimator(Cpdag(2), {})
        b = point_estimator(Cpdag(2), {(0, 1): 1.0})
        report = valuation(e, b)
        assert report.dsid == 0
        assert report.v_dsid == 0.0
        assert report.v_kl == pytest.approx(-0.25)
        assert report.v == report.v_dsid + report.v_kl
        assert report.correctly_identified_pairs == [(0, 1), (1, 0)]

    def test_all_pairs_wrong(self) -> None:
        """With no correct pair v_kl is 0 and v is -1."""
        e = point_estimator(single_edge(), {(0, 1): 5.0})
        b = point_estimator(Cpdag(2), {})
        report = valuation(e, b)
        assert report.v_kl == 0.0
        assert report.v == -1.0
        assert report.falsely_identified_pairs == [(0, 1), (1, 0)]

    def test_chain_vs_collider(self) -> None:
        """The report composes the two sub-operations."""
        chain = estimate(sample(fixture_sem("chain3"), 2000, seed=1))
        collider = estimate(sample(fixture_sem("collider3"), 2000, seed=1))
        report = valuation(chain, collider, mc_samples=4000, seed=2)
        wrong = falsely_identified_pairs(chain.graph, collider.graph)
        right = {(i, j) for i in range(3) for j in range(3) if i != j} - wrong
        assert report.v_dsid == v_dsid(chain, collider)
        assert report.v_kl == pytest.approx(v_kl(chain, collider, right, 4000, 2))
        assert report.v <= 0.0

    def test_self_valuation_is_zero(self) -> None:
        """v(e, e) = 0 for learned estimators."""
        for k in range(20):
            sem = random_sem(random_dag(4, 0.5, (71, k)), 0.5, 2.0, (71, k))
            e = estimate(sample(sem, 300, seed=k))
            report = valuation(e, e, mc_samples=1000)
            assert report.v == 0.0
            assert report.dsid == 0

    def test_v_dsid_bounds(self) -> None:
        """v_dsid stays in [-1, 0]."""
        rng = np.random.default_rng(73)
        for k in range(20):
            p = int(rng.integers(2, 5))
            e = point_estimator(cpdag_of(random_dag(p, 0.5, (73, k))), {})
            b = point_estimator(cpdag_of(random_dag(p, 0.5, (79, k))), {})
            assert -1.0 <= v_dsid(e, b) <= 0.0
