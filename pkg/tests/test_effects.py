import itertools
from fractions import Fraction

import networkx as nx
import numpy as np
import pytest

from ccival.effects import (
    SIGMA_FLOOR,
    Estimator,
    IdGraph,
    estimate,
    id_graphs,
    ida_effect,
    parent_set_weights,
    regress_beta,
)
from ccival.errors import DegenerateDataError, VariableMismatchError
from ccival.graph import (
    Cpdag,
    Dag,
    consistent_extensions,
    count_extensions,
    cpdag_of,
    satisfies_adjustment_criterion,
)
from ccival.models import EffectDistribution
from ccival.synth import (
    Dataset,
    LinearSem,
    fixture_sem,
    random_dag,
    random_sem,
    sample,
    total_effect_oracle,
)


def chain_cpdag() -> Cpdag:
    return Cpdag(3, undirected=[(0, 1), (1, 2)])


def dag_edges(d: Dag) -> frozenset[tuple[int, int]]:
    return d.directed_edges


def adjusts(source: Dag, target: Dag, i: int, j: int) -> bool:
    """Whether the parents of i in ``source`` adjust for (i, j) in ``target``."""
    z = source.parents(i)
    if j in z:
        return j not in nx.descendants(target.directed_graph(), i)
    return satisfies_adjustment_criterion(target, i, j, z)


def brute_force_classes(c: Cpdag, i: int, j: int) -> list[list[Dag]]:
    """Enumerated extensions grouped by mutual adjustment, in enumeration order."""
    classes: list[list[Dag]] = []
    for d in consistent_extensions(c):
        for members in classes:
            if adjusts(d, members[0], i, j) and adjusts(members[0], d, i, j):
                members.append(d)
                break
        else:
            classes.append([d])
    return classes


def partition(classes: tuple[IdGraph, ...]) -> set[frozenset[frozenset[tuple[int, int]]]]:
    return {frozenset(dag_edges(d) for d in cls.extensions()) for cls in classes}


def adjustment_sets(d: Dag, i: int, j: int) -> set[frozenset[int]]:
    rest = [v for v in range(d.p) if v not in (i, j)]
    return {
        frozenset(z)
        for size in range(len(rest) + 1)
        for z in itertools.combinations(rest, size)
        if satisfies_adjustment_criterion(d, i, j, z)
    }


def confounded_sem() -> LinearSem:
    # Z -> X, Z -> Y, X -> Y with indices Z=0, X=1, Y=2
    return LinearSem(
        dag=Dag(3, [(0, 1), (0, 2), (1, 2)], names=["Z", "X", "Y"]),
        coefficients={(0, 1): 1.0, (0, 2): 1.0, (1, 2): 2.0},
        noise_means=(0.0, 0.0, 0.0),
        noise_stds=(1.0, 1.0, 1.0),
    )


class TestRegressBeta:
    """Tests for regress_beta."""

    def test_direct_effect(self) -> None:
        """Y = 2X + U recovers 2."""
        data = sample(fixture_sem("chain3"), 100_000, seed=1)
        fit = regress_beta(data, 0, 1, set())
        assert fit.mean == pytest.approx(2.0, abs=0.05)
        assert 0 < fit.std < 0.01
        assert fit.weight == 1.0

    def test_adjusted_and_confounded(self) -> None:
        """Adjusting for Z removes the confounding bias of 0.5."""
        data = sample(confounded_sem(), 100_000, seed=2)
        assert regress_beta(data, 1, 2, {0}).mean == pytest.approx(2.0, abs=0.05)
        assert regress_beta(data, 1, 2, set()).mean == pytest.approx(2.5, abs=0.05)

    def test_target_in_adjustment_set(self) -> None:
        """A parent set containing the target encodes a zero effect."""
        data = sample(fixture_sem("chain3"), 20, seed=0)
        fit = regress_beta(data, 1, 0, {0})
        assert fit.mean == 0.0
        assert fit.std == SIGMA_FLOOR

    def test_rank_deficient(self) -> None:
        """Duplicated regressors are rejected."""
        rng = np.random.default_rng(0)
        x = rng.normal(size=50)
        rows = np.column_stack([x, x, rng.normal(size=50)])
        data = Dataset(rows=rows, names=("A", "B", "C"))
        with pytest.raises(DegenerateDataError, match="rank"):
            regress_beta(data, 0, 2, {1})

    def test_too_few_rows(self) -> None:
        """Each coefficient needs a row beyond it."""
        data = sample(fixture_sem("diamond4"), 3, seed=0)
        with pytest.raises(DegenerateDataError):
            regress_beta(data, 0, 3, {1, 2})


class TestParentSetWeights:
    """Tests for parent_set_weights."""

    def test_chain_middle_node(self) -> None:
        """Each of the three parent sets of X2 carries one third."""
        weights = parent_set_weights(chain_cpdag(), 1)
        assert sorted(sorted(s) for s, _ in weights) == [[], [0], [2]]
        assert [w for _, w in weights] == [Fraction(1, 3)] * 3

    def test_chain_end_node(self) -> None:
        """X1 has no parent in one extension and X2 as parent in two."""
        weights = dict(parent_set_weights(chain_cpdag(), 0))
        assert weights == {frozenset(): Fraction(1, 3), frozenset({1}): Fraction(2, 3)}

    def test_weights_match_enumeration(self) -> None:
        """Weights equal parent-set frequencies over the enumerated extensions."""
        for k in range(20):
            c = cpdag_of(random_dag(5, 0.5, (37, k)))
            extensions = consistent_extensions(c)
            for i in range(c.p):
                weights = dict(parent_set_weights(c, i))
                assert sum(weights.values()) == 1
                for parents, weight in weights.items():
                    hits = sum(e.parents(i) == parents for e in extensions)
                    assert weight == Fraction(hits, len(extensions))


class TestIdaEffect:
    """Tests for ida_effect and estimate."""

    def test_directed_class_single_component(self) -> None:
        """Without undirected neighbors the mixture has one component."""
        sem = fixture_sem("collider3")
        data = sample(sem, 100_000, seed=3)
        mixture = ida_effect(data, Cpdag(3, directed=[(0, 2), (1, 2)]), 0, 2)
        assert len(mixture.components) == 1
        assert mixture.components[0].mean == pytest.approx(1.5, abs=0.05)

    def test_chain_mixture(self) -> None:
        """The chain's (X1, X3) mixture holds the true effect 6 and a zero."""
        data = sample(fixture_sem("chain3"), 100_000, seed=4)
        mixture = ida_effect(data, chain_cpdag(), 0, 2)
        means = sorted(c.mean for c in mixture.components)
        assert means[0] == pytest.approx(0.0, abs=0.05)
        assert means[1] == pytest.approx(6.0, abs=0.1)
        assert sorted(c.weight for c in mixture.components) == pytest.approx([1 / 3, 2 / 3])

    def test_variable_mismatch(self) -> None:
        """Data and graph must share the variable count."""
        data = sample(fixture_sem("chain3"), 20, seed=0)
        with pytest.raises(VariableMismatchError):
            ida_effect(data, Cpdag(2), 0, 1)

    @pytest.mark.slow
    def test_true_effect_among_components(self) -> None:
        """Some component sits near the true effect on the true class."""
        rng = np.random.default_rng(47)
        for k in range(50):
            dag = random_dag(4, 0.5, (47, k))
            sem = random_sem(dag, 0.5, 2.0, (47, k))
            data = sample(sem, 100_000, seed=k)
            i, j = (int(v) for v in rng.choice(4, size=2, replace=False))
            truth = total_effect_oracle(sem, i, j)
            mixture = ida_effect(data, cpdag_of(dag), i, j)
            assert min(abs(comp.mean - truth) for comp in mixture.components) <= 0.1

    def test_estimate_chain(self) -> None:
        """estimate learns the chain class and a near-6 component for (X1, X3)."""
        data = sample(fixture_sem("chain3"), 100_000, seed=0)
        e = estimate(data)
        assert isinstance(e, Estimator)
        assert e.graph == chain_cpdag()
        assert e.sample_size == 100_000
        assert len(e.effects) == 6
        assert any(abs(c.mean - 6.0) < 0.1 for c in e.effect(0, 2).components)

    def test_estimator_requires_every_pair(self) -> None:
        """An estimator covers all ordered pairs."""
        with pytest.raises(ValueError):
            Estimator(
                graph=Cpdag(2),
                effects={(0, 1): EffectDistribution.point(0.0, 1.0)},
                sample_size=10,
            )


class TestIdGraphs:
    """Tests for id_graphs."""

    def test_single_edge_splits(self) -> None:
        """X -- Y splits into X -> Y and X <- Y for the effect of X on Y."""
        classes = id_graphs(Cpdag(2, undirected=[(0, 1)]), 0, 1)
        assert len(classes) == 2
        assert sorted(sorted(cls.representative.directed_edges) for cls in classes) == [
            [(0, 1)],
            [(1, 0)],
        ]
        assert [cls.extension_count for cls in classes] == [1, 1]

    def test_directed_class_is_one_subclass(self) -> None:
        """A fully directed class has a single subclass."""
        classes = id_graphs(Cpdag(3, directed=[(0, 2), (1, 2)]), 0, 2)
        assert len(classes) == 1
        assert classes[0].extension_count == 1

    def test_classes_cover_extensions(self) -> None:
        """Subclasses partition the consistent extensions."""
        for k in range(20):
            c = cpdag_of(random_dag(5, 0.5, (53, k)))
            extensions = consistent_extensions(c)
            for i in range(c.p):
                for j in range(c.p):
                    if i == j:
                        continue
                    classes = id_graphs(c, i, j)
                    assert sum(cls.extension_count for cls in classes) == count_extensions(c)
                    members = [d for cls in classes for d in cls.extensions()]
                    assert sorted(members, key=repr) == sorted(extensions, key=repr)

    def test_chain_pair_matches_grouping(self) -> None:
        """Chain subclasses for (X2, X3) match the enumerated grouping."""
        classes = id_graphs(chain_cpdag(), 1, 2)
        expected = brute_force_classes(chain_cpdag(), 1, 2)
        assert partition(classes) == {frozenset(dag_edges(d) for d in m) for m in expected}
        assert sum(cls.extension_count for cls in classes) == 3

    @pytest.mark.slow
    def test_matches_brute_force_grouping(self) -> None:
        """Subclasses and representatives agree with grouping enumerated extensions."""
        for k in range(60):
            c = cpdag_of(random_dag(3 + k % 3, 0.6, (71, k)))
            for i in range(c.p):
                for j in range(c.p):
                    if i == j:
                        continue
                    classes = id_graphs(c, i, j)
                    expected = brute_force_classes(c, i, j)
                    assert partition(classes) == {
                        frozenset(dag_edges(d) for d in members) for members in expected
                    }, (c, i, j)
                    firsts = {dag_edges(members[0]) for members in expected}
                    assert {dag_edges(cls.representative) for cls in classes} == firsts

    def test_representative_is_lexicographically_first(self) -> None:
        """The representative of a merged subclass is its first enumerated extension."""
        # X2 is isolated, so every extension shares one subclass for (X4, X2)
        c = Cpdag(4, undirected=[(0, 2), (0, 3), (2, 3)])
        classes = id_graphs(c, 3, 1)
        assert len(classes) == 1
        assert classes[0].representative == consistent_extensions(c)[0]
        assert classes[0].representative.parents(3) == frozenset({0, 2})

    @pytest.mark.slow
    def test_representative_adjusts_in_every_member(self) -> None:
        """The representative's parent set identifies the effect in each member."""
        for k in range(40):
            c = cpdag_of(random_dag(3 + k % 3, 0.6, (73, k)))
            for i in range(c.p):
                for j in range(c.p):
                    if i == j:
                        continue
                    for cls in id_graphs(c, i, j):
                        head = cls.representative
                        for member in cls.extensions():
                            assert adjusts(head, member, i, j), (c, i, j)

    @pytest.mark.slow
    def test_adjustment_sets_equal_when_parents_adjust(self) -> None:
        """Within a class, a parent set valid in another extension gives equal adjustment sets."""
        for k in range(25):
            c = cpdag_of(random_dag(4, 0.6, (79, k)))
            extensions = consistent_extensions(c)
            for i, j in itertools.permutations(range(c.p), 2):
                for d, other in itertools.permutations(extensions, 2):
                    if j in d.parents(i) or j in other.parents(i):
                        continue
                    if satisfies_adjustment_criterion(other, i, j, d.parents(i)):
                        assert adjustment_sets(d, i, j) == adjustment_sets(other, i, j)
