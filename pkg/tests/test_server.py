import pytest

from ccival.errors import MechanismError
from ccival.models import AgentSpec, BiasSpec, MechanismConfig
from ccival.server import Mediator, produce_batch
from ccival.synth import fixture_sem


@pytest.fixture
def mediator() -> Mediator:
    """Mediator for two agents on the chain fixture."""
    team = [
        AgentSpec(id="a", cost_per_point=0.01, batch_size=10, seed=1),
        AgentSpec(id="b", cost_per_point=0.01, batch_size=12, seed=2),
    ]
    return Mediator(team, fixture_sem("chain3"), MechanismConfig(mc_samples=500))


class TestMediatorSetup:
    """Tests for Mediator construction."""

    def test_needs_agents(self) -> None:
        """A mechanism needs at least one agent."""
        with pytest.raises(MechanismError):
            Mediator([], fixture_sem("chain3"), MechanismConfig())

    def test_bias_length(self) -> None:
        """Agent biases must match the SEM."""
        agent = AgentSpec(id="a", cost_per_point=0.1, batch_size=10, bias=BiasSpec.identity(2))
        with pytest.raises(MechanismError, match="bias"):
            Mediator([agent], fixture_sem("chain3"), MechanismConfig())

    def test_batch_must_support_learning(self) -> None:
        """Batches smaller than p + 4 rows are rejected."""
        agent = AgentSpec(id="a", cost_per_point=0.1, batch_size=6)
        with pytest.raises(MechanismError, match="need 7"):
            Mediator([agent], fixture_sem("chain3"), MechanismConfig())


class TestCollection:
    """Tests for collecting and pooling data."""

    def test_batches_accumulate(self, mediator: Mediator) -> None:
        """Each collection appends one batch."""
        a, b = mediator.agents
        assert mediator.data_size("a") == 0
        mediator.collect(a, 1)
        mediator.collect(a, 2)
        mediator.collect(b, 1)
        assert mediator.data_size("a") == 20
        assert mediator.data_size("b") == 12
        assert [(blk.agent_id, blk.timestep) for blk in mediator.dataset("a").provenance] == [
            ("a", 1),
            ("a", 2),
        ]

    def test_batches_are_seeded_per_timestep(self, mediator: Mediator) -> None:
        """The batch of one agent and timestep never changes."""
        a = mediator.agents[0]
        first = produce_batch(mediator.sem, a, 3)
        second = produce_batch(mediator.sem, a, 3)
        other = produce_batch(mediator.sem, a, 4)
        assert first.fingerprint() == second.fingerprint()
        assert first.fingerprint() != other.fingerprint()

    def test_pooled_in_agent_order(self, mediator: Mediator) -> None:
        """Pools follow agent order regardless of the requested order."""
        a, b = mediator.agents
        mediator.collect(b, 1)
        mediator.collect(a, 1)
        pooled = mediator.pooled(["b", "a"])
        assert [blk.agent_id for blk in pooled.provenance] == ["a", "b"]
        assert mediator.pooled(["b"]).n == 12

    def test_missing_data(self, mediator: Mediator) -> None:
        """Agents without data cannot be pooled."""
        with pytest.raises(MechanismError):
            mediator.dataset("a")
        with pytest.raises(MechanismError):
            mediator.pooled()


class TestQualities:
    """Tests for estimation and quality caches."""

    def test_estimates_cached_by_content(self, mediator: Mediator) -> None:
        """Equal samples share one estimator."""
        a = mediator.agents[0]
        mediator.collect(a, 1)
        first = mediator.estimate(mediator.dataset("a"))
        second = mediator.estimate(mediator.pooled(["a"]))
        assert first is second

    def test_self_quality_is_zero(self, mediator: Mediator) -> None:
        """An estimator measured against itself scores 0."""
        mediator.collect(mediator.agents[0], 1)
        e = mediator.estimate(mediator.dataset("a"))
        assert mediator.quality(e, e) == 0.0

    def test_quality_is_non_positive(self, mediator: Mediator) -> None:
        """Qualities never exceed the self-comparison maximum."""
        a, b = mediator.agents
        mediator.collect(a, 1)
        mediator.collect(b, 1)
        benchmark = mediator.estimate(mediator.pooled())
        own = mediator.estimate(mediator.dataset("a"))
        assert mediator.quality(own, benchmark) <= 0.0
        assert mediator.quality(own, benchmark) == mediator.quality(own, benchmark)

    def test_coalition_values(self, mediator: Mediator) -> None:
        """Empty coalitions take v_empty; the grand coalition scores 0."""
        a, b = mediator.agents
        mediator.collect(a, 1)
        mediator.collect(b, 1)
        benchmark = mediator.estimate(mediator.pooled())
        assert mediator.coalition_value(frozenset(), 1, benchmark, -0.7) == -0.7
        assert mediator.coalition_value(frozenset({"a", "b"}), 1, benchmark, -0.7) == 0.0

    def test_try_estimate_small_data(self, mediator: Mediator) -> None:
        """Samples below the learnable size give None."""
        mediator.collect(mediator.agents[0], 1)
        data = mediator.dataset("a")
        assert mediator.try_estimate(data.subset(data.rows[:3, 0].argsort())) is None
        assert mediator.try_estimate(data) is not None
