from __future__ import annotations

import logging
from collections.abc import Iterable, Sequence
from typing import Any

from .effects import Estimator, estimate
from .errors import CciError, DegenerateDataError, MechanismError
from .models import AgentSpec, MechanismConfig
from .synth import Dataset, LinearSem, pool, sample
from .valuation import valuation

logger = logging.getLogger(__name__)


def produce_batch(sem: LinearSem, agent: AgentSpec, t: int) -> Dataset:
    """The ``batch_size`` rows an agent produces at timestep ``t``."""
    return sample(
        sem,
        agent.batch_size,
        agent.bias,
        seed=(agent.seed, t),
        agent_id=agent.id,
        timestep=t,
    )


class Mediator:
    """
    Server state of one mechanism run.

    Collects agent contributions, learns estimators from any subset of the
    collected data and evaluates qualities against a benchmark. Estimators
    are cached per sample content and qualities per estimator pair, so the
    repeated comparisons of the improvement rate and of coalition values
    are computed once.
    """

    def __init__(self, agents: Sequence[AgentSpec], sem: LinearSem, cfg: MechanismConfig) -> None:
        if not agents:
            raise MechanismError("a mechanism needs at least one agent")
        for agent in agents:
            if agent.bias is not None and agent.bias.p != sem.p:
                raise MechanismError(
                    f"agent {agent.id}: bias has {agent.bias.p} entries, SEM has {sem.p}"
                )
            if agent.batch_size < sem.p + 4:
                raise MechanismError(
                    f"agent {agent.id}: batch_size {agent.batch_size} cannot support "
                    f"learning over {sem.p} variables (need {sem.p + 4})"
                )
        self.sem = sem
        self.cfg = cfg
        self.agents = list(agents)
        self._data: dict[str, Dataset | None] = {a.id: None for a in self.agents}
        self._estimators: dict[Any, Estimator] = {}
        self._qualities: dict[tuple[int, int], tuple[Estimator, Estimator, float]] = {}
        self._coalitions: dict[tuple[frozenset[str], int], float] = {}

    @property
    def min_rows(self) -> int:
        """Smallest dataset the structure learner accepts."""
        return self.sem.p + 4

    def collect(self, agent: AgentSpec, t: int) -> Dataset:
        """Receive the agent's batch for timestep ``t``."""
        batch = produce_batch(self.sem, agent, t)
        held = self._data[agent.id]
        self._data[agent.id] = batch if held is None else pool([held, batch])
        return batch

    def data_size(self, agent_id: str) -> int:
        held = self._data[agent_id]
        return 0 if held is None else held.n

    def dataset(self, agent_id: str) -> Dataset:
        held = self._data[agent_id]
        if held is None:
            raise MechanismError(f"agent {agent_id} has not contributed data")
        return held

    def pooled(self, agent_ids: Iterable[str] | None = None) -> Dataset:
        """Data of the given agents (all by default), in agent order."""
        wanted = set(agent_ids) if agent_ids is not None else {a.id for a in self.agents}
        parts = [
            held
            for agent in self.agents
            if agent.id in wanted and (held := self._data[agent.id]) is not None
        ]
        if not parts:
            raise MechanismError("no data collected for the requested agents")
        return pool(parts)

    def estimate(self, data: Dataset) -> Estimator:
        key = data.fingerprint()
        cached = self._estimators.get(key)
        if cached is not None:
            logger.debug(f"estimator cache hit for {data.n} rows")
            return cached
        result = estimate(data, self.cfg.pc)
        self._estimators[key] = result
        return result

    def quality(self, e: Estimator, benchmark: Estimator) -> float:
        """``v(e, benchmark)``."""
        if e is benchmark:
            return 0.0
        key = (id(e), id(benchmark))
        cached = self._qualities.get(key)
        if cached is not None:
            return cached[2]
        report = valuation(e, benchmark, self.cfg.mc_samples, self.cfg.master_seed)
        self._qualities[key] = (e, benchmark, report.v)
        return report.v

    def coalition_value(
        self, coalition: frozenset[str], t: int, benchmark: Estimator, v_empty: float
    ) -> float:
        """
        Quality of the coalition's pooled estimator, memoized per (coalition, t).

        Empty coalitions and pools too small to learn from are worth ``v_empty``.
        """
        key = (coalition, t)
        if key in self._coalitions:
            logger.debug(f"coalition cache hit for {sorted(coalition)} at t={t}")
            return self._coalitions[key]
        value = v_empty
        if coalition:
            data = self.pooled(coalition)
            if data.n >= self.min_rows:
                try:
                    value = self.quality(self.estimate(data), benchmark)
                except DegenerateDataError as e:
                    logger.debug(f"coalition {sorted(coalition)} not learnable: {e}")
        self._coalitions[key] = value
        return value

    def try_estimate(self, data: Dataset) -> Estimator | None:
        """Estimator for ``data`` or None when it cannot be learned."""
        if data.n < self.min_rows:
            return None
        try:
            return self.estimate(data)
        except CciError as e:
            logger.debug(f"cannot learn from {data.n} rows: {e}")
            return None
