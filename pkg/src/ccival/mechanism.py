"""
Agent model and reward mechanisms.

Agents produce a fixed batch of data every timestep and stop as soon as
their utility ``im - c * delta`` turns negative. The server answers every
timestep with one estimator per agent:

    single            each agent alone, benchmarked against its own estimator
    standard          everyone receives the grand-coalition estimator
    data_maximizing   own estimator before the stand-alone stop, then an
                      estimator tuned to improvement ``c * delta + epsilon``
    fair              as data_maximizing with target ``c * delta + r_i``, where
                      ``r_i`` is the rho-Shapley reward value
"""

from __future__ import annotations

import itertools
import logging
import math
from collections.abc import Mapping, Sequence
from typing import Any, NamedTuple

import numpy as np

from .effects import Estimator
from .errors import MechanismError
from .formats import sem_from_spec
from .models import (
    AgentSpec,
    AgentStep,
    AuditCheck,
    AuditProperty,
    AuditReport,
    MechanismConfig,
    MechanismKind,
    MechanismTrace,
    RewardBranch,
    Scenario,
    SimulationSummary,
    TimestepRecord,
)
from .server import Mediator
from .synth import Dataset, LinearSem, fixture_sem, generate_sem

logger = logging.getLogger(__name__)

# smallest rho used when the ordering bound collapses to zero
RHO_FLOOR = 1e-3

AUDIT_TOLERANCE = 1e-12
# reward values are powers of Shapley ratios
ORDERING_TOLERANCE = 1e-9


def improvement_rate(history: Sequence[float]) -> float:
    """
    Time-discounted average quality gain.

    ``history[k]`` is the quality of the estimator held at timestep ``k + 1``
    measured against the current benchmark; the last entry is the current
    estimator's own term.

    Raises:
        MechanismError: Fewer than two timesteps.
    """
    t = len(history)
    if t < 2:
        raise MechanismError(f"improvement rate needs at least 2 timesteps, got {t}")
    current = history[-1]
    total = math.fsum((current - past) / (t - k) for k, past in enumerate(history[:-1], start=1))
    return total / (t - 1)


def utility(im: float, c: float, delta: int) -> float:
    return im - c * delta


# Single agent


def _stopping(utility_value: float | None) -> bool:
    return utility_value is not None and utility_value < 0


def run_single_agent(
    agent: AgentSpec, sem: LinearSem, cfg: MechanismConfig
) -> MechanismTrace:
    """
    Simulate one agent producing data on its own until its utility turns negative.

    The benchmark at every timestep is the agent's current estimator. The
    trace ends at the stopping timestep; it is flagged non-converged when
    the horizon runs out first.
    """
    mediator = Mediator([agent], sem, cfg)
    history: list[Estimator] = []
    records: list[TimestepRecord] = []
    stop: int | None = None

    for t in range(1, cfg.max_timesteps + 1):
        mediator.collect(agent, t)
        current = mediator.estimate(mediator.dataset(agent.id))
        history.append(current)

        im = None
        u = None
        if t >= 2:
            im = improvement_rate([mediator.quality(e, current) for e in history])
            u = utility(im, agent.cost_per_point, agent.batch_size)
        quality = mediator.quality(current, current)
        records.append(
            TimestepRecord(
                t=t,
                steps=[
                    AgentStep(
                        agent=agent.id,
                        data_size=mediator.data_size(agent.id),
                        active=True,
                        branch=RewardBranch.OWN,
                        own_quality=quality,
                        reward_quality=quality,
                        improvement_rate=im,
                        utility=u,
                    )
                ],
            )
        )
        if _stopping(u):
            stop = t
            size = mediator.data_size(agent.id)
            logger.info(f"agent {agent.id} stops alone at t={t} with {size} rows")
            break

    if stop is None:
        logger.warning(f"agent {agent.id} did not stop within {cfg.max_timesteps} timesteps")
    return MechanismTrace(
        mechanism=MechanismKind.SINGLE,
        config=cfg,
        agents=[agent],
        records=records,
        stop_times={agent.id: stop},
        standalone_stop_times={agent.id: stop},
        converged=stop is not None,
        final_qualities={agent.id: 0.0},
    )


def _merge_single(traces: Sequence[MechanismTrace], cfg: MechanismConfig) -> MechanismTrace:
    """Combine stand-alone traces, padding stopped agents with frozen inactive steps."""
    horizon = max(len(trace.records) for trace in traces)
    records = []
    for t in range(1, horizon + 1):
        steps = []
        for trace in traces:
            if t <= len(trace.records):
                steps.extend(trace.records[t - 1].steps)
                continue
            last = trace.records[-1].steps[0]
            steps.append(
                AgentStep(
                    agent=last.agent,
                    data_size=last.data_size,
                    active=False,
                    branch=RewardBranch.INACTIVE,
                )
            )
        records.append(TimestepRecord(t=t, steps=steps))
    stops = {k: v for trace in traces for k, v in trace.stop_times.items()}
    return MechanismTrace(
        mechanism=MechanismKind.SINGLE,
        config=cfg,
        agents=[a for trace in traces for a in trace.agents],
        records=records,
        stop_times=stops,
        standalone_stop_times=dict(stops),
        converged=all(trace.converged for trace in traces),
        final_qualities={k: v for trace in traces for k, v in trace.final_qualities.items()},
    )


def standalone_stops(
    agents: Sequence[AgentSpec], sem: LinearSem, cfg: MechanismConfig
) -> dict[str, int | None]:
    """Stand-alone stopping timestep of every agent (None when it never stops)."""
    return {a.id: run_single_agent(a, sem, cfg).stop_times[a.id] for a in agents}


# Rewards


class Reward(NamedTuple):
    estimator: Estimator
    branch: RewardBranch
    reward_value: float | None = None


class Round(NamedTuple):
    """Server view of one timestep."""

    t: int
    benchmark: Estimator
    own: dict[str, Estimator]
    own_quality: dict[str, float]
    active: dict[str, bool]
    received: dict[str, list[Estimator]]


def reward_estimator(
    mediator: Mediator,
    pool: Dataset,
    target_im: float,
    prior_rewards: Sequence[float],
    tol: float,
    seed: int | Sequence[int],
    benchmark: Estimator,
    own: Estimator | None = None,
) -> Estimator | None:
    """
    An estimator whose improvement rate lands within ``tol`` of ``target_im``.

    Candidates are the full pool, ``own`` and estimators learned from nested
    row-subsamples of ``pool`` (a seeded permutation prefix) whose size is
    bisected. Only candidates at least as good as ``own`` qualify; among
    those reaching ``target_im - tol`` the one nearest the target wins.

    Args:
        mediator: Server state providing estimation and quality caches.
        pool: Pooled data of all agents at this timestep.
        target_im: Improvement rate the reward should produce.
        prior_rewards: Qualities of the agent's earlier rewards against ``benchmark``.
        tol: Accepted distance from the target.
        seed: Seed of the row permutation.
        benchmark: Grand-coalition estimator of this timestep.
        own: The agent's own-data estimator.

    Returns:
        The chosen estimator, or None when even the full pool stays below
        ``target_im - tol``.
    """
    if not target_im > 0:
        raise MechanismError(f"target improvement must be positive, got {target_im}")

    floor = mediator.quality(own, benchmark) if own is not None else -math.inf
    candidates: list[tuple[float, Estimator]] = []

    def consider(candidate: Estimator) -> float | None:
        quality = mediator.quality(candidate, benchmark)
        if quality < floor:
            return None
        rate = improvement_rate([*prior_rewards, quality])
        candidates.append((rate, candidate))
        return rate

    full = mediator.estimate(pool)
    if improvement_rate([*prior_rewards, mediator.quality(full, benchmark)]) < target_im - tol:
        return None
    consider(full)
    if own is not None:
        consider(own)

    order = np.random.default_rng(seed).permutation(pool.n)
    lo, hi = min(mediator.min_rows, pool.n), pool.n
    while lo < hi:
        mid = (lo + hi) // 2
        candidate = mediator.try_estimate(pool.subset(np.sort(order[:mid])))
        rate = consider(candidate) if candidate is not None else None
        logger.debug(f"reward bisection: {mid} rows -> im {rate}")
        if rate is not None and abs(rate - target_im) <= tol:
            break
        if rate is None or rate < target_im:
            lo = mid + 1
        else:
            hi = mid

    accepted = [c for c in candidates if c[0] >= target_im - tol]
    return min(accepted, key=lambda c: abs(c[0] - target_im))[1]


def _history(mediator: Mediator, rnd: Round, agent_id: str) -> list[float]:
    return [mediator.quality(e, rnd.benchmark) for e in rnd.received[agent_id]]


def _targeted(
    mediator: Mediator,
    rnd: Round,
    agent: AgentSpec,
    index: int,
    target: float,
    reward_value: float | None = None,
) -> Reward:
    found = reward_estimator(
        mediator,
        mediator.pooled(),
        target,
        _history(mediator, rnd, agent.id),
        mediator.cfg.tol,
        (mediator.cfg.master_seed, rnd.t, index),
        rnd.benchmark,
        rnd.own[agent.id],
    )
    if found is None:
        return Reward(rnd.benchmark, RewardBranch.POOL, reward_value)
    return Reward(found, RewardBranch.TARGETED, reward_value)


def standard_step(mediator: Mediator, rnd: Round) -> dict[str, Reward]:
    """Every active agent receives the grand-coalition estimator."""
    return {
        a.id: Reward(rnd.benchmark, RewardBranch.POOL)
        for a in mediator.agents
        if rnd.active[a.id]
    }


def _before_standalone_stop(t: int, stop: int | None) -> bool:
    return stop is None or t < stop


def data_maximizing_step(
    mediator: Mediator, rnd: Round, standalone: Mapping[str, int | None]
) -> dict[str, Reward]:
    """Own estimator before the stand-alone stop, then target ``c * delta + epsilon``."""
    rewards = {}
    for index, agent in enumerate(mediator.agents):
        if not rnd.active[agent.id]:
            continue
        if _before_standalone_stop(rnd.t, standalone.get(agent.id)):
            rewards[agent.id] = Reward(rnd.own[agent.id], RewardBranch.OWN)
            continue
        target = agent.cost_per_point * agent.batch_size + mediator.cfg.epsilon
        rewards[agent.id] = _targeted(mediator, rnd, agent, index, target)
    return rewards


# Shapley values and rho rewards


def coalition_values(
    mediator: Mediator, rnd: Round
) -> tuple[dict[frozenset[str], float], float]:
    """Value of every coalition of agents at this timestep, and ``v_empty``."""
    ids = [a.id for a in mediator.agents]
    v_empty = min(rnd.own_quality[i] for i in ids)
    values: dict[frozenset[str], float] = {}
    for size in range(len(ids) + 1):
        for members in itertools.combinations(ids, size):
            coalition = frozenset(members)
            values[coalition] = mediator.coalition_value(coalition, rnd.t, rnd.benchmark, v_empty)
    return values, v_empty


def shapley(
    values: Mapping[frozenset[Any], float],
    players: Sequence[Any],
    limit: int = 12,
) -> list[float]:
    """
    Exact Shapley value of every player.

    Args:
        values: Value of every coalition, the empty one included.
        players: Player identifiers; output follows this order.
        limit: Largest player count accepted.

    Raises:
        MechanismError: More players than ``limit`` or a missing coalition.
    """
    n = len(players)
    if n > limit:
        raise MechanismError(f"exact Shapley values are limited to {limit} players, got {n}")
    weights = [math.factorial(s) * math.factorial(n - s - 1) / math.factorial(n) for s in range(n)]
    result = []
    for player in players:
        others = [q for q in players if q != player]
        total = 0.0
        for size in range(n):
            for members in itertools.combinations(others, size):
                without = frozenset(members)
                try:
                    gain = values[without | {player}] - values[without]
                except KeyError as e:
                    missing = sorted(map(str, e.args[0]))
                    raise MechanismError(f"coalition {missing} has no value") from e
                total += weights[size] * gain
        result.append(total)
    return result


def rho_reward(
    phi: Sequence[float], qualities: Sequence[float], v_empty: float, rho: float
) -> list[float]:
    """
    ``r_i = max(q_i - v_empty, -v_empty * (phi_i / phi_max) ** rho)``.

    Negative Shapley values count as 0; a non-positive maximum gives every
    agent ``-v_empty``.
    """
    phi_max = max(phi)
    if phi_max <= 0:
        return [-v_empty] * len(phi)
    return [
        max(q - v_empty, -v_empty * (max(value, 0.0) / phi_max) ** rho)
        for value, q in zip(phi, qualities)
    ]


def rho_upper_bound(phi: Sequence[float], qualities: Sequence[float], v_empty: float) -> float:
    """
    Largest rho for which the Shapley term dominates every agent's own gap.

    ``min_i log(1 - q_i / v_empty) / log(phi_i / phi_max)`` over agents with
    ``0 < phi_i < phi_max`` and ``q_i > v_empty``; infinite without such agents.
    """
    phi_max = max(phi)
    if phi_max <= 0 or v_empty >= 0:
        return math.inf
    bounds = []
    for value, q in zip(phi, qualities):
        if not 0 < value < phi_max or q <= v_empty:
            continue
        bounds.append(math.log(1.0 - q / v_empty) / math.log(value / phi_max))
    return min(bounds, default=math.inf)


def effective_rho(cfg: MechanismConfig, bound: float) -> float:
    configured = 1.0 if cfg.rho == "auto" else float(cfg.rho)
    return max(min(configured, bound), RHO_FLOOR)


def fair_step(
    mediator: Mediator, rnd: Round, standalone: Mapping[str, int | None]
) -> tuple[dict[str, Reward], dict[str, float], float, float, float]:
    """
    Shapley-proportional targets ``c * delta + r_i``.

    Returns:
        Rewards of active agents, Shapley values of all agents, ``v_empty``,
        the rho used and its ordering bound.
    """
    ids = [a.id for a in mediator.agents]
    values, v_empty = coalition_values(mediator, rnd)
    phi = shapley(values, ids, mediator.cfg.shapley_limit)
    qualities = [rnd.own_quality[i] for i in ids]
    bound = rho_upper_bound(phi, qualities, v_empty)
    rho = effective_rho(mediator.cfg, bound)
    reward_values = dict(zip(ids, rho_reward(phi, qualities, v_empty, rho)))

    rewards = {}
    for index, agent in enumerate(mediator.agents):
        if not rnd.active[agent.id]:
            continue
        value = reward_values[agent.id]
        if _before_standalone_stop(rnd.t, standalone.get(agent.id)):
            rewards[agent.id] = Reward(rnd.own[agent.id], RewardBranch.OWN, value)
            continue
        target = agent.cost_per_point * agent.batch_size + value
        rewards[agent.id] = _targeted(mediator, rnd, agent, index, target, value)
    return rewards, dict(zip(ids, phi)), v_empty, rho, bound


# Runner


def run_mechanism(
    sem: LinearSem,
    agents: Sequence[AgentSpec],
    cfg: MechanismConfig,
    standalone: Mapping[str, int | None] | None = None,
) -> MechanismTrace:
    """
    Simulate one mechanism until every agent stops or the horizon ends.

    Args:
        sem: Ground truth all agents sample from.
        agents: Participants; their order fixes pooling order.
        cfg: Mechanism kind and parameters.
        standalone: Stand-alone stopping times; computed when needed and absent.

    Returns:
        Per-timestep trace of contributions, qualities and stops.
    """
    if cfg.kind == MechanismKind.SINGLE:
        return _merge_single([run_single_agent(a, sem, cfg) for a in agents], cfg)
    if cfg.kind == MechanismKind.FAIR and len(agents) > cfg.shapley_limit:
        raise MechanismError(
            f"fair mechanism supports at most {cfg.shapley_limit} agents, got {len(agents)}"
        )

    mediator = Mediator(agents, sem, cfg)
    if standalone is None:
        standalone = (
            standalone_stops(agents, sem, cfg)
            if cfg.kind in (MechanismKind.DATA_MAXIMIZING, MechanismKind.FAIR)
            else {}
        )
    active = {a.id: True for a in agents}
    received: dict[str, list[Estimator]] = {a.id: [] for a in agents}
    stops: dict[str, int | None] = {a.id: None for a in agents}
    final: dict[str, float] = {}
    records = []

    for t in range(1, cfg.max_timesteps + 1):
        if not any(active.values()):
            break
        for agent in agents:
            if active[agent.id]:
                mediator.collect(agent, t)
        benchmark = mediator.estimate(mediator.pooled())
        own = {a.id: mediator.estimate(mediator.dataset(a.id)) for a in agents}
        rnd = Round(
            t=t,
            benchmark=benchmark,
            own=own,
            own_quality={k: mediator.quality(e, benchmark) for k, e in own.items()},
            active=dict(active),
            received=received,
        )

        shapley_values: dict[str, float] = {}
        v_empty = rho = rho_bound = None
        if cfg.kind == MechanismKind.STANDARD:
            rewards = standard_step(mediator, rnd)
        elif cfg.kind == MechanismKind.DATA_MAXIMIZING:
            rewards = data_maximizing_step(mediator, rnd, standalone)
        else:
            rewards, shapley_values, v_empty, rho, bound = fair_step(mediator, rnd, standalone)
            rho_bound = None if math.isinf(bound) else bound

        steps = []
        for agent in agents:
            if not rnd.active[agent.id]:
                steps.append(
                    AgentStep(
                        agent=agent.id,
                        data_size=mediator.data_size(agent.id),
                        active=False,
                        branch=RewardBranch.INACTIVE,
                        own_quality=rnd.own_quality[agent.id],
                        shapley=shapley_values.get(agent.id),
                    )
                )
                continue
            reward = rewards[agent.id]
            quality = mediator.quality(reward.estimator, benchmark)
            history = _history(mediator, rnd, agent.id)
            received[agent.id].append(reward.estimator)
            final[agent.id] = quality

            im = u = None
            if t >= 2:
                im = improvement_rate([*history, quality])
                u = utility(im, agent.cost_per_point, agent.batch_size)
            steps.append(
                AgentStep(
                    agent=agent.id,
                    data_size=mediator.data_size(agent.id),
                    active=True,
                    branch=reward.branch,
                    own_quality=rnd.own_quality[agent.id],
                    reward_quality=quality,
                    improvement_rate=im,
                    utility=u,
                    shapley=shapley_values.get(agent.id),
                    reward_value=reward.reward_value,
                )
            )
            may_stop = cfg.kind == MechanismKind.STANDARD or not _before_standalone_stop(
                t, standalone.get(agent.id)
            )
            if may_stop and _stopping(u):
                active[agent.id] = False
                stops[agent.id] = t
                logger.info(f"{cfg.kind.value}: agent {agent.id} stops at t={t}")

        records.append(
            TimestepRecord(t=t, steps=steps, v_empty=v_empty, rho=rho, rho_bound=rho_bound)
        )
        logger.info(
            f"{cfg.kind.value} t={t}: pool {mediator.pooled().n} rows, "
            f"{sum(active.values())} agents active"
        )

    converged = not any(active.values())
    if not converged:
        logger.warning(f"{cfg.kind.value}: horizon {cfg.max_timesteps} reached with active agents")
    return MechanismTrace(
        mechanism=cfg.kind,
        config=cfg,
        agents=list(agents),
        records=records,
        stop_times=stops,
        standalone_stop_times=dict(standalone),
        converged=converged,
        final_qualities=final,
    )


# Audit


def _effective_stop(stop: int | None, horizon: int) -> int:
    return horizon + 1 if stop is None else stop


def _ordering_checks(record: TimestepRecord) -> list[AuditCheck]:
    """Reward values of active agents follow their positive Shapley values."""
    if record.rho is None or (record.rho_bound is not None and record.rho > record.rho_bound):
        return []
    scored: list[tuple[str, float, float]] = []
    for step in record.steps:
        if step.shapley is not None and step.reward_value is not None and step.shapley > 0:
            scored.append((step.agent, step.shapley, step.reward_value))
    checks = []
    for (agent, phi, value), (other, other_phi, other_value) in itertools.permutations(scored, 2):
        if phi <= other_phi:
            continue
        checks.append(
            AuditCheck(
                property=AuditProperty.SHAPLEY_ORDERING,
                agent=agent,
                t=record.t,
                passed=value >= other_value - ORDERING_TOLERANCE,
                detail=f"reward value {value:.6g} vs {other_value:.6g} for {other}",
            )
        )
    return checks


def audit_trace(trace: MechanismTrace) -> AuditReport:
    """
    Check a trace against the properties in ``AuditProperty``.

    Feasibility and individual rationality are checked per agent and
    timestep; stop dominance (mechanism stop no earlier than the stand-alone
    stop) per agent for the data-maximizing and fair mechanisms; utility must
    be non-negative at every timestep before the agent's stop at which its
    stopping rule applies. Fair traces also need reward values ordered like
    positive Shapley values at every timestep whose rho is within its bound.
    """
    report = AuditReport(mechanism=trace.mechanism)
    horizon = trace.config.max_timesteps
    targeted = trace.mechanism in (MechanismKind.DATA_MAXIMIZING, MechanismKind.FAIR)

    for record in trace.records:
        if trace.mechanism == MechanismKind.FAIR:
            report.checks.extend(_ordering_checks(record))
        for step in record.steps:
            if step.reward_quality is None:
                continue
            report.checks.append(
                AuditCheck(
                    property=AuditProperty.FEASIBILITY,
                    agent=step.agent,
                    t=record.t,
                    passed=step.reward_quality <= AUDIT_TOLERANCE,
                    detail=f"reward quality {step.reward_quality:.6g}",
                )
            )
            if step.own_quality is not None:
                report.checks.append(
                    AuditCheck(
                        property=AuditProperty.INDIVIDUAL_RATIONALITY,
                        agent=step.agent,
                        t=record.t,
                        passed=step.reward_quality >= step.own_quality - AUDIT_TOLERANCE,
                        detail=f"reward {step.reward_quality:.6g} vs own {step.own_quality:.6g}",
                    )
                )
            if step.utility is None:
                continue
            stop = _effective_stop(trace.stop_times.get(step.agent), horizon)
            alone = _effective_stop(trace.standalone_stop_times.get(step.agent), horizon)
            if record.t < stop and (not targeted or record.t >= alone):
                report.checks.append(
                    AuditCheck(
                        property=AuditProperty.UTILITY,
                        agent=step.agent,
                        t=record.t,
                        passed=step.utility >= 0,
                        detail=f"utility {step.utility:.6g}",
                    )
                )

    if targeted:
        for agent in trace.agents:
            stop = _effective_stop(trace.stop_times.get(agent.id), horizon)
            alone = _effective_stop(trace.standalone_stop_times.get(agent.id), horizon)
            report.checks.append(
                AuditCheck(
                    property=AuditProperty.STOP_DOMINANCE,
                    agent=agent.id,
                    passed=stop >= alone,
                    detail=f"stop {stop} vs stand-alone {alone}",
                )
            )
    return report


# Scenarios


def scenario_sem(scenario: Scenario) -> LinearSem:
    """Ground truth named by a scenario."""
    if scenario.sem is not None:
        return sem_from_spec(scenario.sem)
    if scenario.generator is not None:
        return generate_sem(scenario.generator)
    assert scenario.fixture is not None
    return fixture_sem(scenario.fixture)


def simulate(scenario: Scenario) -> SimulationSummary:
    """Run every mechanism a scenario asks for and audit the traces."""
    sem = scenario_sem(scenario)
    kinds = scenario.mechanism_kinds()
    standalone = None
    if any(k in (MechanismKind.DATA_MAXIMIZING, MechanismKind.FAIR) for k in kinds):
        standalone = standalone_stops(scenario.agents, sem, scenario.mechanism)

    traces = []
    for kind in kinds:
        cfg = scenario.mechanism.model_copy(update={"kind": kind})
        traces.append(run_mechanism(sem, scenario.agents, cfg, standalone))
    return SimulationSummary(traces=traces, audits=[audit_trace(t) for t in traces])
