from __future__ import annotations

import math
from enum import Enum
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# Configuration models


class PcConfig(BaseModel):
    """Tuning of the PC structure learner."""

    model_config = ConfigDict(frozen=True)

    alpha: float = 0.01
    max_cond_size: int | None = None

    @field_validator("alpha")
    @classmethod
    def _alpha_in_unit_interval(cls, value: float) -> float:
        if not 0.0 < value < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {value}")
        return value

    @field_validator("max_cond_size")
    @classmethod
    def _non_negative(cls, value: int | None) -> int | None:
        if value is not None and value < 0:
            raise ValueError("max_cond_size must be non-negative")
        return value


class BiasSpec(BaseModel):
    """Per-variable shift and scale of the exogenous noise of one population."""

    model_config = ConfigDict(frozen=True)

    noise_mean_shift: tuple[float, ...]
    noise_std_scale: tuple[float, ...]

    @model_validator(mode="after")
    def _check(self) -> BiasSpec:
        if len(self.noise_mean_shift) != len(self.noise_std_scale):
            raise ValueError("shift and scale vectors differ in length")
        if any(not s > 0 for s in self.noise_std_scale):
            raise ValueError("noise_std_scale entries must be positive")
        return self

    @property
    def p(self) -> int:
        return len(self.noise_mean_shift)

    @classmethod
    def identity(cls, p: int) -> BiasSpec:
        """Unbiased population."""
        return cls(noise_mean_shift=(0.0,) * p, noise_std_scale=(1.0,) * p)

    @classmethod
    def random(
        cls, p: int, mean_spread: float = 0.5, scale_spread: float = 0.5, seed: int = 0
    ) -> BiasSpec:
        """
        Randomly biased population.

        Shifts are uniform in [-mean_spread, mean_spread]; scales are uniform
        in [1, 1 + scale_spread].
        """
        rng = np.random.default_rng(seed)
        shift = rng.uniform(-mean_spread, mean_spread, size=p)
        scale = rng.uniform(1.0, 1.0 + scale_spread, size=p)
        return cls(
            noise_mean_shift=tuple(float(v) for v in shift),
            noise_std_scale=tuple(float(v) for v in scale),
        )


class AgentSpec(BaseModel):
    """A self-interested data producer."""

    model_config = ConfigDict(frozen=True)

    id: str
    cost_per_point: float
    batch_size: int
    bias: BiasSpec | None = None
    seed: int = 0

    @field_validator("cost_per_point")
    @classmethod
    def _positive_cost(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("cost_per_point must be positive")
        return value

    @field_validator("batch_size")
    @classmethod
    def _positive_batch(cls, value: int) -> int:
        if value < 1:
            raise ValueError("batch_size must be at least 1")
        return value

    @field_validator("seed")
    @classmethod
    def _non_negative_seed(cls, value: int) -> int:
        if value < 0:
            raise ValueError("seed must be non-negative")
        return value


class MechanismKind(str, Enum):
    """Reward mechanisms."""

    SINGLE = "single"
    STANDARD = "standard"
    DATA_MAXIMIZING = "data_maximizing"
    FAIR = "fair"


class MechanismConfig(BaseModel):
    """Parameters of one mechanism simulation."""

    model_config = ConfigDict(frozen=True)

    kind: MechanismKind = MechanismKind.STANDARD
    epsilon: float = 1e-3
    tolerance: float | None = None
    rho: float | Literal["auto"] = 1.0
    max_timesteps: int = 20
    pc: PcConfig = Field(default_factory=PcConfig)
    mc_samples: int = 20000
    master_seed: int = 0
    shapley_limit: int = 12

    @field_validator("epsilon")
    @classmethod
    def _positive_epsilon(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("epsilon must be positive")
        return value

    @field_validator("rho")
    @classmethod
    def _rho_range(cls, value: float | str) -> float | str:
        if value != "auto" and not 0.0 < float(value) <= 1.0:
            raise ValueError(f"rho must lie in (0, 1] or be 'auto', got {value}")
        return value

    @field_validator("max_timesteps")
    @classmethod
    def _horizon(cls, value: int) -> int:
        if value < 2:
            raise ValueError("max_timesteps must be at least 2")
        return value

    @field_validator("mc_samples", "shapley_limit")
    @classmethod
    def _positive_count(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be at least 1")
        return value

    @field_validator("master_seed")
    @classmethod
    def _non_negative_seed(cls, value: int) -> int:
        if value < 0:
            raise ValueError("master_seed must be non-negative")
        return value

    @property
    def tol(self) -> float:
        """Bisection tolerance on the improvement rate (epsilon / 2 by default)."""
        return self.tolerance if self.tolerance is not None else self.epsilon / 2


class SemSpec(BaseModel):
    """JSON form of a linear SEM."""

    p: int
    names: list[str]
    edges: list[tuple[int, int]]
    coefficients: list[float]
    noise_means: list[float]
    noise_stds: list[float]

    @model_validator(mode="after")
    def _lengths(self) -> SemSpec:
        if len(self.edges) != len(self.coefficients):
            raise ValueError("edges and coefficients differ in length")
        for field in ("names", "noise_means", "noise_stds"):
            if len(getattr(self, field)) != self.p:
                raise ValueError(f"{field} must have {self.p} entries")
        return self


class SemGenerator(BaseModel):
    """Seeded random SEM recipe."""

    model_config = ConfigDict(frozen=True)

    p: int
    edge_prob: float = 0.3
    coef_low: float = 0.5
    coef_high: float = 2.0
    seed: int = 0

    @model_validator(mode="after")
    def _check(self) -> SemGenerator:
        if self.p < 1:
            raise ValueError("p must be at least 1")
        if not 0.0 <= self.edge_prob <= 1.0:
            raise ValueError("edge_prob must lie in [0, 1]")
        if not 0 < self.coef_low <= self.coef_high:
            raise ValueError("need 0 < coef_low <= coef_high")
        return self


class Scenario(BaseModel):
    """A complete simulation input: ground truth, agents and mechanism."""

    sem: SemSpec | None = None
    generator: SemGenerator | None = None
    fixture: str | None = None
    agents: list[AgentSpec]
    mechanism: MechanismConfig = Field(default_factory=MechanismConfig)
    kinds: list[MechanismKind] = []

    @model_validator(mode="after")
    def _check(self) -> Scenario:
        sources = [s for s in (self.sem, self.generator, self.fixture) if s is not None]
        if len(sources) != 1:
            raise ValueError("exactly one of sem, generator, fixture is required")
        if not self.agents:
            raise ValueError("at least one agent is required")
        ids = [a.id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise ValueError("agent ids must be unique")
        return self

    def mechanism_kinds(self) -> list[MechanismKind]:
        return list(self.kinds) if self.kinds else [self.mechanism.kind]


# Effect and valuation models


class GaussianComponent(BaseModel):
    """One regression effect: mean, standard error and mixture weight."""

    model_config = ConfigDict(frozen=True)

    mean: float
    std: float
    weight: float = 1.0

    @model_validator(mode="after")
    def _check(self) -> GaussianComponent:
        if not (math.isfinite(self.mean) and self.std > 0 and math.isfinite(self.std)):
            raise ValueError("component needs a finite mean and a positive std")
        if not 0.0 < self.weight <= 1.0 + 1e-12:
            raise ValueError(f"weight must lie in (0, 1], got {self.weight}")
        return self


class EffectDistribution(BaseModel):
    """Gaussian mixture over the possible causal effects of one ordered pair."""

    model_config = ConfigDict(frozen=True)

    components: tuple[GaussianComponent, ...]

    @field_validator("components")
    @classmethod
    def _normalised(
        cls, value: tuple[GaussianComponent, ...]
    ) -> tuple[GaussianComponent, ...]:
        if not value:
            raise ValueError("a mixture needs at least one component")
        total = math.fsum(c.weight for c in value)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"weights sum to {total}, expected 1")
        return value

    @classmethod
    def point(cls, mean: float, std: float) -> EffectDistribution:
        return cls(components=(GaussianComponent(mean=mean, std=std, weight=1.0),))

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Means, stds and weights as numpy vectors."""
        means = np.array([c.mean for c in self.components])
        stds = np.array([c.std for c in self.components])
        weights = np.array([c.weight for c in self.components])
        return means, stds, weights


class ValuationReport(BaseModel):
    """Quality of an estimator measured against a benchmark."""

    model_config = ConfigDict(frozen=True)

    dsid: int
    v_dsid: float
    v_kl: float
    v: float
    correctly_identified_pairs: list[tuple[int, int]]
    falsely_identified_pairs: list[tuple[int, int]]

    @model_validator(mode="after")
    def _consistent(self) -> ValuationReport:
        if abs(self.v - (self.v_dsid + self.v_kl)) > 1e-12:
            raise ValueError("v must equal v_dsid + v_kl")
        if len(self.falsely_identified_pairs) != self.dsid:
            raise ValueError("dsid must count the falsely identified pairs")
        return self


# Trace models


class RewardBranch(str, Enum):
    """Which rule produced an agent's reward at one timestep."""

    OWN = "own"
    TARGETED = "targeted"
    POOL = "pool"
    INACTIVE = "inactive"


class ProvenanceBlock(BaseModel):
    """A contiguous block of dataset rows contributed by one agent at one timestep."""

    model_config = ConfigDict(frozen=True)

    agent_id: str
    timestep: int
    rows: int


class AgentStep(BaseModel):
    """One agent at one timestep."""

    agent: str
    data_size: int
    active: bool
    branch: RewardBranch
    own_quality: float | None = None
    reward_quality: float | None = None
    improvement_rate: float | None = None
    utility: float | None = None
    shapley: float | None = None
    reward_value: float | None = None


class TimestepRecord(BaseModel):
    """All agents at one timestep."""

    t: int
    steps: list[AgentStep]
    v_empty: float | None = None
    rho: float | None = None
    # None when no agent bounds rho
    rho_bound: float | None = None

    def step(self, agent: str) -> AgentStep:
        for entry in self.steps:
            if entry.agent == agent:
                return entry
        raise KeyError(agent)


class MechanismTrace(BaseModel):
    """Complete record of one mechanism simulation."""

    mechanism: MechanismKind
    config: MechanismConfig
    agents: list[AgentSpec]
    records: list[TimestepRecord] = []
    stop_times: dict[str, int | None] = {}
    standalone_stop_times: dict[str, int | None] = {}
    converged: bool = False
    final_qualities: dict[str, float] = {}

    def total_data(self) -> int:
        """Data points produced by all agents over the run."""
        if not self.records:
            return 0
        return sum(step.data_size for step in self.records[-1].steps)


class AuditProperty(str, Enum):
    """Properties checked on a mechanism trace."""

    FEASIBILITY = "feasibility"
    INDIVIDUAL_RATIONALITY = "individual_rationality"
    SHAPLEY_ORDERING = "shapley_ordering"
    STOP_DOMINANCE = "stop_dominance"
    UTILITY = "utility"


class AuditCheck(BaseModel):
    """One property check for one agent (and timestep, when it applies)."""

    property: AuditProperty
    agent: str
    t: int | None = None
    passed: bool
    detail: str = ""


class AuditReport(BaseModel):
    """Result of auditing a mechanism trace."""

    mechanism: MechanismKind
    checks: list[AuditCheck] = []

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[AuditCheck]:
        return [c for c in self.checks if not c.passed]

    def property_passed(self, prop: AuditProperty) -> bool:
        return all(c.passed for c in self.checks if c.property == prop)


class SimulationSummary(BaseModel):
    """Summary document written by ``simulate``: traces with their audits."""

    traces: list[MechanismTrace]
    audits: list[AuditReport]
