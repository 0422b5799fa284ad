"""
Ground-truth generation: random DAGs, linear Gaussian SEMs, biased sampling.

A linear SEM assigns ``V_j = sum_i c_ij V_i + U_j`` with Gaussian noise
``U_j``. Total effects are entries of ``(I - C)^-1`` where ``C[i, j] = c_ij``.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from .errors import CciError, VariableMismatchError
from .graph import Dag, Edge
from .models import BiasSpec, ProvenanceBlock, SemGenerator

logger = logging.getLogger(__name__)

Seed = int | Sequence[int]


class LinearSem(BaseModel):
    """Linear Gaussian structural equation model over a DAG."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    dag: Dag
    coefficients: dict[Edge, float]
    noise_means: tuple[float, ...]
    noise_stds: tuple[float, ...]

    @model_validator(mode="after")
    def _check(self) -> LinearSem:
        if set(self.coefficients) != set(self.dag.directed_edges):
            raise ValueError("coefficient keys must be exactly the DAG's edges")
        if len(self.noise_means) != self.dag.p or len(self.noise_stds) != self.dag.p:
            raise ValueError(f"noise vectors must have {self.dag.p} entries")
        if any(not s > 0 for s in self.noise_stds):
            raise ValueError("noise stds must be positive")
        return self

    @property
    def p(self) -> int:
        return self.dag.p

    @property
    def names(self) -> tuple[str, ...]:
        return self.dag.names


class Dataset(BaseModel):
    """Observational samples with per-block provenance."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    rows: np.ndarray
    names: tuple[str, ...]
    provenance: tuple[ProvenanceBlock, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> Dataset:
        if self.rows.ndim != 2 or self.rows.shape[1] != len(self.names):
            raise ValueError(f"rows must be n x {len(self.names)}")
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("dataset contains non-finite values")
        if self.provenance and sum(b.rows for b in self.provenance) != self.rows.shape[0]:
            raise ValueError("provenance blocks do not cover the rows")
        return self

    @property
    def p(self) -> int:
        return len(self.names)

    @property
    def n(self) -> int:
        return int(self.rows.shape[0])

    def subset(self, indices: np.ndarray) -> Dataset:
        """Rows at ``indices``; provenance is dropped."""
        return Dataset(rows=self.rows[indices], names=self.names)

    def fingerprint(self) -> tuple[Any, ...]:
        """Hashable identity of the sample values."""
        return (self.rows.shape, self.rows.tobytes())


def random_dag(p: int, edge_prob: float, seed: Seed) -> Dag:
    """Random DAG: random topological order, each forward edge kept with ``edge_prob``."""
    if p < 1:
        raise CciError(f"p must be at least 1, got {p}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(p)
    edges = []
    for a in range(p):
        for b in range(a + 1, p):
            if rng.random() < edge_prob:
                edges.append((int(order[a]), int(order[b])))
    return Dag(p, edges)


def random_sem(d: Dag, coef_low: float, coef_high: float, seed: Seed) -> LinearSem:
    """Random coefficients with magnitude in [coef_low, coef_high] and a random sign."""
    if not 0 < coef_low <= coef_high:
        raise CciError(f"need 0 < coef_low <= coef_high, got {coef_low}, {coef_high}")
    rng = np.random.default_rng(seed)
    coefficients = {}
    for edge in sorted(d.directed_edges):
        magnitude = rng.uniform(coef_low, coef_high)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        coefficients[edge] = float(sign * magnitude)
    return LinearSem(
        dag=d,
        coefficients=coefficients,
        noise_means=(0.0,) * d.p,
        noise_stds=(1.0,) * d.p,
    )


def generate_sem(gen: SemGenerator) -> LinearSem:
    dag = random_dag(gen.p, gen.edge_prob, gen.seed)
    return random_sem(dag, gen.coef_low, gen.coef_high, gen.seed)


def coefficient_matrix(sem: LinearSem) -> np.ndarray:
    """Matrix C with ``C[i, j] = c_ij``."""
    matrix = np.zeros((sem.p, sem.p))
    for (i, j), value in sem.coefficients.items():
        matrix[i, j] = value
    return matrix


def sample(
    sem: LinearSem,
    n: int,
    bias: BiasSpec | None = None,
    seed: Seed = 0,
    agent_id: str | None = None,
    timestep: int = 0,
) -> Dataset:
    """
    Draw ``n`` rows from the SEM under a population bias.

    Args:
        sem: Ground-truth model.
        n: Number of rows.
        bias: Noise shift and scale of the population (unbiased if None).
        seed: Seed or seed sequence for the generator.
        agent_id: Provenance label for the produced block.
        timestep: Provenance timestep for the produced block.

    Returns:
        Dataset with one provenance block when ``agent_id`` is given.
    """
    if n < 0:
        raise CciError(f"sample size must be non-negative, got {n}")
    bias = bias or BiasSpec.identity(sem.p)
    if bias.p != sem.p:
        raise VariableMismatchError(sem.p, bias.p, "bias vector length")

    rng = np.random.default_rng(seed)
    means = np.asarray(sem.noise_means) + np.asarray(bias.noise_mean_shift)
    stds = np.asarray(sem.noise_stds) * np.asarray(bias.noise_std_scale)
    rows = np.zeros((n, sem.p))
    for j in sem.dag.topological_order():
        column = rng.normal(means[j], stds[j], size=n)
        for i in sem.dag.parents(j):
            column += sem.coefficients[(i, j)] * rows[:, i]
        rows[:, j] = column

    provenance = ()
    if agent_id is not None:
        provenance = (ProvenanceBlock(agent_id=agent_id, timestep=timestep, rows=n),)
    return Dataset(rows=rows, names=sem.names, provenance=provenance)


def pool(parts: Sequence[Dataset]) -> Dataset:
    """Row-concatenate datasets, keeping provenance in input order."""
    if not parts:
        raise CciError("cannot pool an empty list of datasets")
    first = parts[0]
    for part in parts[1:]:
        if part.p != first.p:
            raise VariableMismatchError(first.p, part.p)
    if len(parts) == 1:
        return first
    rows = np.concatenate([part.rows for part in parts], axis=0)
    provenance: tuple[ProvenanceBlock, ...] = ()
    if all(part.provenance or part.n == 0 for part in parts):
        provenance = tuple(block for part in parts for block in part.provenance)
    return Dataset(rows=rows, names=first.names, provenance=provenance)


def total_effect_oracle(sem: LinearSem, i: int, j: int) -> float:
    """Exact average causal effect of ``V_i`` on ``V_j``."""
    if i == j:
        raise CciError("effect oracle needs two distinct variables")
    c = coefficient_matrix(sem)
    return float(np.linalg.inv(np.eye(sem.p) - c)[i, j])


def interventional_mean_oracle(sem: LinearSem, i: int, x: float, j: int) -> float:
    """``E[V_j | do(V_i = x)]`` by forward propagation with ``V_i`` clamped."""
    if i == j:
        raise CciError("interventional oracle needs two distinct variables")
    means = np.zeros(sem.p)
    for k in sem.dag.topological_order():
        if k == i:
            means[k] = x
            continue
        means[k] = sem.noise_means[k] + sum(
            sem.coefficients[(w, k)] * means[w] for w in sem.dag.parents(k)
        )
    return float(means[j])


# Built-in worked examples


def _fixture(names: Sequence[str], coefficients: dict[Edge, float]) -> LinearSem:
    dag = Dag(len(names), coefficients, names=names)
    return LinearSem(
        dag=dag,
        coefficients=coefficients,
        noise_means=(0.0,) * len(names),
        noise_stds=(1.0,) * len(names),
    )


FIXTURES = {
    "chain3": lambda: _fixture(("X1", "X2", "X3"), {(0, 1): 2.0, (1, 2): 3.0}),
    "collider3": lambda: _fixture(("X1", "X2", "X3"), {(0, 2): 1.5, (1, 2): -1.0}),
    "diamond4": lambda: _fixture(
        ("X", "A", "B", "Y"), {(0, 1): 1.0, (1, 3): 2.0, (0, 2): 3.0, (2, 3): 4.0}
    ),
}


def fixture_sem(name: str) -> LinearSem:
    """One of the built-in SEMs: chain3, collider3 or diamond4."""
    try:
        return FIXTURES[name]()
    except KeyError:
        raise CciError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
