"""
Text, JSON and CSV codecs.

Graph text (one item per line, ``#`` starts a comment):

    p <n>
    name <index> <label>
    edge <a> -> <b>        directed, endpoints by index or label
    edge <a> -- <b>        undirected

Emission is canonical: header, names in index order, directed edges then
undirected edges, each sorted.

Dataset CSV: a header of variable labels and one sample per row, with an
optional JSON sidecar listing provenance blocks.

Trace CSV: one row per agent per timestep with the columns of
``TRACE_COLUMNS``; empty cells stand for values that do not apply.

Every writer replaces its target atomically (temporary file, then rename).
"""

from __future__ import annotations

import io
import os
import tempfile
from pathlib import Path
from typing import TypeVar

import pandas as pd
from pydantic import BaseModel, TypeAdapter, ValidationError

from .effects import Estimator
from .errors import FormatError, GraphError
from .graph import Cpdag, Dag, Pdag
from .models import (
    EffectDistribution,
    GaussianComponent,
    MechanismTrace,
    ProvenanceBlock,
    SemSpec,
    SimulationSummary,
)
from .synth import Dataset, LinearSem

_M = TypeVar("_M", bound=BaseModel)

TRACE_COLUMNS = [
    "mechanism",
    "t",
    "agent",
    "data_size",
    "active",
    "branch",
    "own_quality",
    "reward_quality",
    "improvement_rate",
    "utility",
    "shapley",
    "reward_value",
]

SERIES_COLUMNS = [
    "mechanism",
    "agent",
    "t",
    "data_size",
    "reward_quality",
    "improvement_rate",
    "utility",
]

TOTALS_COLUMNS = ["mechanism", "agents", "last_t", "total_data"]


def write_text_atomic(path: str | Path, text: str) -> None:
    """
    Write ``text`` to ``path`` through a temporary file in the same directory.

    Raises:
        FormatError: The directory is missing or the file cannot be written.
    """
    target = Path(path)
    try:
        fd, tmp = tempfile.mkstemp(dir=target.parent, suffix=".tmp")
    except OSError as e:
        raise FormatError(f"cannot write {path}: {e.strerror}") from e
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
        os.replace(tmp, target)
    except BaseException as e:
        if os.path.exists(tmp):
            os.unlink(tmp)
        if isinstance(e, OSError):
            raise FormatError(f"cannot write {path}: {e.strerror}") from e
        raise


def _read_text(path: str | Path) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot read {path}: {e.strerror}") from e


# Graph text


def _endpoint(token: str, labels: dict[str, int], line: int) -> int:
    if token in labels:
        return labels[token]
    try:
        return int(token)
    except ValueError:
        raise FormatError(f"unknown variable {token!r}", line) from None


def parse_graph(text: str) -> Pdag:
    """
    Parse graph text into a Pdag.

    Raises:
        FormatError: Malformed lines or a missing header.
        GraphError: Well-formed text describing an invalid graph.
    """
    p: int | None = None
    names: dict[int, str] = {}
    labels: dict[str, int] = {}
    directed: list[tuple[int, int]] = []
    undirected: list[tuple[int, int]] = []

    for number, raw in enumerate(text.splitlines(), start=1):
        tokens = raw.split("#", 1)[0].split()
        if not tokens:
            continue
        head = tokens[0]
        if head == "p":
            if p is not None:
                raise FormatError("duplicate header", number)
            if len(tokens) != 2 or not tokens[1].isdigit():
                raise FormatError("expected 'p <n>'", number)
            p = int(tokens[1])
        elif p is None:
            raise FormatError("'p <n>' must come first", number)
        elif head == "name":
            if len(tokens) != 3 or not tokens[1].isdigit():
                raise FormatError("expected 'name <index> <label>'", number)
            index = int(tokens[1])
            if index >= p or index in names:
                raise FormatError(f"bad or repeated name index {index}", number)
            names[index] = tokens[2]
            labels[tokens[2]] = index
        elif head == "edge":
            if len(tokens) != 4 or tokens[2] not in ("->", "--"):
                raise FormatError("expected 'edge <a> -> <b>' or 'edge <a> -- <b>'", number)
            a = _endpoint(tokens[1], labels, number)
            b = _endpoint(tokens[3], labels, number)
            (directed if tokens[2] == "->" else undirected).append((a, b))
        else:
            raise FormatError(f"unknown item {head!r}", number)

    if p is None:
        raise FormatError("missing 'p <n>' header")
    default = Pdag(p).names
    return Pdag(p, directed, undirected, [names.get(k, default[k]) for k in range(p)])


def emit_graph(g: Pdag) -> str:
    """Canonical graph text."""
    lines = [f"p {g.p}"]
    lines.extend(f"name {k} {label}" for k, label in enumerate(g.names))
    lines.extend(f"edge {a} -> {b}" for a, b in sorted(g.directed_edges))
    lines.extend(f"edge {a} -- {b}" for a, b in sorted(g.undirected_edges))
    return "\n".join(lines) + "\n"


def read_graph(path: str | Path) -> Pdag:
    return parse_graph(_read_text(path))


def read_cpdag(path: str | Path) -> Cpdag:
    """Read graph text that must describe a valid CPDAG."""
    return Cpdag.from_pdag(read_graph(path))


def write_graph(path: str | Path, g: Pdag) -> None:
    write_text_atomic(path, emit_graph(g))


# JSON documents


def _load_model(model: type[_M], text: str, what: str) -> _M:
    try:
        return model.model_validate_json(text)
    except ValidationError as e:
        raise FormatError(f"invalid {what}: {e.errors()[0]['msg']}") from e


def sem_to_spec(sem: LinearSem) -> SemSpec:
    edges = sorted(sem.coefficients)
    return SemSpec(
        p=sem.p,
        names=list(sem.names),
        edges=edges,
        coefficients=[sem.coefficients[e] for e in edges],
        noise_means=list(sem.noise_means),
        noise_stds=list(sem.noise_stds),
    )


def sem_from_spec(spec: SemSpec) -> LinearSem:
    dag = Dag(spec.p, spec.edges, names=spec.names)
    try:
        return LinearSem(
            dag=dag,
            coefficients=dict(zip(spec.edges, spec.coefficients)),
            noise_means=tuple(spec.noise_means),
            noise_stds=tuple(spec.noise_stds),
        )
    except ValidationError as e:
        raise FormatError(f"invalid SEM: {e.errors()[0]['msg']}") from e


def dump_sem(sem: LinearSem) -> str:
    return sem_to_spec(sem).model_dump_json(indent=2) + "\n"


def load_sem(text: str) -> LinearSem:
    return sem_from_spec(_load_model(SemSpec, text, "SEM"))


class PairEffect(BaseModel):
    """Effect mixture of one ordered pair."""

    source: int
    target: int
    components: list[GaussianComponent]


class EstimatorDocument(BaseModel):
    """JSON form of an Estimator."""

    p: int
    names: list[str]
    graph: str
    sample_size: int
    effects: list[PairEffect]


def dump_estimator(e: Estimator) -> str:
    document = EstimatorDocument(
        p=e.p,
        names=list(e.names),
        graph=emit_graph(e.graph),
        sample_size=e.sample_size,
        effects=[
            PairEffect(source=i, target=j, components=list(e.effects[(i, j)].components))
            for i, j in sorted(e.effects)
        ],
    )
    return document.model_dump_json(indent=2) + "\n"


def load_estimator(text: str) -> Estimator:
    document = _load_model(EstimatorDocument, text, "estimator")
    graph = Cpdag.from_pdag(parse_graph(document.graph))
    if graph.p != document.p:
        raise FormatError(f"graph has {graph.p} variables, document says {document.p}")
    try:
        return Estimator(
            graph=graph.with_names(document.names),
            effects={
                (pair.source, pair.target): EffectDistribution(components=tuple(pair.components))
                for pair in document.effects
            },
            sample_size=document.sample_size,
        )
    except (ValidationError, GraphError) as e:
        raise FormatError(f"invalid estimator: {e}") from e


def read_estimator(path: str | Path) -> Estimator:
    return load_estimator(_read_text(path))


def write_estimator(path: str | Path, e: Estimator) -> None:
    write_text_atomic(path, dump_estimator(e))


def read_sem(path: str | Path) -> LinearSem:
    return load_sem(_read_text(path))


def write_sem(path: str | Path, sem: LinearSem) -> None:
    write_text_atomic(path, dump_sem(sem))


def load_summary(text: str) -> SimulationSummary:
    return _load_model(SimulationSummary, text, "simulation summary")


def write_summary(path: str | Path, summary: SimulationSummary) -> None:
    write_text_atomic(path, summary.model_dump_json(indent=2) + "\n")


# Datasets

_provenance = TypeAdapter(list[ProvenanceBlock])


def dataset_to_csv(data: Dataset) -> str:
    frame = pd.DataFrame(data.rows, columns=list(data.names))
    return str(frame.to_csv(index=False, lineterminator="\n"))


def dataset_from_csv(text: str) -> Dataset:
    try:
        frame = pd.read_csv(io.StringIO(text), float_precision="round_trip")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise FormatError(f"invalid dataset CSV: {e}") from e
    try:
        rows = frame.to_numpy(dtype=float)
    except (TypeError, ValueError) as e:
        raise FormatError("dataset CSV contains non-numeric cells") from e
    try:
        return Dataset(rows=rows, names=tuple(str(c) for c in frame.columns))
    except ValidationError as e:
        raise FormatError(f"invalid dataset: {e.errors()[0]['msg']}") from e


def read_dataset(path: str | Path, provenance: str | Path | None = None) -> Dataset:
    data = dataset_from_csv(_read_text(path))
    if provenance is None:
        return data
    try:
        blocks = _provenance.validate_json(_read_text(provenance))
        return Dataset(rows=data.rows, names=data.names, provenance=tuple(blocks))
    except ValidationError as e:
        raise FormatError(f"invalid provenance: {e.errors()[0]['msg']}") from e


def write_dataset(path: str | Path, data: Dataset, provenance: str | Path | None = None) -> None:
    write_text_atomic(path, dataset_to_csv(data))
    if provenance is not None:
        blocks = _provenance.dump_json(list(data.provenance), indent=2).decode()
        write_text_atomic(provenance, blocks + "\n")


# Traces


def trace_frame(traces: list[MechanismTrace]) -> pd.DataFrame:
    """One row per agent per timestep across ``traces``."""
    rows = [
        {
            "mechanism": trace.mechanism.value,
            "t": record.t,
            **step.model_dump(mode="json", exclude={"agent", "branch"}),
            "agent": step.agent,
            "branch": step.branch.value,
        }
        for trace in traces
        for record in trace.records
        for step in record.steps
    ]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)


def write_trace_csv(path: str | Path, traces: list[MechanismTrace]) -> None:
    frame = trace_frame(traces)
    write_text_atomic(path, str(frame.to_csv(index=False, lineterminator="\n")))


def read_trace_csv(path: str | Path) -> pd.DataFrame:
    try:
        frame = pd.read_csv(io.StringIO(_read_text(path)), float_precision="round_trip")
    except (pd.errors.EmptyDataError, pd.errors.ParserError) as e:
        raise FormatError(f"invalid trace CSV: {e}") from e
    if list(frame.columns) != TRACE_COLUMNS:
        raise FormatError(f"trace CSV columns must be {', '.join(TRACE_COLUMNS)}")
    return frame


def report_series(frame: pd.DataFrame) -> pd.DataFrame:
    """Plot-ready per-agent series sorted by mechanism, agent and timestep."""
    series = frame.loc[:, SERIES_COLUMNS]
    return series.sort_values(["mechanism", "agent", "t"], kind="stable").reset_index(drop=True)


def report_totals(frame: pd.DataFrame) -> pd.DataFrame:
    """Per mechanism: agent count, last timestep and total data produced."""
    if frame.empty:
        return pd.DataFrame(columns=TOTALS_COLUMNS)
    rows = []
    for mechanism, group in frame.groupby("mechanism", sort=True):
        final = group.sort_values("t", kind="stable").groupby("agent").tail(1)
        rows.append(
            {
                "mechanism": mechanism,
                "agents": int(final["agent"].nunique()),
                "last_t": int(group["t"].max()),
                "total_data": int(final["data_size"].sum()),
            }
        )
    return pd.DataFrame(rows, columns=TOTALS_COLUMNS)
