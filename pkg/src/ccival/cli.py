"""Command-line front end."""

from __future__ import annotations

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import NoReturn

import pandas as pd
from pydantic import ValidationError

from . import __version__
from .effects import estimate
from .errors import CciError, FormatError, MechanismError, UsageError
from .formats import (
    dataset_to_csv,
    emit_graph,
    load_summary,
    read_cpdag,
    read_dataset,
    read_estimator,
    read_sem,
    read_trace_csv,
    report_series,
    report_totals,
    write_dataset,
    write_estimator,
    write_graph,
    write_sem,
    write_summary,
    write_text_atomic,
    write_trace_csv,
)
from .graph import cpdag_of
from .learn import pc_learn
from .mechanism import audit_trace, simulate
from .models import BiasSpec, PcConfig, Scenario, SemGenerator
from .synth import FIXTURES, fixture_sem, generate_sem, sample
from .valuation import DEFAULT_MC_SAMPLES, falsely_identified_pairs, valuation

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that raises instead of exiting."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.prog}: {message}")


def _rho(value: str) -> float | str:
    if value == "auto":
        return value
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number or 'auto', got {value!r}") from None


def _pc_config(args: argparse.Namespace) -> PcConfig:
    try:
        return PcConfig(alpha=args.alpha, max_cond_size=args.max_cond_size)
    except ValidationError as e:
        raise UsageError(e.errors()[0]["msg"]) from e


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        write_text_atomic(out, text)


def _cmd_gen_sem(args: argparse.Namespace) -> None:
    if args.fixture is not None:
        sem = fixture_sem(args.fixture)
    else:
        if args.p is None:
            raise UsageError("gen-sem needs --fixture or --p")
        try:
            generator = SemGenerator(
                p=args.p,
                edge_prob=args.edge_prob,
                coef_low=args.coef_low,
                coef_high=args.coef_high,
                seed=args.seed,
            )
        except ValidationError as e:
            raise UsageError(e.errors()[0]["msg"]) from e
        sem = generate_sem(generator)
    write_sem(args.out, sem)
    if args.cpdag_out is not None:
        write_graph(args.cpdag_out, cpdag_of(sem.dag))


def _cmd_sample(args: argparse.Namespace) -> None:
    sem = read_sem(args.sem)
    if args.n < 0:
        raise UsageError("--n must be non-negative")
    bias = None
    if args.mean_spread or args.scale_spread:
        bias = BiasSpec.random(sem.p, args.mean_spread, args.scale_spread, args.bias_seed)
    data = sample(sem, args.n, bias, seed=args.seed)
    if args.out is None:
        sys.stdout.write(dataset_to_csv(data))
    else:
        write_dataset(args.out, data, args.provenance_out)


def _cmd_learn(args: argparse.Namespace) -> None:
    data = read_dataset(args.data)
    _emit(emit_graph(pc_learn(data, _pc_config(args))), args.out)


def _cmd_estimate(args: argparse.Namespace) -> None:
    data = read_dataset(args.data)
    write_estimator(args.out, estimate(data, _pc_config(args)))


def _cmd_dsid(args: argparse.Namespace) -> None:
    first = read_cpdag(args.graph_a)
    second = read_cpdag(args.graph_b)
    wrong = falsely_identified_pairs(first, second)
    lines = [str(len(wrong)), "source,target,falsely_identified"]
    for i in range(first.p):
        for j in range(first.p):
            if i != j:
                lines.append(f"{first.names[i]},{first.names[j]},{int((i, j) in wrong)}")
    sys.stdout.write("\n".join(lines) + "\n")


def _cmd_value(args: argparse.Namespace) -> None:
    report = valuation(
        read_estimator(args.estimator),
        read_estimator(args.benchmark),
        args.mc_samples,
        args.seed,
    )
    sys.stdout.write(report.model_dump_json(indent=2) + "\n")


def _load_scenario(args: argparse.Namespace) -> Scenario:
    try:
        scenario = Scenario.model_validate_json(Path(args.config).read_text(encoding="utf-8"))
    except OSError as e:
        raise FormatError(f"cannot read {args.config}: {e.strerror}") from e
    except ValidationError as e:
        raise FormatError(f"invalid scenario: {e.errors()[0]['msg']}") from e

    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.epsilon is not None:
        overrides["epsilon"] = args.epsilon
    if args.rho is not None:
        overrides["rho"] = args.rho
    if args.mc_samples is not None:
        overrides["mc_samples"] = args.mc_samples
    if args.alpha is not None:
        overrides["pc"] = scenario.mechanism.pc.model_copy(update={"alpha": args.alpha})
    if not overrides:
        return scenario
    try:
        merged = scenario.mechanism.model_dump() | overrides
        mechanism = type(scenario.mechanism).model_validate(merged)
    except (ValidationError, ValueError) as e:
        raise UsageError(f"invalid override: {e}") from e
    return scenario.model_copy(update={"mechanism": mechanism})


def _cmd_simulate(args: argparse.Namespace) -> None:
    summary = simulate(_load_scenario(args))
    write_trace_csv(args.out, summary.traces)
    if args.summary is not None:
        write_summary(args.summary, summary)
    for audit in summary.audits:
        status = "pass" if audit.passed else f"{len(audit.failures())} failed checks"
        logger.info(f"audit {audit.mechanism.value}: {status}")


def _cmd_audit(args: argparse.Namespace) -> None:
    try:
        text = Path(args.summary).read_text(encoding="utf-8")
    except OSError as e:
        raise FormatError(f"cannot read {args.summary}: {e.strerror}") from e
    summary = load_summary(text)
    reports = [audit_trace(trace) for trace in summary.traces]
    failed = 0
    for report in reports:
        sys.stdout.write(report.model_dump_json(indent=2) + "\n")
        failed += len(report.failures())
    if failed:
        raise MechanismError(f"audit found {failed} failed checks")


def _cmd_report(args: argparse.Namespace) -> None:
    frames = [read_trace_csv(path) for path in args.traces]
    frame = pd.concat(frames, ignore_index=True) if len(frames) > 1 else frames[0]
    if args.out is not None:
        series = report_series(frame).to_csv(index=False, lineterminator="\n")
        write_text_atomic(args.out, str(series))
    sys.stdout.write(str(report_totals(frame).to_csv(index=False, lineterminator="\n")))


def _add_pc_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--alpha", type=float, default=0.01, help="significance level")
    parser.add_argument("--max-cond-size", type=int, default=None, help="conditioning set bound")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ccival", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = commands.add_parser("gen-sem", help="write a ground-truth SEM")
    gen.add_argument("--fixture", choices=sorted(FIXTURES))
    gen.add_argument("--p", type=int)
    gen.add_argument("--edge-prob", type=float, default=0.3)
    gen.add_argument("--coef-low", type=float, default=0.5)
    gen.add_argument("--coef-high", type=float, default=2.0)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.add_argument("--cpdag-out", help="also write the true CPDAG")
    gen.set_defaults(handler=_cmd_gen_sem)

    smp = commands.add_parser("sample", help="draw a dataset from a SEM")
    smp.add_argument("--sem", required=True)
    smp.add_argument("--n", type=int, required=True)
    smp.add_argument("--seed", type=int, default=0)
    smp.add_argument("--mean-spread", type=float, default=0.0)
    smp.add_argument("--scale-spread", type=float, default=0.0)
    smp.add_argument("--bias-seed", type=int, default=0)
    smp.add_argument("--out")
    smp.add_argument("--provenance-out")
    smp.set_defaults(handler=_cmd_sample)

    lrn = commands.add_parser("learn", help="learn a CPDAG with PC")
    lrn.add_argument("--data", required=True)
    _add_pc_flags(lrn)
    lrn.add_argument("--out")
    lrn.set_defaults(handler=_cmd_learn)

    est = commands.add_parser("estimate", help="learn an estimator (CPDAG + effects)")
    est.add_argument("--data", required=True)
    _add_pc_flags(est)
    est.add_argument("--out", required=True)
    est.set_defaults(handler=_cmd_estimate)

    dst = commands.add_parser("dsid", help="dSID between two CPDAG files")
    dst.add_argument("graph_a")
    dst.add_argument("graph_b")
    dst.set_defaults(handler=_cmd_dsid)

    val = commands.add_parser("value", help="value an estimator against a benchmark")
    val.add_argument("estimator")
    val.add_argument("benchmark")
    val.add_argument("--mc-samples", type=int, default=DEFAULT_MC_SAMPLES)
    val.add_argument("--seed", type=int, default=0)
    val.set_defaults(handler=_cmd_value)

    sim = commands.add_parser("simulate", help="run mechanism simulations")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out", required=True, help="trace CSV")
    sim.add_argument("--summary", help="summary JSON with traces and audits")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--epsilon", type=float)
    sim.add_argument("--rho", type=_rho, help="reward spread in (0, 1] or 'auto'")
    sim.add_argument("--mc-samples", type=int)
    sim.add_argument("--alpha", type=float)
    sim.set_defaults(handler=_cmd_simulate)

    aud = commands.add_parser("audit", help="audit the traces of a summary JSON")
    aud.add_argument("summary")
    aud.set_defaults(handler=_cmd_audit)

    rep = commands.add_parser("report", help="series and totals from trace CSVs")
    rep.add_argument("traces", nargs="+")
    rep.add_argument("--out", help="plot-ready series CSV")
    rep.set_defaults(handler=_cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 on a usage error, 2 on any other domain error.
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        sys.stderr.write(f"{e}\n")
        return 1

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        args.handler(args)
    except UsageError as e:
        sys.stderr.write(f"error: {e}\n")
        return 1
    except CciError as e:
        sys.stderr.write(f"error: {e}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
