"""Command-line entry point: ``xaitwin {fit,reason,run,synth}``.

Exit status is 0 on success, 1 on invalid input or configuration, 2 on a
runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .bayes import DagBayesNet
from .config import POLICIES, RunConfig, load_config
from .errors import TwinError, ValidationError
from .harness import (dumps, load_sessions, report_accuracy, run_implicit, run_twin,
                      write_outputs)
from .trace import synthesize_trace, write_trace

log = logging.getLogger("xaitwin")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p: argparse.ArgumentParser, config_required: bool = False) -> None:
    p.add_argument("--config", type=Path, required=config_required,
                   help="TOML run configuration")
    p.add_argument("--trace", type=Path, help="CSV trace (overrides the config)")
    p.add_argument("--seed", type=int)
    p.add_argument("--kb-sessions", type=int)
    p.add_argument("--test-sessions", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="xaitwin", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit", help="fit the per-gNB rate estimators only")
    _common(p)
    p.add_argument("--out", type=Path, help="write estimators.json here")

    p = sub.add_parser("reason", help="query a serialized Bayesian network")
    p.add_argument("--model", type=Path, required=True, help="bn.json from a run")
    p.add_argument("--evidence", action="append", default=[], metavar="NODE=STATE",
                   help="observed bin, by label or index; repeatable")
    p.add_argument("--query", action="append", default=[], metavar="NODE",
                   help="node to report P(node | evidence) for; default all unobserved")

    p = sub.add_parser("run", help="full twin loop")
    _common(p, config_required=True)
    p.add_argument("--policy", choices=POLICIES, action="append",
                   help="restrict to this policy; repeatable")
    p.add_argument("--out", type=Path, help="output directory")

    p = sub.add_parser("synth", help="write a synthetic trace")
    _common(p)
    p.add_argument("--samples", type=int, help="number of rows")
    p.add_argument("--out", type=Path, required=True, help="CSV path")
    return parser


def _config(args) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if args.trace is not None:
        changes["trace"] = args.trace
    for key in ("seed", "kb_sessions", "test_sessions"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    if getattr(args, "policy", None):
        changes["policies"] = tuple(dict.fromkeys(args.policy))
    return replace(config, **changes) if changes else config


def _fit(args) -> int:
    config = _config(args)
    implicit = run_implicit(config, load_sessions(config))
    pred = [r.allocation for r in implicit.test]
    truth = [r.sample.rates for r in implicit.test]
    out = {
        "accuracy": report_accuracy(pred, truth),
        "estimators": [{"gnb": g, **e.to_dict(), "converged": e.converged()}
                       for g, e in enumerate(implicit.estimators)],
    }
    text = dumps(out, indent=2)
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(text + "\n")
    print(dumps({"accuracy": out["accuracy"],
                 "converged": [e["converged"] for e in out["estimators"]]}))
    return 0


def _parse_evidence(net: DagBayesNet, items: list[str]) -> dict[str, int]:
    evidence = {}
    for item in items:
        node, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"evidence must be NODE=STATE, got {item!r}")
        node = node.strip()
        value = value.strip()
        key: int | str = int(value) if value.lstrip("-").isdigit() else value
        evidence[node] = net.index(node, key)
    return evidence


def _reason(args) -> int:
    if not args.model.exists():
        raise ValidationError(f"model file not found: {args.model}")
    try:
        net = DagBayesNet.from_json(args.model.read_text())
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, TwinError):
            raise
        raise ValidationError(f"cannot read model {args.model}: {exc}") from exc
    evidence = _parse_evidence(net, args.evidence)
    targets = args.query or [n for n in net.dag.nodes if n not in evidence]
    conditionals = {}
    for node in targets:
        if node in evidence:
            raise ValidationError(f"query node {node!r} is also observed")
        probs = net.query_conditional(node, evidence)
        conditionals[node] = dict(zip(net.states[node], probs.tolist()))
    assignment, p = net.most_probable_explanation(evidence)
    print(dumps({
        "evidence": net.labels_of(evidence),
        "conditionals": conditionals,
        "mpe": {"assignment": net.labels_of(assignment), "probability": p},
    }, indent=2))
    return 0


def _run(args) -> int:
    config = _config(args)
    out = args.out or config.output or Path("out")
    result = run_twin(config)
    paths = write_outputs(result, out)
    report = result.report
    print(dumps({"accuracy": report.accuracy, "normalized_trust": report.normalized_trust,
                 "outputs": [str(p) for p in paths]}))
    return 0


def _synth(args) -> int:
    config = _config(args)
    gen = config.generator
    if args.samples is not None:
        gen = replace(gen, n_samples=args.samples)
    samples = synthesize_trace(gen, config.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_trace(samples, args.out, config.mapping)
    print(dumps({"rows": len(samples), "path": str(args.out)}))
    return 0


COMMANDS = {"fit": _fit, "reason": _reason, "run": _run, "synth": _synth}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except TwinError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
