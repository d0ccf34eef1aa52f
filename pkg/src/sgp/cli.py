"""Command-line entry point.

Exit codes: 0 success, 1 validation findings, 2 operational error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from ._util import atomic_write_text, canonical_json
from .backends import BackendConfigError, build_backends
from .corpus import CorpusError, FingerprintMismatch, dumps_corpus, read_corpus
from .harness import EvalReport, ProtocolConfig, SplitPlan, make_splits, run_experiment
from .ontology import SchemaError, default_schema, load_schema, schema_stats
from .report import render_table, summaries_from_aggregates, summary_table
from .synthgen import GenConfig, GenerationConfigError, generate_corpus

OK, FINDINGS, ERROR = 0, 1, 2


class CommandError(Exception):
    """Operational failure; reported on stderr with exit code 2."""


def _load_json(path: str) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise CommandError(f"cannot read {path}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise CommandError(f"{path}: malformed JSON at line {exc.lineno}") from exc
    if not isinstance(doc, dict):
        raise CommandError(f"{path}: expected a JSON object")
    return doc


def _schema(path: str | None):
    if path is None:
        return default_schema()
    if not Path(path).is_file():
        raise CommandError(f"schema file not found: {path}")
    try:
        return load_schema(Path(path))
    except SchemaError as exc:
        raise CommandError(f"schema {path} is invalid: {exc}") from exc


def _corpus(path: str, schema):
    if not Path(path).is_file():
        raise CommandError(f"corpus file not found: {path}")
    try:
        return read_corpus(path, schema)
    except FingerprintMismatch as exc:
        raise CommandError(str(exc)) from exc
    except CorpusError as exc:
        raise CommandError(f"{path}: {exc}") from exc


def cmd_schema_check(args) -> int:
    path = args.schema
    if path is not None and not Path(path).is_file():
        raise CommandError(f"schema file not found: {path}")
    try:
        schema = load_schema(Path(path)) if path else default_schema()
    except SchemaError as exc:
        for where, msg in exc.issues:
            print(f"violation {where}: {msg}")
        return FINDINGS
    stats = schema_stats(schema)
    print(f"{stats['kinds']} kinds / {stats['predicates']} predicates / {stats['strata']} strata")
    print(f"latent predicates: {stats['latent_predicates']}")
    for stratum, info in stats["per_stratum"].items():
        print(f"  {stratum:<22} {len(info['kinds']):>2} kinds  {info['values']:>3} values  {', '.join(info['kinds'])}")
    print(f"fingerprint: {schema.fingerprint}")
    return OK


def cmd_generate(args) -> int:
    schema = _schema(args.schema)
    try:
        cfg = GenConfig.from_dict(_load_json(args.config)) if args.config else GenConfig()
    except (GenerationConfigError, TypeError) as exc:
        raise CommandError(f"invalid generator config: {exc}") from exc
    overrides = {}
    if args.n is not None:
        overrides["n_instances"] = args.n
    if args.artifacts is not None:
        overrides["artifacts_per_instance"] = (args.artifacts, args.artifacts)
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides["jobs"] = args.jobs
    cfg = replace(cfg, **overrides)
    persona = _load_json(args.persona) if args.persona else None
    try:
        corpus = generate_corpus(schema, cfg, persona)
    except GenerationConfigError as exc:
        raise CommandError(f"unsatisfiable generation config: {exc}") from exc
    atomic_write_text(args.out, dumps_corpus(corpus))
    atomic_write_text(f"{args.out}.config.json", canonical_json({"generator": cfg.to_dict()}, indent=2) + "\n")
    print(f"wrote {len(corpus)} instances / {corpus.n_artifacts} artifacts to {args.out}")
    return OK


def cmd_validate(args) -> int:
    schema = _schema(args.schema)
    corpus = _corpus(args.corpus, schema)
    findings = corpus.validate(schema)
    for iid, violations in findings.items():
        for v in violations:
            print(f"{iid}: {v}")
    n = sum(len(v) for v in findings.values())
    print(f"{len(corpus)} instances checked, {n} findings")
    return FINDINGS if n else OK


def cmd_split(args) -> int:
    schema = _schema(args.schema)
    corpus = _corpus(args.corpus, schema)
    try:
        plan = make_splits(corpus, args.folds, 1 / args.folds, "domain", args.seed)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    domain_of = {i.instance_id: i.domain for i in corpus.instances}
    domains = sorted(set(domain_of.values()))
    print("fold  test  retrieval  " + "  ".join(domains))
    for f, (retrieval, test) in enumerate(plan.folds):
        counts = Counter(domain_of[i] for i in test)
        print(f"{f:>4}  {len(test):>4}  {len(retrieval):>9}  " + "  ".join(f"{counts[d]:>{len(d)}}" for d in domains))
    for w in plan.warnings:
        print(f"warning: {w}")
    atomic_write_text(args.out, canonical_json(plan.to_dict(), indent=2) + "\n")
    return OK


def _backend_spec(value: str) -> dict:
    if value in ("oracle", "noisy_oracle"):
        return {"generation": {"type": value}}
    return _load_json(value)


def cmd_run(args) -> int:
    schema = _schema(args.schema)
    corpus = _corpus(args.corpus, schema)
    plan = SplitPlan.from_dict(_load_json(args.plan))
    base = _load_json(args.config) if args.config else {}
    flags = {
        "protocol": args.protocol,
        "k": args.k,
        "tau": args.tau,
        "seed": args.seed,
        "task_mode": args.task_mode,
        "context_window": args.context_window,
        "runs_per_fold": args.runs,
    }
    try:
        cfg = ProtocolConfig.from_dict({**base, **{k: v for k, v in flags.items() if v is not None}})
    except (TypeError, ValueError) as exc:
        raise CommandError(f"invalid protocol config: {exc}") from exc
    try:
        backends = build_backends(_backend_spec(args.backend), corpus, schema)
    except (BackendConfigError, TypeError) as exc:
        raise CommandError(f"backend configuration: {exc}") from exc
    try:
        report = run_experiment(corpus, plan, cfg, backends, schema, jobs=args.jobs)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc
    atomic_write_text(args.out, report.to_json())
    agg = report.aggregates[cfg.condition]
    if agg.get("empty"):
        print(f"all {agg['errored']} records errored")
    else:
        m = agg["metrics"]
        print(
            f"{cfg.condition}: strict F1 {m['strict_f1']['mean']:.3f}  soft F1 {m['soft_f1']['mean']:.3f}  "
            f"PVR {m['pvr']['mean']:.3f}  gap {m['gap_ls']['mean']:+.3f}  errored {agg['errored']}"
        )
    print(f"wrote {args.out}")
    return OK


def cmd_report(args) -> int:
    summaries = {}
    for path in args.reports:
        try:
            report = EvalReport.from_dict(_load_json(path))
            summaries.update(summaries_from_aggregates(report.aggregates))
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise CommandError(f"{path}: malformed report ({exc})") from exc
    table = summary_table(summaries)
    text = render_table(table) if args.format == "table" else canonical_json(table, indent=2) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    sys.stdout.write(text)
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgp", description="Situation graph prediction toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("schema-check", help="load a schema and print its statistics")
    p.add_argument("--schema", help="schema JSON (default: shipped schema)")
    p.set_defaults(func=cmd_schema_check)

    p = sub.add_parser("generate", help="generate a synthetic corpus")
    p.add_argument("--schema")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--persona", help="persona JSON")
    p.add_argument("--n", type=int, help="number of instances")
    p.add_argument("--artifacts", type=int, help="artifacts per instance")
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("validate", help="validate every gold graph of a corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("split", help="stratified k-fold plan")
    p.add_argument("--corpus", required=True)
    p.add_argument("--schema")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("run", help="run one protocol over a split plan")
    p.add_argument("--corpus", required=True)
    p.add_argument("--plan", required=True)
    p.add_argument("--schema")
    p.add_argument("--config", help="protocol config JSON (flags override it)")
    p.add_argument("--protocol", choices=["zero_shot", "ra_icl"])
    p.add_argument("--task-mode", choices=["static", "temporal_oracle", "temporal_autoregressive"])
    p.add_argument("--context-window", type=int)
    p.add_argument("--runs", type=int, help="runs per fold")
    p.add_argument("--k", type=int)
    p.add_argument("--tau", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", default="oracle", help="oracle | noisy_oracle | backends JSON")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="render a summary table from one or more reports")
    p.add_argument("reports", nargs="+")
    p.add_argument("--format", choices=["table", "json"], default="table")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    raise SystemExit(main())
