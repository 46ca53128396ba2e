"""Command-line entry point.

Subcommands mirror the pipeline stages: extract, normalize, compile, repair,
describe, split, reward, grpo-score, evaluate, stats, prompt, and the one-shot
`all`. Exit code 0 on success; configuration problems print a machine-readable
JSON error report to stderr and exit 2.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .pipeline import PipelineConfig


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="pipeline config JSON")
    parser.add_argument("--jobs", type=int, default=None, help="parallel workers")
    parser.add_argument("--seed", type=int, default=None, help="random seed for sampling stages")
    parser.add_argument("--mock-endpoints", action="store_true",
                        help="replace LLM/VLM endpoints with deterministic mocks")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tikzmill")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="scan TeX sources for TikZ environments")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True, help="directory or manifest JSONL")
    p.add_argument("--output", type=Path, required=True, help="snippets JSONL")
    p.add_argument("--diagnostics", type=Path, default=None)
    p.add_argument("--source-kind", default="curated")

    p = sub.add_parser("normalize", help="wrap snippets into standalone documents")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True, help="snippets JSONL")
    p.add_argument("--manifest", type=Path, required=True, help="source manifest JSONL")
    p.add_argument("--output", type=Path, required=True, help="records JSONL")
    p.add_argument("--drops", type=Path, default=None)

    p = sub.add_parser("compile", help="compile records in the sandbox")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--results", type=Path, default=None)
    p.add_argument("--workspace", type=Path, default=Path("."))

    p = sub.add_parser("repair", help="LLM repair loop over failed records")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--sessions", type=Path, default=None)
    p.add_argument("--workspace", type=Path, default=Path("."))

    p = sub.add_parser("describe", help="VLM figure descriptions")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--descriptions", type=Path, default=None)
    p.add_argument("--workspace", type=Path, default=Path("."))

    p = sub.add_parser("split", help="decontaminated train/test split")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output-dir", type=Path, required=True)

    p = sub.add_parser("reward", help="score candidate programs against ground truth")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True,
                   help="JSONL of {record_id, code[, gt_embedding]}")
    p.add_argument("--output", type=Path, required=True)
    p.add_argument("--gt-embeddings", type=Path, default=None,
                   help="directory of <record_id>.emb matrices")
    p.add_argument("--provider", default="mock",
                   help="mock | file:<argv;with;{image};{out}> | http(s)://...")
    p.add_argument("--workspace", type=Path, default=Path("."))

    p = sub.add_parser("grpo-score", help="advantages/objective/gradients per group")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True, help="groups JSONL or .bin")
    p.add_argument("--output", type=Path, required=True)

    p = sub.add_parser("evaluate", help="TED/CR/AT/AVG report")
    _add_common(p)
    p.add_argument("--outputs", type=Path, required=True,
                   help="JSONL of {record_id, code, compiled}")
    p.add_argument("--refs", type=Path, required=True, help="JSONL of {record_id, code}")
    p.add_argument("--scores", type=Path, default=None, help="external scores CSV/JSONL")
    p.add_argument("--external-pair", default="clip,dsim")
    p.add_argument("--output", type=Path, required=True)

    p = sub.add_parser("stats", help="corpus statistics")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--output", type=Path, required=True)

    p = sub.add_parser("prompt", help="emit the generation prompt for a description")
    _add_common(p)
    p.add_argument("--description", default=None)
    p.add_argument("--input", type=Path, default=None,
                   help="JSONL of {record_id, description}")
    p.add_argument("--output", type=Path, default=None)

    p = sub.add_parser("all", help="run the full dataset pipeline")
    _add_common(p)
    p.add_argument("--input", type=Path, required=True, help="source manifest JSONL")
    p.add_argument("--workspace", type=Path, required=True)
    return parser


def _load_config(args: argparse.Namespace) -> PipelineConfig:
    cfg = PipelineConfig.load(getattr(args, "config", None))
    if getattr(args, "jobs", None):
        cfg.jobs = args.jobs
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "mock_endpoints", False):
        cfg.mock_endpoints = True
    return cfg


def _fail(kind: str, violations: list[str]) -> int:
    sys.stderr.write(json.dumps({"error": kind, "violations": violations}, indent=2) + "\n")
    return 2


def _report(report: pipeline.StageReport) -> None:
    line = {"stage": report.stage, "skipped": report.skipped, **report.details}
    sys.stdout.write(json.dumps(line, sort_keys=True) + "\n")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load_config(args)
    except (OSError, json.JSONDecodeError, TypeError, ValueError) as exc:
        return _fail("config", [str(exc)])
    violations = cfg.violations()
    if violations:
        return _fail("config", violations)

    try:
        if args.command == "extract":
            diag = args.diagnostics or args.output.with_suffix(".diagnostics.jsonl")
            _report(pipeline.stage_extract(args.input, args.output, diag, args.source_kind))
        elif args.command == "normalize":
            drops = args.drops or args.output.with_suffix(".drops.jsonl")
            _report(pipeline.stage_normalize(args.input, args.manifest, args.output,
                                             drops, cfg))
        elif args.command == "compile":
            results = args.results or args.output.with_suffix(".results.jsonl")
            _report(pipeline.stage_compile(args.input, args.output, results, cfg,
                                           args.workspace))
        elif args.command == "repair":
            sessions = args.sessions or args.output.with_suffix(".sessions.jsonl")
            _report(pipeline.stage_repair(args.input, args.output, sessions, cfg,
                                          args.workspace))
        elif args.command == "describe":
            descriptions = args.descriptions or args.output.with_suffix(".descriptions.jsonl")
            _report(pipeline.stage_describe(args.input, args.output, descriptions, cfg,
                                            args.workspace))
        elif args.command == "split":
            _report(pipeline.stage_split(args.input, args.output_dir, cfg))
        elif args.command == "reward":
            _report(pipeline.stage_reward(args.input, args.output, args.gt_embeddings,
                                          args.provider, cfg, args.workspace))
        elif args.command == "grpo-score":
            _report(pipeline.stage_grpo_score(args.input, args.output, cfg))
        elif args.command == "evaluate":
            pair = tuple(args.external_pair.split(","))
            if len(pair) != 2:
                return _fail("args", ["--external-pair must name two scores"])
            _report(pipeline.stage_evaluate(args.outputs, args.refs, args.output,
                                            args.scores, pair))
        elif args.command == "stats":
            _report(pipeline.stage_stats(args.input, args.output))
        elif args.command == "prompt":
            return _run_prompt(args)
        elif args.command == "all":
            for report in pipeline.run_all(args.input, args.workspace, cfg):
                _report(report)
    except FileNotFoundError as exc:
        return _fail("io", [str(exc)])
    return 0


def _run_prompt(args: argparse.Namespace) -> int:
    if args.description is not None:
        text = pipeline.generation_prompt(args.description)
        if args.output:
            args.output.write_text(text)
        else:
            sys.stdout.write(text + "\n")
        return 0
    if args.input is None:
        return _fail("args", ["prompt needs --description or --input"])
    rows = []
    with open(args.input) as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                rows.append({"record_id": obj["record_id"],
                             "prompt": pipeline.generation_prompt(obj["description"])})
    out = args.output or Path("prompts.jsonl")
    with open(out, "w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    sys.stdout.write(json.dumps({"stage": "prompt", "prompts": len(rows)}) + "\n")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
