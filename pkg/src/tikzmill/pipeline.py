"""Stage orchestration: config handling, resumable stages, mock endpoints.

Every stage consumes the previous stage's JSONL and is guarded by a manifest
(input digest + parameter digest), so reruns over unchanged inputs are skipped
and report full cache hits. Outputs are canonical JSON (sorted keys) to keep
runs byte-comparable.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

from . import decontaminate as decon
from . import describe as describe_mod
from . import extract as extract_mod
from . import grpo as grpo_mod
from . import harness as harness_mod
from . import metrics as metrics_mod
from . import normalize as normalize_mod
from . import records as records_mod
from . import repair as repair_mod
from . import rewards as rewards_mod
from .chat import ChatClient, ChatEndpointConfig, ChatError, MockChatClient
from .embeddings import (
    EmbeddingProviderError,
    FileExchangeProvider,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    read_embedding_matrix,
)

GENERATION_PROMPT_TEMPLATE = (
    "Generate a complete LaTeX document that contains a TikZ figure according "
    "to the following requirements:\n"
    "{figure_description}\n"
    "Wrap your code using \\documentclass[tikz]{{standalone}}, and include "
    "\\begin{{document}}...\\end{{document}}. "
    "Only output valid LaTeX code with no extra text."
)


def generation_prompt(figure_description: str) -> str:
    return GENERATION_PROMPT_TEMPLATE.format(figure_description=figure_description)


# --- configuration -----------------------------------------------------------


@dataclass
class PipelineConfig:
    jobs: int = 1
    seed: int = 0
    mock_endpoints: bool = False
    compile: dict = field(default_factory=dict)
    normalize: dict = field(default_factory=dict)
    repair: dict = field(default_factory=dict)
    describe: dict = field(default_factory=dict)
    split: dict = field(default_factory=dict)
    reward: dict = field(default_factory=dict)
    grpo: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: Optional[str | Path]) -> "PipelineConfig":
        if path is None:
            return cls()
        with open(path) as fh:
            raw = json.load(fh)
        known = {f for f in cls.__dataclass_fields__}
        cfg = cls(**{k: v for k, v in raw.items() if k in known})
        cfg._unknown = sorted(set(raw) - known)  # type: ignore[attr-defined]
        return cfg

    def violations(self) -> list[str]:
        """Every problem, not just the first."""
        problems = []
        for key in getattr(self, "_unknown", []):
            problems.append(f"unknown config section {key!r}")
        if self.jobs < 1:
            problems.append("jobs must be >= 1")
        try:
            self.sandbox_config()
        except (ValueError, TypeError) as exc:
            problems.append(f"compile: {exc}")
        try:
            self.split_policy()
        except (ValueError, TypeError) as exc:
            problems.append(f"split: {exc}")
        try:
            self.reward_config()
        except (ValueError, TypeError) as exc:
            problems.append(f"reward: {exc}")
        try:
            self.grpo_config()
        except (ValueError, TypeError) as exc:
            problems.append(f"grpo: {exc}")
        rules_path = self.normalize.get("rules_path")
        if rules_path and not Path(rules_path).exists():
            problems.append(f"normalize.rules_path does not exist: {rules_path}")
        return problems

    def sandbox_config(self) -> harness_mod.SandboxConfig:
        opts = {k: v for k, v in self.compile.items() if k != "cache_dir"}
        return harness_mod.SandboxConfig(**opts)

    def split_policy(self) -> decon.SplitPolicy:
        opts = dict(self.split)
        opts.setdefault("test_after_date", "2025-05-31")
        return decon.SplitPolicy(**opts)

    def reward_config(self) -> rewards_mod.RewardConfig:
        return rewards_mod.RewardConfig(**self.reward)

    def grpo_config(self) -> grpo_mod.GrpoConfig:
        return grpo_mod.GrpoConfig(**self.grpo)

    def rules(self) -> list[normalize_mod.PackageRule]:
        rules_path = self.normalize.get("rules_path")
        if rules_path:
            return normalize_mod.load_rules(rules_path)
        return normalize_mod.default_rules()


# --- stage guard (resumability) ----------------------------------------------


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class StageReport:
    stage: str
    skipped: bool
    outputs: list[str]
    details: dict = field(default_factory=dict)


class StageGuard:
    """Skips a stage when inputs, parameters, and outputs are all unchanged."""

    def __init__(self, workspace: Path):
        self.dir = workspace / "manifests"
        self.dir.mkdir(parents=True, exist_ok=True)

    def _fingerprint(self, inputs: Sequence[Path], params: dict, outputs: Sequence[Path]) -> dict:
        return {
            "inputs": {str(p): _sha256_file(p) for p in inputs},
            "params": hashlib.sha256(
                json.dumps(params, sort_keys=True, default=str).encode()
            ).hexdigest(),
            "outputs": {
                str(p): _sha256_file(p) for p in outputs if p.exists()
            },
        }

    def should_skip(self, stage: str, inputs: Sequence[Path], params: dict,
                    outputs: Sequence[Path]) -> bool:
        manifest = self.dir / f"{stage}.json"
        if not manifest.exists() or not all(p.exists() for p in outputs):
            return False
        recorded = json.loads(manifest.read_text())
        return recorded == self._fingerprint(inputs, params, outputs)

    def record(self, stage: str, inputs: Sequence[Path], params: dict,
               outputs: Sequence[Path]) -> None:
        manifest = self.dir / f"{stage}.json"
        manifest.write_text(
            json.dumps(self._fingerprint(inputs, params, outputs), sort_keys=True, indent=2)
        )


# --- stages -------------------------------------------------------------------


def stage_extract(input_path: Path, snippets_out: Path, diagnostics_out: Path,
                  source_kind: str = "curated") -> StageReport:
    if input_path.is_dir():
        docs = extract_mod.load_directory(input_path, source_kind=source_kind)
    else:
        docs = extract_mod.load_manifest(input_path)
    snippets: list[extract_mod.ExtractedSnippet] = []
    diagnostics: list[extract_mod.Diagnostic] = []
    for doc in docs:
        result = extract_mod.scan_document(doc)
        snippets.extend(result.snippets)
        diagnostics.extend(result.diagnostics)
    extract_mod.write_snippets_jsonl(snippets, snippets_out)
    with open(diagnostics_out, "w") as fh:
        for d in diagnostics:
            fh.write(json.dumps(
                {"doc_id": d.doc_id, "position": d.position, "message": d.message},
                sort_keys=True) + "\n")
    return StageReport("extract", False, [str(snippets_out), str(diagnostics_out)],
                       {"documents": len(docs), "snippets": len(snippets),
                        "diagnostics": len(diagnostics)})


def stage_normalize(snippets_path: Path, manifest_path: Path, records_out: Path,
                    drops_out: Path, cfg: PipelineConfig) -> StageReport:
    rules = cfg.rules()
    min_chars = cfg.normalize.get("min_chars", 100)
    max_chars = cfg.normalize.get("max_chars", 4000)
    docs = {d.id: d for d in extract_mod.load_manifest(manifest_path)}

    deduper = normalize_mod.Deduper()
    kept: list[records_mod.TikZRecord] = []
    drops: list[dict] = []
    per_doc_counter: dict[str, int] = {}
    for snippet in extract_mod.read_snippets_jsonl(snippets_path):
        idx = per_doc_counter.get(snippet.doc_id, 0)
        per_doc_counter[snippet.doc_id] = idx + 1
        record_id = f"{snippet.doc_id}#{idx:03d}"
        body = extract_mod.strip_comments(snippet.body)
        if extract_mod.has_external_refs(body):
            drops.append({"record_id": record_id, "reason": "external_refs"})
            continue
        preamble = normalize_mod.detect_packages(body, rules)
        program = normalize_mod.wrap_standalone(body, preamble, record_id=record_id)
        if not normalize_mod.length_filter(program, min_chars, max_chars):
            drops.append({"record_id": record_id, "reason": "length",
                          "body_chars": program.body_char_count})
            continue
        if not deduper.admit(program.content_hash):
            drops.append({"record_id": record_id, "reason": "duplicate"})
            continue
        doc = docs.get(snippet.doc_id)
        kept.append(records_mod.TikZRecord(
            record_id=record_id,
            source_kind=doc.source_kind if doc else "curated",
            origin_key=doc.origin_key if doc else snippet.doc_id,
            license=doc.license if doc else "unknown",
            date=doc.date if doc else None,
            code=program.code,
            provenance=["extract", "normalize"],
            extra={"env_kind": snippet.env_kind,
                   "body_char_count": program.body_char_count,
                   "content_hash": program.content_hash,
                   "packages": program.packages},
        ))
    records_mod.write_records(kept, records_out)
    with open(drops_out, "w") as fh:
        for d in drops:
            fh.write(json.dumps(d, sort_keys=True) + "\n")
    return StageReport("normalize", False, [str(records_out), str(drops_out)],
                       {"kept": len(kept), "dropped": len(drops),
                        "duplicates": deduper.dropped})


def _program_of(record: records_mod.TikZRecord) -> normalize_mod.NormalizedProgram:
    return normalize_mod.NormalizedProgram(
        record_id=record.record_id,
        code=record.code,
        packages=list(record.extra.get("packages", [])),
        char_count=len(record.code),
        body_char_count=record.extra.get("body_char_count", len(record.code)),
        content_hash=record.extra.get("content_hash") or normalize_mod.content_hash_of(record.code),
    )


def _relative_artifact(path: Optional[str], workspace: Path) -> Optional[str]:
    if path is None:
        return None
    try:
        return os.path.relpath(path, workspace)
    except ValueError:
        return path


def stage_compile(records_path: Path, records_out: Path, results_out: Path,
                  cfg: PipelineConfig, workspace: Path) -> StageReport:
    sandbox = cfg.sandbox_config()
    cache_dir = cfg.compile.get("cache_dir") or str(workspace / "cache")
    cache = harness_mod.CompileCache(cache_dir)
    loaded = records_mod.read_records(records_path)
    programs = [_program_of(r) for r in loaded.records]
    results = harness_mod.compile_many(programs, sandbox, jobs=cfg.jobs, cache=cache)
    portable = [
        harness_mod.CompileResult(
            r.record_id, r.status, r.log_text, r.duration_ms,
            _relative_artifact(r.artifact_path, workspace))
        for r in results
    ]
    harness_mod.write_results_jsonl(portable, results_out)
    updated = []
    for record, result in zip(loaded.records, results):
        updated.append(record.with_stage(
            "compile",
            compile_status=result.status,
            image_artifact=_relative_artifact(result.artifact_path, workspace),
        ))
    records_mod.write_records(updated, records_out)
    rate = harness_mod.compilation_rate(results) if results else 0.0
    return StageReport("compile", False, [str(records_out), str(results_out)],
                       {"records": len(updated), "compile_rate": rate,
                        "cache_hits": cache.hits, "cache_misses": cache.misses})


_UNDEFINED_CMD_RE = re.compile(r"Undefined control sequence[^\n]*\n\s*l\.\d+\s*(\\[A-Za-z]+)")
_PROMPT_CODE_RE = re.compile(
    r"Original TikZ Code:\n(.*)\n\nCompilation Error Log:\n(.*)\Z", re.S
)

MOCK_DESCRIPTION = (
    "A rectangular diagram centered on the page contains a single black stroke "
    "drawn from the lower left corner toward the upper right corner, rendered "
    "with default line width on a plain white background. No axis labels, tick "
    "marks, legends, or additional annotations are present, and the stroke "
    "spans the full extent of the visible drawing area."
)


def mock_repair_responder(messages: list[dict]) -> str:
    """Deterministic repair double: delete the lines the log blames.

    Understands the classic 'Undefined control sequence / l.<n> \\cmd' log
    shape, so code whose only defect is an unknown command gets genuinely
    fixed; anything else comes back unchanged and the loop runs its budget.
    """
    content = messages[-1]["content"]
    text = content if isinstance(content, str) else next(
        p["text"] for p in content if p.get("type") == "text"
    )
    m = _PROMPT_CODE_RE.search(text)
    if not m:
        return text
    code, log = m.group(1), m.group(2)
    bad = set(_UNDEFINED_CMD_RE.findall(log))
    if not bad:
        return code
    lines = [ln for ln in code.split("\n") if not any(cmd in ln for cmd in bad)]
    return "\n".join(lines)


def _repair_client(cfg: PipelineConfig):
    if cfg.mock_endpoints:
        return MockChatClient(mock_repair_responder, model_name="mock-repair")
    endpoint = ChatEndpointConfig(**cfg.repair.get("endpoint", {}))
    return ChatClient(endpoint)


def _describe_client(cfg: PipelineConfig):
    if cfg.mock_endpoints:
        return MockChatClient(lambda messages: MOCK_DESCRIPTION, model_name="mock-vlm")
    endpoint = ChatEndpointConfig(**cfg.describe.get("endpoint", {}))
    return ChatClient(endpoint)


def stage_repair(records_path: Path, records_out: Path, sessions_out: Path,
                 cfg: PipelineConfig, workspace: Path) -> StageReport:
    sandbox = cfg.sandbox_config()
    cache_dir = cfg.compile.get("cache_dir") or str(workspace / "cache")
    cache = harness_mod.CompileCache(cache_dir)
    repair_cfg = repair_mod.RepairConfig(
        max_iterations=cfg.repair.get("max_iterations", 3),
        chain_candidates=cfg.repair.get("chain_candidates", True),
    )
    client = _repair_client(cfg)

    def compile_fn(code: str) -> harness_mod.CompileResult:
        program = normalize_mod.NormalizedProgram(
            record_id="candidate", code=code, packages=[],
            char_count=len(code), body_char_count=len(code),
            content_hash=normalize_mod.content_hash_of(code),
        )
        return harness_mod.compile_cached(program, sandbox, cache)

    loaded = records_mod.read_records(records_path)
    sessions: list[repair_mod.RepairSession] = []
    updated: list[records_mod.TikZRecord] = []
    repaired = 0
    for record in loaded.records:
        if record.compile_status == harness_mod.STATUS_OK:
            updated.append(record.with_stage("repair"))
            continue
        program = _program_of(record)
        # replayed from the cache when the compile stage ran before us
        failure = harness_mod.compile_cached(program, sandbox, cache)
        if failure.status == harness_mod.STATUS_OK:
            updated.append(record.with_stage(
                "repair",
                compile_status=harness_mod.STATUS_OK,
                image_artifact=_relative_artifact(failure.artifact_path, workspace),
            ))
            continue
        session = repair_mod.repair_loop(program, failure, client, repair_cfg, compile_fn)
        sessions.append(session)
        if session.repaired_code is not None:
            repaired += 1
            final = session.attempts[-1].compile
            updated.append(record.with_stage(
                "repair",
                code=session.repaired_code,
                compile_status=harness_mod.STATUS_OK,
                repair_outcome=session.outcome,
                image_artifact=_relative_artifact(
                    final.artifact_path if final else None, workspace),
                extra={
                    **record.extra,
                    "content_hash": normalize_mod.content_hash_of(session.repaired_code),
                    "body_char_count": len(
                        decon.document_body(session.repaired_code).strip("\n")),
                },
            ))
        else:
            updated.append(record.with_stage("repair", repair_outcome=session.outcome))
    records_mod.write_records(updated, records_out)
    repair_mod.write_sessions_jsonl(sessions, sessions_out)
    return StageReport("repair", False, [str(records_out), str(sessions_out)],
                       {"attempted": len(sessions), "repaired": repaired})


def stage_describe(records_path: Path, records_out: Path, descriptions_out: Path,
                   cfg: PipelineConfig, workspace: Path) -> StageReport:
    client = _describe_client(cfg)
    describe_cfg = describe_mod.DescribeConfig(
        min_chars=cfg.describe.get("min_chars", 200))
    loaded = records_mod.read_records(records_path)
    results: list[describe_mod.DescriptionResult] = []
    updated: list[records_mod.TikZRecord] = []
    skipped_transport = 0
    for record in loaded.records:
        if record.compile_status != harness_mod.STATUS_OK or not record.image_artifact:
            updated.append(record.with_stage("describe"))
            continue
        artifact = workspace / record.image_artifact
        try:
            result = describe_mod.describe(
                artifact, client, describe_cfg, record_id=record.record_id)
        except (ChatError, OSError):
            # transport failure: record skipped, not dropped
            skipped_transport += 1
            updated.append(record.with_stage("describe"))
            continue
        results.append(result)
        description = result.description if result.validation == "ok" else None
        updated.append(record.with_stage("describe", description=description))
    records_mod.write_records(updated, records_out)
    describe_mod.write_descriptions_jsonl(results, descriptions_out)
    return StageReport("describe", False, [str(records_out), str(descriptions_out)],
                       {"described": len(results), "skipped": skipped_transport})


def stage_split(records_path: Path, out_dir: Path, cfg: PipelineConfig) -> StageReport:
    policy = cfg.split_policy()
    loaded = records_mod.read_records(records_path)
    result = decon.split_records(loaded.records, policy)
    out_dir.mkdir(parents=True, exist_ok=True)
    records_mod.write_records(result.train, out_dir / "train.jsonl")
    records_mod.write_records(result.test, out_dir / "test.jsonl")
    records_mod.write_records(result.quarantine, out_dir / "quarantine.jsonl")
    decon.write_report(result.report, out_dir / "contamination_report.json")
    return StageReport("split", False,
                       [str(out_dir / name) for name in
                        ("train.jsonl", "test.jsonl", "quarantine.jsonl",
                         "contamination_report.json")],
                       result.counts())


def stage_stats(records_path: Path, stats_out: Path) -> StageReport:
    loaded = records_mod.read_records(records_path)
    stats = records_mod.corpus_stats(loaded.records)
    stats_out.write_text(json.dumps(stats, sort_keys=True, indent=2))
    return StageReport("stats", False, [str(stats_out)], {"total": stats["total"]})


def make_provider(spec: str):
    if spec == "mock":
        return MockEmbeddingProvider()
    if spec.startswith("file:"):
        return FileExchangeProvider(command=spec[len("file:"):].split(";"))
    if spec.startswith("http:") or spec.startswith("https:"):
        return HttpEmbeddingProvider(url=spec)
    raise ValueError(f"unknown provider spec {spec!r}")


def stage_reward(candidates_path: Path, rewards_out: Path, gt_dir: Optional[Path],
                 provider_spec: str, cfg: PipelineConfig, workspace: Path) -> StageReport:
    sandbox = cfg.sandbox_config()
    cache = harness_mod.CompileCache(
        cfg.compile.get("cache_dir") or str(workspace / "cache"))
    reward_cfg = cfg.reward_config()
    provider = make_provider(provider_spec)

    def compile_fn(code: str) -> harness_mod.CompileResult:
        program = normalize_mod.NormalizedProgram(
            record_id="candidate", code=code, packages=[],
            char_count=len(code), body_char_count=len(code),
            content_hash=normalize_mod.content_hash_of(code),
        )
        return harness_mod.compile_cached(program, sandbox, cache)

    scored = 0
    unscored = 0
    with open(rewards_out, "w") as out:
        with open(candidates_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                rid = obj["record_id"]
                gt_path = obj.get("gt_embedding")
                if gt_path is None and gt_dir is not None:
                    gt_path = str(gt_dir / f"{rid}.emb")
                try:
                    gt = rewards_mod.PatchEmbeddingSet(read_embedding_matrix(gt_path))
                    score = rewards_mod.rollout_reward_detail(
                        obj["code"], gt, provider, compile_fn, reward_cfg)
                except (EmbeddingProviderError, OSError, ValueError, KeyError) as exc:
                    # infrastructure or input problem: unscored, never a zero reward
                    unscored += 1
                    out.write(json.dumps(
                        {"record_id": rid, "unscored": True, "error": str(exc)},
                        sort_keys=True) + "\n")
                    continue
                scored += 1
                row = {"record_id": rid}
                row.update(score.to_dict())
                out.write(json.dumps(row, sort_keys=True) + "\n")
    return StageReport("reward", False, [str(rewards_out)],
                       {"scored": scored, "unscored": unscored})


def stage_grpo_score(groups_path: Path, results_out: Path, cfg: PipelineConfig) -> StageReport:
    grpo_cfg = cfg.grpo_config()
    if groups_path.suffix == ".bin":
        groups = grpo_mod.read_groups_binary(groups_path)
    else:
        groups = grpo_mod.read_groups_jsonl(groups_path)
    scores = grpo_mod.score_groups(groups, grpo_cfg)
    with open(results_out, "w") as fh:
        for gid in sorted(scores):
            row = {"group_id": gid}
            row.update(scores[gid])
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return StageReport("grpo-score", False, [str(results_out)], {"groups": len(scores)})


def stage_evaluate(outputs_path: Path, refs_path: Path, report_out: Path,
                   scores_path: Optional[Path] = None,
                   external_pair: tuple[str, str] = ("clip", "dsim")) -> StageReport:
    refs: dict[str, str] = {}
    with open(refs_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                refs[obj["record_id"]] = obj["code"]
    outputs: dict[str, dict] = {}
    with open(outputs_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                obj = json.loads(line)
                outputs[obj["record_id"]] = obj
    external = metrics_mod.load_external_scores(scores_path) if scores_path else {}

    samples = []
    for rid in sorted(refs):
        out = outputs.get(rid)
        code = (out or {}).get("code")
        if code:
            sample_ted = metrics_mod.ted(code, refs[rid])
            compiled = bool(out.get("compiled", False))
            tokens = metrics_mod.default_token_counter(code)
        else:
            # missing generation: worst-case distance, counted uncompiled
            sample_ted, compiled, tokens = 1.0, False, 0
        samples.append(metrics_mod.SampleMetrics(
            record_id=rid, ted=sample_ted, compiled=compiled, token_count=tokens,
            external_scores=external.get(rid, {})))
    report = metrics_mod.aggregate(samples, external_pair=external_pair)
    report_out.write_text(report.to_json())
    table = report.format_table()
    report_out.with_suffix(".txt").write_text(table + "\n")
    return StageReport("evaluate", False, [str(report_out)],
                       {"samples": len(samples), "cr": report.cr,
                        "mean_ted": report.mean_ted, "avg": report.avg})


# --- the full dataset pipeline -------------------------------------------------


def run_all(manifest: Path, workspace: Path, cfg: PipelineConfig) -> list[StageReport]:
    workspace.mkdir(parents=True, exist_ok=True)
    guard = StageGuard(workspace)
    reports: list[StageReport] = []

    def guarded(stage: str, inputs: list[Path], params: dict, outputs: list[Path],
                run: Callable[[], StageReport]) -> StageReport:
        if guard.should_skip(stage, inputs, params, outputs):
            report = StageReport(stage, True, [str(p) for p in outputs])
        else:
            report = run()
            guard.record(stage, inputs, params, outputs)
        reports.append(report)
        return report

    base_params = {"seed": cfg.seed, "mock": cfg.mock_endpoints}
    snippets = workspace / "01_snippets.jsonl"
    diagnostics = workspace / "01_diagnostics.jsonl"
    guarded("extract", [manifest], base_params, [snippets, diagnostics],
            lambda: stage_extract(manifest, snippets, diagnostics))

    rec_norm = workspace / "02_records.jsonl"
    drops = workspace / "02_drops.jsonl"
    guarded("normalize", [snippets, manifest], {**base_params, **cfg.normalize},
            [rec_norm, drops],
            lambda: stage_normalize(snippets, manifest, rec_norm, drops, cfg))

    rec_comp = workspace / "03_records.jsonl"
    results = workspace / "03_results.jsonl"
    guarded("compile", [rec_norm], {**base_params, **cfg.compile}, [rec_comp, results],
            lambda: stage_compile(rec_norm, rec_comp, results, cfg, workspace))

    rec_rep = workspace / "04_records.jsonl"
    sessions = workspace / "04_sessions.jsonl"
    guarded("repair", [rec_comp], {**base_params, **cfg.repair}, [rec_rep, sessions],
            lambda: stage_repair(rec_comp, rec_rep, sessions, cfg, workspace))

    rec_desc = workspace / "05_records.jsonl"
    descriptions = workspace / "05_descriptions.jsonl"
    guarded("describe", [rec_rep], {**base_params, **cfg.describe},
            [rec_desc, descriptions],
            lambda: stage_describe(rec_rep, rec_desc, descriptions, cfg, workspace))

    split_dir = workspace / "06_split"
    split_outputs = [split_dir / n for n in
                     ("train.jsonl", "test.jsonl", "quarantine.jsonl",
                      "contamination_report.json")]
    guarded("split", [rec_desc], {**base_params, **cfg.split}, split_outputs,
            lambda: stage_split(rec_desc, split_dir, cfg))

    stats = workspace / "07_stats.json"
    guarded("stats", [rec_desc], base_params, [stats],
            lambda: stage_stats(rec_desc, stats))
    return reports
