import json
import sys

import numpy as np
import pytest

from conftest import STUB_RASTER, STUB_TEX
from corpus_builder import build_corpus, write_manifest
from tikzmill import cli, pipeline
from tikzmill.embeddings import MockEmbeddingProvider, write_embedding_matrix
from tikzmill.pipeline import GENERATION_PROMPT_TEMPLATE, PipelineConfig, generation_prompt
from tikzmill.records import read_records


def pipeline_config(**extra):
    cfg = PipelineConfig(
        jobs=2,
        mock_endpoints=True,
        compile={
            "compiler_command": [sys.executable, str(STUB_TEX), "{input}"],
            "raster_command": [sys.executable, str(STUB_RASTER), "{pdf}", "{png}", "{dpi}"],
            "timeout_s": 20.0,
            "render_dpi": 72,
        },
        split={"test_after_date": "2025-05-31"},
        **extra,
    )
    return cfg


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    docs = build_corpus(n_docs=40, seed=7)
    path = tmp_path_factory.mktemp("corpus") / "manifest.jsonl"
    write_manifest(docs, path)
    return path


class TestGenerationPrompt:
    def test_bit_exact_template(self):
        assert GENERATION_PROMPT_TEMPLATE == (
            "Generate a complete LaTeX document that contains a TikZ figure "
            "according to the following requirements:\n"
            "{figure_description}\n"
            "Wrap your code using \\documentclass[tikz]{{standalone}}, and include "
            "\\begin{{document}}...\\end{{document}}. "
            "Only output valid LaTeX code with no extra text."
        )

    def test_substitution(self):
        prompt = generation_prompt("a red circle")
        assert "a red circle" in prompt
        assert "Only output valid LaTeX code with no extra text." in prompt
        assert "\\documentclass[tikz]{standalone}" in prompt

    def test_cli_prompt_stdout(self, capsys):
        rc = cli.main(["prompt", "--description", "a red circle"])
        assert rc == 0
        out = capsys.readouterr().out
        assert "a red circle" in out
        assert "Only output valid LaTeX code" in out

    def test_console_script_installed(self):
        import subprocess

        proc = subprocess.run(
            [sys.executable, "-m", "tikzmill.cli", "--help"],
            capture_output=True, text=True)
        assert proc.returncode == 0
        for sub in ("extract", "normalize", "compile", "repair", "describe",
                    "split", "reward", "grpo-score", "evaluate", "stats", "prompt"):
            assert sub in proc.stdout


class TestConfigValidation:
    def test_all_violations_listed(self, tmp_path, capsys):
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({
            "jobs": 0,
            "split": {"test_after_date": "not-a-date"},
            "grpo": {"eps_low": 2.0},
            "mystery_section": {},
        }))
        rc = cli.main(["stats", "--config", str(config),
                       "--input", "x.jsonl", "--output", "y.json"])
        assert rc == 2
        err = json.loads(capsys.readouterr().err)
        assert err["error"] == "config"
        assert len(err["violations"]) >= 4

    def test_valid_config_loads(self, tmp_path):
        config = tmp_path / "ok.json"
        config.write_text(json.dumps({"jobs": 3, "split": {"test_after_date": "2025-05-31"}}))
        cfg = PipelineConfig.load(config)
        assert cfg.violations() == []
        assert cfg.jobs == 3


class TestFullPipeline:
    def test_run_all_and_resume(self, small_manifest, tmp_path):
        workspace = tmp_path / "ws"
        cfg = pipeline_config()
        reports = pipeline.run_all(small_manifest, workspace, cfg)
        by_stage = {r.stage: r for r in reports}
        assert not any(r.skipped for r in reports)
        assert by_stage["extract"].details["snippets"] > 0
        assert by_stage["compile"].details["compile_rate"] > 0.5
        assert by_stage["repair"].details["repaired"] > 0

        split_dir = workspace / "06_split"
        test_records = read_records(split_dir / "test.jsonl").records
        train_records = read_records(split_dir / "train.jsonl").records
        assert test_records and train_records
        assert all(r.compile_status == "ok" and r.description for r in test_records)

        # resumed run: every stage skipped, outputs byte-identical
        before = {p: p.read_bytes() for p in sorted(workspace.rglob("*.jsonl"))}
        reports2 = pipeline.run_all(small_manifest, workspace, cfg)
        assert all(r.skipped for r in reports2)
        after = {p: p.read_bytes() for p in sorted(workspace.rglob("*.jsonl"))}
        assert before == after

    def test_compile_rerun_is_all_cache_hits(self, small_manifest, tmp_path):
        workspace = tmp_path / "ws"
        workspace.mkdir()
        cfg = pipeline_config()
        snippets = workspace / "s.jsonl"
        diag = workspace / "d.jsonl"
        pipeline.stage_extract(small_manifest, snippets, diag)
        records = workspace / "r.jsonl"
        drops = workspace / "dr.jsonl"
        pipeline.stage_normalize(snippets, small_manifest, records, drops, cfg)
        out1 = workspace / "c1.jsonl"
        res1 = workspace / "res1.jsonl"
        first = pipeline.stage_compile(records, out1, res1, cfg, workspace)
        assert first.details["cache_hits"] == 0
        out2 = workspace / "c2.jsonl"
        res2 = workspace / "res2.jsonl"
        second = pipeline.stage_compile(records, out2, res2, cfg, workspace)
        assert second.details["cache_misses"] == 0
        assert second.details["cache_hits"] == first.details["cache_misses"]
        assert res1.read_bytes() == res2.read_bytes()
        assert out1.read_bytes() == out2.read_bytes()

    def test_fresh_workspaces_agree_on_stable_outputs(self, small_manifest, tmp_path):
        cfg = pipeline_config()
        ws_a = tmp_path / "a"
        ws_b = tmp_path / "b"
        pipeline.run_all(small_manifest, ws_a, cfg)
        pipeline.run_all(small_manifest, ws_b, cfg)
        stable = ["01_snippets.jsonl", "02_records.jsonl", "03_records.jsonl",
                  "04_records.jsonl", "05_records.jsonl", "05_descriptions.jsonl",
                  "06_split/train.jsonl", "06_split/test.jsonl",
                  "06_split/quarantine.jsonl", "06_split/contamination_report.json",
                  "07_stats.json"]
        for name in stable:
            assert (ws_a / name).read_bytes() == (ws_b / name).read_bytes(), name
        # the results file differs only in wall-clock durations
        rows_a = [json.loads(l) for l in (ws_a / "03_results.jsonl").read_text().splitlines()]
        rows_b = [json.loads(l) for l in (ws_b / "03_results.jsonl").read_text().splitlines()]
        for ra, rb in zip(rows_a, rows_b):
            ra["duration_ms"] = rb["duration_ms"] = 0
        assert rows_a == rows_b


class TestCliStages:
    def test_evaluate_subcommand(self, tmp_path, capsys):
        refs = tmp_path / "refs.jsonl"
        outs = tmp_path / "outs.jsonl"
        scores = tmp_path / "scores.csv"
        refs.write_text(
            json.dumps({"record_id": "a", "code": "\\draw (0,0) -- (1,1);"}) + "\n"
            + json.dumps({"record_id": "b", "code": "\\node {x};"}) + "\n")
        outs.write_text(
            json.dumps({"record_id": "a", "code": "\\draw (0,0) -- (1,1);",
                        "compiled": True}) + "\n")
        scores.write_text("record_id,clip,dsim\na,0.2,0.6\nb,0.1,0.3\n")
        report_path = tmp_path / "report.json"
        rc = cli.main(["evaluate", "--outputs", str(outs), "--refs", str(refs),
                       "--scores", str(scores), "--output", str(report_path)])
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["aggregates"]["cr"] == 0.5
        per = {row["record_id"]: row for row in report["per_sample"]}
        assert per["a"]["ted"] == 0.0
        assert per["b"]["ted"] == 1.0  # missing generation scores worst case
        assert report_path.with_suffix(".txt").exists()

    def test_grpo_score_subcommand(self, tmp_path):
        groups = tmp_path / "groups.jsonl"
        groups.write_text(json.dumps({
            "group_id": "g0",
            "rollouts": [
                {"reward": 1.0, "truncated": False,
                 "logp_new": [-0.5], "logp_old": [-0.5]},
                {"reward": 0.0, "truncated": False,
                 "logp_new": [-0.5], "logp_old": [-0.5]},
            ],
        }) + "\n")
        out = tmp_path / "scores.jsonl"
        rc = cli.main(["grpo-score", "--input", str(groups), "--output", str(out),
                       "--config", str(_write_grpo_config(tmp_path))])
        assert rc == 0
        row = json.loads(out.read_text().splitlines()[0])
        assert row["group_id"] == "g0"
        assert row["advantages"] == [0.5, -0.5]
        assert row["objective"] == pytest.approx(0.0)

    def test_reward_subcommand_with_mock_provider(self, tmp_path):
        workspace = tmp_path / "ws"
        workspace.mkdir()
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({
            "compile": {
                "compiler_command": [sys.executable, str(STUB_TEX), "{input}"],
                "raster_command": [sys.executable, str(STUB_RASTER),
                                   "{pdf}", "{png}", "{dpi}"],
                "render_dpi": 72,
            },
        }))
        from tikzmill.normalize import wrap_standalone
        from tikzmill.harness import CompileCache, SandboxConfig, compile_cached

        code = wrap_standalone(
            "\\begin{tikzpicture}\\draw (0,0) -- (2,2);\\end{tikzpicture}",
            record_id="cand").code
        # ground truth = mock embedding of this same render, so reward is 1
        sandbox = SandboxConfig(
            compiler_command=[sys.executable, str(STUB_TEX), "{input}"],
            raster_command=[sys.executable, str(STUB_RASTER), "{pdf}", "{png}", "{dpi}"],
            render_dpi=72)
        cache = CompileCache(workspace / "cache")
        from tikzmill.normalize import NormalizedProgram, content_hash_of
        result = compile_cached(
            NormalizedProgram("gt", code, [], len(code), len(code),
                              content_hash_of(code)), sandbox, cache)
        gt_dir = tmp_path / "gt"
        gt_dir.mkdir()
        write_embedding_matrix(
            gt_dir / "cand.emb", MockEmbeddingProvider().embed(result.artifact_path))

        candidates = tmp_path / "candidates.jsonl"
        candidates.write_text(json.dumps({"record_id": "cand", "code": code}) + "\n")
        out = tmp_path / "rewards.jsonl"
        rc = cli.main(["reward", "--input", str(candidates), "--output", str(out),
                       "--gt-embeddings", str(gt_dir), "--provider", "mock",
                       "--config", str(cfg_path), "--workspace", str(workspace)])
        assert rc == 0
        row = json.loads(out.read_text().splitlines()[0])
        assert row["reward"] == pytest.approx(1.0, abs=1e-6)
        assert row["provider"] == "mock"

    def test_missing_input_is_io_error(self, tmp_path, capsys):
        rc = cli.main(["stats", "--input", str(tmp_path / "absent.jsonl"),
                       "--output", str(tmp_path / "out.json")])
        assert rc == 2
        assert json.loads(capsys.readouterr().err)["error"] == "io"

    def test_prompt_jsonl_mode(self, tmp_path, capsys):
        descs = tmp_path / "descs.jsonl"
        descs.write_text(json.dumps({"record_id": "r1", "description": "two arrows"}) + "\n")
        out = tmp_path / "prompts.jsonl"
        rc = cli.main(["prompt", "--input", str(descs), "--output", str(out)])
        assert rc == 0
        row = json.loads(out.read_text().splitlines()[0])
        assert "two arrows" in row["prompt"]


def _write_grpo_config(tmp_path):
    path = tmp_path / "grpo.json"
    path.write_text(json.dumps({"grpo": {"max_completion_length": 1}}))
    return path
