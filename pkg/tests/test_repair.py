import pytest

from tikzmill.chat import ChatTransportError, MockChatClient
from tikzmill.harness import CompileResult
from tikzmill.normalize import wrap_standalone
from tikzmill.repair import (
    EMPTY_LOG_PLACEHOLDER,
    LOG_TRUNCATION_MARKER,
    REPAIR_PROMPT_TEMPLATE,
    RepairConfig,
    SanitationError,
    build_repair_prompt,
    outcome_iteration,
    repair_loop,
    repaired_at,
    sanitize_response,
)

GOOD_BODY = "\\begin{tikzpicture}\\draw (0,0) -- (1,1);\\end{tikzpicture}"
GOOD_DOC = wrap_standalone(GOOD_BODY).code.strip()
BROKEN_DOC = wrap_standalone("\\begin{tikzpicture}\\foo\\end{tikzpicture}").code.strip()


def failing_result(record_id="r", log="! Undefined control sequence.\nl.3 \\foo"):
    return CompileResult(record_id, "compile_error", log, 5)


def compile_by_content(code):
    """Test double: documents containing \\foo fail, everything else passes."""
    if "\\foo" in code:
        return failing_result("cand")
    return CompileResult("cand", "ok", "", 5, artifact_path="render.png")


class TestPromptTemplate:
    def test_bit_exact_template(self):
        assert REPAIR_PROMPT_TEMPLATE == (
            "I will provide you with some TikZ code and the corresponding LaTeX "
            "error log. Fix the TikZ code so that it compiles without errors. "
            "Only output the corrected TikZ code.\n"
            "\n"
            "Original TikZ Code:\n"
            "{tikz_code}\n"
            "\n"
            "Compilation Error Log:\n"
            "{log_message}"
        )

    def test_sections_in_order(self):
        prompt = build_repair_prompt("CODE-X", "LOG-Y")
        assert prompt.index("Original TikZ Code:\nCODE-X") < prompt.index(
            "Compilation Error Log:\nLOG-Y"
        )

    def test_deterministic_bytes(self):
        assert build_repair_prompt("a", "b") == build_repair_prompt("a", "b")

    def test_empty_log_placeholder(self):
        assert EMPTY_LOG_PLACEHOLDER in build_repair_prompt("code", "")

    def test_oversized_log_truncated_with_marker(self):
        log = "A" * 100_000 + "END"
        prompt = build_repair_prompt("code", log, max_log_bytes=512)
        assert LOG_TRUNCATION_MARKER in prompt
        assert prompt.endswith("END")
        assert len(prompt.encode()) < 2048


class TestSanitizeResponse:
    def test_fenced_document_unwrapped(self):
        response = f"```latex\n{GOOD_DOC}\n```"
        assert sanitize_response(response) == GOOD_DOC

    def test_bare_document_unchanged(self):
        assert sanitize_response(GOOD_DOC) == GOOD_DOC

    def test_prose_wrapped_document_extracted(self):
        response = f"Sure! Here is the fix:\n{GOOD_DOC}\nLet me know if it works."
        assert sanitize_response(response) == GOOD_DOC

    def test_no_latex_content_fails(self):
        with pytest.raises(SanitationError):
            sanitize_response("I cannot help with that request.")

    def test_snippet_without_document_wrapper_survives(self):
        assert sanitize_response(f"```\n{GOOD_BODY}\n```") == GOOD_BODY


class TestOutcomeStrings:
    def test_roundtrip(self):
        assert repaired_at(2) == "repaired_at(2)"
        assert outcome_iteration("repaired_at(2)") == 2
        assert outcome_iteration("failed") is None


class TestRepairLoop:
    def _program(self):
        return wrap_standalone("\\begin{tikzpicture}\\foo\\end{tikzpicture}", record_id="rec")

    def test_fix_on_first_call(self):
        client = MockChatClient([GOOD_DOC])
        session = repair_loop(self._program(), failing_result(), client,
                              RepairConfig(), compile_by_content)
        assert session.outcome == "repaired_at(1)"
        assert len(session.attempts) == 1
        assert session.repaired_code == GOOD_DOC

    def test_fix_on_third_call(self):
        client = MockChatClient([BROKEN_DOC, BROKEN_DOC, GOOD_DOC])
        session = repair_loop(self._program(), failing_result(), client,
                              RepairConfig(), compile_by_content)
        assert session.outcome == "repaired_at(3)"
        assert len(session.attempts) == 3
        assert session.attempts[2].compile.status == "ok"

    def test_never_fixed_exhausts_budget(self):
        client = MockChatClient([BROKEN_DOC] * 3)
        session = repair_loop(self._program(), failing_result(), client,
                              RepairConfig(), compile_by_content)
        assert session.outcome == "failed"
        assert len(session.attempts) == 3

    def test_cumulative_success_monotone_in_budget(self):
        # same scripted corpus, growing iteration budget
        scripts = {
            "fast": [GOOD_DOC],
            "slow": [BROKEN_DOC, BROKEN_DOC, GOOD_DOC],
            "never": [BROKEN_DOC] * 3,
        }
        successes = []
        for budget in (1, 2, 3):
            fixed = 0
            for script in scripts.values():
                client = MockChatClient(list(script[:budget]))
                session = repair_loop(self._program(), failing_result(), client,
                                      RepairConfig(max_iterations=budget),
                                      compile_by_content)
                fixed += session.repaired_code is not None
            successes.append(fixed)
        assert successes == sorted(successes)
        assert successes[0] == 1 and successes[-1] == 2

    def test_transport_error_consumes_iteration_not_compile(self):
        compile_calls = []

        def counting_compile(code):
            compile_calls.append(code)
            return compile_by_content(code)

        client = MockChatClient([ChatTransportError("down"), GOOD_DOC])
        session = repair_loop(self._program(), failing_result(), client,
                              RepairConfig(), counting_compile)
        assert session.outcome == "repaired_at(2)"
        assert len(session.attempts) == 2
        assert session.attempts[0].compile is None
        assert len(compile_calls) == 1

    def test_sanitation_failure_consumes_iteration(self):
        client = MockChatClient(["no latex here at all", GOOD_DOC])
        session = repair_loop(self._program(), failing_result(), client,
                              RepairConfig(), compile_by_content)
        assert session.outcome == "repaired_at(2)"
        assert session.attempts[0].candidate_code == ""

    def test_refuses_already_compiling_input(self):
        ok = CompileResult("rec", "ok", "", 1)
        with pytest.raises(ValueError):
            repair_loop(self._program(), ok, MockChatClient([]), RepairConfig(),
                        compile_by_content)

    def test_chained_prompts_embed_latest_candidate(self):
        half_fixed = wrap_standalone(
            "\\begin{tikzpicture}\\foo[less]\\end{tikzpicture}"
        ).code
        client = MockChatClient([half_fixed, GOOD_DOC])
        session = repair_loop(self._program(), failing_result(), client,
                              RepairConfig(chain_candidates=True), compile_by_content)
        assert session.outcome == "repaired_at(2)"
        second_prompt = client.requests[1][0]["content"]
        assert half_fixed in second_prompt  # not the original code

    def test_unchained_prompts_reuse_original(self):
        half_fixed = wrap_standalone(
            "\\begin{tikzpicture}\\foo[less]\\end{tikzpicture}"
        ).code
        client = MockChatClient([half_fixed, GOOD_DOC])
        program = self._program()
        session = repair_loop(program, failing_result(), client,
                              RepairConfig(chain_candidates=False), compile_by_content)
        assert session.outcome == "repaired_at(2)"
        second_prompt = client.requests[1][0]["content"]
        assert program.code in second_prompt
        assert half_fixed not in second_prompt
