"""Iterative LLM repair of uncompilable TikZ documents."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional

from .chat import ChatTransportError
from .harness import STATUS_OK, CompileResult
from .normalize import NormalizedProgram

REPAIR_PROMPT_TEMPLATE = (
    "I will provide you with some TikZ code and the corresponding LaTeX error log. "
    "Fix the TikZ code so that it compiles without errors. "
    "Only output the corrected TikZ code.\n"
    "\n"
    "Original TikZ Code:\n"
    "{tikz_code}\n"
    "\n"
    "Compilation Error Log:\n"
    "{log_message}"
)

EMPTY_LOG_PLACEHOLDER = "(no compiler log captured)"
LOG_TRUNCATION_MARKER = "[log truncated]"

OUTCOME_FAILED = "failed"
OUTCOME_NOT_NEEDED = "not_needed"


def repaired_at(iteration: int) -> str:
    return f"repaired_at({iteration})"


def outcome_iteration(outcome: str) -> Optional[int]:
    m = re.fullmatch(r"repaired_at\((\d+)\)", outcome)
    return int(m.group(1)) if m else None


class SanitationError(ValueError):
    """The endpoint response carried no recognizable LaTeX content."""


def build_repair_prompt(code: str, log: str, max_log_bytes: int = 8192) -> str:
    """Instantiate the debug prompt; oversized logs keep only their tail."""
    if not log:
        log = EMPTY_LOG_PLACEHOLDER
    encoded = log.encode("utf-8", errors="replace")
    if len(encoded) > max_log_bytes:
        tail = encoded[-max_log_bytes:].decode("utf-8", errors="replace")
        log = f"{LOG_TRUNCATION_MARKER}\n{tail}"
    return REPAIR_PROMPT_TEMPLATE.format(tikz_code=code, log_message=log)


_FENCE_RE = re.compile(r"^```[A-Za-z]*\s*\n?|```\s*$")
_COMMAND_RE = re.compile(r"\\[A-Za-z]+")


def sanitize_response(response: str) -> str:
    """Pull the LaTeX document out of a chat response.

    Models wrap code in fences or prose despite the instruction; the outermost
    \\documentclass..\\end{document} span wins when present.
    """
    start = response.find("\\documentclass")
    end = response.rfind("\\end{document}")
    if start != -1 and end != -1 and end > start:
        return response[start : end + len("\\end{document}")]
    stripped = response.strip()
    stripped = _FENCE_RE.sub("", stripped).strip()
    if not _COMMAND_RE.search(stripped):
        raise SanitationError("response contains no recognizable LaTeX content")
    return stripped


@dataclass
class RepairConfig:
    max_iterations: int = 3
    chain_candidates: bool = True  # attempt k prompts with attempt k-1's candidate
    max_log_bytes: int = 8192

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class RepairAttempt:
    iteration: int
    prompt: str
    response: str
    candidate_code: str
    compile: Optional[CompileResult]

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "prompt": self.prompt,
            "response": self.response,
            "candidate_code": self.candidate_code,
            "compile": self.compile.to_dict() if self.compile else None,
        }


@dataclass
class RepairSession:
    record_id: str
    attempts: list[RepairAttempt]
    max_iterations: int
    outcome: str  # "repaired_at(k)" or "failed"
    repaired_code: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "attempts": [a.to_dict() for a in self.attempts],
            "max_iterations": self.max_iterations,
            "outcome": self.outcome,
            "repaired_code": self.repaired_code,
        }


def repair_loop(
    program: NormalizedProgram,
    first_failure: CompileResult,
    client,
    cfg: RepairConfig,
    compile_fn: Callable[[str], CompileResult],
) -> RepairSession:
    """Prompt-compile loop, at most cfg.max_iterations endpoint calls.

    Endpoint errors and unsanitizable responses consume an iteration without a
    compile; each later prompt embeds the newest failing candidate and log when
    chaining is on, otherwise always the original pair.
    """
    if first_failure.status == STATUS_OK:
        raise ValueError("repair_loop must not be handed code that already compiles")

    current_code = program.code
    current_log = first_failure.log_text
    attempts: list[RepairAttempt] = []
    outcome = OUTCOME_FAILED
    repaired_code = None

    for k in range(1, cfg.max_iterations + 1):
        prompt = build_repair_prompt(current_code, current_log, cfg.max_log_bytes)
        try:
            response = client.complete([{"role": "user", "content": prompt}])
        except ChatTransportError as exc:
            attempts.append(RepairAttempt(k, prompt, f"<transport error: {exc}>", "", None))
            continue
        try:
            candidate = sanitize_response(response)
        except SanitationError:
            attempts.append(RepairAttempt(k, prompt, response, "", None))
            continue
        result = compile_fn(candidate)
        attempts.append(RepairAttempt(k, prompt, response, candidate, result))
        if result.status == STATUS_OK:
            outcome = repaired_at(k)
            repaired_code = candidate
            break
        if cfg.chain_candidates:
            current_code, current_log = candidate, result.log_text

    return RepairSession(
        record_id=program.record_id,
        attempts=attempts,
        max_iterations=cfg.max_iterations,
        outcome=outcome,
        repaired_code=repaired_code,
    )


def write_sessions_jsonl(sessions: Iterable[RepairSession], path: str | Path) -> int:
    count = 0
    with open(path, "w") as fh:
        for s in sessions:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count
