"""Standalone wrapping, dynamic package detection, length filter, exact dedup."""

from __future__ import annotations

import hashlib
import json
import re
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

DOCUMENT_CLASS_LINE = "\\documentclass[tikz]{standalone}"
BEGIN_DOCUMENT_LINE = "\\begin{document}"
END_DOCUMENT_LINE = "\\end{document}"


class RuleConfigError(ValueError):
    """A package rule failed to load or compile; raised at load time only."""


@dataclass(frozen=True)
class PackageRule:
    pattern: str
    directive: str
    priority: int

    def compiled(self) -> re.Pattern:
        return _compile_rule(self.pattern)


def _compile_rule(pattern: str) -> re.Pattern:
    try:
        return re.compile(pattern)
    except re.error as exc:
        raise RuleConfigError(f"invalid rule pattern {pattern!r}: {exc}") from exc


def load_rules(path: str | Path) -> list[PackageRule]:
    """Read rules from a JSON list of {pattern, directive, priority} objects."""
    with open(path) as fh:
        raw = json.load(fh)
    rules = []
    for entry in raw:
        rule = PackageRule(
            pattern=entry["pattern"],
            directive=entry["directive"],
            priority=int(entry["priority"]),
        )
        _compile_rule(rule.pattern)  # fail now, not at detection time
        rules.append(rule)
    if not rules:
        raise RuleConfigError(f"rule file {path} contains no rules")
    return rules


def default_rules() -> list[PackageRule]:
    data = resources.files("tikzmill.data").joinpath("package_rules.json").read_text()
    rules = []
    for entry in json.loads(data):
        rule = PackageRule(entry["pattern"], entry["directive"], int(entry["priority"]))
        _compile_rule(rule.pattern)
        rules.append(rule)
    return rules


def detect_packages(body: str, rules: Sequence[PackageRule]) -> list[str]:
    """Priority-ordered, duplicate-free preamble lines whose pattern matches body."""
    if not rules:
        raise RuleConfigError("rules list must be non-empty")
    hits = [(r.priority, r.directive) for r in rules if r.compiled().search(body)]
    ordered: list[str] = []
    for _, directive in sorted(set(hits)):
        if directive not in ordered:
            ordered.append(directive)
    return ordered


@dataclass
class NormalizedProgram:
    record_id: str
    code: str
    packages: list[str]
    char_count: int  # of the full code
    body_char_count: int  # of the environment body; the length filter's measure
    content_hash: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "code": self.code,
            "packages": self.packages,
            "char_count": self.char_count,
            "body_char_count": self.body_char_count,
            "content_hash": self.content_hash,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "NormalizedProgram":
        return cls(
            record_id=obj["record_id"],
            code=obj["code"],
            packages=list(obj["packages"]),
            char_count=obj["char_count"],
            body_char_count=obj["body_char_count"],
            content_hash=obj["content_hash"],
        )


def content_hash_of(code: str) -> str:
    return hashlib.sha256(code.encode("utf-8")).hexdigest()


def wrap_standalone(
    snippet_body: str,
    preamble: Sequence[str] = (),
    record_id: Optional[str] = None,
) -> NormalizedProgram:
    """Assemble the standalone document around a comment-stripped body."""
    parts = [DOCUMENT_CLASS_LINE, *preamble, BEGIN_DOCUMENT_LINE, snippet_body, END_DOCUMENT_LINE]
    code = "\n".join(parts) + "\n"
    digest = content_hash_of(code)
    return NormalizedProgram(
        record_id=record_id if record_id is not None else digest[:16],
        code=code,
        packages=list(preamble),
        char_count=len(code),
        body_char_count=len(snippet_body),
        content_hash=digest,
    )


def length_filter(p: NormalizedProgram, min_chars: int = 100, max_chars: int = 4000) -> bool:
    """Keep iff the environment body length is inside [min_chars, max_chars]."""
    return min_chars <= p.body_char_count <= max_chars


@dataclass
class Deduper:
    """First occurrence of each content hash wins; safe under concurrent insertion."""

    seen: set[str] = field(default_factory=set)
    dropped: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def admit(self, content_hash: str) -> bool:
        with self._lock:
            if content_hash in self.seen:
                self.dropped += 1
                return False
            self.seen.add(content_hash)
            return True


def dedup(
    programs: Iterable[NormalizedProgram], deduper: Optional[Deduper] = None
) -> Iterator[NormalizedProgram]:
    """Order-preserving exact deduplication by content hash."""
    deduper = deduper or Deduper()
    for program in programs:
        if deduper.admit(program.content_hash):
            yield program


def write_programs_jsonl(programs: Iterable[NormalizedProgram], path: str | Path) -> int:
    count = 0
    with open(path, "w") as fh:
        for p in programs:
            fh.write(json.dumps(p.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count


def read_programs_jsonl(path: str | Path) -> Iterator[NormalizedProgram]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield NormalizedProgram.from_dict(json.loads(line))
