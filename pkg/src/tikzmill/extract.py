"""TikZ environment extraction from TeX sources.

The scanner finds balanced \\begin{...}/\\end{...} pairs for the target
environments (tikzpicture, tikzcd, circuitikz) and emits the outermost
occurrences only: a picture nested in a picture is part of the outer snippet.
Verbatim-like environments are opaque, and anything after an unescaped % on a
line is ignored, so commented-out environment fences never affect balance.

Figure-like containers (figure, subfigure, minipage, tabular) only influence
the ``sibling_index``: target environments sharing one container instance are
numbered 0, 1, ... in document order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional

TARGET_ENVIRONMENTS = ("tikzpicture", "tikzcd", "circuitikz")
CONTAINER_ENVIRONMENTS = ("figure", "figure*", "subfigure", "subfigure*", "minipage", "tabular")
VERBATIM_ENVIRONMENTS = ("verbatim", "verbatim*", "Verbatim", "lstlisting", "minted", "alltt")

SOURCE_KINDS = ("arxiv", "github", "texse", "synthetic", "curated")
LICENSE_CLASSES = ("permissive_cc", "nonexclusive_dist", "unknown")


@dataclass
class SourceDocument:
    id: str
    source_kind: str
    raw_text: str
    origin_key: str
    date: Optional[str] = None
    license: str = "unknown"

    def __post_init__(self) -> None:
        if not self.raw_text:
            raise ValueError(f"document {self.id!r}: raw_text must be non-empty")
        if not self.origin_key:
            raise ValueError(f"document {self.id!r}: origin_key must be non-empty")


@dataclass
class ExtractedSnippet:
    doc_id: str
    env_kind: str
    body: str
    byte_span: tuple[int, int]
    sibling_index: int

    def to_dict(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "env_kind": self.env_kind,
            "body": self.body,
            "byte_span": list(self.byte_span),
            "sibling_index": self.sibling_index,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ExtractedSnippet":
        return cls(
            doc_id=obj["doc_id"],
            env_kind=obj["env_kind"],
            body=obj["body"],
            byte_span=tuple(obj["byte_span"]),
            sibling_index=obj["sibling_index"],
        )


@dataclass
class Diagnostic:
    doc_id: str
    position: int
    message: str


@dataclass
class ExtractionResult:
    snippets: list[ExtractedSnippet]
    diagnostics: list[Diagnostic]


_ENV_FENCE_RE = re.compile(r"\\(begin|end)\s*\{\s*([A-Za-z@]+\*?)\s*\}")


def _verbatim_spans(text: str) -> list[tuple[int, int]]:
    """Spans (including fences) of verbatim-like environments; non-nesting."""
    spans: list[tuple[int, int]] = []
    pos = 0
    while True:
        m = _ENV_FENCE_RE.search(text, pos)
        if not m:
            break
        if m.group(1) == "begin" and m.group(2) in VERBATIM_ENVIRONMENTS:
            name = m.group(2)
            closer = re.compile(r"\\end\s*\{\s*" + re.escape(name) + r"\s*\}")
            end = closer.search(text, m.end())
            if end:
                spans.append((m.start(), end.end()))
                pos = end.end()
            else:
                # unterminated verbatim swallows the rest of the document
                spans.append((m.start(), len(text)))
                break
        else:
            pos = m.end()
    return spans


def _in_spans(pos: int, spans: list[tuple[int, int]]) -> bool:
    return any(a <= pos < b for a, b in spans)


def _comment_spans(text: str, opaque: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Per-line spans from each unescaped % to the line end, outside opaque regions."""
    spans: list[tuple[int, int]] = []
    line_start = 0
    n = len(text)
    while line_start < n:
        line_end = text.find("\n", line_start)
        if line_end == -1:
            line_end = n
        i = line_start
        while i < line_end:
            c = text[i]
            if c == "\\":
                i += 2
                continue
            if c == "%" and not _in_spans(i, opaque):
                spans.append((i, line_end))
                break
            i += 1
        line_start = line_end + 1
    return spans


@dataclass
class _Frame:
    name: str
    start: int
    is_target: bool
    outermost_target: bool


def scan_document(doc: SourceDocument) -> ExtractionResult:
    """Single pass over the document: outermost target snippets plus diagnostics."""
    text = doc.raw_text
    verbatim = _verbatim_spans(text)
    masked = verbatim + _comment_spans(text, verbatim)

    tracked = set(TARGET_ENVIRONMENTS) | set(CONTAINER_ENVIRONMENTS)
    stack: list[_Frame] = []
    open_targets = 0
    snippets: list[tuple[int, int, str]] = []  # (start, end, env_kind)
    containers: list[tuple[int, int]] = []
    diagnostics: list[Diagnostic] = []

    for m in _ENV_FENCE_RE.finditer(text):
        name = m.group(2)
        if name not in tracked or _in_spans(m.start(), masked):
            continue
        if m.group(1) == "begin":
            is_target = name in TARGET_ENVIRONMENTS
            stack.append(
                _Frame(name, m.start(), is_target, is_target and open_targets == 0)
            )
            if is_target:
                open_targets += 1
            continue

        # \end{name}
        if not any(f.name == name for f in stack):
            diagnostics.append(
                Diagnostic(doc.id, m.start(), f"stray \\end{{{name}}} without matching begin")
            )
            continue
        while stack and stack[-1].name != name:
            dropped = stack.pop()
            diagnostics.append(
                Diagnostic(
                    doc.id,
                    dropped.start,
                    f"unbalanced \\begin{{{dropped.name}}} closed implicitly by \\end{{{name}}}",
                )
            )
            if dropped.is_target:
                open_targets -= 1
        frame = stack.pop()
        if frame.is_target:
            open_targets -= 1
            if frame.outermost_target:
                snippets.append((frame.start, m.end(), frame.name))
        elif frame.name in CONTAINER_ENVIRONMENTS:
            containers.append((frame.start, m.end()))

    for frame in stack:
        diagnostics.append(
            Diagnostic(doc.id, frame.start, f"unbalanced \\begin{{{frame.name}}} never closed")
        )

    snippets.sort()
    containers.sort()
    results = []
    sibling_counter: dict[tuple[int, int], int] = {}
    for start, end, kind in snippets:
        enclosing = [c for c in containers if c[0] <= start and end <= c[1]]
        if enclosing:
            innermost = min(enclosing, key=lambda c: c[1] - c[0])
            idx = sibling_counter.get(innermost, 0)
            sibling_counter[innermost] = idx + 1
        else:
            idx = 0
        results.append(
            ExtractedSnippet(
                doc_id=doc.id,
                env_kind=kind,
                body=text[start:end],
                byte_span=(start, end),
                sibling_index=idx,
            )
        )
    return ExtractionResult(snippets=results, diagnostics=diagnostics)


def extract_environments(doc: SourceDocument) -> list[ExtractedSnippet]:
    """Every balanced outermost target environment, in document order."""
    return scan_document(doc).snippets


def strip_comments(body: str) -> str:
    """Remove each unescaped % and the rest of its line; newlines survive.

    Escaped \\% stays, and verbatim-like regions are copied through untouched
    because % is literal there. Idempotent.
    """
    verbatim = _verbatim_spans(body)
    out: list[str] = []
    i = 0
    n = len(body)
    while i < n:
        region = next((s for s in verbatim if s[0] <= i < s[1]), None)
        if region:
            out.append(body[i : region[1]])
            i = region[1]
            continue
        c = body[i]
        if c == "\\":
            out.append(body[i : i + 2])
            i += 2
        elif c == "%":
            nl = body.find("\n", i)
            i = n if nl == -1 else nl
        else:
            out.append(c)
            i += 1
    return "".join(out)


# Commands that pull content from external files. \pgfplotstableread and
# \addplot table only count when the brace argument looks like one path token
# (no whitespace) rather than inline table data.
_EXTERNAL_COMMAND_RE = re.compile(
    r"\\(?:input|include|includegraphics|includestandalone|lstinputlisting)(?![A-Za-z])"
)
_TABLE_READ_RE = re.compile(r"\\pgfplotstableread\s*(?:\[[^\]]*\])?\s*\{([^{}]*)\}")
_ADDPLOT_TABLE_RE = re.compile(
    r"\\addplot\+?\s*(?:\[[^\]]*\])?\s*table\s*(?:\[[^\]]*\])?\s*\{([^{}]*)\}"
)


def _looks_like_file_argument(arg: str) -> bool:
    arg = arg.strip()
    return bool(arg) and not re.search(r"\s", arg) and "\\" not in arg


def has_external_refs(body: str) -> bool:
    """True iff the (comment-stripped) body depends on files outside itself."""
    if _EXTERNAL_COMMAND_RE.search(body):
        return True
    for m in _TABLE_READ_RE.finditer(body):
        if _looks_like_file_argument(m.group(1)):
            return True
    for m in _ADDPLOT_TABLE_RE.finditer(body):
        if _looks_like_file_argument(m.group(1)):
            return True
    return False


# --- ingestion --------------------------------------------------------------


def _decode(data: bytes) -> str:
    # mixed encodings are common in crawled corpora; U+FFFD is fine downstream
    return data.decode("utf-8", errors="replace")


def load_directory(
    root: str | Path,
    source_kind: str = "curated",
    license: str = "unknown",
    date: Optional[str] = None,
) -> list[SourceDocument]:
    """One SourceDocument per .tex/.pgf file under root; origin is the file's
    top-level directory (or stem at root level)."""
    root = Path(root)
    docs = []
    for path in sorted(root.rglob("*")):
        if path.suffix.lower() not in (".tex", ".pgf") or not path.is_file():
            continue
        rel = path.relative_to(root)
        origin = rel.parts[0] if len(rel.parts) > 1 else rel.stem
        raw = _decode(path.read_bytes())
        if not raw:
            continue
        docs.append(
            SourceDocument(
                id=str(rel),
                source_kind=source_kind,
                raw_text=raw,
                origin_key=origin,
                date=date,
                license=license,
            )
        )
    return docs


def load_manifest(path: str | Path) -> list[SourceDocument]:
    """JSONL manifest, one SourceDocument per line."""
    docs = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            docs.append(
                SourceDocument(
                    id=obj["id"],
                    source_kind=obj.get("source_kind", "curated"),
                    raw_text=obj["raw_text"],
                    origin_key=obj["origin_key"],
                    date=obj.get("date"),
                    license=obj.get("license", "unknown"),
                )
            )
    return docs


def write_snippets_jsonl(snippets: Iterable[ExtractedSnippet], path: str | Path) -> int:
    count = 0
    with open(path, "w") as fh:
        for snip in snippets:
            fh.write(json.dumps(snip.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count


def read_snippets_jsonl(path: str | Path) -> Iterator[ExtractedSnippet]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield ExtractedSnippet.from_dict(json.loads(line))
