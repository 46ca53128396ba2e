"""Code-level evaluation metrics: TeX tokenization, token edit distance, token counts, aggregates.

The lexer is deliberately small and deterministic. Token kinds:

    command              backslash + maximal letter run, or backslash + one non-letter
    begin_group          "{"
    end_group            "}"
    math_shift           "$"
    number               maximal digit run with an optional interior decimal point
    text_word            maximal letter run
    whitespace_collapsed one token per whitespace run (lexeme is a single space)
    symbol               any other single character

Concatenating lexemes reproduces the input with every whitespace run collapsed
to one space. Whitespace tokens are excluded from edit-distance input.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

KIND_COMMAND = "command"
KIND_BEGIN_GROUP = "begin_group"
KIND_END_GROUP = "end_group"
KIND_MATH_SHIFT = "math_shift"
KIND_TEXT_WORD = "text_word"
KIND_NUMBER = "number"
KIND_SYMBOL = "symbol"
KIND_WHITESPACE = "whitespace_collapsed"


@dataclass(frozen=True)
class TexToken:
    kind: str
    lexeme: str


def _is_letter(c: str) -> bool:
    return c.isalpha()


def tex_tokenize(code: str) -> list[TexToken]:
    """Lex TeX source into tokens. Total: never raises on any input string."""
    tokens: list[TexToken] = []
    i = 0
    n = len(code)
    while i < n:
        c = code[i]
        if c.isspace():
            j = i + 1
            while j < n and code[j].isspace():
                j += 1
            tokens.append(TexToken(KIND_WHITESPACE, " "))
            i = j
        elif c == "\\":
            if i + 1 < n and _is_letter(code[i + 1]):
                j = i + 1
                while j < n and _is_letter(code[j]):
                    j += 1
                tokens.append(TexToken(KIND_COMMAND, code[i:j]))
                i = j
            elif i + 1 < n and code[i + 1].isspace():
                # control space; the whole following whitespace run collapses in
                j = i + 1
                while j < n and code[j].isspace():
                    j += 1
                tokens.append(TexToken(KIND_COMMAND, "\\ "))
                i = j
            elif i + 1 < n:
                tokens.append(TexToken(KIND_COMMAND, code[i : i + 2]))
                i += 2
            else:
                # trailing lone backslash
                tokens.append(TexToken(KIND_COMMAND, "\\"))
                i += 1
        elif c == "{":
            tokens.append(TexToken(KIND_BEGIN_GROUP, "{"))
            i += 1
        elif c == "}":
            tokens.append(TexToken(KIND_END_GROUP, "}"))
            i += 1
        elif c == "$":
            tokens.append(TexToken(KIND_MATH_SHIFT, "$"))
            i += 1
        elif c.isdigit():
            j = i + 1
            while j < n and code[j].isdigit():
                j += 1
            if j < n and code[j] == "." and j + 1 < n and code[j + 1].isdigit():
                j += 2
                while j < n and code[j].isdigit():
                    j += 1
            tokens.append(TexToken(KIND_NUMBER, code[i:j]))
            i = j
        elif _is_letter(c):
            j = i + 1
            while j < n and _is_letter(code[j]):
                j += 1
            tokens.append(TexToken(KIND_TEXT_WORD, code[i:j]))
            i = j
        else:
            tokens.append(TexToken(KIND_SYMBOL, c))
            i += 1
    return tokens


def content_tokens(code: str) -> list[str]:
    """Token lexemes with whitespace tokens dropped; the edit-distance alphabet."""
    return [t.lexeme for t in tex_tokenize(code) if t.kind != KIND_WHITESPACE]


def _levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    # two-row DP; O(len(a) * len(b))
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i] + [0] * len(b)
        for j, cb in enumerate(b, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (ca != cb),
            )
        prev = cur
    return prev[-1]


def ted(a: str, b: str) -> float:
    """Normalized token edit distance in [0, 1]; 0 iff token sequences are equal."""
    ta = content_tokens(a)
    tb = content_tokens(b)
    if not ta and not tb:
        return 0.0
    return _levenshtein(ta, tb) / max(len(ta), len(tb))


def default_token_counter(code: str) -> int:
    return len(content_tokens(code))


DEFAULT_COUNTER_NAME = "tex-lexer"


def avg_tokens(outputs: Sequence[str], counter: Optional[Callable[[str], int]] = None) -> float:
    """Arithmetic mean token count across outputs under a pluggable counter."""
    if not outputs:
        raise ValueError("avg_tokens requires at least one output")
    count = counter or default_token_counter
    return sum(count(o) for o in outputs) / len(outputs)


def avg_score(m1: float, m2: float, mean_ted: float) -> float:
    """Aggregate quality score: mean of the two external scores and 1 - TED."""
    return (m1 + m2 + (1.0 - mean_ted)) / 3.0


@dataclass
class SampleMetrics:
    record_id: str
    ted: float
    compiled: bool
    token_count: int
    external_scores: dict[str, float] = field(default_factory=dict)


@dataclass
class MetricReport:
    per_sample: list[SampleMetrics]
    external_pair: tuple[str, str]
    counter_name: str
    cr: float
    at: float
    mean_ted: float
    avg: Optional[float]
    avg_note: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "external_pair": list(self.external_pair),
            "counter": self.counter_name,
            "aggregates": {
                "cr": self.cr,
                "at": self.at,
                "mean_ted": self.mean_ted,
                "avg": self.avg,
                "avg_note": self.avg_note,
            },
            "per_sample": [
                {
                    "record_id": s.record_id,
                    "ted": s.ted,
                    "compiled": s.compiled,
                    "token_count": s.token_count,
                    "external_scores": s.external_scores,
                }
                for s in self.per_sample
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def format_table(self) -> str:
        lines = [
            f"{'metric':<12}{'value':>10}",
            f"{'-' * 22}",
            f"{'CR':<12}{self.cr:>10.3f}",
            f"{'AT':<12}{self.at:>10.1f}",
            f"{'mean TED':<12}{self.mean_ted:>10.3f}",
        ]
        if self.avg is not None:
            lines.append(f"{'AVG':<12}{self.avg:>10.3f}")
        else:
            lines.append(f"{'AVG':<12}{'(n/a)':>10} {self.avg_note or ''}")
        lines.append(f"{'samples':<12}{len(self.per_sample):>10d}")
        lines.append(f"token counter: {self.counter_name}")
        return "\n".join(lines)


def aggregate(
    samples: Sequence[SampleMetrics],
    external_pair: tuple[str, str] = ("clip", "dsim"),
    counter_name: str = DEFAULT_COUNTER_NAME,
) -> MetricReport:
    """Assemble the per-corpus report; permutation invariant over samples.

    Samples must carry the configured external score pair for AVG to be
    computed; otherwise AVG is reported as missing with an explanation
    instead of being silently skewed.
    """
    if not samples:
        raise ValueError("aggregate requires at least one sample")
    n = len(samples)
    cr = sum(1 for s in samples if s.compiled) / n
    at = sum(s.token_count for s in samples) / n
    mean_ted = sum(s.ted for s in samples) / n

    m1_name, m2_name = external_pair
    missing = [
        s.record_id
        for s in samples
        if m1_name not in s.external_scores or m2_name not in s.external_scores
    ]
    if missing:
        avg = None
        note = (
            f"external pair ({m1_name}, {m2_name}) missing for "
            f"{len(missing)}/{n} samples; AVG omitted"
        )
    else:
        m1 = sum(s.external_scores[m1_name] for s in samples) / n
        m2 = sum(s.external_scores[m2_name] for s in samples) / n
        avg = avg_score(m1, m2, mean_ted)
        note = None
    return MetricReport(
        per_sample=list(samples),
        external_pair=external_pair,
        counter_name=counter_name,
        cr=cr,
        at=at,
        mean_ted=mean_ted,
        avg=avg,
        avg_note=note,
    )


def load_external_scores(path: str | Path) -> dict[str, dict[str, float]]:
    """Load per-record external scores from CSV (record_id + named columns) or JSONL."""
    path = Path(path)
    scores: dict[str, dict[str, float]] = {}
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                rid = row.pop("record_id")
                scores[rid] = {k: float(v) for k, v in row.items() if v != ""}
    else:
        with path.open() as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                obj = json.loads(line)
                rid = obj.pop("record_id")
                scores[rid] = {k: float(v) for k, v in obj.items()}
    return scores
