"""Contamination-free train/test splitting.

Three gates, applied in order:

1.  date cutoff: only records dated strictly after the cutoff may enter the
    test side; undated records are train-only;
2.  per-origin uniqueness: at most one test record per origin_key (lowest
    record_id wins), all other records of that origin leave the train side;
3.  token n-gram overlap: a train record sharing any non-whitelisted n-gram
    with a test record is removed from train.

An n-gram is whitelisted when every token in it belongs to the standalone
wrapper / preamble boilerplate vocabulary, so the constant document frame
never flags a pair by itself.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import date as _date
from pathlib import Path
from typing import Optional, Sequence

from .metrics import content_tokens
from .normalize import (
    BEGIN_DOCUMENT_LINE,
    DOCUMENT_CLASS_LINE,
    END_DOCUMENT_LINE,
    default_rules,
)
from .records import SPLIT_QUARANTINE, SPLIT_TEST, SPLIT_TRAIN, TikZRecord


@dataclass
class SplitPolicy:
    test_after_date: str  # ISO-8601; strictly-after records become test candidates
    ngram_n: int = 8
    token_overlap_threshold: Optional[float] = None  # None: any shared n-gram flags
    one_per_origin: bool = True

    def __post_init__(self) -> None:
        if self.ngram_n < 2:
            raise ValueError("ngram_n must be >= 2")
        _date.fromisoformat(self.test_after_date)


@dataclass
class ContaminationReport:
    flagged_pairs: list[tuple[str, str, int]]  # (test_id, train_id, shared count)
    removed_from_train: list[str]
    removed_from_test: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "flagged_pairs": [list(p) for p in self.flagged_pairs],
            "removed_from_train": self.removed_from_train,
            "removed_from_test": self.removed_from_test,
        }


def _parse_date(value: Optional[str]) -> Optional[_date]:
    if not value:
        return None
    try:
        return _date.fromisoformat(value)
    except ValueError:
        return None


def date_split(
    records: Sequence[TikZRecord], policy: SplitPolicy
) -> tuple[list[TikZRecord], list[TikZRecord]]:
    """(train_candidates, test_candidates) by the strict-after date rule."""
    cutoff = _date.fromisoformat(policy.test_after_date)
    train, test = [], []
    for r in records:
        parsed = _parse_date(r.date)
        if parsed is not None and parsed > cutoff:
            test.append(r)
        else:
            train.append(r)
    return train, test


@dataclass
class UniquenessResult:
    test: list[TikZRecord]
    train: list[TikZRecord]
    removed_from_train: list[str]
    removed_from_test: list[str]


def enforce_origin_uniqueness(
    test_candidates: Sequence[TikZRecord],
    train: Sequence[TikZRecord],
    policy: SplitPolicy,
) -> UniquenessResult:
    """One test record per origin (lowest record_id); the origin's remaining
    records disappear from both sides."""
    if not policy.one_per_origin:
        return UniquenessResult(list(test_candidates), list(train), [], [])
    by_origin: dict[str, list[TikZRecord]] = {}
    for r in sorted(test_candidates, key=lambda r: r.record_id):
        by_origin.setdefault(r.origin_key, []).append(r)

    kept_test: list[TikZRecord] = []
    removed_test: list[str] = []
    test_origins: set[str] = set()
    for origin, candidates in sorted(by_origin.items()):
        kept_test.append(candidates[0])
        removed_test.extend(r.record_id for r in candidates[1:])
        test_origins.add(origin)

    kept_train: list[TikZRecord] = []
    removed_train: list[str] = []
    for r in train:
        if r.origin_key in test_origins:
            removed_train.append(r.record_id)
        else:
            kept_train.append(r)
    kept_test.sort(key=lambda r: r.record_id)
    return UniquenessResult(kept_test, kept_train, removed_train, sorted(removed_test))


def document_body(code: str) -> str:
    """The text between the document fences; the constant wrapper and preamble
    never participate in overlap checks."""
    start = code.find(BEGIN_DOCUMENT_LINE)
    end = code.rfind(END_DOCUMENT_LINE)
    if start != -1 and end > start:
        return code[start + len(BEGIN_DOCUMENT_LINE) : end]
    return code


def code_ngrams(code: str, n: int) -> set[tuple[str, ...]]:
    tokens = content_tokens(document_body(code))
    return {tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1)}


def boilerplate_tokens() -> set[str]:
    """Vocabulary of the standalone wrapper and shipped preamble directives."""
    lines = [DOCUMENT_CLASS_LINE, BEGIN_DOCUMENT_LINE, END_DOCUMENT_LINE]
    lines.extend(rule.directive for rule in default_rules())
    lines.extend(
        f"\\begin{{{env}}} \\end{{{env}}}" for env in ("tikzpicture", "tikzcd", "circuitikz")
    )
    vocab: set[str] = set()
    for line in lines:
        vocab.update(content_tokens(line))
    return vocab


def _is_whitelisted(ngram: tuple[str, ...], vocab: set[str]) -> bool:
    return all(tok in vocab for tok in ngram)


def ngram_filter(
    test: Sequence[TikZRecord],
    train: Sequence[TikZRecord],
    policy: SplitPolicy,
) -> ContaminationReport:
    """Flag every (test, train) pair sharing enough non-whitelisted n-grams."""
    vocab = boilerplate_tokens()
    test_ngrams: dict[str, set[tuple[str, ...]]] = {}
    index: dict[tuple[str, ...], set[str]] = {}
    for r in test:
        grams = {g for g in code_ngrams(r.code, policy.ngram_n) if not _is_whitelisted(g, vocab)}
        test_ngrams[r.record_id] = grams
        for g in grams:
            index.setdefault(g, set()).add(r.record_id)

    flagged: list[tuple[str, str, int]] = []
    removed: list[str] = []
    for r in train:
        grams = {g for g in code_ngrams(r.code, policy.ngram_n) if not _is_whitelisted(g, vocab)}
        shared_counts: dict[str, int] = {}
        for g in grams:
            for test_id in index.get(g, ()):
                shared_counts[test_id] = shared_counts.get(test_id, 0) + 1
        hit = False
        for test_id, count in sorted(shared_counts.items()):
            threshold = 1
            if policy.token_overlap_threshold is not None:
                threshold = max(
                    1, int(policy.token_overlap_threshold * len(test_ngrams[test_id]))
                )
            if count >= threshold:
                flagged.append((test_id, r.record_id, count))
                hit = True
        if hit:
            removed.append(r.record_id)
    return ContaminationReport(
        flagged_pairs=flagged, removed_from_train=sorted(set(removed))
    )


@dataclass
class SplitResult:
    train: list[TikZRecord]
    test: list[TikZRecord]
    quarantine: list[TikZRecord]
    report: ContaminationReport

    def counts(self) -> dict:
        return {
            "train": len(self.train),
            "test": len(self.test),
            "quarantine": len(self.quarantine),
        }


def _test_eligible(record: TikZRecord) -> bool:
    # the store invariant: test records compiled ok and carry a description
    return record.compile_status == "ok" and bool(record.description)


def split_records(records: Sequence[TikZRecord], policy: SplitPolicy) -> SplitResult:
    """Full decontamination pipeline over one record set; deterministic."""
    ordered = sorted(records, key=lambda r: r.record_id)
    train_candidates, test_candidates = date_split(ordered, policy)

    eligible = [r for r in test_candidates if _test_eligible(r)]
    train_candidates.extend(r for r in test_candidates if not _test_eligible(r))
    train_candidates.sort(key=lambda r: r.record_id)

    unique = enforce_origin_uniqueness(eligible, train_candidates, policy)
    report = ngram_filter(unique.test, unique.train, policy)
    contaminated = set(report.removed_from_train)

    train = [r.with_stage("split", split=SPLIT_TRAIN) for r in unique.train
             if r.record_id not in contaminated]
    test = [r.with_stage("split", split=SPLIT_TEST) for r in unique.test]
    quarantined_ids = set(unique.removed_from_train) | set(unique.removed_from_test) | contaminated
    quarantine = [
        r.with_stage("split", split=SPLIT_QUARANTINE)
        for r in ordered
        if r.record_id in quarantined_ids
    ]
    report.removed_from_test = unique.removed_from_test
    full_report = ContaminationReport(
        flagged_pairs=report.flagged_pairs,
        removed_from_train=sorted(set(report.removed_from_train) | set(unique.removed_from_train)),
        removed_from_test=report.removed_from_test,
    )
    return SplitResult(train=train, test=test, quarantine=quarantine, report=full_report)


def write_report(report: ContaminationReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2))
