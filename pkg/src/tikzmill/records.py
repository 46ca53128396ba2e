"""Canonical record schema, JSONL persistence, and the content-addressed artifact cache.

Schema tag: ``tikz-record/v1``. Records are append-only across stages: a stage
never mutates a record in place, it emits a new version with its name appended
to ``provenance``. Unknown JSON fields survive a read/write round trip.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence

SCHEMA_TAG = "tikz-record/v1"

SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
SPLIT_QUARANTINE = "quarantine"

_KNOWN_FIELDS = (
    "schema",
    "record_id",
    "source_kind",
    "origin_key",
    "license",
    "date",
    "code",
    "caption",
    "description",
    "compile_status",
    "repair_outcome",
    "image_artifact",
    "split",
    "provenance",
)


@dataclass
class TikZRecord:
    record_id: str
    source_kind: str
    origin_key: str
    code: str
    license: str = "unknown"
    date: Optional[str] = None
    caption: Optional[str] = None
    description: Optional[str] = None
    compile_status: Optional[str] = None
    repair_outcome: str = "not_needed"
    image_artifact: Optional[str] = None
    split: Optional[str] = None
    provenance: list[str] = field(default_factory=list)
    extra: dict = field(default_factory=dict)
    schema: str = SCHEMA_TAG

    def to_dict(self) -> dict:
        out = {
            "schema": self.schema,
            "record_id": self.record_id,
            "source_kind": self.source_kind,
            "origin_key": self.origin_key,
            "license": self.license,
            "date": self.date,
            "code": self.code,
            "caption": self.caption,
            "description": self.description,
            "compile_status": self.compile_status,
            "repair_outcome": self.repair_outcome,
            "image_artifact": self.image_artifact,
            "split": self.split,
            "provenance": self.provenance,
        }
        out.update(self.extra)
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "TikZRecord":
        extra = {k: v for k, v in obj.items() if k not in _KNOWN_FIELDS}
        return cls(
            record_id=obj["record_id"],
            source_kind=obj["source_kind"],
            origin_key=obj["origin_key"],
            code=obj["code"],
            license=obj.get("license", "unknown"),
            date=obj.get("date"),
            caption=obj.get("caption"),
            description=obj.get("description"),
            compile_status=obj.get("compile_status"),
            repair_outcome=obj.get("repair_outcome", "not_needed"),
            image_artifact=obj.get("image_artifact"),
            split=obj.get("split"),
            provenance=list(obj.get("provenance", [])),
            extra=extra,
            schema=obj.get("schema", SCHEMA_TAG),
        )

    def with_stage(self, stage: str, **changes) -> "TikZRecord":
        """New record version carrying this stage in its provenance trail."""
        updated = replace(self, **changes)
        updated.provenance = [*self.provenance, stage]
        return updated


def validate_record(record: TikZRecord) -> list[str]:
    problems = []
    if record.split == SPLIT_TEST:
        if record.compile_status != "ok":
            problems.append(f"{record.record_id}: test record without ok compile")
        if not record.description:
            problems.append(f"{record.record_id}: test record without description")
    return problems


@dataclass
class WriteReceipt:
    path: str
    count: int
    sha256: str


@dataclass
class LineDiagnostic:
    line_number: int
    message: str


@dataclass
class ReadResult:
    records: list[TikZRecord]
    diagnostics: list[LineDiagnostic]


def write_records(records: Iterable[TikZRecord], path: str | Path) -> WriteReceipt:
    path = Path(path)
    digest = hashlib.sha256()
    count = 0
    with path.open("w") as fh:
        for record in records:
            line = json.dumps(record.to_dict(), sort_keys=True) + "\n"
            digest.update(line.encode("utf-8"))
            fh.write(line)
            count += 1
    return WriteReceipt(path=str(path), count=count, sha256=digest.hexdigest())


def read_records(path: str | Path, strict: bool = False) -> ReadResult:
    """Load a record JSONL; in lenient mode malformed lines become diagnostics."""
    records: list[TikZRecord] = []
    diagnostics: list[LineDiagnostic] = []
    seen_ids: set[str] = set()
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = TikZRecord.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                if strict:
                    raise ValueError(f"{path}:{ln}: {exc}") from exc
                diagnostics.append(LineDiagnostic(ln, str(exc)))
                continue
            if record.record_id in seen_ids:
                message = f"duplicate record_id {record.record_id!r}"
                if strict:
                    raise ValueError(f"{path}:{ln}: {message}")
                diagnostics.append(LineDiagnostic(ln, message))
                continue
            seen_ids.add(record.record_id)
            records.append(record)
    return ReadResult(records=records, diagnostics=diagnostics)


class ArtifactCache:
    """Two-level hex fan-out store for content-addressed artifacts."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.hits = 0
        self.misses = 0

    def path_for(self, key: str, ext: str = "png") -> Path:
        return self.root / key[:2] / key[2:4] / f"{key}.{ext}"

    def has(self, key: str, ext: str = "png") -> bool:
        return self.path_for(key, ext).exists()

    def put_bytes(self, data: bytes, key: Optional[str] = None, ext: str = "png") -> Path:
        key = key or hashlib.sha256(data).hexdigest()
        dest = self.path_for(key, ext)
        if dest.exists():
            self.hits += 1
            return dest
        self.misses += 1
        dest.parent.mkdir(parents=True, exist_ok=True)
        tmp = dest.with_suffix(dest.suffix + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(dest)
        return dest


def corpus_stats(records: Sequence[TikZRecord]) -> dict:
    """Per-source counts, compile rates, repair recovery, license shares."""
    total = len(records)
    per_source: dict[str, int] = {}
    compiled_by_source: dict[str, int] = {}
    license_counts: dict[str, int] = {}
    first_pass_ok = 0
    final_ok = 0
    repaired_by_iteration: dict[int, int] = {}

    for r in records:
        per_source[r.source_kind] = per_source.get(r.source_kind, 0) + 1
        license_counts[r.license] = license_counts.get(r.license, 0) + 1
        if r.compile_status == "ok":
            final_ok += 1
            compiled_by_source[r.source_kind] = compiled_by_source.get(r.source_kind, 0) + 1
            if r.repair_outcome == "not_needed":
                first_pass_ok += 1
        m = None
        if r.repair_outcome.startswith("repaired_at("):
            m = int(r.repair_outcome[len("repaired_at(") : -1])
        if m is not None:
            repaired_by_iteration[m] = repaired_by_iteration.get(m, 0) + 1

    return {
        "total": total,
        "per_source": dict(sorted(per_source.items())),
        "compile_rate_per_source": {
            src: compiled_by_source.get(src, 0) / count
            for src, count in sorted(per_source.items())
        },
        "first_pass_rate": first_pass_ok / total if total else 0.0,
        "final_compile_rate": final_ok / total if total else 0.0,
        "repaired_by_iteration": dict(sorted(repaired_by_iteration.items())),
        "license_shares": {
            lic: count / total for lic, count in sorted(license_counts.items())
        }
        if total
        else {},
    }
