"""Figure descriptions from a vision-language chat endpoint, with validation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from .chat import image_part, text_part
from .embeddings import media_type_for

_PROMPT_BLOCKS = (
    "You are a scientific illustrator describing images for precise redrawing in TikZ.",
    "Your task is to describe the image in precise, continuous prose without bullet points, "
    "lists, or line breaks.",
    "Start directly with the main object or scene. Avoid introductory phrases like "
    "'Certainly!', 'The image depicts...', 'Here is a precise description.'.",
    "Use clear, active language focused on geometry, labels, colors, spatial relationships, "
    "coordinates, and other visible properties.",
    "Describe all visible elements such as shapes, lines, arrows, and labels, including their "
    "relative or absolute positions, dimensions, and orientation.",
    "Use consistent, minimal naming for objects (e.g., 'circle A', 'line L1') and specify "
    "label positions relative to shapes precisely.",
    "Only describe exact, concrete visual elements that enable precise image reconstruction "
    "in TikZ.",
    "Avoid vague, interpretive, or inferential language, and exclude summaries, conclusions, "
    "or commentary about the image's meaning, function, or aesthetics.",
    "Here are a few examples:",
    "A thin black horizontal line centered in the middle, containing nine evenly spaced black "
    "dots, and labeled $x_2$ at the left. Each dot is connected by a thin black line in an "
    "alternating pattern to either $x_0$ (placed at the top middle) or $x_1$ (placed at the "
    "bottom middle).",
    "A line chart has different instruction scales of 1/10, 1/4, 1/2, and 1 on the x-axis. "
    "On the y-axis it shows BLEU scores between 20 and 50, with steps of 5. The chart contains "
    "three lines with Zh-En in blue, De-En in red, and Fr-En in brown. All BLEU scores are "
    "initially 20 at the lowest instruction scale. As the instruction scale increases, BLEU "
    "scores improve for all pairs. De-En is the highest, closely followed by Fr-En and then "
    "Zh-En far below. The increase is largest from 1/10 to 1/4 and only marginally above an "
    "instruction scale of 1/4. The legend is placed inside the chart at the top left.",
    "Write a description in this exact style for the given image.",
)

DESCRIBE_PROMPT = "\n\n".join(_PROMPT_BLOCKS)
FEW_SHOT_EXAMPLE_COUNT = 2

VALIDATION_OK = "ok"
VALIDATION_TOO_SHORT = "too_short"
VALIDATION_LIST_MARKUP = "contains_list_markup"
VALIDATION_BANNED_PREAMBLE = "contains_banned_preamble"

BANNED_OPENERS = (
    "certainly!",
    "the image depicts",
    "here is a precise description",
)

_LIST_MARKER_RE = re.compile(r"(?:^|\n)\s*(?:[-*•‣◦]|\d+[.)])\s")
_SENTENCE_END_RE = re.compile(r"[.!?]")


def build_describe_prompt() -> str:
    return DESCRIBE_PROMPT


def validate_description(text: str, min_chars: int = 200) -> str:
    """Pure predicate on the description text; first failing check wins."""
    stripped = text.strip()
    lowered = stripped.lower()
    for opener in BANNED_OPENERS:
        if lowered.startswith(opener):
            return VALIDATION_BANNED_PREAMBLE
    if "\n" in stripped or _LIST_MARKER_RE.search(text):
        return VALIDATION_LIST_MARKUP
    if len(stripped) < min_chars or not _SENTENCE_END_RE.search(stripped):
        return VALIDATION_TOO_SHORT
    return VALIDATION_OK


@dataclass
class DescribeConfig:
    min_chars: int = 200
    retries_on_invalid: int = 1


@dataclass
class DescriptionResult:
    record_id: str
    description: str
    validation: str
    model_name: str

    def to_dict(self) -> dict:
        return {
            "record_id": self.record_id,
            "description": self.description,
            "validation": self.validation,
            "model_name": self.model_name,
        }


def describe(
    image_path: str | Path,
    client,
    cfg: DescribeConfig = DescribeConfig(),
    record_id: Optional[str] = None,
) -> DescriptionResult:
    """Send prompt + image, validate the reply; one retry on validation failure.

    Transport errors propagate (the caller records and skips the record); a
    still-invalid reply after the retry is recorded with its failure category.
    """
    image_path = Path(image_path)
    message = {
        "role": "user",
        "content": [
            text_part(DESCRIBE_PROMPT),
            image_part(image_path.read_bytes(), media_type_for(image_path)),
        ],
    }
    description = ""
    verdict = VALIDATION_TOO_SHORT
    for _ in range(cfg.retries_on_invalid + 1):
        description = client.complete([message])
        verdict = validate_description(description, cfg.min_chars)
        if verdict == VALIDATION_OK:
            break
    return DescriptionResult(
        record_id=record_id or image_path.stem,
        description=description,
        validation=verdict,
        model_name=getattr(client, "model_name", "unknown"),
    )


def write_descriptions_jsonl(results: Iterable[DescriptionResult], path: str | Path) -> int:
    count = 0
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")
            count += 1
    return count
