"""Static-image curation: source filtering, saliency gating, hybrid sampling,
and confidence-screened object perception.

Images are opaque references throughout; anything that needs pixels happens
behind a perception client.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass
from statistics import median
from typing import Mapping, Optional, Sequence

from .errors import ForgeError
from .physdb import normalize_label

# Subject saliency band on bbox area ratios, closed on both ends.
SALIENCY_MIN = 0.15
SALIENCY_MAX = 0.75

# Categories with non-stationary or ill-defined physical properties.
DEFAULT_BLOCKLIST = frozenset({"person", "human", "man", "woman", "face"})

DEFAULT_CONF_THRESHOLD = 0.5


class CurationError(ForgeError):
    pass


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in normalized image fractions."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.x >= 0 and self.y >= 0 and self.w > 0 and self.h > 0):
            raise CurationError(f"invalid bbox origin/extent: {self}")
        if self.x + self.w > 1.0 + 1e-9 or self.y + self.h > 1.0 + 1e-9:
            raise CurationError(f"bbox exceeds unit square: {self}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_json(self) -> dict:
        return {"x": self.x, "y": self.y, "w": self.w, "h": self.h}

    @classmethod
    def from_json(cls, raw: Mapping) -> "BBox":
        return cls(x=float(raw["x"]), y=float(raw["y"]), w=float(raw["w"]), h=float(raw["h"]))


@dataclass(frozen=True)
class DetectedObject:
    """One screened detection with its ranked label candidates."""

    image_id: str
    bbox: BBox
    label_candidates: tuple[str, ...]
    confidence: float

    def __post_init__(self) -> None:
        if not self.label_candidates:
            raise CurationError(f"detection on {self.image_id!r} has no label candidates")
        if len(set(self.label_candidates)) != len(self.label_candidates):
            raise CurationError(f"detection on {self.image_id!r} has duplicate candidates")
        if not 0.0 <= self.confidence <= 1.0:
            raise CurationError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "bbox": self.bbox.to_json(),
            "label_candidates": list(self.label_candidates),
            "confidence": self.confidence,
        }


@dataclass(frozen=True)
class InventoryItem:
    image_id: str
    category: str
    weight: float

    def __post_init__(self) -> None:
        if not self.weight > 0:
            raise CurationError(f"inventory weight must be positive, got {self.weight}")


def filter_category(
    category: str,
    blocklist: frozenset[str] = DEFAULT_BLOCKLIST,
    ancestors: Optional[Mapping[str, Sequence[str]]] = None,
) -> bool:
    """Keep/drop decision for a source category.

    Drops when the normalized category, or any of its configured hierarchy
    ancestors, is blocklisted.  ``blocklist`` entries must already be
    normalized; ``ancestors`` maps normalized category -> normalized parents.
    """
    key = normalize_label(category)
    if key in blocklist:
        return False
    if ancestors:
        seen = {key}
        frontier = list(ancestors.get(key, ()))
        while frontier:
            parent = normalize_label(frontier.pop())
            if parent in seen:
                continue
            seen.add(parent)
            if parent in blocklist:
                return False
            frontier.extend(ancestors.get(parent, ()))
    return True


def saliency_filter(bbox: BBox) -> bool:
    """Keep iff the bbox area ratio lies in the closed saliency band."""
    return SALIENCY_MIN <= bbox.area <= SALIENCY_MAX


def long_tail_categories(inventory: Sequence[InventoryItem]) -> frozenset[str]:
    """Categories whose frequency is strictly below the median category frequency."""
    counts = Counter(normalize_label(item.category) for item in inventory)
    cutoff = median(counts.values())
    return frozenset(cat for cat, n in counts.items() if n < cutoff)


def hybrid_sample(
    inventory: Sequence[InventoryItem],
    n: int,
    tail_boost: float = 1.0,
    seed: int = 0,
) -> list[InventoryItem]:
    """Weighted sampling without replacement, boosting long-tail categories.

    Items in categories below the median frequency get their weight multiplied
    by ``tail_boost``.  Uses exponential-key reservoir selection: draw one
    uniform per item, keep the n smallest -ln(u)/w keys.  Bit-reproducible
    under ``seed``; output ordered by selection key.
    """
    if not inventory:
        raise CurationError("inventory is empty")
    if not 1 <= n <= len(inventory):
        raise CurationError(f"sample size {n} out of range 1..{len(inventory)}")
    if tail_boost < 1.0:
        raise CurationError(f"tail_boost must be >= 1, got {tail_boost}")

    tail = long_tail_categories(inventory)
    rng = random.Random(seed)
    keyed = []
    for item in inventory:
        weight = item.weight * (tail_boost if normalize_label(item.category) in tail else 1.0)
        u = rng.random()
        while u == 0.0:  # -ln(0) is infinite; redraw (astronomically rare)
            u = rng.random()
        keyed.append((-math.log(u) / weight, item))
    keyed.sort(key=lambda pair: pair[0])
    return [item for _, item in keyed[:n]]


def detect_objects(
    image_ref: str,
    detector,
    conf_threshold: float = DEFAULT_CONF_THRESHOLD,
) -> list[DetectedObject]:
    """Screened object perception for one image.

    ``detector`` is a detector-role client (live or mock).  Detections below
    the confidence threshold or outside the saliency band are pruned; label
    candidates are deduplicated preserving rank order.  Never invents objects:
    the output is a subset of the client's raw detections.
    """
    if not 0.0 <= conf_threshold <= 1.0:
        raise CurationError(f"conf_threshold {conf_threshold} outside [0, 1]")
    kept = []
    for raw in detector.detect(image_ref):
        confidence = float(raw["confidence"])
        if confidence < conf_threshold:
            continue
        bbox = BBox.from_json(raw["bbox"])
        if not saliency_filter(bbox):
            continue
        candidates = tuple(dict.fromkeys(str(lbl) for lbl in raw["labels"]))
        kept.append(
            DetectedObject(
                image_id=image_ref,
                bbox=bbox,
                label_candidates=candidates,
                confidence=confidence,
            )
        )
    return kept


def load_inventory(path) -> list[InventoryItem]:
    """Read an inventory JSONL file (`image_id, category, weight`)."""
    import json
    from pathlib import Path

    items = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                items.append(
                    InventoryItem(
                        image_id=str(raw["image_id"]),
                        category=str(raw["category"]),
                        weight=float(raw.get("weight", 1.0)),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise CurationError(f"{path}:{lineno}: bad inventory record: {exc}") from exc
    return items
