"""Cascaded label-to-properties retrieval: exact match, then vector search,
then analogy reasoning.

The cascade is strictly monotone: an exact index hit suppresses the embedder,
and a vector hit at or above the similarity floor suppresses the reasoner.
Analogy output is *not* validated here — the verification stage owns
correctness and must run before any downstream use.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from .errors import ForgeError
from .physdb import MaterialState, PropertyVector, PrototypeDB, nearest, normalize_label


class RetrievalTier(str, Enum):
    EXACT = "exact"
    VECTOR = "vector"
    ANALOGY = "analogy"


class CascadeError(ForgeError):
    """A client failed mid-cascade; carries the tier that was being attempted."""

    def __init__(self, message: str, tier_reached: RetrievalTier):
        super().__init__(message)
        self.tier_reached = tier_reached


class AnalogyParseError(ForgeError):
    """Reasoner reply had no parseable structured block; carries the raw payload."""

    def __init__(self, message: str, raw_reply: str):
        super().__init__(message)
        self.raw_reply = raw_reply


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 5
    sim_floor: float = 0.60

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ForgeError(f"retrieval k must be >= 1, got {self.k}")
        if not -1.0 < self.sim_floor < 1.0:
            raise ForgeError(f"sim_floor must be in (-1, 1), got {self.sim_floor}")


@dataclass(frozen=True)
class RetrievalResult:
    """A label bound to a property record, with tier provenance.

    ``similarity`` is present only for the vector tier; ``prototype_id`` is
    absent for analogy results.  ``top_k`` keeps the vector candidates around
    for audit — only the argmax's properties bind.
    """

    label: str
    properties: PropertyVector
    state: MaterialState
    tier: RetrievalTier
    prototype_id: Optional[str] = None
    similarity: Optional[float] = None
    top_k: tuple[tuple[str, float], ...] = ()
    state_hint: Optional[MaterialState] = None

    def __post_init__(self) -> None:
        if self.tier is RetrievalTier.VECTOR and self.similarity is None:
            raise ForgeError("vector-tier result requires a similarity")
        if self.tier is RetrievalTier.EXACT and self.similarity is not None:
            raise ForgeError("exact-tier result must not carry a similarity")

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "prototype_id": self.prototype_id,
            "properties": self.properties.to_dict(),
            "state": self.state.value,
            "tier": self.tier.value,
            "similarity": self.similarity,
        }


_FENCED_BLOCK = re.compile(r"```(?:json)?\s*(\{.*?\})\s*```", re.DOTALL)

ANALOGY_PROMPT = """\
You are completing physical attributes for an object by analogy to known materials.
Object label: {label}
{hint_line}
Reply with exactly one fenced JSON block using these fields (omit attributes you
cannot ground): state (rigid|soft|fluid), properties {{stiffness, density, mass,
mu_static, mu_kinetic, restitution, youngs_modulus, poisson_ratio, viscosity,
surface_tension, yield_stress}}.
"""


def analogy_prompt(label: str, state_hint: Optional[MaterialState] = None) -> str:
    hint_line = f"Likely material state: {state_hint.value}" if state_hint else ""
    return ANALOGY_PROMPT.format(label=label, hint_line=hint_line)


def analogy_complete(
    label: str,
    reasoner,
    state_hint: Optional[MaterialState] = None,
) -> tuple[PropertyVector, MaterialState]:
    """Ask the reasoning client for an attribute completion and parse it.

    Parses the first fenced JSON block of the reply; no physical validation
    happens here beyond parseability.
    """
    reply = reasoner.complete(analogy_prompt(label, state_hint))
    match = _FENCED_BLOCK.search(reply)
    if match is None:
        raise AnalogyParseError(
            f"no fenced JSON block in reasoner reply for {label!r}", raw_reply=reply
        )
    try:
        raw = json.loads(match.group(1))
        state = MaterialState(raw["state"])
        properties = PropertyVector.from_dict(raw.get("properties", {}))
    except (json.JSONDecodeError, KeyError, ValueError, ForgeError) as exc:
        raise AnalogyParseError(
            f"unparseable analogy reply for {label!r}: {exc}", raw_reply=reply
        ) from exc
    return properties, state


def retrieve(
    label: str,
    db: PrototypeDB,
    embedder,
    reasoner,
    cfg: RetrievalConfig = RetrievalConfig(),
    state_hint: Optional[MaterialState] = None,
) -> RetrievalResult:
    """Resolve a label to properties through the three-tier cascade.

    Vector search runs over the full DB regardless of ``state_hint``; the hint
    is recorded on the result for audit only.
    """
    proto = db.lookup(label)
    if proto is not None:
        return RetrievalResult(
            label=label,
            properties=proto.properties,
            state=proto.state,
            tier=RetrievalTier.EXACT,
            prototype_id=proto.id,
            state_hint=state_hint,
        )

    try:
        query = embedder.embed(normalize_label(label))
    except ForgeError as exc:
        raise CascadeError(
            f"embedder failed for {label!r} with no exact hit: {exc}",
            tier_reached=RetrievalTier.VECTOR,
        ) from exc
    hits = nearest(query, db, min(cfg.k, len(db)))
    best_id, best_sim = hits[0]
    if best_sim >= cfg.sim_floor:
        best = db.by_id[best_id]
        return RetrievalResult(
            label=label,
            properties=best.properties,
            state=best.state,
            tier=RetrievalTier.VECTOR,
            prototype_id=best_id,
            similarity=best_sim,
            top_k=tuple(hits),
            state_hint=state_hint,
        )

    try:
        properties, state = analogy_complete(label, reasoner, state_hint)
    except AnalogyParseError:
        raise
    except ForgeError as exc:
        raise CascadeError(
            f"reasoner failed for {label!r} at analogy tier: {exc}",
            tier_reached=RetrievalTier.ANALOGY,
        ) from exc
    return RetrievalResult(
        label=label,
        properties=properties,
        state=state,
        tier=RetrievalTier.ANALOGY,
        top_k=tuple(hits),
        state_hint=state_hint,
    )
