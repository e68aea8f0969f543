"""Physical attribute space and the prototype reference database.

Every property record lives in the same fixed 11-attribute space; which
attributes are meaningful depends on the material state (rigid / soft /
fluid).  The bundled reference database ships 300 prototypes, 100 per state,
as retrieval anchors.  The database is immutable after load and is re-checked
against the verification rules on every load.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ForgeError

# Canonical attribute order.  Serialized records, vectors, and reports all use
# this ordering; never reorder.
ATTRIBUTES: tuple[str, ...] = (
    "stiffness",
    "density",
    "mass",
    "mu_static",
    "mu_kinetic",
    "restitution",
    "youngs_modulus",
    "poisson_ratio",
    "viscosity",
    "surface_tension",
    "yield_stress",
)

UNITS: dict[str, str] = {
    "stiffness": "N/m",
    "density": "kg/m³",
    "mass": "kg",
    "mu_static": "",
    "mu_kinetic": "",
    "restitution": "",
    "youngs_modulus": "Pa",
    "poisson_ratio": "",
    "viscosity": "Pa·s",
    "surface_tension": "N/m",
    "yield_stress": "Pa",
}


class MaterialState(str, Enum):
    RIGID = "rigid"
    SOFT = "soft"
    FLUID = "fluid"


# Which attributes are meaningful for each state.  Elastic moduli and friction
# are solid-contact concepts; viscosity and surface tension are fluid
# concepts; yield stress marks soft/plastic response.
_RIGID_ATTRS = frozenset(
    {
        "stiffness",
        "density",
        "mass",
        "mu_static",
        "mu_kinetic",
        "restitution",
        "youngs_modulus",
        "poisson_ratio",
    }
)

APPLICABLE_ATTRIBUTES: dict[MaterialState, frozenset[str]] = {
    MaterialState.RIGID: _RIGID_ATTRS,
    MaterialState.SOFT: _RIGID_ATTRS | {"yield_stress"},
    MaterialState.FLUID: frozenset({"density", "mass", "viscosity", "surface_tension"}),
}


class PhysDBError(ForgeError):
    """Any failure while parsing, validating, or querying the prototype DB."""


def normalize_label(text: str) -> str:
    """Canonical label form: lowercase, punctuation stripped, whitespace collapsed."""
    cleaned = "".join(ch if ch.isalnum() else " " for ch in text.lower())
    return " ".join(cleaned.split())


def applicable_attributes(state: MaterialState) -> frozenset[str]:
    """Fixed set of attribute names that are meaningful for ``state``."""
    return APPLICABLE_ATTRIBUTES[MaterialState(state)]


@dataclass(frozen=True)
class PropertyVector:
    """One point in the 11-attribute physical parameter space.

    Absent attributes are None.  Present values must be finite; range and
    consistency rules live in :mod:`physforge.verification`, not here.
    """

    stiffness: Optional[float] = None
    density: Optional[float] = None
    mass: Optional[float] = None
    mu_static: Optional[float] = None
    mu_kinetic: Optional[float] = None
    restitution: Optional[float] = None
    youngs_modulus: Optional[float] = None
    poisson_ratio: Optional[float] = None
    viscosity: Optional[float] = None
    surface_tension: Optional[float] = None
    yield_stress: Optional[float] = None

    def __post_init__(self) -> None:
        for name in ATTRIBUTES:
            value = getattr(self, name)
            if value is None:
                continue
            if type(value) is not float:  # ints/strings coerce once; floats pass through
                value = float(value)
                object.__setattr__(self, name, value)
            if not math.isfinite(value):
                raise PhysDBError(f"attribute {name!r} must be finite, got {value!r}")

    def present(self) -> dict[str, float]:
        """Present attributes in canonical order."""
        return {n: getattr(self, n) for n in ATTRIBUTES if getattr(self, n) is not None}

    def to_dict(self) -> dict[str, Optional[float]]:
        return {n: getattr(self, n) for n in ATTRIBUTES}

    @classmethod
    def from_dict(cls, raw: dict) -> "PropertyVector":
        unknown = set(raw) - set(ATTRIBUTES)
        if unknown:
            raise PhysDBError(f"unknown property attributes: {sorted(unknown)}")
        return cls(**{k: (None if v is None else float(v)) for k, v in raw.items()})


@dataclass(frozen=True)
class Prototype:
    """A reference material/object bound to canonical physical attributes."""

    id: str
    label: str
    aliases: tuple[str, ...]
    state: MaterialState
    properties: PropertyVector
    embedding: Optional[tuple[float, ...]] = None

    def __post_init__(self) -> None:
        if not self.id:
            raise PhysDBError("prototype id must be non-empty")
        if not self.label.strip():
            raise PhysDBError(f"prototype {self.id}: label must be non-empty")
        if any(not a.strip() for a in self.aliases):
            raise PhysDBError(f"prototype {self.id}: aliases must be non-empty")
        if self.embedding is not None:
            norm = math.sqrt(sum(v * v for v in self.embedding))
            if abs(norm - 1.0) > 1e-6:
                raise PhysDBError(
                    f"prototype {self.id}: embedding norm {norm:.9f} not within 1e-6 of 1"
                )

    def names(self) -> tuple[str, ...]:
        return (self.label,) + self.aliases

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "label": self.label,
            "aliases": list(self.aliases),
            "state": self.state.value,
            "properties": self.properties.to_dict(),
            "embedding": None if self.embedding is None else list(self.embedding),
        }

    @classmethod
    def from_json(cls, raw: dict) -> "Prototype":
        try:
            state = MaterialState(raw["state"])
        except (KeyError, ValueError) as exc:
            raise PhysDBError(f"bad material state: {raw.get('state')!r}") from exc
        embedding = raw.get("embedding")
        return cls(
            id=str(raw["id"]),
            label=str(raw["label"]),
            aliases=tuple(str(a) for a in raw.get("aliases", [])),
            state=state,
            properties=PropertyVector.from_dict(raw.get("properties", {})),
            embedding=None if embedding is None else tuple(float(v) for v in embedding),
        )


@dataclass(frozen=True)
class PrototypeDB:
    """Immutable prototype collection with a normalized name index.

    ``label_index`` maps every normalized label and alias to a prototype id.
    Build instances through :meth:`build` or :func:`load_prototypes`; direct
    construction skips the collision checks.
    """

    prototypes: tuple[Prototype, ...]
    label_index: dict[str, str]
    state_counts: dict[MaterialState, int]
    by_id: dict[str, Prototype] = field(repr=False, default_factory=dict)

    @classmethod
    def build(cls, prototypes: Sequence[Prototype]) -> "PrototypeDB":
        if not prototypes:
            raise PhysDBError("no prototypes")
        by_id: dict[str, Prototype] = {}
        label_index: dict[str, str] = {}
        state_counts = {state: 0 for state in MaterialState}
        for proto in prototypes:
            if proto.id in by_id:
                raise PhysDBError(f"duplicate prototype id {proto.id!r}")
            by_id[proto.id] = proto
            state_counts[proto.state] += 1
            for name in proto.names():
                key = normalize_label(name)
                if not key:
                    raise PhysDBError(f"prototype {proto.id}: name {name!r} normalizes to empty")
                claimed = label_index.get(key)
                if claimed is not None and claimed != proto.id:
                    raise PhysDBError(
                        f"alias collision: {name!r} maps to both {claimed!r} and {proto.id!r}"
                    )
                label_index[key] = proto.id
        return cls(
            prototypes=tuple(prototypes),
            label_index=label_index,
            state_counts=state_counts,
            by_id=by_id,
        )

    def __len__(self) -> int:
        return len(self.prototypes)

    def lookup(self, label: str) -> Optional[Prototype]:
        """Exact-match lookup on the normalized label/alias index."""
        proto_id = self.label_index.get(normalize_label(label))
        return None if proto_id is None else self.by_id[proto_id]

    @cached_property
    def _embedding_matrix(self) -> tuple[np.ndarray, tuple[str, ...]]:
        embedded = [p for p in self.prototypes if p.embedding is not None]
        if not embedded:
            raise PhysDBError("database has no embeddings; index it before vector search")
        dims = {len(p.embedding) for p in embedded}  # type: ignore[arg-type]
        if len(dims) != 1:
            raise PhysDBError(f"inconsistent embedding dimensions in DB: {sorted(dims)}")
        matrix = np.array([p.embedding for p in embedded], dtype=np.float64)
        return matrix, tuple(p.id for p in embedded)


def nearest(
    query: np.ndarray, db: PrototypeDB, k: int
) -> list[tuple[str, float]]:
    """Top-k cosine similarity search over the indexed prototypes.

    Returns (prototype id, similarity) sorted by descending similarity, ties
    broken by ascending id.  Embeddings are unit-norm by contract, so cosine
    similarity is the plain dot product.
    """
    matrix, ids = db._embedding_matrix
    if not 1 <= k <= len(ids):
        raise PhysDBError(f"k out of range: {k} (1..{len(ids)})")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (matrix.shape[1],):
        raise PhysDBError(
            f"query dimension mismatch: got {q.shape}, index dim {matrix.shape[1]}"
        )
    sims = matrix @ q
    order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))
    return [(ids[i], float(sims[i])) for i in order[:k]]


def index_embeddings(
    db: PrototypeDB, embed: Callable[[str], np.ndarray]
) -> PrototypeDB:
    """Return a new DB whose prototypes carry embeddings of their labels.

    Labels are normalized before embedding so index and query sides agree.
    Embedding computation itself is delegated to the caller (normally a
    specialist client); this module only attaches and validates the vectors.
    """
    indexed = [
        Prototype(
            id=p.id,
            label=p.label,
            aliases=p.aliases,
            state=p.state,
            properties=p.properties,
            embedding=tuple(float(v) for v in embed(normalize_label(p.label))),
        )
        for p in db.prototypes
    ]
    return PrototypeDB.build(indexed)


def load_prototypes(path: str | Path) -> PrototypeDB:
    """Load and verify a JSONL prototype file.

    Every entry must pass the verification module's bound, coupling, and
    applicability checks; a single bad entry fails the whole load with the
    entry id and its violation list.
    """
    from . import verification  # local import: verification depends on this module

    path = Path(path)
    prototypes: list[Prototype] = []
    with path.open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PhysDBError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                proto = Prototype.from_json(raw)
            except (KeyError, TypeError, ValueError, PhysDBError) as exc:
                raise PhysDBError(f"{path}:{lineno}: bad prototype record: {exc}") from exc
            violations = verification.check_property_record(proto.properties, proto.state)
            if violations:
                detail = "; ".join(v.message for v in violations)
                raise PhysDBError(
                    f"{path}:{lineno}: prototype {proto.id!r} failed verification: {detail}"
                )
            prototypes.append(proto)
    if not prototypes:
        raise PhysDBError(f"{path}: no prototypes")
    return PrototypeDB.build(prototypes)


def bundled_db_path() -> Path:
    """Path of the reference database shipped with the package."""
    return Path(__file__).parent / "data" / "prototypes.jsonl"


def load_bundled(path: str | Path | None = None) -> PrototypeDB:
    return load_prototypes(bundled_db_path() if path is None else path)
