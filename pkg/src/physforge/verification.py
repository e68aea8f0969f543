"""Physics-law constrained validation of property records.

Three checks run in a fixed order — hard bounds, coupled-variable
consistency, state applicability — and all violations are accumulated rather
than failing fast.  Invalid values are rejected, never repaired or clamped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

from .curation import DetectedObject
from .physdb import MaterialState, PropertyVector, applicable_attributes
from .retrieval import RetrievalResult, RetrievalTier


def _fmt_endpoint(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:g}"


@dataclass(frozen=True)
class Bound:
    lo: float
    hi: float
    lo_open: bool = False
    hi_open: bool = False

    def contains(self, value: float) -> bool:
        above = value > self.lo if self.lo_open else value >= self.lo
        below = value < self.hi if self.hi_open else value <= self.hi
        return above and below

    def interval(self) -> str:
        left = "(" if self.lo_open else "["
        right = ")" if self.hi_open else "]"
        return f"{left}{_fmt_endpoint(self.lo)}, {_fmt_endpoint(self.hi)}{right}"


_INF = math.inf

# Definition intervals for each attribute.  Poisson's ratio is open at 0.5:
# the incompressibility limit makes the elastic relations singular.
BOUNDS: dict[str, Bound] = {
    "stiffness": Bound(0.0, _INF, lo_open=True),
    "density": Bound(0.0, _INF, lo_open=True),
    "mass": Bound(0.0, _INF, lo_open=True),
    "mu_static": Bound(0.0, _INF),
    "mu_kinetic": Bound(0.0, _INF),
    "restitution": Bound(0.0, 1.0),
    "youngs_modulus": Bound(0.0, _INF, lo_open=True),
    "poisson_ratio": Bound(-1.0, 0.5, lo_open=True, hi_open=True),
    "viscosity": Bound(0.0, _INF, lo_open=True),
    "surface_tension": Bound(0.0, _INF),
    "yield_stress": Bound(0.0, _INF),
}

_INTERVALS = {name: bound.interval() for name, bound in BOUNDS.items()}


@dataclass(frozen=True)
class Violation:
    """One failed check.  Violations are data, not exceptions."""

    kind: str  # "bound" | "coupling" | "applicability"
    attributes: tuple[str, ...]
    message: str
    observed: tuple[float, ...]

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "attributes": list(self.attributes),
            "message": self.message,
            "observed": list(self.observed),
        }


def check_bounds(pv: PropertyVector) -> list[Violation]:
    """One violation per present attribute outside its definition interval."""
    violations = []
    for name, value in pv.present().items():
        if not BOUNDS[name].contains(value):
            violations.append(
                Violation(
                    kind="bound",
                    attributes=(name,),
                    message=f"{name}={value:g} outside {_INTERVALS[name]}",
                    observed=(value,),
                )
            )
    return violations


def check_coupling(pv: PropertyVector) -> list[Violation]:
    """Consistency rules over jointly present attributes.

    R1: kinetic friction cannot exceed static friction.
    R2: Poisson's ratio is meaningless without an elastic modulus.
    R3: yield stress must stay below Young's modulus (yield strain < 100%).
    """
    violations = []
    mu_s, mu_k = pv.mu_static, pv.mu_kinetic
    if mu_s is not None and mu_k is not None and mu_k > mu_s:
        violations.append(
            Violation(
                kind="coupling",
                attributes=("mu_kinetic", "mu_static"),
                message=f"mu_kinetic={mu_k:g} exceeds mu_static={mu_s:g}",
                observed=(mu_k, mu_s),
            )
        )
    if pv.poisson_ratio is not None and pv.youngs_modulus is None:
        violations.append(
            Violation(
                kind="coupling",
                attributes=("poisson_ratio", "youngs_modulus"),
                message=f"poisson_ratio={pv.poisson_ratio:g} present without youngs_modulus",
                observed=(pv.poisson_ratio,),
            )
        )
    ys, ym = pv.yield_stress, pv.youngs_modulus
    if ys is not None and ym is not None and ys >= ym:
        violations.append(
            Violation(
                kind="coupling",
                attributes=("yield_stress", "youngs_modulus"),
                message=f"yield_stress={ys:g} not below youngs_modulus={ym:g}",
                observed=(ys, ym),
            )
        )
    return violations


def check_applicability(pv: PropertyVector, state: MaterialState) -> list[Violation]:
    """One violation per present attribute that is meaningless for the state."""
    state = MaterialState(state)
    allowed = applicable_attributes(state)
    violations = []
    for name, value in pv.present().items():
        if name not in allowed:
            violations.append(
                Violation(
                    kind="applicability",
                    attributes=(name,),
                    message=f"{name}={value:g} not applicable to state {state.value!r}",
                    observed=(value,),
                )
            )
    return violations


def check_property_record(pv: PropertyVector, state: MaterialState) -> list[Violation]:
    """All three checks in order, accumulated (used for DB self-consistency)."""
    return check_bounds(pv) + check_coupling(pv) + check_applicability(pv, state)


@dataclass(frozen=True)
class VerifiedTag:
    """A detection bound to a property record that passed every check.

    The invariant is structural: construction re-runs all three checks and
    refuses any violating record, so no code path (not just
    :func:`verify_tag`) can smuggle a bad vector into a VerifiedTag.  Tier
    provenance is preserved from retrieval.
    """

    object: DetectedObject
    properties: PropertyVector
    state: MaterialState
    tier: RetrievalTier
    verified: bool = True
    label: str = ""
    prototype_id: Optional[str] = None

    def __post_init__(self) -> None:
        violations = check_property_record(self.properties, self.state)
        if violations:
            detail = "; ".join(v.message for v in violations)
            raise ValueError(f"VerifiedTag with violating record: {detail}")

    def to_json(self) -> dict:
        return {
            "object": self.object.to_json(),
            "label": self.label,
            "prototype_id": self.prototype_id,
            "properties": self.properties.to_dict(),
            "state": self.state.value,
            "tier": self.tier.value,
            "verified": True,
        }


@dataclass(frozen=True)
class Rejection:
    """Quarantine record for a property record that failed verification."""

    object: Optional[DetectedObject]
    properties: PropertyVector
    violations: tuple[Violation, ...]

    def to_json(self) -> dict:
        return {
            "object": None if self.object is None else self.object.to_json(),
            "properties": self.properties.to_dict(),
            "violations": [v.to_json() for v in self.violations],
        }


def verify_tag(
    obj: DetectedObject, result: RetrievalResult
) -> Union[VerifiedTag, Rejection]:
    """Validate a retrieval result and bind it to its detection.

    Runs bounds, coupling, then applicability, accumulating every violation.
    Success yields a VerifiedTag; any violation yields a Rejection carrying
    the full list.
    """
    violations = check_property_record(result.properties, result.state)
    if violations:
        return Rejection(
            object=obj, properties=result.properties, violations=tuple(violations)
        )
    return VerifiedTag(
        object=obj,
        properties=result.properties,
        state=result.state,
        tier=result.tier,
        label=result.label,
        prototype_id=result.prototype_id,
    )
