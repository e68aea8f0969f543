"""Deterministic instruction-sample synthesis from verified tags.

Each verified tag expands into exactly five instruction variants — two direct
attribute queries, two physical-logic reasoning items, one cross-modal
grounding item — rendered from versioned template files.  Answers embed only
values taken from the source tag (formatted to at most four significant
figures with SI units); templates carry no numeric literals of their own, so
a string-level scan of the output can prove no value was invented.

Template placeholder grammar: ``{label}``, ``{bbox}``, ``{state}``,
``{attr:NAME}`` (value of a specific attribute), ``{attribute}``/``{value}``
(the selected attribute's display name / formatted value), and
``{attribute2}``/``{value2}`` for two-attribute reasoning templates.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

from .curation import BBox
from .errors import ForgeError
from .physdb import ATTRIBUTES, UNITS
from .verification import VerifiedTag


class InstructGenError(ForgeError):
    pass


class TaskKind(str, Enum):
    DIRECT = "direct_attribute_query"
    REASONING = "physical_logic_reasoning"
    GROUNDING = "cross_modal_grounding"


# Two direct, two reasoning, one grounding — all three kinds in every expansion.
VARIANT_TASKS: tuple[TaskKind, ...] = (
    TaskKind.DIRECT,
    TaskKind.DIRECT,
    TaskKind.REASONING,
    TaskKind.REASONING,
    TaskKind.GROUNDING,
)

ATTR_DISPLAY = {
    "stiffness": "stiffness",
    "density": "density",
    "mass": "mass",
    "mu_static": "static friction coefficient",
    "mu_kinetic": "kinetic friction coefficient",
    "restitution": "restitution coefficient",
    "youngs_modulus": "Young's modulus",
    "poisson_ratio": "Poisson's ratio",
    "viscosity": "viscosity",
    "surface_tension": "surface tension",
    "yield_stress": "yield stress",
}

_ATTR_PLACEHOLDER = re.compile(r"\{attr:([a-z_]+)\}")


def format_value(name: str, value: float) -> str:
    """Attribute value at up to 4 significant figures, with SI unit."""
    text = f"{value:.4g}"
    unit = UNITS[name]
    return f"{text} {unit}" if unit else text


def format_bbox(bbox: BBox) -> str:
    return (
        f"[x={bbox.x:.4g}, y={bbox.y:.4g}, w={bbox.w:.4g}, h={bbox.h:.4g}]"
    )


@dataclass(frozen=True)
class Template:
    task: TaskKind
    template_id: int
    prompt: str
    answer: str

    def required_attrs(self) -> tuple[str, ...]:
        names = []
        for text in (self.prompt, self.answer):
            for match in _ATTR_PLACEHOLDER.finditer(text):
                name = match.group(1)
                if name not in ATTRIBUTES:
                    raise InstructGenError(
                        f"template {self.task.value}#{self.template_id} references "
                        f"unknown attribute {name!r}"
                    )
                if name not in names:
                    names.append(name)
        return tuple(names)

    def needs_generic_slot(self) -> bool:
        return "{attribute}" in self.prompt + self.answer or "{value}" in self.prompt + self.answer


def templates_dir() -> Path:
    return Path(__file__).parent / "data" / "templates"


def load_templates(directory: Optional[Path] = None) -> dict[TaskKind, list[Template]]:
    """Parse the per-kind template files (blocks separated by `---` lines)."""
    directory = Path(directory) if directory else templates_dir()
    library: dict[TaskKind, list[Template]] = {}
    for task in TaskKind:
        path = directory / f"{task.value}.txt"
        blocks = [b for b in path.read_text(encoding="utf-8").split("\n---\n") if b.strip()]
        templates = []
        for i, block in enumerate(blocks):
            prompt = answer = None
            for line in block.splitlines():
                if line.startswith("#") or not line.strip():
                    continue
                if line.startswith("prompt:"):
                    prompt = line[len("prompt:") :].strip()
                elif line.startswith("answer:"):
                    answer = line[len("answer:") :].strip()
            if not prompt or not answer:
                raise InstructGenError(f"{path}: block {i} needs prompt: and answer: lines")
            templates.append(Template(task=task, template_id=i, prompt=prompt, answer=answer))
        if not templates:
            raise InstructGenError(f"{path}: no templates")
        library[task] = templates
    return library


_LIBRARY: Optional[dict[TaskKind, list[Template]]] = None


def _library() -> dict[TaskKind, list[Template]]:
    global _LIBRARY
    if _LIBRARY is None:
        _LIBRARY = load_templates()
    return _LIBRARY


@dataclass(frozen=True)
class InstructionSample:
    image_id: str
    bbox: BBox
    task: TaskKind
    prompt: str
    answer: str
    attributes_used: tuple[str, ...]
    variant_index: int
    seed: int

    def to_json(self) -> dict:
        return {
            "image_id": self.image_id,
            "bbox": self.bbox.to_json(),
            "task": self.task.value,
            "prompt": self.prompt,
            "answer": self.answer,
            "attributes_used": list(self.attributes_used),
            "variant_index": self.variant_index,
            "seed": self.seed,
        }


def _tag_key(tag: VerifiedTag) -> str:
    b = tag.object.bbox
    return f"{tag.object.image_id}|{b.x:.6f},{b.y:.6f},{b.w:.6f},{b.h:.6f}|{tag.label}"


def _derive_int(*parts) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _substitute(text: str, tag: VerifiedTag, chosen: Sequence[str]) -> str:
    present = tag.properties.present()
    out = text
    out = out.replace("{label}", tag.label or tag.object.label_candidates[0])
    out = out.replace("{state}", tag.state.value)
    out = out.replace("{bbox}", format_bbox(tag.object.bbox))
    if chosen:
        out = out.replace("{attribute}", ATTR_DISPLAY[chosen[0]])
        out = out.replace("{value}", format_value(chosen[0], present[chosen[0]]))
    if len(chosen) > 1:
        out = out.replace("{attribute2}", ATTR_DISPLAY[chosen[1]])
        out = out.replace("{value2}", format_value(chosen[1], present[chosen[1]]))
    def attr_sub(match: re.Match) -> str:
        name = match.group(1)
        return format_value(name, present[name])
    out = _ATTR_PLACEHOLDER.sub(attr_sub, out)
    if "{" in out and "}" in out:
        leftover = re.findall(r"\{[a-z_:0-9]+\}", out)
        if leftover:
            raise InstructGenError(f"unfilled placeholders {leftover} in rendered text")
    return out


def _eligible(templates: Sequence[Template], present: dict[str, float]) -> list[Template]:
    return [t for t in templates if set(t.required_attrs()) <= set(present)]


def render_instruction(
    tag: VerifiedTag,
    task: TaskKind,
    template_id: int,
    seed: int,
    variant_index: int = 0,
) -> InstructionSample:
    """Render one sample from an explicit template.

    The selected generic attribute (if the template has a generic slot) is a
    deterministic function of (tag, task, template_id, seed).
    """
    templates = _library()[task]
    if not 0 <= template_id < len(templates):
        raise InstructGenError(f"unknown template id {template_id} for {task.value}")
    template = templates[template_id]
    present = tag.properties.present()
    if not present:
        raise InstructGenError("no instructable attributes")
    required = template.required_attrs()
    if not set(required) <= set(present):
        raise InstructGenError(
            f"template {task.value}#{template_id} requires {required}, "
            f"tag has {tuple(present)}"
        )
    chosen: list[str] = []
    if template.needs_generic_slot():
        names = sorted(present)
        pick = _derive_int(seed, _tag_key(tag), task.value, template_id, variant_index)
        chosen.append(names[pick % len(names)])
    used = tuple(dict.fromkeys(list(required) + chosen))
    return InstructionSample(
        image_id=tag.object.image_id,
        bbox=tag.object.bbox,
        task=task,
        prompt=_substitute(template.prompt, tag, chosen),
        answer=_substitute(template.answer, tag, chosen),
        attributes_used=used,
        variant_index=variant_index,
        seed=seed,
    )


def expand_tag(tag: VerifiedTag, seed: int) -> list[InstructionSample]:
    """Exactly five instruction variants per tag, all three kinds covered.

    Byte-identical under (tag, seed); variant prompts are pairwise distinct
    (template choices within a kind never repeat).
    """
    present = tag.properties.present()
    if not present:
        raise InstructGenError("no instructable attributes")
    library = _library()
    samples: list[InstructionSample] = []
    slot_within_kind: dict[TaskKind, int] = {}
    for variant_index, task in enumerate(VARIANT_TASKS):
        eligible = _eligible(library[task], present)
        if not eligible:
            raise InstructGenError(f"no eligible {task.value} template for tag")
        slot = slot_within_kind.get(task, 0)
        slot_within_kind[task] = slot + 1
        start = _derive_int(seed, _tag_key(tag), task.value, "template-pick")
        template = eligible[(start + slot) % len(eligible)]
        samples.append(
            render_instruction(tag, task, template.template_id, seed, variant_index)
        )
    prompts = [s.prompt for s in samples]
    if len(set(prompts)) != len(prompts):
        raise InstructGenError("variant prompts collided; template set too small")
    return samples
