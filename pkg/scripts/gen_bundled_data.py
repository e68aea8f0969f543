"""Regenerate the bundled data files under src/physforge/data/.

Run from the repo root after editing the tables below:

    python scripts/gen_bundled_data.py

Writes prototypes.jsonl (300 reference entries, 100 per material state),
router_corpus.jsonl (210 labeled routing examples incl. 52 hard negatives),
eval_fixture.jsonl (60 benchmark items covering every task/difficulty cell),
and gate_params.json (gate weights trained on the corpus with seed 0).
All values are authored fixtures for this repository.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
DATA = REPO / "src" / "physforge" / "data"

sys.path.insert(0, str(REPO / "src"))

from physforge import clients, physdb, router  # noqa: E402

# ---------------------------------------------------------------------------
# prototypes

# (material, density kg/m3, E Pa, nu, mu_s, mu_k, restitution)
RIGID_MATERIALS = [
    ("steel", 7850, 200e9, 0.30, 0.74, 0.57, 0.60),
    ("aluminum", 2700, 69e9, 0.33, 0.61, 0.47, 0.55),
    ("copper", 8960, 117e9, 0.34, 0.53, 0.36, 0.45),
    ("brass", 8500, 100e9, 0.34, 0.51, 0.44, 0.48),
    ("titanium", 4500, 114e9, 0.32, 0.45, 0.38, 0.52),
    ("glass", 2500, 70e9, 0.22, 0.94, 0.40, 0.66),
    ("granite", 2700, 50e9, 0.25, 0.60, 0.45, 0.42),
    ("concrete", 2400, 30e9, 0.20, 0.80, 0.65, 0.38),
    ("oak", 750, 11e9, 0.30, 0.54, 0.32, 0.50),
    ("porcelain", 2400, 70e9, 0.22, 0.65, 0.40, 0.58),
]

# (form, volume m3, contact-length m, alias synonym)
RIGID_FORMS = [
    ("ball", 1.13e-4, 2.0e-4, "sphere"),
    ("cube", 1.25e-4, 1.5e-4, "cubic block"),
    ("rod", 1.50e-4, 0.8e-4, "bar"),
    ("plate", 4.50e-4, 2.5e-4, "panel"),
    ("beam", 2.00e-3, 3.0e-4, "girder"),
    ("bolt", 5.00e-6, 0.5e-4, "screw"),
    ("gear", 6.00e-5, 1.0e-4, "cog"),
    ("pipe", 3.00e-4, 1.2e-4, "tube section"),
    ("tile", 1.00e-4, 2.0e-4, "slab"),
    ("block", 1.00e-3, 2.5e-4, "chunk"),
]

# (material, density, E, nu, mu_s, mu_k, restitution, yield stress Pa)
SOFT_MATERIALS = [
    ("rubber", 1100, 5.0e7, 0.49, 1.15, 0.90, 0.82, 1.6e7),
    ("silicone", 1150, 5.0e6, 0.47, 1.00, 0.80, 0.60, 2.4e6),
    ("foam", 60, 1.0e5, 0.30, 0.80, 0.60, 0.25, 3.0e4),
    ("memory foam", 85, 6.0e4, 0.30, 0.85, 0.65, 0.12, 1.5e4),
    ("leather", 900, 2.0e8, 0.40, 0.61, 0.52, 0.30, 2.5e7),
    ("felt", 250, 5.0e6, 0.30, 0.75, 0.60, 0.15, 1.0e6),
    ("gelatin", 1050, 1.0e4, 0.49, 0.50, 0.40, 0.35, 2.0e3),
    ("dough", 1200, 5.0e3, 0.45, 0.90, 0.70, 0.05, 1.0e3),
    ("sponge", 90, 4.0e4, 0.25, 0.90, 0.70, 0.20, 8.0e3),
    ("cork", 240, 2.0e7, 0.0, 0.65, 0.45, 0.45, 1.0e6),
]

SOFT_FORMS = [
    ("ball", 1.13e-4, 1.0e-4, "sphere"),
    ("sheet", 2.40e-4, 2.0e-4, "layer"),
    ("pad", 4.00e-4, 2.5e-4, "pillow pad"),
    ("strip", 3.00e-5, 0.8e-4, "band"),
    ("cushion", 8.00e-3, 3.0e-4, "bolster"),
    ("mat", 3.20e-3, 2.5e-4, "rug piece"),
    ("cord", 2.00e-5, 0.5e-4, "rope length"),
    ("wedge", 1.50e-4, 1.2e-4, "doorstop"),
    ("tube", 1.00e-4, 1.0e-4, "hose piece"),
    ("block", 1.00e-3, 2.0e-4, "brick shape"),
]

# (material, density, viscosity Pa*s, surface tension N/m)
FLUIDS = [
    ("water", 998, 0.0010, 0.072),
    ("seawater", 1025, 0.00108, 0.073),
    ("olive oil", 915, 0.084, 0.032),
    ("motor oil", 870, 0.25, 0.030),
    ("honey", 1420, 7.0, 0.070),
    ("milk", 1030, 0.002, 0.047),
    ("mercury", 13530, 0.0015, 0.485),
    ("glycerin", 1260, 1.2, 0.063),
    ("ethanol", 789, 0.0011, 0.022),
    ("gasoline", 740, 0.0005, 0.021),
    ("corn syrup", 1380, 3.5, 0.080),
    ("liquid soap", 1010, 1.1, 0.028),
    ("orange juice", 1045, 0.003, 0.046),
    ("vinegar", 1005, 0.0012, 0.055),
    ("paint", 1300, 0.5, 0.035),
    ("ketchup", 1140, 50.0, 0.040),
    ("coffee", 1000, 0.0011, 0.047),
    ("cream", 1010, 0.02, 0.045),
    ("maple syrup", 1330, 0.18, 0.060),
    ("molten wax", 790, 0.01, 0.027),
]

# (container, volume m3, alias pattern)
FLUID_CONTAINERS = [
    ("cup", 2.5e-4),
    ("glass", 3.0e-4),
    ("bottle", 7.5e-4),
    ("bucket", 8.0e-3),
    ("droplet", 5.0e-8),
]


def _slug(*parts: str) -> str:
    return "-".join("-".join(p.split()) for p in parts)


def gen_prototypes() -> list[dict]:
    records = []
    for material, rho, e_mod, nu, mu_s, mu_k, rest in RIGID_MATERIALS:
        for form, volume, contact, synonym in RIGID_FORMS:
            records.append(
                {
                    "id": _slug("rigid", material, form),
                    "label": f"{material} {form}",
                    "aliases": [f"{material} {synonym}", f"{form} of {material}"],
                    "state": "rigid",
                    "properties": {
                        "stiffness": round(e_mod * contact, 2),
                        "density": rho,
                        "mass": round(rho * volume, 5),
                        "mu_static": mu_s,
                        "mu_kinetic": mu_k,
                        "restitution": rest,
                        "youngs_modulus": e_mod,
                        "poisson_ratio": nu,
                        "viscosity": None,
                        "surface_tension": None,
                        "yield_stress": None,
                    },
                    "embedding": None,
                }
            )
    for material, rho, e_mod, nu, mu_s, mu_k, rest, yield_s in SOFT_MATERIALS:
        for form, volume, contact, synonym in SOFT_FORMS:
            records.append(
                {
                    "id": _slug("soft", material, form),
                    "label": f"{material} {form}",
                    "aliases": [f"{material} {synonym}", f"{form} of {material}"],
                    "state": "soft",
                    "properties": {
                        "stiffness": round(e_mod * contact, 4),
                        "density": rho,
                        "mass": round(rho * volume, 5),
                        "mu_static": mu_s,
                        "mu_kinetic": mu_k,
                        "restitution": rest,
                        "youngs_modulus": e_mod,
                        "poisson_ratio": nu,
                        "viscosity": None,
                        "surface_tension": None,
                        "yield_stress": yield_s,
                    },
                    "embedding": None,
                }
            )
    for material, rho, visc, tension in FLUIDS:
        for container, volume in FLUID_CONTAINERS:
            records.append(
                {
                    "id": _slug("fluid", material, container),
                    "label": f"{container} of {material}",
                    "aliases": [f"{material} {container}", f"{container} filled with {material}"],
                    "state": "fluid",
                    "properties": {
                        "stiffness": None,
                        "density": rho,
                        "mass": round(rho * volume, 7),
                        "mu_static": None,
                        "mu_kinetic": None,
                        "restitution": None,
                        "youngs_modulus": None,
                        "poisson_ratio": None,
                        "viscosity": visc,
                        "surface_tension": tension,
                        "yield_stress": None,
                    },
                    "embedding": None,
                }
            )
    return records


# ---------------------------------------------------------------------------
# router corpus

GEN_TEMPLATES = [
    "Draw a {obj}",
    "Sketch a {obj} resting on a table",
    "Paint a {obj} in warm light",
    "Render a {obj} mid-bounce",
    "Generate an image of a {obj}",
    "Simulate a {obj} rolling downhill and show it as an image",
    "Visualize a {obj} splashing into water",
    "Illustrate a {obj} next to a ruler",
    "Depict a {obj} on concrete",
    "Animate a {obj} falling onto a mat",
]

GEN_OBJECTS = [
    "steel ball",
    "rubber cube",
    "copper rod",
    "glass plate",
    "foam cushion",
    "concrete block",
    "water droplet",
    "honey droplet",
    "granite tile",
    "aluminum gear",
]

COGNITIVE_TEMPLATES = [
    "Explain how the {obj} deforms under load",
    "Describe the surface texture of the {obj}",
    "Summarize the measurements taken on the {obj}",
    "Compare the {obj} with a wooden one by density",
    "Define the stiffness of a {obj} in your own words",
    "Analyze the forces acting on the {obj}",
]

CAUSAL_TEMPLATES = [
    "Why does the {obj} bounce back?",
    "Why does the {obj} sink in water?",
    "How come the {obj} slides so easily?",
    "What causes the {obj} to shatter on impact?",
]

PLAIN_QUESTIONS = [
    "What is the density of steel?",
    "What is the viscosity of honey at room temperature?",
    "Is rubber denser than cork?",
    "Which has higher surface tension, water or ethanol?",
    "What is the restitution of a glass ball?",
    "Does a copper rod weigh more than an aluminum rod?",
    "What friction coefficient should I use for rubber on concrete?",
    "What is the mass of a bucket of paint?",
    "At what stress does leather yield?",
    "Is mercury a fluid at room temperature?",
]

HARD_NEGATIVES_FIXED = [
    "Write a Python script to simulate a pendulum",
    "Draw a conclusion from the data",
]

HARD_NEG_SIM_TOPICS = [
    "pendulum",
    "projectile",
    "spring",
    "collision",
    "bouncing ball",
    "fluid flow",
    "pendulum clock",
    "rolling sphere",
    "damped spring",
    "falling droplet",
]

HARD_NEG_TEXT_TOPICS = [
    "meeting",
    "budget",
    "merger",
    "survey",
    "election",
    "debate",
    "lecture",
    "syllabus",
    "novel",
    "negotiation",
]

HARD_NEG_TEMPLATES = [
    "Write a Python script to simulate a {sim}",
    "Write pseudocode that simulates a {sim}",
    "Draw a conclusion from the {txt} results",
    "Draw up a plan for the {txt}",
    "Render a verdict on the {txt}",
    "Sketch the outline of an essay about the {txt}",
    "Generate a summary of the {txt}",
    "Illustrate your argument with an example from the {txt}",
    "Paint a picture in words of the {txt}",
    "Simulate the {txt} as a written dialogue",
]


def gen_router_corpus() -> list[dict]:
    records = []
    for template in GEN_TEMPLATES:
        for obj in GEN_OBJECTS:
            records.append({"text": template.format(obj=obj), "label": "visual_generation"})
    for template in COGNITIVE_TEMPLATES:
        for obj in GEN_OBJECTS[:5]:
            records.append({"text": template.format(obj=obj), "label": "understanding"})
    for template in CAUSAL_TEMPLATES:
        for obj in GEN_OBJECTS[5:]:
            records.append({"text": template.format(obj=obj), "label": "understanding"})
    for question in PLAIN_QUESTIONS:
        records.append({"text": question, "label": "understanding"})
    for text in HARD_NEGATIVES_FIXED:
        records.append({"text": text, "label": "understanding"})
    for template in HARD_NEG_TEMPLATES:
        for i in range(6):
            text = template.format(
                sim=HARD_NEG_SIM_TOPICS[i], txt=HARD_NEG_TEXT_TOPICS[i]
            )
            records.append({"text": text, "label": "understanding"})
    return records


# ---------------------------------------------------------------------------
# eval fixture


def gen_eval_fixture(prototypes: list[dict]) -> list[dict]:
    items = []
    rigid = [p for p in prototypes if p["state"] == "rigid"]
    soft = [p for p in prototypes if p["state"] == "soft"]
    fluid = [p for p in prototypes if p["state"] == "fluid"]

    pred_attrs = ["density", "mass", "youngs_modulus", "mu_static", "restitution"]
    pool = rigid[::7] + soft[::9] + fluid[::11]
    for i in range(20):
        proto = pool[i % len(pool)]
        attr_options = [a for a in pred_attrs if proto["properties"].get(a) is not None]
        attr = attr_options[i % len(attr_options)]
        gold = proto["properties"][attr]
        items.append(
            {
                "item_id": f"pred_{i:03d}",
                "task": "prediction",
                "question_type": "numeric",
                "difficulty": (i % 3) + 1,
                "payload": {
                    "question": f"Estimate the {attr.replace('_', ' ')} of the {proto['label']} in the image.",
                    "image_ref": f"fixture/images/{proto['id']}.png",
                },
                "gold": gold,
                "attribute": attr,
            }
        )

    reasoning_questions = [
        ("Explain why the {a} rebounds higher than the {b} when both are dropped onto concrete.", "rubric:restitution-comparison"),
        ("Using its material properties, explain whether the {a} keeps its shape after being squeezed.", "rubric:elastic-recovery"),
        ("Explain which of the {a} and the {b} is harder to start sliding, and why.", "rubric:friction-onset"),
        ("Explain why pouring the contents of the {a} takes longer than pouring water.", "rubric:viscous-flow"),
    ]
    reasoning_pool = [
        (soft[3], rigid[5]),
        (soft[14], rigid[22]),
        (rigid[31], rigid[44]),
        (fluid[20], fluid[3]),
        (soft[25], rigid[60]),
    ]
    for i in range(20):
        question_template, rubric_ref = reasoning_questions[i % len(reasoning_questions)]
        a, b = reasoning_pool[i % len(reasoning_pool)]
        items.append(
            {
                "item_id": f"reas_{i:03d}",
                "task": "reasoning",
                "question_type": "open_ended",
                "difficulty": (i % 3) + 1,
                "payload": {
                    "question": question_template.format(a=a["label"], b=b["label"]),
                    "image_ref": f"fixture/images/pair_{i:03d}.png",
                },
                "gold": rubric_ref,
                "attribute": None,
            }
        )

    letters = ["A", "B", "C", "D"]
    for i in range(20):
        proto = rigid[(i * 13) % len(rigid)]
        props = proto["properties"]
        gold_letter = letters[i % 4]
        correct = (
            f"Its kinetic friction coefficient ({props['mu_kinetic']}) does not exceed "
            f"its static coefficient ({props['mu_static']})."
        )
        wrong = [
            "Its restitution coefficient is 1.4, so each bounce is higher than the last.",
            "Its density is negative because the object feels light.",
            "Its kinetic friction exceeds static friction, so it is easier to start than to keep sliding.",
        ]
        options = {}
        wrong_iter = iter(wrong)
        for letter in letters:
            options[letter] = correct if letter == gold_letter else next(wrong_iter)
        items.append(
            {
                "item_id": f"und_{i:03d}",
                "task": "understanding",
                "question_type": "mcq",
                "difficulty": (i % 3) + 1,
                "payload": {
                    "question": f"Which statement about the {proto['label']} is physically consistent?",
                    "image_ref": f"fixture/images/{proto['id']}.png",
                    "options": options,
                },
                "gold": gold_letter,
                "attribute": None,
            }
        )
    return items


def write_jsonl(path: Path, records: list[dict]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"wrote {path} ({len(records)} records)")


def main() -> None:
    prototypes = gen_prototypes()
    write_jsonl(DATA / "prototypes.jsonl", prototypes)
    db = physdb.load_prototypes(DATA / "prototypes.jsonl")
    counts = {s.value: db.state_counts[s] for s in physdb.MaterialState}
    print(f"prototype DB verified: {len(db)} entries, {counts}")

    corpus = gen_router_corpus()
    lexicons = router.load_lexicons()
    hard = sum(
        1
        for r in corpus
        if r["label"] == "understanding"
        and router.extract_syntactic(r["text"], lexicons).visual_imperative == 1.0
    )
    write_jsonl(DATA / "router_corpus.jsonl", corpus)
    print(f"router corpus: {len(corpus)} items, {hard} hard negatives")
    assert hard >= 50, "need at least 50 hard negatives in the bundled corpus"

    items = gen_eval_fixture(prototypes)
    write_jsonl(DATA / "eval_fixture.jsonl", items)

    embedder = clients.MockEmbedder(seed=0, dim=clients.DEFAULT_EMBED_DIM)
    dataset = [(r["text"], r["label"]) for r in corpus]
    params, report = router.train_gate(
        dataset, embedder, router.load_lexicons(), router.TrainHyper(seed=0)
    )
    params.save(DATA / "gate_params.json")
    print(
        f"gate params trained: holdout acc {report.holdout_accuracy:.3f}, "
        f"final loss {report.final_loss:.4f}"
    )


if __name__ == "__main__":
    main()
