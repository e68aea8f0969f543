"""physforge: physics-grounded data curation, routing, and evaluation.

Three pipelines over one shared attribute space: static-image curation
(filter, sample, detect, retrieve, verify, instruct), audio-visual curation
(consistency filtering then physics-aware caption synthesis), and benchmark
evaluation (relative accuracy, MCQ accuracy, rubric judging).  A lightweight
intent router and the training objectives round out the toolkit.  All
external neural specialists sit behind mockable service clients, so the whole
suite runs deterministically offline.
"""

from .physdb import (
    ATTRIBUTES,
    MaterialState,
    PropertyVector,
    Prototype,
    PrototypeDB,
    applicable_attributes,
    load_bundled,
    load_prototypes,
    nearest,
    normalize_label,
)
from .verification import VerifiedTag, Violation, verify_tag

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTES",
    "MaterialState",
    "PropertyVector",
    "Prototype",
    "PrototypeDB",
    "VerifiedTag",
    "Violation",
    "applicable_attributes",
    "load_bundled",
    "load_prototypes",
    "nearest",
    "normalize_label",
    "verify_tag",
    "__version__",
]
