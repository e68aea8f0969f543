"""Deterministic demo corpora.

Everything here is synthesized on demand from a seed: a planted audio-visual
corpus whose matched/mismatched clips separate cleanly under the mock
cross-modal encoder (plus one clip planted exactly at the filter threshold),
and an image inventory whose categories exercise all three retrieval tiers.
"""

from __future__ import annotations

import json
import math
import wave
from pathlib import Path
from typing import Sequence

import numpy as np

from . import clients as clients_mod
from .physdb import PrototypeDB, normalize_label

SAMPLE_RATE = 16000

# cos(a, b) for two independent draws around the same axis is ~1 - jitter^2
_PLANT_JITTER = math.sqrt(0.1)  # matched pairs land near 0.9
_MISMATCH_MIX = [[0, 0.105], [1, 0.994481]]  # audio axis tilted for cos ~0.1
_BOUNDARY_AUDIO = [0.5, math.sqrt(0.75)]  # dot with e0 is exactly 0.5


def write_wav(path: Path, samples: np.ndarray, sample_rate: int = SAMPLE_RATE) -> None:
    clipped = np.clip(samples, -1.0, 1.0)
    pcm = (clipped * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as handle:
        handle.setnchannels(1)
        handle.setsampwidth(2)
        handle.setframerate(sample_rate)
        handle.writeframes(pcm.tobytes())


def synth_audio(
    duration_s: float,
    seed: int,
    impulse_times: Sequence[float] = (),
    sample_rate: int = SAMPLE_RATE,
) -> np.ndarray:
    """Quiet noise floor with exponentially decaying bursts at given times."""
    rng = np.random.default_rng(seed)
    n = int(round(duration_s * sample_rate))
    audio = rng.normal(0.0, 0.005, size=n)
    burst_len = int(0.030 * sample_rate)
    envelope = 0.8 * np.exp(-np.arange(burst_len) / (0.008 * sample_rate))
    for t in impulse_times:
        start = int(round(t * sample_rate))
        stop = min(start + burst_len, n)
        if start < n:
            audio[start:stop] += envelope[: stop - start] * rng.choice([-1.0, 1.0])
    return audio


def make_planted_av_corpus(out_dir: Path | str, seed: int = 0) -> tuple[Path, dict]:
    """Write the 10-clip planted AV fixture.

    Five matched clips score ~0.9 under the mock encoder, four mismatched
    clips ~0.1, and one boundary clip lands at exactly 0.5 so a threshold of
    0.5 must drop it (strict inequality).  Returns the manifest path and the
    ground-truth keep/drop lists.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    audio_dir = out_dir / "audio"
    audio_dir.mkdir(exist_ok=True)

    clips = []
    plants = []
    truth = {"keep": [], "drop": []}

    def add_clip(clip_id: str, duration: float, impulses: Sequence[float], frame_spec, audio_spec, keep: bool):
        wav_path = audio_dir / f"{clip_id}.wav"
        write_wav(wav_path, synth_audio(duration, seed=hash_seed(clip_id), impulse_times=impulses))
        clips.append(
            {
                "clip_id": clip_id,
                "duration": duration,
                "frame_dir": f"frames/{clip_id}",
                "audio_path": f"audio/{clip_id}.wav",
                "sample_rate": SAMPLE_RATE,
            }
        )
        plants.append({"match": clip_id, "frame": frame_spec, "audio": audio_spec})
        truth["keep" if keep else "drop"].append(clip_id)

    def hash_seed(clip_id: str) -> int:
        return seed * 1000003 + sum(ord(c) for c in clip_id)

    around_a = {"kind": "around", "axis": 0, "jitter": _PLANT_JITTER}
    around_b = {"kind": "around", "weights": _MISMATCH_MIX, "jitter": _PLANT_JITTER}
    for i in range(5):
        add_clip(
            f"clip_match_{i:02d}", 3.0 + 0.5 * (i % 3), (0.8, 1.9 + 0.2 * i),
            around_a, around_a, keep=True,
        )
    for i in range(4):
        add_clip(
            f"clip_mismatch_{i:02d}", 3.0 + 0.5 * (i % 2), (1.1, 2.3),
            around_a, around_b, keep=False,
        )
    add_clip(
        "clip_boundary_00", 3.0, (1.5,),
        {"kind": "exact", "values": [1.0]},
        {"kind": "exact", "values": _BOUNDARY_AUDIO},
        keep=False,
    )

    manifest_path = out_dir / "clips.jsonl"
    with manifest_path.open("w", encoding="utf-8") as handle:
        for record in clips:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    (out_dir / "plants.json").write_text(json.dumps(plants, indent=2), encoding="utf-8")
    (out_dir / "truth.json").write_text(json.dumps(truth, indent=2), encoding="utf-8")
    return manifest_path, truth


def make_image_inventory(
    out_dir: Path | str,
    db: PrototypeDB,
    seed: int = 0,
    n_images: int = 50,
    embed_dim: int = clients_mod.DEFAULT_EMBED_DIM,
) -> Path:
    """Write an inventory fixture exercising every retrieval tier.

    Categories cycle through exact prototype labels, planted near-miss labels
    (embedder plants steer them above the similarity floor), unknown labels
    (analogy tier), and a couple of blocklisted ones.  Sidecar files configure
    the mock detector pool and the embedder plants.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    labels = [p.label for p in db.prototypes]
    exact = [labels[(seed + i * 7) % len(labels)] for i in range(12)]
    near_pairs = [
        (f"{labels[(seed + i * 13) % len(labels)]} variant", labels[(seed + i * 13) % len(labels)])
        for i in range(6)
    ]
    unknown = [f"uncatalogued item {chr(ord('a') + i)}" for i in range(6)]
    blocked = ["Person", "face"]

    embedder = clients_mod.MockEmbedder(seed=seed, dim=embed_dim)
    plants = {}
    for near, anchor in near_pairs:
        anchor_vec = embedder.vector_for(normalize_label(anchor))
        noise = clients_mod.hash_sign_vector(seed, f"plant:{near}", embed_dim)
        vec = math.sqrt(0.9) * anchor_vec + math.sqrt(0.1) * noise
        plants[normalize_label(near)] = (vec / np.linalg.norm(vec)).tolist()

    pool = exact + [near for near, _ in near_pairs] + unknown
    categories = exact + [near for near, _ in near_pairs] + unknown + blocked
    records = []
    for i in range(n_images):
        category = categories[i % len(categories)]
        records.append(
            {
                "image_id": f"img_{i:04d}",
                "category": category,
                "weight": 1.0 + (i % 3) * 0.25,
            }
        )

    inventory_path = out_dir / "inventory.jsonl"
    with inventory_path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")
    (out_dir / "detector_labels.json").write_text(json.dumps(pool, indent=2), encoding="utf-8")
    (out_dir / "embedder_plants.json").write_text(json.dumps(plants), encoding="utf-8")
    return inventory_path
