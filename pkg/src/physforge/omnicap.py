"""Audio-visual curation: consistency filtering, evidence aggregation, and
physics-aware caption synthesis.

Stage 1 scores each clip by embedding keyframes and nearby audio windows with
the cross-modal encoder and averaging each keyframe's best cosine match; only
clips scoring strictly above the threshold survive.  Stage 2 gathers context,
action, and acoustic descriptions plus per-frame physical tags at adaptive
timestamps, then prompts the brain model for a causal caption.

Frames are opaque references (no pixels are decoded here); audio is a mono
waveform loaded from WAV or .npy.
"""

from __future__ import annotations

import json
import logging
import math
import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ForgeError
from .physdb import normalize_label

log = logging.getLogger(__name__)

# Short-time energy frontend: 25 ms windows with a 10 ms stride, matching the
# audio feature frontend; detector threshold and suppression are defaults.
ENERGY_WINDOW_S = 0.025
ENERGY_HOP_S = 0.010
DEFAULT_K_SIGMA = 2.0
SUPPRESSION_S = 0.100

DEFAULT_BASE_FPS = 1.0
DEFAULT_NEIGHBORHOOD_S = 1.0
DEFAULT_AUDIO_WINDOW_S = 2.0
DEFAULT_AUDIO_STRIDE_S = 0.5
DEFAULT_TAU = 0.3  # loose by design: prefer keeping borderline clips
DENSIFY_HALF_WIDTH_S = 0.5

_DEDUP_S = 0.001


class OmniCapError(ForgeError):
    pass


@dataclass(frozen=True)
class AudioSource:
    """Reference to a mono waveform on disk (16-bit WAV or float .npy)."""

    path: str
    sample_rate: int

    def load(self) -> np.ndarray:
        path = Path(self.path)
        if path.suffix == ".npy":
            data = np.load(path)
            return np.asarray(data, dtype=np.float64).reshape(-1)
        if path.suffix == ".wav":
            with wave.open(str(path), "rb") as handle:
                if handle.getsampwidth() != 2:
                    raise OmniCapError(f"{path}: only 16-bit PCM WAV is supported")
                frames = handle.readframes(handle.getnframes())
                channels = handle.getnchannels()
            samples = np.frombuffer(frames, dtype="<i2").astype(np.float64) / 32768.0
            if channels > 1:
                samples = samples.reshape(-1, channels).mean(axis=1)
            return samples
        raise OmniCapError(f"{path}: unsupported audio format {path.suffix!r}")


@dataclass(frozen=True)
class ClipRecord:
    """One AV clip: duration, a frame-reference directory, and its audio."""

    clip_id: str
    duration_s: float
    frame_dir: str
    audio: AudioSource

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise OmniCapError(f"clip {self.clip_id}: duration must be positive")

    def frame_ref(self, t: float) -> str:
        """Opaque frame handle for timestamp t (millisecond-keyed)."""
        if not -1e-9 <= t <= self.duration_s + 1e-9:
            raise OmniCapError(f"clip {self.clip_id}: timestamp {t} outside [0, {self.duration_s}]")
        return f"{self.frame_dir}/t{int(round(t * 1000)):07d}"

    def audio_window_ref(self, start_s: float, end_s: float) -> str:
        return f"{self.clip_id}#aud@{start_s:.3f}-{end_s:.3f}"


@dataclass(frozen=True)
class TransientEvent:
    time_s: float
    energy_zscore: float


def detect_transients(
    audio: np.ndarray,
    sample_rate: int,
    window_s: float = ENERGY_WINDOW_S,
    hop_s: float = ENERGY_HOP_S,
    k_sigma: float = DEFAULT_K_SIGMA,
    suppression_s: float = SUPPRESSION_S,
) -> list[TransientEvent]:
    """Short-time-energy burst detector.

    Events are local energy maxima exceeding mean + k_sigma * std of the
    frame energies, with close-by maxima suppressed (strongest wins within
    the suppression radius).  Digital silence has zero deviation and yields
    no events.
    """
    if not window_s > hop_s > 0:
        raise OmniCapError(f"need window > hop > 0, got {window_s}, {hop_s}")
    audio = np.asarray(audio, dtype=np.float64).reshape(-1)
    win = int(round(window_s * sample_rate))
    hop = int(round(hop_s * sample_rate))
    if audio.size < win:
        raise OmniCapError(f"audio shorter than one window ({audio.size} < {win} samples)")
    n_frames = 1 + (audio.size - win) // hop
    energies = np.array(
        [float(np.mean(audio[i * hop : i * hop + win] ** 2)) for i in range(n_frames)]
    )
    mean = float(energies.mean())
    std = float(energies.std())
    if std == 0.0:
        return []
    threshold = mean + k_sigma * std

    candidates = []
    for i in range(n_frames):
        left = energies[i - 1] if i > 0 else -math.inf
        right = energies[i + 1] if i + 1 < n_frames else -math.inf
        if energies[i] > threshold and energies[i] > left and energies[i] >= right:
            time_s = (i * hop + win / 2) / sample_rate
            candidates.append(TransientEvent(time_s, (energies[i] - mean) / std))

    kept: list[TransientEvent] = []
    for event in sorted(candidates, key=lambda e: -e.energy_zscore):
        if all(abs(event.time_s - other.time_s) > suppression_s for other in kept):
            kept.append(event)
    kept.sort(key=lambda e: e.time_s)
    return kept


def _dedup_sorted(times: list[float]) -> list[float]:
    out: list[float] = []
    for t in sorted(times):
        if not out or t - out[-1] > _DEDUP_S:
            out.append(t)
    return out


def _centered_grid(duration_s: float, rate: float) -> list[float]:
    # cell-centered stamps: (i + 0.5) / rate, avoiding frame-0/duration edge reads
    count = int(math.floor(duration_s * rate + 1e-9))
    return [(i + 0.5) / rate for i in range(count)]


def sample_keyframes(
    clip: ClipRecord,
    base_fps: float = DEFAULT_BASE_FPS,
    transients: Sequence[TransientEvent] = (),
) -> list[float]:
    """Uniform keyframe grid plus one timestamp per audio transient.

    Sorted, deduplicated within 1 ms, clamped to the clip span."""
    if not base_fps > 0:
        raise OmniCapError(f"base_fps must be positive, got {base_fps}")
    times = _centered_grid(clip.duration_s, base_fps)
    times.extend(min(max(e.time_s, 0.0), clip.duration_s) for e in transients)
    return _dedup_sorted(times)


def adaptive_timestamps(
    duration_s: float,
    rate: float,
    transients: Sequence[TransientEvent] = (),
) -> list[float]:
    """Base sampling grid densified to 2x rate within ±0.5 s of transients."""
    if not rate > 0:
        raise OmniCapError(f"rate must be positive, got {rate}")
    stamps = _centered_grid(duration_s, rate)
    dense = _centered_grid(duration_s, 2.0 * rate)
    for t in dense:
        if any(abs(t - e.time_s) <= DENSIFY_HALF_WIDTH_S for e in transients):
            stamps.append(t)
    return _dedup_sorted(stamps)


def audio_windows(
    duration_s: float,
    window_s: float = DEFAULT_AUDIO_WINDOW_S,
    stride_s: float = DEFAULT_AUDIO_STRIDE_S,
) -> list[tuple[float, float]]:
    """Sliding encoding windows; a short clip yields one full-span window."""
    if duration_s <= window_s:
        return [(0.0, duration_s)]
    spans = []
    start = 0.0
    while start + window_s <= duration_s + 1e-9:
        spans.append((start, min(start + window_s, duration_s)))
        start += stride_s
    return spans


@dataclass(frozen=True)
class ConsistencyScore:
    """Per-keyframe best cosine matches and their mean."""

    per_keyframe: tuple[tuple[float, float], ...]  # (timestamp, max cosine)
    segment_score: float
    skipped_keyframes: int = 0

    def to_json(self) -> dict:
        return {
            "segment_score": self.segment_score,
            "skipped_keyframes": self.skipped_keyframes,
            "per_keyframe": [[t, s] for t, s in self.per_keyframe],
        }


def av_consistency_score(
    clip: ClipRecord,
    keyframes: Sequence[float],
    encoder,
    neighborhood_s: float = DEFAULT_NEIGHBORHOOD_S,
    window_s: float = DEFAULT_AUDIO_WINDOW_S,
    stride_s: float = DEFAULT_AUDIO_STRIDE_S,
) -> ConsistencyScore:
    """Segment-level audio-visual consistency.

    Each keyframe is scored by the maximum cosine between its frame embedding
    and the embeddings of audio windows whose centers fall within the
    temporal neighborhood; the segment score is the mean over scored
    keyframes.  Keyframes with no eligible window are skipped with a warning
    and excluded from the mean.  Embeddings are unit-norm by contract, so
    cosine is the dot product.
    """
    if not keyframes:
        raise OmniCapError(f"clip {clip.clip_id}: no keyframes to score")
    spans = audio_windows(clip.duration_s, window_s, stride_s)
    audio_vecs = [
        encoder.embed_audio_window(clip.audio_window_ref(lo, hi)) for lo, hi in spans
    ]
    centers = [(lo + hi) / 2.0 for lo, hi in spans]

    scored: list[tuple[float, float]] = []
    skipped = 0
    for t in keyframes:
        eligible = [
            vec for center, vec in zip(centers, audio_vecs)
            if abs(center - t) <= neighborhood_s
        ]
        if not eligible:
            skipped += 1
            log.warning(
                "clip %s: keyframe %.3fs has no audio window within ±%.1fs; skipped",
                clip.clip_id, t, neighborhood_s,
            )
            continue
        frame_vec = encoder.embed_frame(clip.frame_ref(t))
        scored.append((t, max(float(np.dot(frame_vec, vec)) for vec in eligible)))
    if not scored:
        raise OmniCapError(f"clip {clip.clip_id}: every keyframe lacked audio context")
    segment = float(sum(s for _, s in scored) / len(scored))
    return ConsistencyScore(tuple(scored), segment, skipped)


def filter_corpus(
    scored_clips: Sequence[tuple[ClipRecord, ConsistencyScore]], tau: float
) -> list[tuple[ClipRecord, ConsistencyScore]]:
    """Keep exactly the clips scoring strictly above tau."""
    if not -1.0 <= tau < 1.0:
        raise OmniCapError(f"tau must be in [-1, 1), got {tau}")
    return [(clip, score) for clip, score in scored_clips if score.segment_score > tau]


# ---------------------------------------------------------------------------
# evidence aggregation and caption synthesis


@dataclass(frozen=True)
class AttributeSummary:
    value: float
    support: int  # frames agreeing on this value


@dataclass(frozen=True)
class ObjectSummary:
    """Majority view of one tagged object across frames."""

    label: str
    state: str
    frames_seen: int
    attributes: tuple[tuple[str, AttributeSummary], ...]

    def describe(self) -> str:
        parts = ", ".join(
            f"{name}={summary.value:g} (support {summary.support})"
            for name, summary in self.attributes
        )
        return f"{self.label} [{self.state}, seen in {self.frames_seen} frames]: {parts}"


def aggregate_physics(
    frame_tags: Mapping[float, Sequence[Mapping]],
) -> list[ObjectSummary]:
    """Aggregate per-frame physical tags into per-object majority summaries.

    Object identity is the normalized label.  Within a group, each
    attribute's majority value wins with its frame support count; ties are
    resolved by the highest summed per-tag confidence (confidence defaults to
    1.0 when the tool omits it).  Empty tag lists aggregate to an empty
    result; zero processed timestamps is an error.
    """
    if not frame_tags:
        raise OmniCapError("no timestamps processed")
    groups: dict[str, dict] = {}
    for _, tags in sorted(frame_tags.items()):
        seen_this_frame: set[str] = set()
        for tag in tags:
            key = normalize_label(str(tag["label"]))
            group = groups.setdefault(
                key,
                {"label": str(tag["label"]), "frames": 0, "states": {}, "attrs": {}},
            )
            confidence = float(tag.get("confidence", 1.0))
            if key not in seen_this_frame:  # double tags in one frame count once
                group["frames"] += 1
                seen_this_frame.add(key)
            state = str(tag["state"])
            count, conf = group["states"].get(state, (0, 0.0))
            group["states"][state] = (count + 1, conf + confidence)
            for name, value in (tag.get("properties") or {}).items():
                if value is None:
                    continue
                slots = group["attrs"].setdefault(name, {})
                count, conf = slots.get(float(value), (0, 0.0))
                slots[float(value)] = (count + 1, conf + confidence)

    def winner(candidates: dict) -> tuple:
        # majority first, then summed confidence, then value for stability
        return max(candidates.items(), key=lambda kv: (kv[1][0], kv[1][1], kv[0]))

    summaries = []
    for key in sorted(groups):
        group = groups[key]
        state, _ = winner(group["states"])
        attrs = tuple(
            (name, AttributeSummary(value=value, support=slots_won[0]))
            for name in sorted(group["attrs"])
            for value, slots_won in [winner(group["attrs"][name])]
        )
        summaries.append(
            ObjectSummary(
                label=group["label"],
                state=state,
                frames_seen=group["frames"],
                attributes=attrs,
            )
        )
    return summaries


NO_ACOUSTIC_EVIDENCE = "(no acoustic evidence)"
_PLACEHOLDERS = {
    "i_ctx": "(no scene context)",
    "i_act": "(no action evidence)",
    "i_aud": NO_ACOUSTIC_EVIDENCE,
}


@dataclass(frozen=True)
class EvidenceBundle:
    """The four evidence channels feeding caption synthesis."""

    i_ctx: Optional[str]
    i_act: Optional[str]
    i_aud: Optional[str]
    physics: tuple[ObjectSummary, ...]

    def missing_channels(self) -> list[str]:
        return [name for name in ("i_ctx", "i_act", "i_aud") if getattr(self, name) is None]


CAUSAL_INSTRUCTION = (
    "Write one caption that chains cause to effect: link what the objects are "
    "made of to how they move and how they sound, in that order."
)


def compose_prompt(evidence: EvidenceBundle) -> str:
    """Deterministic four-section synthesis prompt (CONTEXT, ACTIONS,
    ACOUSTICS, PHYSICS) followed by the causal-chain instruction."""
    physics_lines = (
        "\n".join(f"- {obj.describe()}" for obj in evidence.physics)
        if evidence.physics
        else "(no physical tags)"
    )
    sections = [
        ("## CONTEXT", evidence.i_ctx or _PLACEHOLDERS["i_ctx"]),
        ("## ACTIONS", evidence.i_act or _PLACEHOLDERS["i_act"]),
        ("## ACOUSTICS", evidence.i_aud or _PLACEHOLDERS["i_aud"]),
        ("## PHYSICS", physics_lines),
    ]
    body = "\n\n".join(f"{header}\n{text}" for header, text in sections)
    return f"{body}\n\n{CAUSAL_INSTRUCTION}\n"


@dataclass(frozen=True)
class CaptionRecord:
    clip_id: str
    caption: str
    evidence: EvidenceBundle
    score: ConsistencyScore
    timestamps: tuple[float, ...]

    def __post_init__(self) -> None:
        if not self.caption.strip():
            raise OmniCapError(f"clip {self.clip_id}: caption must be non-empty")

    def to_json(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "caption": self.caption,
            "evidence": {
                "i_ctx": self.evidence.i_ctx,
                "i_act": self.evidence.i_act,
                "i_aud": self.evidence.i_aud,
                "physics": [
                    {
                        "label": obj.label,
                        "state": obj.state,
                        "frames_seen": obj.frames_seen,
                        "attributes": {
                            name: {"value": s.value, "support": s.support}
                            for name, s in obj.attributes
                        },
                    }
                    for obj in self.evidence.physics
                ],
            },
            "score": self.score.to_json(),
            "timestamps": list(self.timestamps),
        }


def synthesize_caption(prompt: str, brain) -> str:
    """Ask the brain model for the caption; the reply is stored verbatim."""
    caption = brain.complete(prompt)
    if not caption.strip():
        raise OmniCapError("brain returned an empty caption")
    return caption


def gather_evidence(
    clip: ClipRecord,
    timestamps: Sequence[float],
    reasoner,
    physics_tool,
) -> EvidenceBundle:
    """Collect the four evidence channels for one kept clip."""
    frame_list = ", ".join(clip.frame_ref(t) for t in timestamps[:8])
    i_ctx = reasoner.complete(
        f"Describe the scene context of clip {clip.clip_id} given frames: {frame_list}."
    )
    i_act = reasoner.complete(
        f"Describe the actions in clip {clip.clip_id} given frames: {frame_list}."
    )
    i_aud = reasoner.complete(
        f"Describe acoustic cues (material, structure, transients) audible in clip {clip.clip_id}."
    )
    frame_tags = {t: physics_tool.tag_frame(clip.frame_ref(t)) for t in timestamps}
    physics = aggregate_physics(frame_tags) if frame_tags else []
    return EvidenceBundle(i_ctx=i_ctx, i_act=i_act, i_aud=i_aud, physics=tuple(physics))


def load_clip_manifest(path: Path | str) -> list[ClipRecord]:
    """Read a clip manifest JSONL
    (`clip_id, duration, frame_dir, audio_path, sample_rate`)."""
    clips = []
    base = Path(path).parent
    with Path(path).open("r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
                audio_path = Path(raw["audio_path"])
                if not audio_path.is_absolute():
                    audio_path = base / audio_path
                clips.append(
                    ClipRecord(
                        clip_id=str(raw["clip_id"]),
                        duration_s=float(raw["duration"]),
                        frame_dir=str(raw["frame_dir"]),
                        audio=AudioSource(str(audio_path), int(raw["sample_rate"])),
                    )
                )
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                raise OmniCapError(f"{path}:{lineno}: bad clip record: {exc}") from exc
    return clips
