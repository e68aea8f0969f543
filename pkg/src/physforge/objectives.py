"""Position packing and training objectives as pure, framework-free functions.

Nothing here owns a neural network: the losses operate on caller-provided
model outputs (log-probability tables, velocity evaluations), which keeps
them testable against analytic values and finite differences.

Positions factorize into (temporal, height, width) on a 40 ms temporal
lattice; concurrent video+audio spans interleave as 2-second chunks with the
video chunk first.  Chunk bases advance sequentially so temporal positions
never decrease along the packed sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .errors import ForgeError

TEMPORAL_RESOLUTION_S = 0.040
CHUNK_SECONDS = 2.0
CODEC_VOCAB_SIZE = 4096
CODEC_TOKENS_PER_SECOND = 40


class ObjectiveError(ForgeError):
    pass


class PositionTriple(NamedTuple):
    t: int
    h: int
    w: int


@dataclass(frozen=True)
class Segment:
    """One span of the conditioning sequence.

    text: ``token_count``.  image: ``grid`` (h_patches, w_patches).
    audio/video: ``duration_s`` and ``start_time_s``; video also has ``fps``
    and an optional per-frame patch ``grid``.
    """

    kind: str  # "text" | "image" | "audio" | "video"
    token_count: int = 0
    grid: tuple[int, int] = (1, 1)
    duration_s: float = 0.0
    start_time_s: float = 0.0
    fps: float = 25.0

    def __post_init__(self) -> None:
        if self.kind not in ("text", "image", "audio", "video"):
            raise ObjectiveError(f"unknown segment kind {self.kind!r}")
        if self.kind == "text" and self.token_count <= 0:
            raise ObjectiveError("text segment needs a positive token_count")
        if self.kind == "image" and (self.grid[0] <= 0 or self.grid[1] <= 0):
            raise ObjectiveError("image segment needs a positive patch grid")
        if self.kind in ("audio", "video") and self.duration_s <= 0:
            raise ObjectiveError(f"{self.kind} segment needs a positive duration")
        if self.kind == "video" and self.fps <= 0:
            raise ObjectiveError("video segment needs a positive fps")

    def end_time_s(self) -> float:
        return self.start_time_s + self.duration_s


@dataclass(frozen=True)
class Chunk:
    """Layout entry: which span of which modality a run of positions covers."""

    kind: str
    start_s: float
    end_s: float
    n_positions: int


@dataclass(frozen=True)
class FlowSample:
    """One draw on the linear noise-to-data path."""

    x0: np.ndarray
    x1: np.ndarray
    t: float
    x_t: np.ndarray

    def __post_init__(self) -> None:
        expected = flow_path(self.x0, self.x1, self.t)
        if not np.allclose(self.x_t, expected, rtol=0.0, atol=1e-12):
            raise ObjectiveError("x_t is not the linear interpolant of (x0, x1, t)")

    @classmethod
    def at(cls, x0: np.ndarray, x1: np.ndarray, t: float) -> "FlowSample":
        x0 = np.asarray(x0, dtype=np.float64)
        x1 = np.asarray(x1, dtype=np.float64)
        return cls(x0=x0, x1=x1, t=float(t), x_t=flow_path(x0, x1, float(t)))


@dataclass(frozen=True)
class CodeSequence:
    """Discrete audio codes bounded by the codec vocabulary."""

    codes: tuple[int, ...]

    def __post_init__(self) -> None:
        for code in self.codes:
            if not 0 <= code < CODEC_VOCAB_SIZE:
                raise ObjectiveError(
                    f"audio code {code} outside [0, {CODEC_VOCAB_SIZE})"
                )

    def __len__(self) -> int:
        return len(self.codes)


def _lattice_steps(duration_s: float) -> int:
    return int(round(duration_s / TEMPORAL_RESOLUTION_S))


def _quantize(rel_time_s: float) -> int:
    # floor on the 40 ms lattice; epsilon guards against 12.499999... artifacts
    return int(math.floor(rel_time_s / TEMPORAL_RESOLUTION_S + 1e-9))


def _text_positions(base: int, count: int) -> list[PositionTriple]:
    return [PositionTriple(base + i, base + i, base + i) for i in range(count)]


def _image_positions(base: int, grid: tuple[int, int]) -> list[PositionTriple]:
    rows, cols = grid
    return [
        PositionTriple(base, base + r, base + c)
        for r in range(rows)
        for c in range(cols)
    ]


def _audio_positions(base: int, duration_s: float) -> list[PositionTriple]:
    steps = _lattice_steps(duration_s)
    return [PositionTriple(base + k, base + k, base + k) for k in range(steps)]


def _video_frame_times(seg: Segment, window: tuple[float, float]) -> list[float]:
    # cell-centered frames: frame i sits at start + (i + 0.5) / fps
    n_frames = int(round(seg.duration_s * seg.fps))
    times = [seg.start_time_s + (i + 0.5) / seg.fps for i in range(n_frames)]
    lo, hi = window
    return [ts for ts in times if lo <= ts < hi]


def _video_positions(
    base: int, seg: Segment, window: tuple[float, float]
) -> list[PositionTriple]:
    rows, cols = seg.grid
    positions = []
    for ts in _video_frame_times(seg, window):
        t = base + _quantize(ts - window[0])
        for r in range(rows):
            for c in range(cols):
                positions.append(PositionTriple(t, t + r, t + c))
    return positions


def _pack_av_pair(
    base: int, video: Segment, audio: Segment
) -> tuple[list[PositionTriple], list[Chunk], int]:
    """Interleave one synchronized video+audio span as 2 s chunks, video first.

    Each chunk claims a budget of one position per 40 ms of its window; the
    running base advances chunk by chunk, so emission order stays monotone."""
    positions: list[PositionTriple] = []
    chunks: list[Chunk] = []
    span_start, span_end = video.start_time_s, video.end_time_s()
    window_start = span_start
    while window_start < span_end - 1e-9:
        window_end = min(window_start + CHUNK_SECONDS, span_end)
        budget = _lattice_steps(window_end - window_start)

        frame_positions = _video_positions(base, video, (window_start, window_end))
        positions.extend(frame_positions)
        chunks.append(Chunk("video", window_start, window_end, len(frame_positions)))
        base += budget

        audio_positions = _audio_positions(base, window_end - window_start)
        positions.extend(audio_positions)
        chunks.append(Chunk("audio", window_start, window_end, len(audio_positions)))
        base += budget

        window_start = window_end
    return positions, chunks, base


def pack_positions(
    segments: Sequence[Segment],
) -> tuple[list[PositionTriple], list[Chunk]]:
    """Assign (t, h, w) positions to an ordered segment list.

    Text tokens replicate one increasing scalar across all three components.
    Image patches share one t while (h, w) range over the grid.  Audio
    advances t by one per 40 ms.  A video segment immediately followed by an
    audio segment with identical timing is interleaved as 2-second chunks.
    Offsets continue monotonically across segment boundaries.
    """
    positions: list[PositionTriple] = []
    layout: list[Chunk] = []
    base = 0
    i = 0
    while i < len(segments):
        seg = segments[i]
        nxt = segments[i + 1] if i + 1 < len(segments) else None
        if (
            seg.kind == "video"
            and nxt is not None
            and nxt.kind == "audio"
            and abs(nxt.start_time_s - seg.start_time_s) < 1e-9
            and abs(nxt.duration_s - seg.duration_s) < 1e-9
        ):
            pair_positions, chunks, base = _pack_av_pair(base, seg, nxt)
            positions.extend(pair_positions)
            layout.extend(chunks)
            i += 2
            continue
        if seg.kind in ("video", "audio") and nxt is not None and nxt.kind in ("video", "audio"):
            overlap = min(seg.end_time_s(), nxt.end_time_s()) - max(
                seg.start_time_s, nxt.start_time_s
            )
            if overlap > 1e-9:
                raise ObjectiveError(
                    "overlapping AV segments without chunkable timing "
                    f"({seg.kind} {seg.start_time_s}-{seg.end_time_s()} vs "
                    f"{nxt.kind} {nxt.start_time_s}-{nxt.end_time_s()})"
                )
        if seg.kind == "text":
            emitted = _text_positions(base, seg.token_count)
            layout.append(Chunk("text", 0.0, 0.0, len(emitted)))
            base += seg.token_count
        elif seg.kind == "image":
            emitted = _image_positions(base, seg.grid)
            layout.append(Chunk("image", 0.0, 0.0, len(emitted)))
            base += max(seg.grid)
        elif seg.kind == "audio":
            emitted = _audio_positions(base, seg.duration_s)
            layout.append(Chunk("audio", seg.start_time_s, seg.end_time_s(), len(emitted)))
            base += _lattice_steps(seg.duration_s)
        else:  # video alone
            emitted = _video_positions(base, seg, (seg.start_time_s, seg.end_time_s()))
            layout.append(Chunk("video", seg.start_time_s, seg.end_time_s(), len(emitted)))
            base += _lattice_steps(seg.duration_s)
        positions.extend(emitted)
        i += 1
    return positions, layout


# ---------------------------------------------------------------------------
# losses


def _check_log_probs(log_probs: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2:
        raise ObjectiveError(f"log_probs must be [positions, vocab], got shape {log_probs.shape}")
    # normalization check: logsumexp of every row must be ~0
    row_max = log_probs.max(axis=1, keepdims=True)
    lse = row_max[:, 0] + np.log(np.exp(log_probs - row_max).sum(axis=1))
    worst = float(np.abs(lse).max())
    if worst > tol:
        raise ObjectiveError(f"log_probs not normalized: max |logsumexp| = {worst:.3e}")
    return log_probs


def lm_loss(
    log_probs: np.ndarray,
    targets: Sequence[int],
    mask: Optional[Sequence[bool]] = None,
) -> float:
    """Mean negative log-likelihood of the targets over unmasked positions.

    ``log_probs`` is [positions, vocab] and must be normalized within 1e-6.
    Zero iff every unmasked target has probability one.
    """
    log_probs = _check_log_probs(log_probs)
    targets = np.asarray(targets, dtype=np.int64)
    n, vocab = log_probs.shape
    if targets.shape != (n,):
        raise ObjectiveError(f"targets shape {targets.shape} != ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ObjectiveError("target token id outside the vocabulary")
    mask_arr = np.ones(n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask_arr.shape != (n,):
        raise ObjectiveError(f"mask shape {mask_arr.shape} != ({n},)")
    if not mask_arr.any():
        raise ObjectiveError("mask selects no positions")
    picked = log_probs[np.arange(n), targets][mask_arr]
    return float(-picked.mean())


def audio_gen_loss(
    log_probs: np.ndarray,
    codes: Union[Sequence[int], CodeSequence],
    mask: Optional[Sequence[bool]] = None,
) -> float:
    """lm_loss specialized to the single-codebook codec vocabulary (4096).

    Conditioning enters only through the provided log-probs."""
    log_probs = np.asarray(log_probs, dtype=np.float64)
    if log_probs.ndim != 2 or log_probs.shape[1] != CODEC_VOCAB_SIZE:
        raise ObjectiveError(
            f"audio code distributions must be [T, {CODEC_VOCAB_SIZE}], got {log_probs.shape}"
        )
    if isinstance(codes, CodeSequence):
        codes = codes.codes
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() >= CODEC_VOCAB_SIZE):
        raise ObjectiveError(
            f"audio code outside [0, {CODEC_VOCAB_SIZE}): {int(codes.min())}..{int(codes.max())}"
        )
    return lm_loss(log_probs, codes, mask)


def codec_token_count(duration_s: float) -> int:
    """Discrete audio codes for a span: the codec runs at 40 tokens/s."""
    if duration_s <= 0:
        raise ObjectiveError(f"duration must be positive, got {duration_s}")
    return int(round(duration_s * CODEC_TOKENS_PER_SECOND))


def flow_path(x0: np.ndarray, x1: np.ndarray, t: float) -> np.ndarray:
    """Linear interpolant x_t = (1-t) x0 + t x1; exact at both endpoints."""
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ObjectiveError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    if not 0.0 <= t <= 1.0:
        raise ObjectiveError(f"t must be in [0, 1], got {t}")
    if t == 0.0:
        return x0.copy()
    if t == 1.0:
        return x1.copy()
    return (1.0 - t) * x0 + t * x1


def flow_matching_loss(
    v_pred: Union[np.ndarray, Callable[[np.ndarray, float], np.ndarray]],
    x0: np.ndarray,
    x1: np.ndarray,
    t: Optional[Sequence[float]] = None,
) -> float:
    """Conditional flow-matching objective: mean ||v - (x1 - x0)||^2.

    ``v_pred`` is either an array of velocity evaluations aligned with the
    sample rows, or a callable ``v(x_t, t)`` evaluated here at the provided
    sample times.  Zero iff the prediction equals x1 - x0 on every sample.
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    x1 = np.atleast_2d(np.asarray(x1, dtype=np.float64))
    if x0.shape != x1.shape:
        raise ObjectiveError(f"shape mismatch: {x0.shape} vs {x1.shape}")
    if x0.shape[0] == 0:
        raise ObjectiveError("empty sample set")
    if callable(v_pred):
        if t is None:
            raise ObjectiveError("callable v_pred requires sample times t")
        values = np.stack(
            [
                np.asarray(v_pred(flow_path(x0[i], x1[i], float(ti)), float(ti)), dtype=np.float64)
                for i, ti in enumerate(t)
            ]
        )
    else:
        values = np.atleast_2d(np.asarray(v_pred, dtype=np.float64))
    if values.shape != x0.shape:
        raise ObjectiveError(f"v_pred shape {values.shape} != samples shape {x0.shape}")
    residual = values - (x1 - x0)
    return float((residual**2).sum(axis=1).mean())


def finite_diff_grad(
    f: Callable[[np.ndarray], float], point: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Central-difference gradient estimate, one coordinate at a time."""
    if not 1e-8 <= eps <= 1e-3:
        raise ObjectiveError(f"eps must be in [1e-8, 1e-3], got {eps}")
    point = np.asarray(point, dtype=np.float64)
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += eps
        f_plus = f(bumped.reshape(point.shape))
        bumped[i] -= 2 * eps
        f_minus = f(bumped.reshape(point.shape))
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise ObjectiveError(f"non-finite functional value near coordinate {i}")
        grad_flat[i] = (f_plus - f_minus) / (2 * eps)
    return grad
