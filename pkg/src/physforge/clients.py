"""Uniform wire-protocol clients for the external specialists.

One client per role — embedder, detector, cross-modal encoder, reasoner/brain,
physics-perception tool, judge, model-under-test — all speaking JSON over
HTTP with the same retry/backoff discipline, and each with a deterministic
mock.  No other module in the package performs network I/O.

Wire protocol: POST ``{endpoint}/v1/{role}`` with a JSON body carrying
``schema_version`` plus the role's fields.  Endpoints come from
``FORGE_<ROLE>_URL`` environment variables; ``FORGE_MOCK=1`` forces global
mock mode.

Mocks are pure functions of (mock_seed, request): the same request always
yields byte-identical responses, so full pipeline runs in mock mode are
reproducible.  Planted fixture tables can override specific inputs to create
controlled similarity structure for separation tests.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ForgeError

SCHEMA_VERSION = "1"

ROLES = (
    "embedder",
    "detector",
    "cross_modal",
    "reasoner",
    "physics_tool",
    "judge",
    "model",
)

DEFAULT_EMBED_DIM = 64
_BACKOFF_BASE_S = 0.1


class ClientError(ForgeError):
    pass


class TransportError(ClientError):
    """Network-level failure; retryable up to the configured budget."""


class SchemaViolationError(ClientError):
    """Malformed request or response; never retried.  Carries the raw payload."""

    def __init__(self, message: str, raw: Any = None):
        super().__init__(message)
        self.raw = raw


@dataclass(frozen=True)
class ClientConfig:
    endpoint: str = ""
    timeout_s: float = 10.0
    max_retries: int = 2
    max_in_flight: int = 4
    mock_mode: bool = True
    mock_seed: int = 0

    def __post_init__(self) -> None:
        if not self.timeout_s > 0:
            raise ClientError(f"timeout must be positive, got {self.timeout_s}")
        if self.max_retries < 0:
            raise ClientError(f"max_retries must be >= 0, got {self.max_retries}")
        if not self.mock_mode and not self.endpoint:
            raise ClientError("live client requires an endpoint URL")


@dataclass(frozen=True)
class HealthStatus:
    role: str
    healthy: bool
    rtt_s: float
    detail: str
    checked_at: float


def env_config(role: str, mock_seed: int = 0) -> ClientConfig:
    """Config from FORGE_<ROLE>_URL / FORGE_MOCK environment variables."""
    url = os.environ.get(f"FORGE_{role.upper()}_URL", "")
    forced_mock = os.environ.get("FORGE_MOCK", "") == "1"
    return ClientConfig(
        endpoint=url, mock_mode=forced_mock or not url, mock_seed=mock_seed
    )


# ---------------------------------------------------------------------------
# deterministic hashing helpers shared by the mocks


def _digest(seed: int, text: str, block: int = 0) -> bytes:
    return hashlib.sha256(f"{seed}|{block}|{text}".encode("utf-8")).digest()


def hash_sign_vector(seed: int, text: str, dim: int) -> np.ndarray:
    """Unit vector of ±1/sqrt(dim) signs derived from a seeded hash of text.

    Stable across platforms and library versions (pure hashlib).  Distinct
    inputs give near-orthogonal vectors (cosine ~ N(0, 1/dim)).
    """
    bits: list[int] = []
    block = 0
    while len(bits) < dim:
        for byte in _digest(seed, text, block):
            for k in range(8):
                bits.append((byte >> k) & 1)
        block += 1
    signs = np.array(bits[:dim], dtype=np.float64) * 2.0 - 1.0
    return signs / math.sqrt(dim)


def hash_uniform(seed: int, text: str, lo: float, hi: float) -> float:
    """Deterministic uniform draw in [lo, hi) from a seeded hash of text."""
    raw = int.from_bytes(_digest(seed, text)[:8], "big")
    return lo + (hi - lo) * (raw / 2**64)


def hash_int(seed: int, text: str, n: int) -> int:
    return int.from_bytes(_digest(seed, text)[:8], "big") % n


# ---------------------------------------------------------------------------
# wire schemas

_REQUEST_FIELDS = {
    "embedder": ("text",),
    "detector": ("image_id",),
    "cross_modal": (),  # frame_ref or audio_window, checked below
    "reasoner": ("prompt",),
    "physics_tool": ("frame_ref",),
    "judge": ("rubric", "question", "response"),
    "model": ("payload",),
}

_RESPONSE_FIELDS = {
    "embedder": ("vector",),
    "detector": ("detections",),
    "cross_modal": ("vector",),
    "reasoner": ("text",),
    "physics_tool": ("tags",),
    "judge": ("scores",),
    "model": ("answer",),
}


def validate_request(role: str, request: Mapping) -> None:
    if role not in ROLES:
        raise ClientError(f"unknown specialist role {role!r}")
    missing = [f for f in _REQUEST_FIELDS[role] if f not in request]
    if missing:
        raise SchemaViolationError(
            f"{role} request missing fields {missing}", raw=dict(request)
        )
    if role == "cross_modal" and not ("frame_ref" in request or "audio_window" in request):
        raise SchemaViolationError(
            "cross_modal request needs frame_ref or audio_window", raw=dict(request)
        )


def validate_response(role: str, response: Any) -> dict:
    if not isinstance(response, dict):
        raise SchemaViolationError(f"{role} response is not an object", raw=response)
    missing = [f for f in _RESPONSE_FIELDS[role] if f not in response]
    if missing:
        raise SchemaViolationError(
            f"{role} response missing fields {missing}", raw=response
        )
    if role == "judge":
        scores = response["scores"]
        if not isinstance(scores, (list, tuple)) or len(scores) != 6:
            raise SchemaViolationError(
                f"judge response must carry exactly 6 scores, got {scores!r}", raw=response
            )
    return response


# ---------------------------------------------------------------------------
# transport


def requests_transport(url: str, payload: dict, timeout_s: float) -> str:
    """Default live transport.  Raises TransportError on network trouble or 5xx."""
    import requests

    try:
        resp = requests.post(url, json=payload, timeout=timeout_s)
    except requests.RequestException as exc:
        raise TransportError(f"POST {url} failed: {exc}") from exc
    if resp.status_code >= 500:
        raise TransportError(f"POST {url} -> {resp.status_code}")
    if resp.status_code >= 400:
        raise SchemaViolationError(f"POST {url} -> {resp.status_code}", raw=resp.text)
    return resp.text


class SpecialistClient:
    """Role-generic client: schema validation, retry with exponential backoff,
    bounded in-flight calls, and mock dispatch.

    ``transport(url, payload, timeout_s) -> body text`` and ``sleeper`` are
    injectable so the failure paths are testable without sockets.
    """

    role: str = ""

    def __init__(
        self,
        cfg: ClientConfig,
        mock=None,
        transport: Optional[Callable[[str, dict, float], str]] = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.cfg = cfg
        self._mock = mock
        self._transport = transport or requests_transport
        self._sleep = sleeper
        self._gate = threading.BoundedSemaphore(max(1, cfg.max_in_flight))
        self.calls = 0

    def call(self, request: dict) -> dict:
        validate_request(self.role, request)
        self.calls += 1
        payload = {"schema_version": SCHEMA_VERSION, **request}
        if self.cfg.mock_mode:
            if self._mock is None:
                raise ClientError(f"{self.role}: mock mode without a mock implementation")
            return validate_response(self.role, self._mock.respond(request))
        url = f"{self.cfg.endpoint.rstrip('/')}/v1/{self.role}"
        last_error: Optional[TransportError] = None
        for attempt in range(self.cfg.max_retries + 1):
            if attempt:
                self._sleep(_BACKOFF_BASE_S * 2 ** (attempt - 1))
            with self._gate:
                try:
                    body = self._transport(url, payload, self.cfg.timeout_s)
                except TransportError as exc:
                    last_error = exc
                    continue
            try:
                decoded = json.loads(body)
            except json.JSONDecodeError as exc:
                raise SchemaViolationError(
                    f"{self.role}: response body is not JSON: {exc}", raw=body
                ) from exc
            return validate_response(self.role, decoded)
        raise TransportError(
            f"{self.role}: transport failed after {self.cfg.max_retries + 1} attempts: {last_error}"
        )

    def healthcheck(self) -> HealthStatus:
        checked_at = time.time()
        if self.cfg.mock_mode:
            return HealthStatus(self.role, True, 0.0, "mock", checked_at)
        url = f"{self.cfg.endpoint.rstrip('/')}/v1/{self.role}/health"
        start = time.monotonic()
        try:
            self._transport(url, {"schema_version": SCHEMA_VERSION}, self.cfg.timeout_s)
        except TransportError as exc:
            return HealthStatus(self.role, False, time.monotonic() - start, str(exc), checked_at)
        except SchemaViolationError:
            pass  # reachable, just not a health endpoint body we recognize
        return HealthStatus(self.role, True, time.monotonic() - start, "ok", checked_at)


class EmbedderClient(SpecialistClient):
    role = "embedder"

    def embed(self, text: str) -> np.ndarray:
        response = self.call({"text": text})
        return np.asarray(response["vector"], dtype=np.float64)


class DetectorClient(SpecialistClient):
    role = "detector"

    def detect(self, image_id: str) -> list[dict]:
        return self.call({"image_id": image_id})["detections"]


class CrossModalClient(SpecialistClient):
    role = "cross_modal"

    def embed_frame(self, frame_ref: str) -> np.ndarray:
        return np.asarray(self.call({"frame_ref": frame_ref})["vector"], dtype=np.float64)

    def embed_audio_window(self, window_ref: str) -> np.ndarray:
        return np.asarray(
            self.call({"audio_window": window_ref})["vector"], dtype=np.float64
        )


class ReasonerClient(SpecialistClient):
    role = "reasoner"

    def complete(self, prompt: str) -> str:
        return str(self.call({"prompt": prompt})["text"])


class PhysicsToolClient(SpecialistClient):
    role = "physics_tool"

    def tag_frame(self, frame_ref: str) -> list[dict]:
        return self.call({"frame_ref": frame_ref})["tags"]


class JudgeClient(SpecialistClient):
    role = "judge"

    def score(self, rubric: str, question: str, response: str) -> list[float]:
        reply = self.call({"rubric": rubric, "question": question, "response": response})
        return [float(s) for s in reply["scores"]]


class ModelClient(SpecialistClient):
    role = "model"

    def answer(self, payload: dict) -> str:
        return str(self.call({"payload": payload})["answer"])


# ---------------------------------------------------------------------------
# mocks


class MockEmbedder:
    """Hash-sign projection embeddings with optional planted overrides.

    ``plants`` maps exact input text to a vector (list or array); everything
    else gets the seeded hash projection.
    """

    def __init__(self, seed: int = 0, dim: int = DEFAULT_EMBED_DIM, plants: Optional[Mapping[str, Sequence[float]]] = None):
        self.seed = seed
        self.dim = dim
        self.plants = {k: np.asarray(v, dtype=np.float64) for k, v in (plants or {}).items()}

    def vector_for(self, text: str) -> np.ndarray:
        planted = self.plants.get(text)
        if planted is not None:
            return planted
        return hash_sign_vector(self.seed, f"embed:{text}", self.dim)

    # embedder-protocol alias so the mock drops in wherever a client would
    embed = vector_for

    def respond(self, request: Mapping) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "vector": self.vector_for(str(request["text"])).tolist(),
        }


def _direction_from_spec(spec: Mapping, dim: int, seed: int, ref: str) -> np.ndarray:
    """Resolve a planted direction spec to a concrete vector.

    kinds: ``exact`` (verbatim values), ``around`` (unit axis blended with
    hash jitter so two draws around the same axis land near cos = 1-jitter^2).
    """
    kind = spec.get("kind", "around")
    if kind == "exact":
        values = np.zeros(dim)
        provided = np.asarray(spec["values"], dtype=np.float64)
        values[: len(provided)] = provided
        return values
    base = np.zeros(dim)
    for axis, weight in spec.get("weights", [[int(spec.get("axis", 0)), 1.0]]):
        base[int(axis)] = float(weight)
    base /= np.linalg.norm(base)
    jitter = float(spec.get("jitter", 0.0))
    if jitter == 0.0:
        return base
    noise = hash_sign_vector(seed, f"xmodal-noise:{ref}", dim)
    vec = math.sqrt(max(0.0, 1.0 - jitter * jitter)) * base + jitter * noise
    return vec / np.linalg.norm(vec)


class MockCrossModal:
    """Cross-modal encoder mock.

    ``plants`` is a list of rules ``{"match": substring, "frame": SPEC,
    "audio": SPEC}``; the first rule whose ``match`` occurs in the input ref
    wins.  Unplanted inputs fall back to hash projections (near-orthogonal,
    so unplanted clips score ~0).
    """

    def __init__(self, seed: int = 0, dim: int = DEFAULT_EMBED_DIM, plants: Optional[Sequence[Mapping]] = None):
        self.seed = seed
        self.dim = dim
        self.plants = list(plants or [])

    def _vector(self, ref: str, side: str) -> np.ndarray:
        for rule in self.plants:
            if rule["match"] in ref:
                return _direction_from_spec(rule[side], self.dim, self.seed, ref)
        return hash_sign_vector(self.seed, f"xmodal:{side}:{ref}", self.dim)

    def embed_frame(self, frame_ref: str) -> np.ndarray:
        return self._vector(frame_ref, "frame")

    def embed_audio_window(self, window_ref: str) -> np.ndarray:
        return self._vector(window_ref, "audio")

    def respond(self, request: Mapping) -> dict:
        if "frame_ref" in request:
            vec = self._vector(str(request["frame_ref"]), "frame")
        else:
            vec = self._vector(str(request["audio_window"]), "audio")
        return {"schema_version": SCHEMA_VERSION, "vector": vec.tolist()}


class MockDetector:
    """Deterministic detections per image id.

    ``fixture`` maps image ids to fixed detection lists; other ids get 1–3
    hash-generated detections with labels drawn from ``label_pool``.  A slice
    of generated detections is deliberately low-confidence or out of the
    saliency band so screening has something to do.
    """

    def __init__(self, seed: int = 0, label_pool: Sequence[str] = ("object",), fixture: Optional[Mapping[str, list]] = None):
        self.seed = seed
        self.label_pool = list(label_pool)
        self.fixture = dict(fixture or {})

    def detections_for(self, image_id: str) -> list[dict]:
        if image_id in self.fixture:
            return self.fixture[image_id]
        count = 1 + hash_int(self.seed, f"det-n:{image_id}", 3)
        detections = []
        for i in range(count):
            key = f"det:{image_id}:{i}"
            w = hash_uniform(self.seed, key + ":w", 0.30, 0.85)
            h = hash_uniform(self.seed, key + ":h", 0.30, 0.85)
            if hash_int(self.seed, key + ":oversize", 10) == 0:
                w, h = 0.95, 0.95  # deliberately outside the saliency band
            x = hash_uniform(self.seed, key + ":x", 0.0, 1.0 - w)
            y = hash_uniform(self.seed, key + ":y", 0.0, 1.0 - h)
            confidence = hash_uniform(self.seed, key + ":conf", 0.2, 1.0)
            label = self.label_pool[hash_int(self.seed, key + ":label", len(self.label_pool))]
            detections.append(
                {
                    "bbox": {"x": x, "y": y, "w": w, "h": h},
                    "labels": [label],
                    "confidence": confidence,
                }
            )
        return detections

    # detector-protocol alias so the mock drops in wherever a client would
    detect = detections_for

    def respond(self, request: Mapping) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "detections": self.detections_for(str(request["image_id"])),
        }


_STATE_NAMES = ("rigid", "soft", "fluid")


def _mock_analogy_record(seed: int, label: str, invalid_rate: float) -> dict:
    state = _STATE_NAMES[hash_int(seed, f"analogy-state:{label}", 3)]
    props: dict[str, float] = {
        "density": round(hash_uniform(seed, f"analogy-rho:{label}", 100.0, 9000.0), 1),
        "mass": round(hash_uniform(seed, f"analogy-m:{label}", 0.05, 20.0), 3),
    }
    if state in ("rigid", "soft"):
        props["restitution"] = round(hash_uniform(seed, f"analogy-e:{label}", 0.05, 0.95), 2)
        mu_s = round(hash_uniform(seed, f"analogy-mus:{label}", 0.2, 1.1), 2)
        props["mu_static"] = mu_s
        props["mu_kinetic"] = round(mu_s * hash_uniform(seed, f"analogy-muk:{label}", 0.5, 0.99), 2)
    else:
        props["viscosity"] = round(hash_uniform(seed, f"analogy-eta:{label}", 0.0005, 2.0), 4)
        props["surface_tension"] = round(hash_uniform(seed, f"analogy-st:{label}", 0.01, 0.08), 3)
    if invalid_rate > 0 and hash_uniform(seed, f"analogy-bad:{label}", 0.0, 1.0) < invalid_rate:
        props["restitution"] = 1.3  # deliberately out of bounds; verification must catch it
    return {"state": state, "properties": props}


class MockReasoner:
    """Reasoner/brain mock covering the three prompt families.

    Attribute-completion prompts get a fenced JSON analogy record (with an
    optional rate of physics-violating records for quarantine tests); caption
    prompts echo their PHYSICS section; anything else gets a short
    deterministic sentence.  ``canned`` overrides exact prompts.
    """

    def __init__(self, seed: int = 0, invalid_rate: float = 0.0, canned: Optional[Mapping[str, str]] = None):
        self.seed = seed
        self.invalid_rate = invalid_rate
        self.canned = dict(canned or {})

    def reply_to(self, prompt: str) -> str:
        if prompt in self.canned:
            return self.canned[prompt]
        if "Object label:" in prompt and "fenced JSON block" in prompt:
            label = prompt.split("Object label:", 1)[1].splitlines()[0].strip()
            record = _mock_analogy_record(self.seed, label, self.invalid_rate)
            return "By analogy to similar materials:\n```json\n" + json.dumps(record) + "\n```\n"
        if "## PHYSICS" in prompt:
            physics = prompt.split("## PHYSICS", 1)[1]
            tag = _digest(self.seed, prompt)[:4].hex()
            return f"[{tag}] Synthesized caption grounded in the physical evidence:{physics.rstrip()}"
        tag = _digest(self.seed, prompt)[:4].hex()
        return f"[{tag}] {prompt.strip().splitlines()[0][:60]}"

    # reasoner-protocol alias so the mock drops in wherever a client would
    complete = reply_to

    def respond(self, request: Mapping) -> dict:
        return {"schema_version": SCHEMA_VERSION, "text": self.reply_to(str(request["prompt"]))}


class MockPhysicsTool:
    """Per-frame physical tags; planted per clip via substring rules."""

    def __init__(self, seed: int = 0, plants: Optional[Sequence[Mapping]] = None):
        self.seed = seed
        self.plants = list(plants or [])

    def tags_for(self, frame_ref: str) -> list[dict]:
        for rule in self.plants:
            if rule["match"] in frame_ref:
                return [dict(tag) for tag in rule["tags"]]
        density = round(hash_uniform(self.seed, f"phys-rho:{frame_ref}", 200.0, 8000.0), 1)
        return [
            {
                "label": f"object-{hash_int(self.seed, f'phys-label:{frame_ref}', 5)}",
                "state": _STATE_NAMES[hash_int(self.seed, f"phys-state:{frame_ref}", 3)],
                "properties": {"density": density},
                "confidence": round(hash_uniform(self.seed, f"phys-conf:{frame_ref}", 0.5, 1.0), 3),
            }
        ]

    # physics-tool-protocol alias so the mock drops in wherever a client would
    tag_frame = tags_for

    def respond(self, request: Mapping) -> dict:
        return {"schema_version": SCHEMA_VERSION, "tags": self.tags_for(str(request["frame_ref"]))}


class MockJudge:
    """Six-dimension rubric scores: a constant, or hash-derived halves in [0, 5]."""

    def __init__(self, seed: int = 0, constant: Optional[float] = None):
        self.seed = seed
        self.constant = constant

    def scores_for(self, question: str, response: str) -> list[float]:
        if self.constant is not None:
            return [float(self.constant)] * 6
        return [
            hash_int(self.seed, f"judge:{i}:{question}:{response}", 11) * 0.5
            for i in range(6)
        ]

    def score(self, rubric: str, question: str, response: str) -> list[float]:
        return self.scores_for(question, response)

    def respond(self, request: Mapping) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "scores": self.scores_for(str(request["question"]), str(request["response"])),
        }


class MockModel:
    """Model-under-test mock answering from a fixture table.

    ``answers`` maps item ids to answer strings; ids not in the table get a
    deterministic placeholder (guaranteed wrong for numeric golds).
    """

    def __init__(self, seed: int = 0, answers: Optional[Mapping[str, str]] = None):
        self.seed = seed
        self.answers = dict(answers or {})

    def answer(self, payload: Mapping) -> str:
        item_id = str(payload.get("item_id", ""))
        answer = self.answers.get(item_id)
        if answer is None:
            answer = f"indeterminate-{_digest(self.seed, item_id)[:3].hex()}"
        return answer

    def respond(self, request: Mapping) -> dict:
        return {"schema_version": SCHEMA_VERSION, "answer": self.answer(request["payload"])}


_CLIENT_TYPES = {
    "embedder": EmbedderClient,
    "detector": DetectorClient,
    "cross_modal": CrossModalClient,
    "reasoner": ReasonerClient,
    "physics_tool": PhysicsToolClient,
    "judge": JudgeClient,
    "model": ModelClient,
}

_MOCK_TYPES = {
    "embedder": MockEmbedder,
    "detector": MockDetector,
    "cross_modal": MockCrossModal,
    "reasoner": MockReasoner,
    "physics_tool": MockPhysicsTool,
    "judge": MockJudge,
    "model": MockModel,
}


def make_client(role: str, cfg: ClientConfig, mock=None, **kwargs) -> SpecialistClient:
    """Build a typed client for a role; in mock mode a default mock is wired
    from the config seed unless one is passed in."""
    if role not in _CLIENT_TYPES:
        raise ClientError(f"unknown specialist role {role!r}")
    if cfg.mock_mode and mock is None:
        mock = _MOCK_TYPES[role](seed=cfg.mock_seed)
    return _CLIENT_TYPES[role](cfg, mock=mock, **kwargs)


def call(role: str, request: dict, cfg: ClientConfig) -> dict:
    """One-shot role call (spec surface); prefer the typed clients in loops."""
    return make_client(role, cfg).call(request)
