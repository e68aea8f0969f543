"""Pipeline orchestration: the image-curation and AV-curation runs, with
journaled resumability and deterministic outputs.

Each unit of work (one image, one clip) appends a full result record to an
append-only journal; output files are regenerated from the journal when the
run finishes.  Re-running with an existing journal skips completed units and
never duplicates output records, and two runs with identical seed and config
produce byte-identical output files (timing lives only in the manifest).
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import clients as clients_mod
from . import curation, instructgen, omnicap, physdb, retrieval, verification
from .config import PipelineConfig
from .errors import ForgeError

SCHEMA_VERSION = "1"


class PipelineError(ForgeError):
    pass


@dataclass
class RunManifest:
    run_id: str
    pipeline: str
    config_hash: str
    inputs: dict
    outputs: dict
    counts: dict
    started_at: float
    finished_at: float = 0.0
    config: dict = field(default_factory=dict)  # effective config echo

    def to_json(self) -> dict:
        return {
            "run_id": self.run_id,
            "pipeline": self.pipeline,
            "config_hash": self.config_hash,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "counts": self.counts,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "duration_s": max(0.0, self.finished_at - self.started_at),
        }

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _file_sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _run_id(pipeline: str, config_hash: str, input_hash: str) -> str:
    # deterministic: identical (pipeline, config, input bytes) -> identical id
    raw = f"{pipeline}|{config_hash}|{input_hash}".encode("utf-8")
    return hashlib.sha256(raw).hexdigest()[:12]


class Journal:
    """Append-only JSONL of completed work units, tolerant of a torn tail."""

    def __init__(self, path: Path):
        self.path = path
        self.records: dict[str, dict] = {}
        if path.exists():
            for line in path.read_text(encoding="utf-8").splitlines():
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError:
                    continue  # torn tail from an interrupted run; unit reruns
                self.records.setdefault(record["key"], record)
        self._handle = path.open("a", encoding="utf-8")

    def done(self, key: str) -> bool:
        return key in self.records

    def add(self, key: str, payload: dict) -> None:
        record = {"key": key, **payload}
        self.records[key] = record
        self._handle.write(json.dumps(record, sort_keys=True) + "\n")
        self._handle.flush()

    def close(self) -> None:
        self._handle.close()


def _write_jsonl(path: Path, records: Sequence[dict]) -> None:
    with path.open("w", encoding="utf-8") as handle:
        for record in records:
            handle.write(json.dumps(record, sort_keys=True) + "\n")


def run_units(journal: Journal, units: Sequence, unit_fn: Callable, workers: int) -> None:
    """Execute work units and journal each result.

    Units already in the journal are skipped.  With workers > 1 the units run
    on a thread pool; the journal stays single-writer (appended here as
    futures complete), and output regeneration later imposes the
    deterministic order, so results are identical at any worker count.
    """
    pending = [u for u in units if not journal.done(unit_fn.key(u))]
    if not pending:
        return
    if workers <= 1:
        for unit in pending:
            journal.add(unit_fn.key(unit), unit_fn(unit))
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for key, payload in pool.map(lambda u: (unit_fn.key(u), unit_fn(u)), pending):
            journal.add(key, payload)


class UnitFn:
    """A work-unit function paired with its stable journal key."""

    def __init__(self, fn: Callable, key: Callable):
        self._fn = fn
        self.key = key

    def __call__(self, unit):
        return self._fn(unit)


# ---------------------------------------------------------------------------
# client construction


def _endpoint_map(cfg: PipelineConfig) -> dict[str, str]:
    return dict(cfg.clients.endpoints)


def _client_cfg(cfg: PipelineConfig, role: str) -> clients_mod.ClientConfig:
    endpoints = _endpoint_map(cfg)
    return clients_mod.ClientConfig(
        endpoint=endpoints.get(role, ""),
        timeout_s=cfg.clients.timeout_s,
        max_retries=cfg.clients.max_retries,
        max_in_flight=cfg.clients.max_in_flight,
        mock_mode=cfg.clients.mock or role not in endpoints,
        mock_seed=cfg.clients.mock_seed,
    )


def _load_sidecar(path: Path, name: str):
    sidecar = path.parent / name
    if sidecar.exists():
        return json.loads(sidecar.read_text(encoding="utf-8"))
    return None


def build_image_clients(cfg: PipelineConfig, inventory_path: Path, db: physdb.PrototypeDB):
    """Detector, embedder, reasoner for the image pipeline.

    In mock mode the detector's label pool comes from a ``detector_labels.json``
    sidecar next to the inventory when present, else from the DB labels, and
    an ``embedder_plants.json`` sidecar can plant near-miss embeddings.
    """
    seed = cfg.clients.mock_seed
    pool = _load_sidecar(inventory_path, "detector_labels.json")
    if pool is None:
        pool = [p.label for p in db.prototypes]
    plants_raw = _load_sidecar(inventory_path, "embedder_plants.json") or {}
    embedder_mock = clients_mod.MockEmbedder(
        seed=seed, dim=cfg.clients.embed_dim, plants=plants_raw
    )
    detector = clients_mod.make_client(
        "detector", _client_cfg(cfg, "detector"),
        mock=clients_mod.MockDetector(seed=seed, label_pool=pool),
    )
    embedder = clients_mod.make_client("embedder", _client_cfg(cfg, "embedder"), mock=embedder_mock)
    reasoner = clients_mod.make_client(
        "reasoner", _client_cfg(cfg, "reasoner"),
        mock=clients_mod.MockReasoner(seed=seed, invalid_rate=cfg.clients.analogy_invalid_rate),
    )
    return detector, embedder, reasoner


def build_av_clients(cfg: PipelineConfig, manifest_path: Path):
    """Cross-modal encoder, reasoner, physics tool for the AV pipeline.

    ``plants.json`` / ``phys_plants.json`` sidecars next to the clip manifest
    configure the planted mock responses.
    """
    seed = cfg.clients.mock_seed
    xmodal_plants = _load_sidecar(manifest_path, "plants.json")
    phys_plants = _load_sidecar(manifest_path, "phys_plants.json")
    encoder = clients_mod.make_client(
        "cross_modal", _client_cfg(cfg, "cross_modal"),
        mock=clients_mod.MockCrossModal(seed=seed, dim=cfg.clients.embed_dim, plants=xmodal_plants),
    )
    brain = clients_mod.make_client(
        "reasoner", _client_cfg(cfg, "reasoner"), mock=clients_mod.MockReasoner(seed=seed)
    )
    phys = clients_mod.make_client(
        "physics_tool", _client_cfg(cfg, "physics_tool"),
        mock=clients_mod.MockPhysicsTool(seed=seed, plants=phys_plants),
    )
    return encoder, brain, phys


# ---------------------------------------------------------------------------
# image curation (stages: filter -> sample -> detect -> retrieve -> verify -> instruct)


def curate_images(
    cfg: PipelineConfig, inventory_path: Path | str, out_dir: Path | str
) -> RunManifest:
    inventory_path = Path(inventory_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    inventory = curation.load_inventory(inventory_path)
    if not inventory:
        raise PipelineError(f"{inventory_path}: empty inventory")

    db = physdb.load_bundled(cfg.prototypes_path or None)
    detector, embedder, reasoner = build_image_clients(cfg, inventory_path, db)
    db_indexed = physdb.index_embeddings(db, embedder.embed)
    retrieval_cfg = retrieval.RetrievalConfig(k=cfg.retrieval.k, sim_floor=cfg.retrieval.sim_floor)

    blocklist = frozenset(
        set(curation.DEFAULT_BLOCKLIST)
        | {physdb.normalize_label(b) for b in cfg.curation.blocklist_extra}
    )
    ancestors = None
    if cfg.curation.ancestors_path:
        ancestors = json.loads(Path(cfg.curation.ancestors_path).read_text(encoding="utf-8"))

    config_hash = cfg.config_hash()
    run_id = _run_id("curate-images", config_hash, _file_sha(inventory_path))
    manifest = RunManifest(
        run_id=run_id,
        pipeline="curate-images",
        config_hash=config_hash,
        inputs={"inventory": str(inventory_path), "inventory_sha256": _file_sha(inventory_path)},
        outputs={},
        counts={},
        started_at=time.time(),
        config=cfg.to_dict(),
    )

    kept_inventory = [
        item for item in inventory if curation.filter_category(item.category, blocklist, ancestors)
    ]
    if not kept_inventory:
        raise PipelineError("every inventory item was blocklisted")
    n = min(cfg.curation.n_sample, len(kept_inventory))
    sampled = curation.hybrid_sample(kept_inventory, n, cfg.curation.tail_boost, cfg.seed)

    journal = Journal(out_dir / "journal.jsonl")
    memo: dict[str, retrieval.RetrievalResult] = {}

    def process_image(item: curation.InventoryItem) -> dict:
        detections = curation.detect_objects(
            item.image_id, detector, cfg.curation.conf_threshold
        )
        result: dict = {"detections": len(detections), "tags": [], "rejections": [], "tiers": {}}
        for det in detections:
            label = det.label_candidates[0]
            memo_key = physdb.normalize_label(label)
            res = memo.get(memo_key)
            if res is None:
                res = retrieval.retrieve(label, db_indexed, embedder, reasoner, retrieval_cfg)
                memo[memo_key] = res
            result["tiers"][res.tier.value] = result["tiers"].get(res.tier.value, 0) + 1
            outcome = verification.verify_tag(det, res)
            if isinstance(outcome, verification.Rejection):
                result["rejections"].append(outcome.to_json())
            else:
                samples = instructgen.expand_tag(outcome, cfg.seed)
                result["tags"].append(
                    {
                        "tag": outcome.to_json(),
                        "instructions": [s.to_json() for s in samples],
                    }
                )
        return {"stage": "image", "result": result}

    try:
        run_units(
            journal,
            sampled,
            UnitFn(process_image, key=lambda item: item.image_id),
            cfg.workers,
        )
    finally:
        journal.close()

    # regenerate outputs deterministically from the journal, in sampled order
    instructions: list[dict] = []
    quarantine: list[dict] = []
    tier_counts: dict[str, int] = {}
    images_with_detections = 0
    images_verified = 0
    detections_total = 0
    verified_total = 0
    for item in sampled:
        result = journal.records[item.image_id]["result"]
        detections_total += result["detections"]
        if result["detections"]:
            images_with_detections += 1
        if result["tags"]:
            images_verified += 1
        for tier, count in result["tiers"].items():
            tier_counts[tier] = tier_counts.get(tier, 0) + count
        for entry in result["tags"]:
            verified_total += 1
            for sample in entry["instructions"]:
                instructions.append(
                    {"run_id": run_id, "schema_version": SCHEMA_VERSION, **sample}
                )
        for rejection in result["rejections"]:
            quarantine.append({"run_id": run_id, "schema_version": SCHEMA_VERSION, **rejection})

    instructions_path = out_dir / "instructions.jsonl"
    quarantine_path = out_dir / "quarantine.jsonl"
    _write_jsonl(instructions_path, instructions)
    _write_jsonl(quarantine_path, quarantine)

    manifest.outputs = {
        "instructions": str(instructions_path),
        "quarantine": str(quarantine_path),
    }
    manifest.counts = {
        # image-level funnel (monotone non-increasing by construction)
        "sampled": len(sampled),
        "detected": images_with_detections,
        "verified": images_verified,
        # object-level detail
        "inventory": len(inventory),
        "blocked": len(inventory) - len(kept_inventory),
        "detections": detections_total,
        "retrieved_per_tier": tier_counts,
        "verified_tags": verified_total,
        "rejected_tags": len(quarantine),
        "instructions": len(instructions),
    }
    manifest.finished_at = time.time()
    manifest.write(out_dir / "manifest.json")
    return manifest


# ---------------------------------------------------------------------------
# AV curation (stage 1 filter, stage 2 synthesis)


def curate_av(
    cfg: PipelineConfig, manifest_path: Path | str, out_dir: Path | str
) -> RunManifest:
    manifest_path = Path(manifest_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    clips = omnicap.load_clip_manifest(manifest_path)
    if not clips:
        raise PipelineError(f"{manifest_path}: empty clip manifest")
    encoder, brain, phys = build_av_clients(cfg, manifest_path)

    config_hash = cfg.config_hash()
    run_id = _run_id("curate-av", config_hash, _file_sha(manifest_path))
    manifest = RunManifest(
        run_id=run_id,
        pipeline="curate-av",
        config_hash=config_hash,
        inputs={"clips": str(manifest_path), "clips_sha256": _file_sha(manifest_path)},
        outputs={},
        counts={},
        started_at=time.time(),
        config=cfg.to_dict(),
    )

    journal = Journal(out_dir / "journal.jsonl")

    def score_clip(clip: omnicap.ClipRecord) -> dict:
        try:
            audio = clip.audio.load()
            transients = omnicap.detect_transients(
                audio, clip.audio.sample_rate, k_sigma=cfg.omnicap.k_sigma
            )
            keyframes = omnicap.sample_keyframes(clip, cfg.omnicap.base_fps, transients)
            score = omnicap.av_consistency_score(
                clip,
                keyframes,
                encoder,
                neighborhood_s=cfg.omnicap.neighborhood_s,
                window_s=cfg.omnicap.audio_window_s,
                stride_s=cfg.omnicap.audio_stride_s,
            )
        except omnicap.OmniCapError as exc:
            # unscoreable clips (too short for a window, no keyframes, ...)
            # go to quarantine rather than aborting the whole run
            return {
                "stage": "score",
                "clip_id": clip.clip_id,
                "score": None,
                "error": str(exc),
                "transients": [],
            }
        return {
            "stage": "score",
            "clip_id": clip.clip_id,
            "score": score.to_json(),
            "transients": [e.time_s for e in transients],
        }

    def caption_clip(clip: omnicap.ClipRecord) -> dict:
        score_rec = journal.records[f"score:{clip.clip_id}"]
        transients = [omnicap.TransientEvent(t, 0.0) for t in score_rec["transients"]]
        timestamps = omnicap.adaptive_timestamps(
            clip.duration_s, cfg.omnicap.adaptive_rate, transients
        ) or [clip.duration_s / 2.0]  # sub-second clips still get one frame probe
        evidence = omnicap.gather_evidence(clip, timestamps, brain, phys)
        prompt = omnicap.compose_prompt(evidence)
        caption = omnicap.synthesize_caption(prompt, brain)
        score = omnicap.ConsistencyScore(
            per_keyframe=tuple((t, s) for t, s in score_rec["score"]["per_keyframe"]),
            segment_score=score_rec["score"]["segment_score"],
            skipped_keyframes=score_rec["score"]["skipped_keyframes"],
        )
        record = omnicap.CaptionRecord(
            clip_id=clip.clip_id,
            caption=caption,
            evidence=evidence,
            score=score,
            timestamps=tuple(timestamps),
        )
        return {"stage": "caption", "record": record.to_json()}

    try:
        # Stage 1: score and filter every clip before any synthesis happens.
        run_units(
            journal, clips, UnitFn(score_clip, key=lambda c: f"score:{c.clip_id}"), cfg.workers
        )
        # Stage 2: evidence + caption for survivors only (strict S > tau).
        def kept(clip) -> bool:
            score = journal.records[f"score:{clip.clip_id}"]["score"]
            return score is not None and score["segment_score"] > cfg.omnicap.tau

        kept_clips = [clip for clip in clips if kept(clip)]
        run_units(
            journal,
            kept_clips,
            UnitFn(caption_clip, key=lambda c: f"caption:{c.clip_id}"),
            cfg.workers,
        )
    finally:
        journal.close()

    captions: list[dict] = []
    quarantine: list[dict] = []
    for clip in clips:
        score_rec = journal.records[f"score:{clip.clip_id}"]
        score = score_rec["score"]
        if score is not None and score["segment_score"] > cfg.omnicap.tau:
            caption_rec = journal.records[f"caption:{clip.clip_id}"]["record"]
            captions.append({"run_id": run_id, "schema_version": SCHEMA_VERSION, **caption_rec})
        else:
            quarantine.append(
                {
                    "run_id": run_id,
                    "schema_version": SCHEMA_VERSION,
                    "clip_id": clip.clip_id,
                    "segment_score": None if score is None else score["segment_score"],
                    "skipped_keyframes": 0 if score is None else score["skipped_keyframes"],
                    "error": score_rec.get("error"),
                }
            )

    captions_path = out_dir / "captions.jsonl"
    quarantine_path = out_dir / "quarantine.jsonl"
    _write_jsonl(captions_path, captions)
    _write_jsonl(quarantine_path, quarantine)

    manifest.outputs = {"captions": str(captions_path), "quarantine": str(quarantine_path)}
    manifest.counts = {
        "sampled": len(clips),
        "detected": len(clips),  # every clip is scored
        "verified": len(captions),
        "clips": len(clips),
        "kept": len(captions),
        "quarantined": len(quarantine),
    }
    manifest.finished_at = time.time()
    manifest.write(out_dir / "manifest.json")
    return manifest
