"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Runs entirely in mock mode with no network.  Run with `pytest tests/test_acceptance.py -s`
to see the per-criterion lines.
"""

import json
import math
import re
import time

import numpy as np
import pytest

from physforge import fixtures, physdb, pipelines
from physforge.clients import MockEmbedder, MockJudge, MockModel
from physforge.config import load_config
from physforge.curation import BBox, DetectedObject, saliency_filter
from physforge.evalharness import agreement_check, fixture_path, load_dataset, mra, pearson, run_eval
from physforge.instructgen import TaskKind
from physforge.objectives import (
    CODEC_VOCAB_SIZE,
    Segment,
    audio_gen_loss,
    flow_matching_loss,
    flow_path,
    lm_loss,
    pack_positions,
)
from physforge.physdb import (
    ATTRIBUTES,
    MaterialState,
    Prototype,
    PropertyVector,
    PrototypeDB,
    normalize_label,
)
from physforge.retrieval import RetrievalConfig, RetrievalResult, RetrievalTier, retrieve
from physforge.router import (
    GateParams,
    MODE_UNDERSTANDING,
    Router,
    TrainHyper,
    analytic_gradient_check,
    bundled_corpus_path,
    extract_syntactic,
    gate_score,
    load_corpus,
    load_lexicons,
    train_gate,
)
from physforge.verification import VerifiedTag, verify_tag


def passed(name: str) -> None:
    print(f"[PASS] {name}")


# Test-local interval tables: an independent restatement of the documented
# bound and coupling rules, so accepted vectors are re-checked against a
# second implementation rather than the production one.
ORACLE_BOUNDS = {
    "stiffness": lambda v: v > 0,
    "density": lambda v: v > 0,
    "mass": lambda v: v > 0,
    "mu_static": lambda v: v >= 0,
    "mu_kinetic": lambda v: v >= 0,
    "restitution": lambda v: 0 <= v <= 1,
    "youngs_modulus": lambda v: v > 0,
    "poisson_ratio": lambda v: -1 < v < 0.5,
    "viscosity": lambda v: v > 0,
    "surface_tension": lambda v: v >= 0,
    "yield_stress": lambda v: v >= 0,
}

ORACLE_APPLICABLE = {
    MaterialState.RIGID: {
        "stiffness", "density", "mass", "mu_static", "mu_kinetic",
        "restitution", "youngs_modulus", "poisson_ratio",
    },
    MaterialState.SOFT: {
        "stiffness", "density", "mass", "mu_static", "mu_kinetic",
        "restitution", "youngs_modulus", "poisson_ratio", "yield_stress",
    },
    MaterialState.FLUID: {"density", "mass", "viscosity", "surface_tension"},
}


def oracle_legal(pv: PropertyVector, state: MaterialState) -> bool:
    present = pv.present()
    for name, value in present.items():
        if not ORACLE_BOUNDS[name](value):
            return False
        if name not in ORACLE_APPLICABLE[state]:
            return False
    if "mu_static" in present and "mu_kinetic" in present:
        if present["mu_kinetic"] > present["mu_static"]:
            return False
    if "poisson_ratio" in present and "youngs_modulus" not in present:
        return False
    if "yield_stress" in present and "youngs_modulus" in present:
        if present["yield_stress"] >= present["youngs_modulus"]:
            return False
    return True


def test_criterion_1_verification_soundness(bundled_db):
    start = time.monotonic()
    rng = np.random.default_rng(20250810)
    states = list(MaterialState)
    obj = DetectedObject("img", BBox(0.2, 0.2, 0.5, 0.5), ("x",), 0.9)

    n = 100_000
    presence = rng.random((n, 11)) < 0.5
    narrow = rng.uniform(-2.0, 2.0, size=(n, 11))
    wide = rng.uniform(-10.0, 10.0, size=(n, 11)) * 10.0 ** rng.integers(0, 6, size=(n, 11))
    state_picks = rng.integers(0, 3, size=n)
    narrow_attr = {"restitution", "mu_static", "mu_kinetic", "poisson_ratio"}

    accepted = 0
    for i in range(n):
        values = {}
        for j, name in enumerate(ATTRIBUTES):
            if presence[i, j]:
                values[name] = narrow[i, j] if name in narrow_attr else wide[i, j]
        pv = PropertyVector(**values)
        state = states[state_picks[i]]
        outcome = verify_tag(
            obj,
            RetrievalResult(label="x", properties=pv, state=state, tier=RetrievalTier.ANALOGY),
        )
        if isinstance(outcome, VerifiedTag):
            accepted += 1
            assert oracle_legal(outcome.properties, outcome.state), (
                f"violating vector inside a VerifiedTag: {pv.present()} / {state}"
            )
        else:
            assert not oracle_legal(pv, state) or outcome.violations

    assert accepted > 0
    # every bundled prototype passed verification at load (load would raise)
    assert len(bundled_db) == 300
    elapsed = time.monotonic() - start
    assert elapsed < 5.0, f"soundness fuzz took {elapsed:.2f}s"
    passed(f"criterion-1 verification-soundness ({accepted} accepted of {n}, {elapsed:.2f}s)")


def test_criterion_2_retrieval_oracle_equivalence():
    start = time.monotonic()
    dim = 64
    sim_floor = 0.45
    cfg = RetrievalConfig(k=5, sim_floor=sim_floor)
    master = np.random.default_rng(99)

    class SpyReasoner:
        def __init__(self):
            self.n_calls = 0

        def complete(self, prompt):
            self.n_calls += 1
            return '```json\n{"state": "rigid", "properties": {"density": 1000.0}}\n```'

    vector_hits = 0
    analogy_hits = 0
    alias_checks = 0
    for db_index in range(100):
        seed = int(master.integers(0, 2**31))
        n = int(master.integers(50, 1001))
        embedder = MockEmbedder(seed=seed, dim=dim)
        protos = []
        for i in range(n):
            label = f"proto {db_index} {i}"
            protos.append(
                Prototype(
                    id=f"p{i:04d}",
                    label=label,
                    aliases=(f"alias {db_index} {i}",),
                    state=MaterialState.RIGID,
                    properties=PropertyVector(density=1000.0),
                    embedding=tuple(embedder.vector_for(normalize_label(label))),
                )
            )
        db = PrototypeDB.build(protos)
        matrix = np.array([p.embedding for p in protos])
        ids = [p.id for p in protos]

        # every alias fires the exact tier
        for proto in db.prototypes[:: max(1, n // 10)]:
            for name in proto.aliases:
                result = retrieve(name, db, embedder, SpyReasoner(), cfg)
                assert result.tier is RetrievalTier.EXACT
                assert result.prototype_id == proto.id
                alias_checks += 1

        reasoner = SpyReasoner()
        expected_reasoner_calls = 0
        for q in range(100):
            label = f"query {db_index} {q}"
            query = embedder.vector_for(normalize_label(label))
            sims = matrix @ query
            # independent argmax with the documented ascending-id tie-break
            best_idx = min(range(n), key=lambda i: (-sims[i], ids[i]))
            best_sim = float(sims[best_idx])
            result = retrieve(label, db, embedder, reasoner, cfg)
            if best_sim >= sim_floor:
                vector_hits += 1
                assert result.tier is RetrievalTier.VECTOR
                assert result.prototype_id == ids[best_idx]
            else:
                analogy_hits += 1
                expected_reasoner_calls += 1
                assert result.tier is RetrievalTier.ANALOGY
        assert reasoner.n_calls == expected_reasoner_calls

    assert vector_hits > 0 and analogy_hits > 0  # both branches exercised
    elapsed = time.monotonic() - start
    assert elapsed < 30.0, f"retrieval oracle check took {elapsed:.2f}s"
    passed(
        f"criterion-2 retrieval-oracle ({vector_hits} vector, {analogy_hits} analogy, "
        f"{alias_checks} alias hits, {elapsed:.2f}s)"
    )


def test_criterion_3_saliency_and_restitution_exactness():
    for area, keep in [(0.10, False), (0.15, True), (0.50, True), (0.75, True), (0.80, False)]:
        side = math.sqrt(area)
        bbox = BBox(0.0, 0.0, side, side)
        assert saliency_filter(bbox) is keep, f"area {area}"

    from physforge.verification import check_bounds

    for value, accept in [(-0.1, False), (0.0, True), (1.0, True), (1.2, False)]:
        violations = check_bounds(PropertyVector(restitution=value))
        assert (violations == []) is accept, f"restitution {value}"
    passed("criterion-3 saliency-and-restitution-exactness")


def test_criterion_4_omnicap_planted_separation(tmp_path):
    start = time.monotonic()
    manifest_path, truth = fixtures.make_planted_av_corpus(tmp_path / "av", seed=0)
    cfg = load_config(overrides={"omnicap.tau": 0.5})
    pipelines.curate_av(cfg, manifest_path, tmp_path / "out")

    captions = [json.loads(l) for l in (tmp_path / "out" / "captions.jsonl").read_text().splitlines()]
    quarantined = [json.loads(l) for l in (tmp_path / "out" / "quarantine.jsonl").read_text().splitlines()]
    kept = {c["clip_id"] for c in captions}
    true_keep = set(truth["keep"])
    tp = len(kept & true_keep)
    precision = tp / len(kept)
    recall = tp / len(true_keep)
    assert precision == 1.0 and recall == 1.0

    boundary = next(q for q in quarantined if q["clip_id"] == "clip_boundary_00")
    assert boundary["segment_score"] == 0.5  # S == tau must be dropped
    elapsed = time.monotonic() - start
    assert elapsed < 10.0, f"curate-av took {elapsed:.2f}s"
    passed(f"criterion-4 omnicap-planted-separation (P=R=1.0, boundary dropped, {elapsed:.2f}s)")


def test_criterion_5_router():
    start = time.monotonic()
    dataset = load_corpus(bundled_corpus_path())
    lexicons = load_lexicons()
    assert len(dataset) >= 200
    hard = [
        text
        for text, label in dataset
        if label == MODE_UNDERSTANDING
        and extract_syntactic(text, lexicons).visual_imperative == 1.0
    ]
    assert len(hard) >= 50

    embedder = MockEmbedder(seed=0, dim=64)
    params, report = train_gate(dataset, embedder, lexicons, TrainHyper(seed=0))
    assert report.holdout_accuracy >= 0.95

    router = Router(params, embedder, lexicons)
    assert router.decide("Write a Python script to simulate a pendulum").mode == MODE_UNDERSTANDING
    assert router.decide("Draw a conclusion from the data").mode == MODE_UNDERSTANDING

    rng = np.random.default_rng(0)
    small = GateParams.init(embed_dim=12, hidden_dim=8, seed=2)
    x = rng.normal(size=(16, 16))
    y = (rng.random(16) > 0.5).astype(float)
    grad_err = analytic_gradient_check(small, x, y, eps=1e-5)
    assert grad_err < 1e-4

    zeros = GateParams.zeros(embed_dim=64)
    s = gate_score(np.zeros(64), extract_syntactic("anything", lexicons), zeros)
    assert s == 0.5

    elapsed = time.monotonic() - start
    assert elapsed < 60.0, f"router acceptance took {elapsed:.2f}s"
    passed(
        f"criterion-5 router (holdout {report.holdout_accuracy:.3f}, "
        f"grad-err {grad_err:.2e}, sigma(0)=0.5, {elapsed:.2f}s)"
    )


def test_criterion_6_objectives_identities():
    start = time.monotonic()

    one_hot = np.full((4, 4), -800.0)
    np.fill_diagonal(one_hot, 0.0)
    assert lm_loss(one_hot, [0, 1, 2, 3]) == 0.0

    uniform4 = np.full((8, 4), math.log(0.25))
    assert lm_loss(uniform4, [0, 1, 2, 3] * 2) == pytest.approx(math.log(4.0), abs=1e-9)

    uniform_codec = np.full((4, CODEC_VOCAB_SIZE), -math.log(CODEC_VOCAB_SIZE))
    assert audio_gen_loss(uniform_codec, [0, 1, 2, 3]) == pytest.approx(
        math.log(4096.0), abs=1e-9
    )

    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(128, 6))
    x1 = rng.normal(size=(128, 6))
    assert flow_matching_loss(x1 - x0, x0, x1) == pytest.approx(0.0, abs=1e-12)

    # least-squares-fitted linear velocity recovers x1 - x0
    base0 = rng.normal(size=3)
    base1 = rng.normal(size=3)
    ts = rng.random(1000)
    xts = np.stack([flow_path(base0, base1, float(t)) for t in ts])
    design = np.hstack([xts, ts[:, None], np.ones((1000, 1))])
    coef, *_ = np.linalg.lstsq(design, np.tile(base1 - base0, (1000, 1)), rcond=None)
    assert np.abs(design @ coef - (base1 - base0)).max() < 1e-6

    positions, _ = pack_positions([Segment(kind="audio", duration_s=2.0)])
    assert len(positions) == 50

    _, layout = pack_positions(
        [Segment(kind="video", duration_s=5.0, fps=25.0), Segment(kind="audio", duration_s=5.0)]
    )
    assert [(c.kind, c.start_s, c.end_s) for c in layout] == [
        ("video", 0.0, 2.0), ("audio", 0.0, 2.0),
        ("video", 2.0, 4.0), ("audio", 2.0, 4.0),
        ("video", 4.0, 5.0), ("audio", 4.0, 5.0),
    ]

    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    passed(f"criterion-6 objectives-identities ({elapsed:.2f}s)")


def test_criterion_7_eval_metrics(tmp_path):
    start = time.monotonic()

    assert mra([120.0], [100.0]).score == pytest.approx(0.600, abs=1e-12)
    assert mra([7.0, 0.5], [7.0, 0.5]).score == 1.0
    assert pearson([1.0, 2.0, 3.0], [1.0, 3.0, 2.0]) == pytest.approx(0.5, abs=1e-12)

    judge_scores = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]
    good = [1.1, 1.9, 3.2, 3.9, 5.1, 5.9]
    weak = [1.0, 3.2, 2.0, 4.8, 4.0, 6.4]
    assert pearson(judge_scores, good) > 0.9
    assert pearson(judge_scores, weak) <= 0.9
    assert agreement_check(judge_scores, [good]).passed
    result = agreement_check(judge_scores, [good, weak])
    assert not result.passed and result.failing_experts == (1,)

    items = load_dataset(fixture_path())
    assert len(items) == 60
    model = MockModel(answers={item.item_id: str(item.gold) for item in items})
    report = run_eval(items, model, MockJudge(constant=4.0), journal_path=tmp_path / "j.jsonl")
    assert report.scores["prediction"] == 1.0
    assert report.scores["understanding"] == 1.0

    elapsed = time.monotonic() - start
    assert elapsed < 10.0
    passed(f"criterion-7 eval-metrics ({elapsed:.2f}s)")


NUMBER = re.compile(r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?")


def test_criterion_8_instruction_generation(tmp_path):
    db = physdb.load_bundled()
    inventory = fixtures.make_image_inventory(tmp_path / "img", db, seed=0)
    cfg = load_config(overrides={"clients.analogy_invalid_rate": 0.2})
    pipelines.curate_images(cfg, inventory, tmp_path / "out")

    journal = [
        json.loads(line)
        for line in (tmp_path / "out" / "journal.jsonl").read_text().splitlines()
    ]
    tags_checked = 0
    for record in journal:
        for entry in record["result"]["tags"]:
            tag = entry["tag"]
            samples = entry["instructions"]
            assert len(samples) == 5
            assert {s["task"] for s in samples} == {k.value for k in TaskKind}
            assert sorted(s["variant_index"] for s in samples) == [0, 1, 2, 3, 4]

            allowed = {
                f"{value:.4g}"
                for value in tag["properties"].values()
                if value is not None
            }
            allowed |= {f"{tag['object']['bbox'][k]:.4g}" for k in ("x", "y", "w", "h")}
            for sample in samples:
                for span in NUMBER.findall(sample["answer"]):
                    assert span in allowed, (
                        f"value {span!r} in answer not from source tag: {sample['answer']!r}"
                    )
            tags_checked += 1
    assert tags_checked >= 20
    passed(f"criterion-8 instruction-generation ({tags_checked} tags, 5 variants each)")


def test_criterion_9_end_to_end_reproducibility(tmp_path):
    db = physdb.load_bundled()
    inventory = fixtures.make_image_inventory(tmp_path / "img", db, seed=0)
    av_manifest, _ = fixtures.make_planted_av_corpus(tmp_path / "av", seed=0)
    cfg = load_config(overrides={"clients.analogy_invalid_rate": 0.2, "omnicap.tau": 0.5})

    manifest_a = pipelines.curate_images(cfg, inventory, tmp_path / "img_a")
    manifest_b = pipelines.curate_images(cfg, inventory, tmp_path / "img_b")
    for name in ("instructions.jsonl", "quarantine.jsonl"):
        assert (tmp_path / "img_a" / name).read_bytes() == (tmp_path / "img_b" / name).read_bytes()

    av_a = pipelines.curate_av(cfg, av_manifest, tmp_path / "av_a")
    av_b = pipelines.curate_av(cfg, av_manifest, tmp_path / "av_b")
    for name in ("captions.jsonl", "quarantine.jsonl"):
        assert (tmp_path / "av_a" / name).read_bytes() == (tmp_path / "av_b" / name).read_bytes()

    for manifest in (manifest_a, manifest_b, av_a, av_b):
        counts = manifest.counts
        assert counts["sampled"] >= counts["detected"] >= counts["verified"]
    passed("criterion-9 end-to-end-reproducibility (byte-identical outputs, monotone funnels)")
