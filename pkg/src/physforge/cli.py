"""Command-line entry point.

Subcommands: ``physdb validate|query``, ``curate-images``, ``curate-av``,
``route [--train]``, ``eval``, ``losses-check``, ``make-fixtures``.
Exit codes: 0 success, 1 pipeline failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import clients as clients_mod
from . import evalharness, fixtures, objectives, physdb, pipelines, router
from .config import PipelineConfig, load_config
from .errors import ConfigError, ForgeError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _build_config(args: argparse.Namespace) -> PipelineConfig:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
        overrides["clients.mock_seed"] = args.seed
    if getattr(args, "mock", False):
        overrides["clients.mock"] = True
    if getattr(args, "workers", None) is not None:
        overrides["workers"] = args.workers
    if getattr(args, "tau", None) is not None:
        overrides["omnicap.tau"] = args.tau
    if getattr(args, "db", None):
        overrides["prototypes_path"] = args.db
    return load_config(getattr(args, "config", None), overrides)


def _cmd_physdb(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    db = physdb.load_bundled(cfg.prototypes_path or None)
    if args.action == "validate":
        counts = {state.value: db.state_counts[state] for state in physdb.MaterialState}
        print(f"ok: {len(db)} prototypes, per state {counts}")
        return EXIT_OK
    # query
    if not args.label:
        raise ConfigError("physdb query requires --label")
    proto = db.lookup(args.label)
    if proto is not None:
        print(json.dumps(proto.to_json(), sort_keys=True))
        return EXIT_OK
    if args.nearest:
        embedder = clients_mod.MockEmbedder(seed=cfg.clients.mock_seed, dim=cfg.clients.embed_dim)
        indexed = physdb.index_embeddings(db, lambda text: embedder.vector_for(text))
        query = embedder.vector_for(physdb.normalize_label(args.label))
        for proto_id, sim in physdb.nearest(query, indexed, min(args.nearest, len(db))):
            print(f"{proto_id}\t{sim:+.4f}")
        return EXIT_OK
    print(f"no exact match for {args.label!r} (use --nearest K for vector search)")
    return EXIT_FAILURE


def _cmd_curate_images(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    manifest = pipelines.curate_images(cfg, args.inventory, args.out)
    print(json.dumps(manifest.counts, sort_keys=True))
    print(f"run {manifest.run_id}: outputs in {args.out}")
    return EXIT_OK


def _cmd_curate_av(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    manifest = pipelines.curate_av(cfg, args.clips, args.out)
    print(json.dumps(manifest.counts, sort_keys=True))
    print(f"run {manifest.run_id}: outputs in {args.out}")
    return EXIT_OK


def _cmd_route(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    lexicons = router.load_lexicons(Path(cfg.router.lexicon_dir) if cfg.router.lexicon_dir else None)
    embedder = clients_mod.make_client(
        "embedder",
        clients_mod.ClientConfig(mock_mode=True, mock_seed=cfg.clients.mock_seed),
        mock=clients_mod.MockEmbedder(seed=cfg.clients.mock_seed, dim=cfg.clients.embed_dim),
    )

    if args.train:
        corpus_path = Path(args.corpus) if args.corpus else router.bundled_corpus_path()
        dataset = router.load_corpus(corpus_path)
        hyper = router.TrainHyper(
            lr=cfg.router.lr,
            epochs=cfg.router.epochs,
            seed=cfg.seed,
            hidden_dim=cfg.router.hidden_dim,
            holdout_frac=cfg.router.holdout_frac,
        )
        params, report = router.train_gate(dataset, embedder, lexicons, hyper)
        print(json.dumps(report.to_json(), sort_keys=True))
        if args.save:
            params.save(args.save)
            print(f"saved gate params to {args.save}")
        if not (args.text or args.file):
            return EXIT_OK
    else:
        params_path = Path(args.params) if args.params else (
            Path(cfg.router.params_path) if cfg.router.params_path else router.bundled_params_path()
        )
        if not params_path.exists():
            raise ConfigError(f"gate params file not found: {params_path}")
        params = router.GateParams.load(params_path)

    texts: list[str] = []
    if args.text is not None:
        texts.append(args.text)
    if args.file:
        texts.extend(Path(args.file).read_text(encoding="utf-8").splitlines())
    if not texts:
        raise ConfigError("route needs --text or --file (or --train)")

    gate = router.Router(params, embedder, lexicons, tau=cfg.router.tau)
    sink = router.ActivationSink()
    for text in texts:
        decision = gate.decide(text, sink=sink)
        print(json.dumps({"text": text, **decision.to_json()}, sort_keys=True))
    if len(texts) > 1:
        print(
            f"# generation activations: {len(sink.activations)}, suppressed: {sink.suppressed}",
            file=sys.stderr,
        )
    return EXIT_OK


def _cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise ConfigError(f"dataset not found: {dataset_path}")
    items = evalharness.load_dataset(dataset_path)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.model_mock == "echo":
        answers = {item.item_id: str(item.gold) for item in items}
    else:
        answers = {}
    model = clients_mod.make_client(
        "model",
        clients_mod.ClientConfig(mock_mode=True, mock_seed=cfg.clients.mock_seed),
        mock=clients_mod.MockModel(seed=cfg.clients.mock_seed, answers=answers),
    )
    judge = clients_mod.make_client(
        "judge",
        clients_mod.ClientConfig(mock_mode=True, mock_seed=cfg.clients.mock_seed),
        mock=clients_mod.MockJudge(seed=cfg.clients.mock_seed, constant=args.judge_constant),
    )

    report = evalharness.run_eval(
        items,
        model,
        judge,
        journal_path=out_dir / "progress.jsonl",
        config_hash=cfg.config_hash(),
        workers=cfg.workers,
    )
    (out_dir / "report.json").write_text(
        json.dumps(report.to_json(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    print(report.table())
    return EXIT_OK


def _cmd_losses_check(args: argparse.Namespace) -> int:
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str = "") -> None:
        checks.append((name, ok, detail))

    one_hot = np.full((4, 4), -745.0)
    np.fill_diagonal(one_hot, 0.0)
    loss = objectives.lm_loss(one_hot, [0, 1, 2, 3])
    check("lm-loss-one-hot-zero", abs(loss) < 1e-12, f"loss={loss:.3e}")

    uniform4 = np.full((8, 4), np.log(0.25))
    loss = objectives.lm_loss(uniform4, [0, 1, 2, 3, 0, 1, 2, 3])
    expected = float(np.log(4.0)) + (args.inject_fault or 0.0)
    check("lm-loss-uniform-ln4", abs(loss - expected) < 1e-9, f"loss={loss:.12f}")

    uniform_codec = np.full((4, objectives.CODEC_VOCAB_SIZE), -np.log(objectives.CODEC_VOCAB_SIZE))
    loss = objectives.audio_gen_loss(uniform_codec, [0, 1, 4094, 4095])
    check(
        "audio-loss-uniform-ln4096",
        abs(loss - float(np.log(4096.0))) < 1e-9,
        f"loss={loss:.12f}",
    )

    rng = np.random.default_rng(0)
    x0 = rng.normal(size=(64, 8))
    x1 = rng.normal(size=(64, 8))
    loss = objectives.flow_matching_loss(x1 - x0, x0, x1)
    check("flow-loss-exact-velocity-zero", abs(loss) < 1e-12, f"loss={loss:.3e}")

    positions, _ = objectives.pack_positions(
        [objectives.Segment(kind="audio", duration_s=2.0)]
    )
    check("audio-2s-50-positions", len(positions) == 50, f"n={len(positions)}")

    _, layout = objectives.pack_positions(
        [
            objectives.Segment(kind="video", duration_s=5.0, fps=25.0),
            objectives.Segment(kind="audio", duration_s=5.0),
        ]
    )
    spans = [(chunk.kind, chunk.start_s, chunk.end_s) for chunk in layout]
    expected_spans = [
        ("video", 0.0, 2.0), ("audio", 0.0, 2.0),
        ("video", 2.0, 4.0), ("audio", 2.0, 4.0),
        ("video", 4.0, 5.0), ("audio", 4.0, 5.0),
    ]
    check("av-5s-six-chunk-order", spans == expected_spans, f"layout={spans}")

    point = rng.normal(size=6)
    grad = objectives.finite_diff_grad(lambda x: 0.5 * float(np.dot(x, x)), point)
    check(
        "finite-diff-quadratic",
        float(np.abs(grad - point).max()) < 1e-6,
        f"max-err={float(np.abs(grad - point).max()):.3e}",
    )

    params = router.GateParams.init(embed_dim=16, hidden_dim=8, seed=1)
    x = rng.normal(size=(12, 20))
    y = (rng.random(12) > 0.5).astype(float)
    rel = router.analytic_gradient_check(params, x, y, eps=1e-5)
    check("gate-gradient-check", rel < 1e-4, f"max-rel-err={rel:.3e}")

    failed = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        print(f"[{status}] {name}  {detail}")
        failed += 0 if ok else 1
    return EXIT_OK if failed == 0 else EXIT_FAILURE


def _cmd_make_fixtures(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    out = Path(args.out)
    manifest_path, truth = fixtures.make_planted_av_corpus(out / "av", seed=cfg.seed)
    db = physdb.load_bundled(cfg.prototypes_path or None)
    inventory_path = fixtures.make_image_inventory(out / "images", db, seed=cfg.seed)
    print(f"AV fixture: {manifest_path} (keep {len(truth['keep'])}, drop {len(truth['drop'])})")
    print(f"image fixture: {inventory_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="physforge")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--mock", action="store_true", help="force mock clients")
    parser.add_argument("--seed", type=int, help="global seed")
    parser.add_argument("--workers", type=int, help="stage-internal worker budget")
    sub = parser.add_subparsers(dest="command", required=True)

    p_db = sub.add_parser("physdb", help="validate or query the prototype DB")
    p_db.add_argument("action", choices=["validate", "query"])
    p_db.add_argument("--db", help="prototype JSONL path (default: bundled)")
    p_db.add_argument("--label", help="label to look up (query)")
    p_db.add_argument("--nearest", type=int, help="also run top-K vector search (query)")
    p_db.set_defaults(func=_cmd_physdb)

    p_ci = sub.add_parser("curate-images", help="run the five-stage image pipeline")
    p_ci.add_argument("--inventory", required=True)
    p_ci.add_argument("--out", required=True)
    p_ci.add_argument("--db")
    p_ci.set_defaults(func=_cmd_curate_images)

    p_av = sub.add_parser("curate-av", help="filter clips and synthesize captions")
    p_av.add_argument("--clips", required=True, help="clip manifest JSONL")
    p_av.add_argument("--out", required=True)
    p_av.add_argument("--tau", type=float, help="consistency threshold override")
    p_av.set_defaults(func=_cmd_curate_av)

    p_route = sub.add_parser("route", help="route text between modes")
    p_route.add_argument("--train", action="store_true")
    p_route.add_argument("--text")
    p_route.add_argument("--file")
    p_route.add_argument("--params", help="gate params file (default: bundled)")
    p_route.add_argument("--save", help="where to write trained params")
    p_route.add_argument("--corpus", help="training corpus JSONL (default: bundled)")
    p_route.set_defaults(func=_cmd_route)

    p_eval = sub.add_parser("eval", help="score a benchmark dataset")
    p_eval.add_argument("--dataset", required=True)
    p_eval.add_argument("--out", required=True)
    p_eval.add_argument("--model-mock", choices=["echo", "none"], default="echo")
    p_eval.add_argument("--judge-constant", type=float, default=4.0)
    p_eval.set_defaults(func=_cmd_eval)

    p_loss = sub.add_parser("losses-check", help="objective-function self-tests")
    p_loss.add_argument("--inject-fault", type=float, default=0.0, help=argparse.SUPPRESS)
    p_loss.set_defaults(func=_cmd_losses_check)

    p_fix = sub.add_parser("make-fixtures", help="write demo corpora for mock runs")
    p_fix.add_argument("--out", required=True)
    p_fix.add_argument("--db")
    p_fix.set_defaults(func=_cmd_make_fixtures)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
