"""Command-line interface.

One binary drives the whole pipeline: ingest detector output into crops,
embed crops, create a project, run the simulated loop, retrain/evaluate,
export artifacts, and serve the HTTP API. Exit codes: 0 success, 1 usage
error, 2 data error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .detections import (
    DEFAULT_ALLOWED_CATEGORIES,
    DEFAULT_MIN_CONFIDENCE,
    DEFAULT_PADDING_FRAC,
    detections_to_jobs,
    extract_crops,
    filter_detections,
    parse_detection_file,
    read_crop_manifest,
    write_crop_manifest,
)
from .embeddings import (
    DEFAULT_SYNTHETIC_DIM,
    PrecomputedProvider,
    SyntheticProvider,
    embed_batch,
    load_store,
    save_store,
)
from .errors import DataError, UsageError
from .active import (
    DEFAULT_QUERY_BATCH,
    DEFAULT_STRATEGY,
    STRATEGIES,
    SimulationConfig,
    curve_to_csv,
    generate_synthetic_pool,
    scaled_group_counts,
    simulate,
)
from .head import TrainConfig, load_model, predict
from .metrics import confusion_matrix, metrics, report_to_json
from .project import load_project, read_labels_csv, save_project, export_labels_csv, import_labels_csv
from .session import ProjectSession, init_project


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions (exit code 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _project_dir(args) -> Path:
    value = getattr(args, "project", None) or os.environ.get("CAMLOOP_PROJECT")
    if not value:
        raise UsageError("no project directory: pass --project or set CAMLOOP_PROJECT")
    return Path(value)


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _write_or_stdout(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# --- commands ---

def cmd_ingest(args) -> int:
    from PIL import Image, UnidentifiedImageError

    raw = _read_bytes(args.detections)
    records, _categories, summary = parse_detection_file(raw)
    for warning in summary.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    for image, reason in summary.rejected:
        print(f"warning: rejected detection in {image}: {reason}", file=sys.stderr)

    allowed = frozenset(c.strip() for c in args.categories.split(",") if c.strip())
    kept = filter_detections(records, min_confidence=args.min_confidence, allowed_categories=allowed)

    image_root = Path(args.imagedir)
    sizes: dict[str, tuple[int, int]] = {}
    errors: list[tuple[str, str]] = []
    for source in dict.fromkeys(rec.image_path for rec in kept):  # first-seen order
        try:
            with Image.open(image_root / source) as img:
                sizes[source] = img.size
        except (OSError, UnidentifiedImageError) as e:
            errors.append((source, f"{type(e).__name__}: {e}"))
    kept = [rec for rec in kept if rec.image_path in sizes]

    out_dir = Path(args.out)
    jobs = detections_to_jobs(kept, sizes, padding_frac=args.padding)
    report = extract_crops(image_root, jobs, out_dir, workers=args.workers)
    errors.extend(report.errors)

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "crops.csv"
    write_crop_manifest(report.crops, manifest_path)

    for image, reason in errors:
        print(f"error: {image}: {reason}", file=sys.stderr)
    print(f"images={summary.total_images} empty_images={summary.empty_images} "
          f"detections={summary.total_detections} kept={len(kept)} "
          f"crops={len(report.crops)} failed_images={len(errors)}")
    print(f"manifest written to {manifest_path}")
    return 0


def _build_provider(args):
    spec_str = args.provider
    if spec_str == "synthetic":
        return SyntheticProvider(dimension=args.dim, seed=args.seed)
    if spec_str.startswith("precomputed:"):
        return PrecomputedProvider.from_file(Path(spec_str.split(":", 1)[1]))
    if spec_str.startswith("onnx:"):
        from .embeddings import OnnxProvider

        image_root = Path(args.image_root) if args.image_root else Path(args.manifest).parent
        return OnnxProvider(Path(spec_str.split(":", 1)[1]), image_root=image_root)
    raise UsageError(f"unknown provider {spec_str!r}: use synthetic, precomputed:<store>, or onnx:<model>")


def cmd_embed(args) -> int:
    crops = read_crop_manifest(Path(args.manifest))
    provider = _build_provider(args)
    store, skipped = embed_batch(provider, crops, normalize=args.normalize)
    for cid, reason in skipped:
        print(f"warning: skipped {cid}: {reason}", file=sys.stderr)
    save_store(store, Path(args.out))
    print(f"embedded={len(store.vectors)} dimension={store.dimension} "
          f"skipped={len(skipped)} provider={store.provider_tag}")
    print(f"store written to {args.out}")
    return 0


def _labels_to_dict(path: Path) -> dict[str, str]:
    mapping: dict[str, str] = {}
    for rec in read_labels_csv(path):
        if rec.crop_id in mapping and mapping[rec.crop_id] != rec.species:
            raise DataError(f"{path}: conflicting labels for {rec.crop_id}")
        mapping[rec.crop_id] = rec.species
    if not mapping:
        raise DataError(f"{path}: no labels found")
    return mapping


def cmd_init_project(args) -> int:
    project = _project_dir(args)
    project.mkdir(parents=True, exist_ok=True)
    validation = _labels_to_dict(Path(args.validation_labels))
    if args.classes:
        class_names = [c.strip() for c in args.classes.split(",") if c.strip()]
    else:
        class_names = sorted(set(validation.values()))
    train_config = TrainConfig(epochs=args.epochs, seed=args.seed)
    state = init_project(
        project, class_names=class_names, validation=validation,
        embeddings_path=args.embeddings, crop_manifest_path=args.manifest,
        strategy=args.strategy, batch_size_query=args.batch_size,
        label_budget=args.budget, seed=args.seed, train_config=train_config,
        project_id=args.project_id)
    first = len(state.current_batch.items) if state.current_batch else 0
    print(f"project {state.project_id} created in {project}")
    print(f"classes={len(state.class_names)} pool={len(state.pool.unlabeled)} "
          f"validation={len(state.validation)} budget={state.pool.label_budget} "
          f"strategy={state.pool.strategy} first_batch={first}")
    return 0


def cmd_simulate(args) -> int:
    counts = scaled_group_counts(divisor=args.divisor)
    dataset = generate_synthetic_pool(counts, dimension=args.dim,
                                      cluster_separation=args.separation,
                                      noise_sigma=args.sigma, seed=args.seed)
    config = SimulationConfig(strategy=args.strategy, label_budget=args.budget,
                              batch_size_query=args.batch_size, seed=args.seed,
                              train=TrainConfig(epochs=args.epochs, seed=args.seed))
    result = simulate(dataset, config)
    Path(args.out).write_text(curve_to_csv(result.curve), encoding="utf-8")
    last = result.curve.points[-1]
    print(f"pool={len(result.final_state.unlabeled) + len(result.final_state.labeled)} "
          f"classes={len(dataset.class_names)} validation={len(result.val_ids)} "
          f"strategy={config.strategy} seed={config.seed}")
    print(f"rounds={len(result.rounds)} labels_used={last.labels_used} "
          f"accuracy={last.accuracy:.4f} macro_f1={last.macro_f1:.4f}")
    print(f"curve written to {args.out}")
    return 0


def cmd_train(args) -> int:
    session = ProjectSession(_project_dir(args))
    artifacts = session.complete_round()
    payload = session.round_metrics(artifacts)
    rep = payload["report"]
    print(f"round={artifacts.round} labels_used={artifacts.labels_used} "
          f"accuracy={rep['accuracy']:.4f} macro_f1={rep['macro_f1']:.4f}")
    print(f"artifacts in {session.project_dir / Path(artifacts.model_path).parent}")
    return 0


def cmd_evaluate(args) -> int:
    session = ProjectSession(_project_dir(args))
    truth = _labels_to_dict(Path(args.labels))
    unknown_cls = sorted(set(truth.values()) - set(session.state.class_names))
    if unknown_cls:
        raise DataError(f"labels use classes outside the project: {unknown_cls}")
    store = session.store
    missing = sorted(cid for cid in truth if cid not in store.vectors)
    if missing:
        raise DataError(f"labeled ids missing from the embedding store: {missing[:5]}"
                        + (f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""))
    if args.round is not None:
        model = load_model(session.project_dir / f"rounds/{args.round:04d}/model.alhd1")
    else:
        model = session.latest_model()
    ids = sorted(truth)
    preds = [p.argmax for p in predict(model, store, ids)]
    pred_names = [model.class_names[k] for k in preds]
    cm = confusion_matrix([truth[i] for i in ids], pred_names, model.class_names)
    report = metrics(cm)
    _write_or_stdout(report_to_json(report), args.out)
    if args.out:
        print(f"report written to {args.out}")
    return 0


def cmd_export_curve(args) -> int:
    session = ProjectSession(_project_dir(args))
    curve = session.learning_curve()
    if not curve.points:
        raise DataError("no completed rounds yet; nothing to export")
    _write_or_stdout(curve_to_csv(curve), args.out)
    if args.out:
        print(f"curve written to {args.out}")
    return 0


def cmd_export_labels(args) -> int:
    project = _project_dir(args)
    state = load_project(project)
    count = export_labels_csv(state, project, Path(args.out))
    print(f"exported {count} labels to {args.out}")
    return 0


def cmd_import_labels(args) -> int:
    project = _project_dir(args)
    state = load_project(project)
    new_state, count = import_labels_csv(Path(args.labels), state, labeler_fallback=args.labeler)
    save_project(new_state, project)
    print(f"imported {count} labels into {project}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    project = _project_dir(args)
    if not (project / "project.json").exists():
        raise DataError(f"no project in {project}; run init-project first")
    frontend = Path(args.frontend) if args.frontend else None
    app = create_app(project, frontend_dir=frontend)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


# --- parser ---

def build_parser() -> _Parser:
    parser = _Parser(prog="camloop",
                     description="Detector-to-classifier active learning loop for camera-trap crops.")
    parser.add_argument("--version", action="version", version=f"camloop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("ingest", help="parse detector JSON and extract crops")
    p.add_argument("detections", help="detector output JSON file")
    p.add_argument("imagedir", help="root directory of the source images")
    p.add_argument("--out", default="ingest_out", help="output directory (default: ingest_out)")
    p.add_argument("--min-confidence", type=float, default=DEFAULT_MIN_CONFIDENCE)
    p.add_argument("--categories", default=",".join(sorted(DEFAULT_ALLOWED_CATEGORIES)),
                   help="comma-separated category names to keep (default: animal)")
    p.add_argument("--padding", type=float, default=DEFAULT_PADDING_FRAC,
                   help="padding per side as a fraction of the box side")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="embed crops from a manifest into a vector store")
    p.add_argument("--manifest", required=True, help="crop manifest CSV")
    p.add_argument("--out", required=True, help="output store file")
    p.add_argument("--provider", default="synthetic",
                   help="synthetic | precomputed:<store> | onnx:<model>")
    p.add_argument("--dim", type=int, default=DEFAULT_SYNTHETIC_DIM,
                   help="dimension for the synthetic provider")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize", action="store_true", help="L2-normalize embeddings")
    p.add_argument("--image-root", help="image root for the onnx provider (default: manifest dir)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("init-project", help="create a project over embeddings + crops")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.add_argument("--embeddings", default="embeddings.emb1",
                   help="embedding store path, relative to the project dir")
    p.add_argument("--manifest", default="crops.csv",
                   help="crop manifest path, relative to the project dir")
    p.add_argument("--validation-labels", required=True,
                   help="labels CSV for the held-out validation set")
    p.add_argument("--classes", help="comma-separated class names (default: from validation labels)")
    p.add_argument("--strategy", choices=STRATEGIES, default=DEFAULT_STRATEGY)
    p.add_argument("--batch-size", type=int, default=DEFAULT_QUERY_BATCH)
    p.add_argument("--budget", type=int, default=None, help="label budget (default: pool size)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    p.add_argument("--project-id", default=None)
    p.set_defaults(func=cmd_init_project)

    p = sub.add_parser("simulate", help="run the loop on the synthetic benchmark pool")
    p.add_argument("--strategy", choices=STRATEGIES, default=DEFAULT_STRATEGY)
    p.add_argument("--budget", type=int, default=155)
    p.add_argument("--batch-size", type=int, default=DEFAULT_QUERY_BATCH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=TrainConfig().epochs)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--divisor", type=int, default=10,
                   help="divide the built-in class counts by this (min 2 per class)")
    p.add_argument("--out", default="curve.csv", help="learning-curve CSV path")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="retrain on everything labeled and close the round")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="evaluate a round's model against a labels CSV")
    p.add_argument("labels", help="labels CSV with ground truth")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.add_argument("--round", type=int, default=None, help="round number (default: latest)")
    p.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("export-curve", help="export the learning curve as CSV")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.set_defaults(func=cmd_export_curve)

    p = sub.add_parser("export-labels", help="export labels in spreadsheet-friendly CSV")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.add_argument("--out", default="labels_export.csv")
    p.set_defaults(func=cmd_export_labels)

    p = sub.add_parser("import-labels", help="import labels from a CSV into the pool")
    p.add_argument("labels", help="labels CSV to import")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.add_argument("--labeler", default="import", help="labeler recorded for rows without one")
    p.set_defaults(func=cmd_import_labels)

    p = sub.add_parser("serve", help="serve the labeling HTTP API")
    p.add_argument("--project", help="project directory (or CAMLOOP_PROJECT)")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--frontend", default=None, help="directory of built UI files to serve at /")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except DataError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
