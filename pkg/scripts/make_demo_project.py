#!/usr/bin/env python3
"""Build a ready-to-serve demo project from synthetic data.

Creates a project directory containing crop images, a crop manifest, an
embedding store, a held-out validation label file, an oracle label file
covering every crop (handy for scripted demos), and an initialized project
with a pending bootstrap batch. Afterwards:

    camloop serve --project <out> --frontend frontend/dist
"""
from __future__ import annotations

import argparse
import colorsys
import csv
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from PIL import Image

from camloop.active import generate_synthetic_pool, scaled_group_counts, stratified_split
from camloop.detections import CropRecord, PixelRect, write_crop_manifest
from camloop.embeddings import save_store
from camloop.head import TrainConfig
from camloop.project import LABELS_HEADER
from camloop.session import init_project

STAMP = "2026-01-05T00:00:00Z"
CROP_SIDE = 48


def class_palette(names: list[str]) -> dict[str, tuple[int, int, int]]:
    colors = {}
    for i, name in enumerate(names):
        r, g, b = colorsys.hsv_to_rgb(i / max(1, len(names)), 0.55, 0.85)
        colors[name] = (int(r * 255), int(g * 255), int(b * 255))
    return colors


def write_crop_png(path: Path, base: tuple[int, int, int], rng: np.random.Generator) -> None:
    noise = rng.integers(-28, 29, size=(CROP_SIDE, CROP_SIDE, 3))
    img = np.clip(np.array(base, dtype=np.int16) + noise, 0, 255).astype(np.uint8)
    Image.fromarray(img, mode="RGB").save(path, format="PNG")


def write_labels_file(path: Path, rows: list[tuple[str, str, str]], sources: dict[str, str]) -> None:
    """rows: (crop_id, species, labeler)."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LABELS_HEADER)
        for crop_id, species, labeler in rows:
            source = sources.get(crop_id, "")
            parts = source.rsplit("/", 1)
            file_name = parts[-1]
            rel_path = parts[0] if len(parts) == 2 else ""
            writer.writerow([file_name, rel_path, crop_id, species, labeler, STAMP])


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    parser.add_argument("--out", type=Path, default=Path("demo_project"))
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--dim", type=int, default=32)
    parser.add_argument("--separation", type=float, default=4.0)
    parser.add_argument("--sigma", type=float, default=1.0)
    parser.add_argument("--divisor", type=int, default=10, help="class-count divisor")
    parser.add_argument("--strategy", default="entropy",
                        choices=["least_confidence", "margin", "entropy", "random"])
    parser.add_argument("--batch-size", type=int, default=25)
    parser.add_argument("--budget", type=int, default=None, help="label budget (default: whole pool)")
    parser.add_argument("--epochs", type=int, default=20, help="epochs per retrain (kept small for snappy demos)")
    args = parser.parse_args(argv)

    out: Path = args.out
    if out.exists() and any(out.iterdir()):
        parser.error(f"{out} already exists and is not empty")
    (out / "crops").mkdir(parents=True, exist_ok=True)

    counts = scaled_group_counts(args.divisor)
    pool = generate_synthetic_pool(counts, dimension=args.dim,
                                   cluster_separation=args.separation,
                                   noise_sigma=args.sigma, seed=args.seed)
    ids = pool.ids()
    palette = class_palette(pool.class_names)

    # Crop images + manifest. Four crops per fabricated camera image.
    png_rng = np.random.default_rng([args.seed, 99])
    records = []
    sources = {}
    for i, cid in enumerate(ids):
        species = pool.labels[cid]
        source = f"site-{i % 5:02d}/IMG_{i // 4:05d}.JPG"
        sources[cid] = source
        crop_path = f"crops/{cid}.png"
        write_crop_png(out / crop_path, palette[species], png_rng)
        rect = PixelRect(left=16 + (i % 4) * 60, top=24, width=CROP_SIDE, height=CROP_SIDE)
        records.append(CropRecord(crop_id=cid, source_image=source, rect=rect,
                                  detection_confidence=round(0.6 + 0.39 * ((i * 37) % 100) / 99, 3),
                                  crop_path=crop_path))
    write_crop_manifest(records, out / "crops.csv")
    save_store(pool.store, out / "embeddings.emb1")

    # Same split the simulator would make: stratified, ~20%, >= 1 per class.
    val_ids, _ = stratified_split(ids, pool.labels, 0.2, np.random.default_rng([args.seed, 1]))
    write_labels_file(out / "validation_labels.csv",
                      [(cid, pool.labels[cid], "oracle") for cid in sorted(val_ids)], sources)
    write_labels_file(out / "oracle_labels.csv",
                      [(cid, pool.labels[cid], "oracle") for cid in ids], sources)

    state = init_project(
        out,
        class_names=pool.class_names,
        validation={cid: pool.labels[cid] for cid in val_ids},
        strategy=args.strategy,
        batch_size_query=args.batch_size,
        label_budget=args.budget,
        seed=args.seed,
        train_config=TrainConfig(epochs=args.epochs, seed=args.seed),
        project_id=f"demo-{args.seed}",
    )
    n_pool = len(state.pool.unlabeled)
    print(f"demo project written to {out}")
    print(f"  classes: {len(pool.class_names)}  crops: {len(ids)}  pool: {n_pool}  validation: {len(val_ids)}")
    print(f"  strategy: {args.strategy}  batch size: {args.batch_size}  budget: {state.pool.label_budget}")
    print(f"serve it with: camloop serve --project {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
