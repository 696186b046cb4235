"""Project directory persistence and the label CSV exchange format.

Layout: project.json (state + config), labels.csv (the label log, one row
per labeled crop), embeddings.emb1, crops.csv, and rounds/NNNN/ with the
per-round model, metrics, and query artifacts. Writes go through a temp
file + rename, so a crash never corrupts a previously loadable state.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path

from .active import PoolState, QueryBatch, QueryItem, apply_labels, batch_to_dict
from .errors import DataError
from .head import TrainConfig

FORMAT_VERSION = 1
PROJECT_FILE = "project.json"
LABELS_FILE = "labels.csv"
LOCK_FILE = "project.lock"
LABELS_HEADER = ["File", "RelativePath", "CropId", "Species", "Labeler", "TimestampUTC"]


class ProjectError(DataError):
    pass


class ProjectLockError(DataError):
    pass


def utc_now_iso() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass(frozen=True)
class LabelRecord:
    crop_id: str
    species: str
    labeler: str
    timestamp_utc: str


@dataclass(frozen=True)
class RoundArtifacts:
    round: int
    model_path: str
    metrics_path: str
    query_path: str
    labels_used: int


@dataclass
class ProjectState:
    project_id: str
    class_names: list[str]
    embeddings_path: str  # relative to the project dir
    crop_manifest_path: str
    pool: PoolState
    validation: dict[str, str]  # crop_id -> species, held out, never queried
    label_records: list[LabelRecord]
    history: list[RoundArtifacts]
    train_config: TrainConfig
    current_batch: QueryBatch | None = None
    format_version: int = FORMAT_VERSION


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def _labels_csv_bytes(state: ProjectState, manifest_index: dict[str, str]) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABELS_HEADER)
    for rec in state.label_records:
        source = manifest_index.get(rec.crop_id, "")
        if source:
            parts = source.replace("\\", "/").rsplit("/", 1)
            file_name = parts[-1]
            rel_path = parts[0] if len(parts) == 2 else ""
        else:
            file_name = rel_path = ""
        writer.writerow([file_name, rel_path, rec.crop_id, rec.species, rec.labeler, rec.timestamp_utc])
    return buf.getvalue().encode("utf-8")


def _manifest_index(project_dir: Path, state: ProjectState) -> dict[str, str]:
    from .detections import read_crop_manifest

    manifest = project_dir / state.crop_manifest_path
    if not manifest.exists():
        return {}
    return {c.crop_id: c.source_image for c in read_crop_manifest(manifest)}


def save_project(state: ProjectState, project_dir: Path) -> None:
    project_dir = Path(project_dir)
    project_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": state.format_version,
        "project_id": state.project_id,
        "class_names": state.class_names,
        "paths": {"embeddings": state.embeddings_path, "crop_manifest": state.crop_manifest_path},
        "pool": {
            "round": state.pool.round,
            "label_budget": state.pool.label_budget,
            "strategy": state.pool.strategy,
            "batch_size_query": state.pool.batch_size_query,
            "seed": state.pool.seed,
            "unlabeled": list(state.pool.unlabeled),
        },
        "validation": state.validation,
        "train_config": asdict(state.train_config),
        "history": [
            {"round": h.round, "model": h.model_path, "metrics": h.metrics_path,
             "query": h.query_path, "labels_used": h.labels_used}
            for h in state.history
        ],
        "current_batch": batch_to_dict(state.current_batch) if state.current_batch else None,
    }
    _atomic_write(project_dir / PROJECT_FILE,
                  (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    _atomic_write(project_dir / LABELS_FILE, _labels_csv_bytes(state, _manifest_index(project_dir, state)))


def load_project(project_dir: Path) -> ProjectState:
    project_dir = Path(project_dir)
    pfile = project_dir / PROJECT_FILE
    if not pfile.exists():
        raise ProjectError(f"{project_dir} is not a project (no {PROJECT_FILE})")
    try:
        payload = json.loads(pfile.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ProjectError(f"{pfile}: invalid JSON: {e}") from e
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ProjectError(
            f"{pfile}: format_version {version} is not supported by this build (expected {FORMAT_VERSION}); "
            "migrate the project first")

    records = read_labels_csv(project_dir / LABELS_FILE) if (project_dir / LABELS_FILE).exists() else []
    pool_raw = payload["pool"]
    labeled = {r.crop_id: r.species for r in records}
    pool = PoolState(
        labeled=labeled,
        unlabeled=tuple(pool_raw["unlabeled"]),
        round=pool_raw["round"],
        label_budget=pool_raw["label_budget"],
        strategy=pool_raw["strategy"],
        batch_size_query=pool_raw["batch_size_query"],
        seed=pool_raw["seed"],
    )
    batch_raw = payload.get("current_batch")
    batch = None
    if batch_raw:
        batch = QueryBatch(round=batch_raw["round"],
                           items=tuple(QueryItem(crop_id=i["crop_id"], score=i["score"],
                                                 probs=tuple(i["probs"]))
                                       for i in batch_raw["items"]))
    state = ProjectState(
        project_id=payload["project_id"],
        class_names=list(payload["class_names"]),
        embeddings_path=payload["paths"]["embeddings"],
        crop_manifest_path=payload["paths"]["crop_manifest"],
        pool=pool,
        validation=dict(payload.get("validation", {})),
        label_records=records,
        history=[RoundArtifacts(round=h["round"], model_path=h["model"], metrics_path=h["metrics"],
                                query_path=h["query"], labels_used=h["labels_used"])
                 for h in payload.get("history", [])],
        train_config=TrainConfig(**payload["train_config"]),
        current_batch=batch,
        format_version=version,
    )
    missing = [p for p in (state.embeddings_path, state.crop_manifest_path)
               if not (project_dir / p).exists()]
    missing += [h.model_path for h in state.history if not (project_dir / h.model_path).exists()]
    if missing:
        raise ProjectError(f"{project_dir}: referenced files are missing: {', '.join(missing)}")
    return state


def read_labels_csv(path: Path) -> list[LabelRecord]:
    text = Path(path).read_text(encoding="utf-8")
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or rows[0] != LABELS_HEADER:
        raise ProjectError(f"{path}: not a label CSV (expected header {','.join(LABELS_HEADER)})")
    records = []
    for row in rows[1:]:
        if not row:
            continue
        if len(row) != len(LABELS_HEADER):
            raise ProjectError(f"{path}: row has {len(row)} fields, expected {len(LABELS_HEADER)}: {row!r}")
        _, _, crop_id, species, labeler, ts = row
        records.append(LabelRecord(crop_id=crop_id, species=species, labeler=labeler, timestamp_utc=ts))
    return records


def export_labels_csv(state: ProjectState, project_dir: Path, out_path: Path) -> int:
    """Write the labeled set to a Timelapse-style CSV. Returns the row count."""
    data = _labels_csv_bytes(state, _manifest_index(Path(project_dir), state))
    Path(out_path).write_bytes(data)
    return len(state.label_records)


def import_labels_csv(path: Path, state: ProjectState, labeler_fallback: str = "import",
                      now: str | None = None) -> tuple[ProjectState, int]:
    """Validate and apply labels from a CSV, all-or-nothing.

    Every offending row is reported (unknown class with a case-mismatch hint
    where one applies, duplicate crop ids). Returns (new state, rows applied).
    """
    records = read_labels_csv(path)
    problems = []
    seen: set[str] = set()
    lower_index = {c.lower(): c for c in state.class_names}
    for i, rec in enumerate(records, start=2):  # header is line 1
        if rec.crop_id in seen:
            problems.append(f"line {i}: duplicate crop_id {rec.crop_id}")
        seen.add(rec.crop_id)
        if rec.species not in state.class_names:
            hint = lower_index.get(rec.species.lower())
            if hint:
                problems.append(f"line {i}: unknown species {rec.species!r} (case mismatch; did you mean {hint!r}?)")
            else:
                problems.append(f"line {i}: unknown species {rec.species!r}")
    if problems:
        raise ProjectError("label import rejected, nothing applied: " + "; ".join(problems))
    new_pool = apply_labels(state.pool, [(r.crop_id, r.species) for r in records], state.class_names)
    stamp = now or utc_now_iso()
    new_records = list(state.label_records)
    for rec in records:
        new_records.append(LabelRecord(crop_id=rec.crop_id, species=rec.species,
                                       labeler=rec.labeler or labeler_fallback,
                                       timestamp_utc=rec.timestamp_utc or stamp))
    new_state = dataclasses.replace(state, pool=new_pool, label_records=new_records)
    return new_state, len(records)


class ProjectLock:
    """Single-writer lock on a project directory (lock file with the owner pid)."""

    def __init__(self, project_dir: Path):
        self.path = Path(project_dir) / LOCK_FILE
        self._fd = None

    def acquire(self) -> "ProjectLock":
        try:
            self._fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            owner = "unknown"
            try:
                owner = self.path.read_text().strip()
            except OSError:
                pass
            raise ProjectLockError(
                f"project is locked by another writer (pid {owner}); remove {self.path} if it is stale")
        os.write(self._fd, str(os.getpid()).encode())
        os.close(self._fd)
        return self

    def release(self) -> None:
        try:
            self.path.unlink()
        except FileNotFoundError:
            pass

    def __enter__(self):
        return self.acquire()

    def __exit__(self, *exc):
        self.release()
