"""Live-loop orchestration over a project directory.

The HTTP service and the CLI both drive the labeling loop through this
layer: bootstrap a project, accept label submissions against the pending
query batch, and complete rounds (retrain, evaluate, write immutable round
artifacts, issue the next batch). Every mutation is persisted before the
call returns.
"""
from __future__ import annotations

import dataclasses
import json
import uuid
from pathlib import Path

import numpy as np

from .active import (
    CurvePoint,
    LearningCurve,
    LoopContext,
    PoolState,
    QueryBatch,
    batch_to_dict,
    score_pool,
    select_batch,
    train_on_labeled,
    evaluate_on_validation,
    DEFAULT_QUERY_BATCH,
    DEFAULT_STRATEGY,
    apply_labels,
)
from .embeddings import load_store
from .errors import DataError
from .head import HeadModel, TrainConfig, load_model, save_model
from .metrics import confusion_to_csv, report_to_dict
from .project import (
    LabelRecord,
    ProjectState,
    RoundArtifacts,
    load_project,
    save_project,
    utc_now_iso,
)


class SessionError(DataError):
    pass


class InvalidLabels(DataError):
    """Carries per-row validation failures for a label submission."""

    def __init__(self, rows: list[dict]):
        self.rows = rows
        super().__init__("invalid label rows: " + "; ".join(r["reason"] for r in rows))


def init_project(project_dir: Path, class_names: list[str], validation: dict[str, str],
                 embeddings_path: str = "embeddings.emb1", crop_manifest_path: str = "crops.csv",
                 strategy: str = DEFAULT_STRATEGY, batch_size_query: int = DEFAULT_QUERY_BATCH,
                 label_budget: int | None = None, seed: int = 0,
                 train_config: TrainConfig | None = None, project_id: str | None = None) -> ProjectState:
    """Create a project over existing embeddings + crop manifest.

    The unlabeled pool is every embedded crop not held out for validation.
    The bootstrap query batch is a seeded uniform random sample (no model
    exists yet to rank uncertainty), reported with uniform probabilities.
    """
    project_dir = Path(project_dir)
    store = load_store(project_dir / embeddings_path)
    val = dict(validation)
    unknown_val = [i for i in val if i not in store.vectors]
    if unknown_val:
        raise SessionError(f"validation ids missing from the embedding store: {unknown_val[:5]}")
    pool_ids = tuple(i for i in store.ids() if i not in val)
    if not pool_ids:
        raise SessionError("empty pool: every embedded crop is held out for validation")
    pool = PoolState(labeled={}, unlabeled=pool_ids, round=0,
                     label_budget=label_budget if label_budget is not None else len(pool_ids),
                     strategy=strategy, batch_size_query=batch_size_query, seed=seed)
    state = ProjectState(
        project_id=project_id or f"{project_dir.name}-{uuid.uuid4().hex[:8]}",
        class_names=list(class_names),
        embeddings_path=embeddings_path,
        crop_manifest_path=crop_manifest_path,
        pool=pool,
        validation=val,
        label_records=[],
        history=[],
        train_config=train_config or TrainConfig(),
        current_batch=None,
    )
    session = ProjectSession(project_dir, state)
    session.state = dataclasses.replace(state, current_batch=session._bootstrap_batch())
    session.save()
    return session.state


class ProjectSession:
    """One loaded project plus the operations of the labeling loop."""

    def __init__(self, project_dir: Path, state: ProjectState | None = None):
        self.project_dir = Path(project_dir)
        self.state = state if state is not None else load_project(self.project_dir)
        self._store = None

    @property
    def store(self):
        if self._store is None:
            self._store = load_store(self.project_dir / self.state.embeddings_path)
        return self._store

    def save(self) -> None:
        save_project(self.state, self.project_dir)

    def context(self) -> LoopContext:
        val_ids = sorted(self.state.validation)
        return LoopContext(store=self.store, class_names=self.state.class_names,
                           val_ids=val_ids,
                           val_truths=[self.state.validation[i] for i in val_ids],
                           train_config=self.state.train_config)

    # --- batch / labels ---

    def pending_items(self, state: ProjectState | None = None):
        state = state if state is not None else self.state
        batch = state.current_batch
        if batch is None:
            return []
        labeled = state.pool.labeled
        return [it for it in batch.items if it.crop_id not in labeled]

    def _bootstrap_batch(self) -> QueryBatch | None:
        pool = self.state.pool
        take = min(pool.batch_size_query, pool.label_budget, len(pool.unlabeled))
        if take <= 0:
            return None
        model = HeadModel.zeros(self.store.dimension, self.state.class_names)
        scored = score_pool(model, self.context(), pool.unlabeled, pool.strategy)
        rng = np.random.default_rng([pool.seed, 4])
        items = select_batch(scored, take, "random", rng)
        return QueryBatch(round=pool.round, items=tuple(items))

    def validate_labels(self, labels: list[tuple[str, str]]) -> list[dict]:
        """Per-row problems for a submission against the pending batch."""
        pending = {it.crop_id for it in self.pending_items()}
        lower_index = {c.lower(): c for c in self.state.class_names}
        problems = []
        seen = set()
        for cid, species in labels:
            reasons = []
            if cid in seen:
                reasons.append("duplicated in submission")
            seen.add(cid)
            if cid not in pending:
                reasons.append("not in the current query batch")
            if species not in self.state.class_names:
                hint = lower_index.get(species.lower())
                if hint:
                    reasons.append(f"unknown species (case mismatch; did you mean {hint!r}?)")
                else:
                    reasons.append("unknown species")
            if reasons:
                problems.append({"crop_id": cid, "species": species, "reason": "; ".join(reasons)})
        return problems

    def apply_label_batch(self, labels: list[tuple[str, str]], labeler: str = "human",
                          now: str | None = None) -> bool:
        """Apply labels against the pending batch, all-or-nothing, and persist.

        Returns True when this submission completed the batch (caller should
        trigger a retrain).
        """
        if not labels:
            raise InvalidLabels([{"crop_id": "", "species": "", "reason": "empty submission"}])
        problems = self.validate_labels(labels)
        if problems:
            raise InvalidLabels(problems)
        new_pool = apply_labels(self.state.pool, labels, self.state.class_names)
        stamp = now or utc_now_iso()
        new_records = list(self.state.label_records)
        new_records.extend(LabelRecord(crop_id=cid, species=sp, labeler=labeler, timestamp_utc=stamp)
                           for cid, sp in labels)
        self.state = dataclasses.replace(self.state, pool=new_pool, label_records=new_records)
        self.save()
        return not self.pending_items()

    # --- rounds ---

    def complete_round(self) -> RoundArtifacts:
        """Retrain on everything labeled, evaluate, persist round artifacts, issue the next batch."""
        state = self.state
        if not state.pool.labeled:
            raise SessionError("nothing labeled yet; cannot retrain")
        if not state.validation:
            raise SessionError("project has no validation labels; metrics need a held-out set")
        ctx = self.context()
        model = train_on_labeled(state.pool.labeled, ctx)
        report, cm = evaluate_on_validation(model, ctx)

        round_no = state.pool.round + 1
        round_dir = self.project_dir / "rounds" / f"{round_no:04d}"
        round_dir.mkdir(parents=True, exist_ok=False)  # history is immutable
        rel = f"rounds/{round_no:04d}"
        save_model(model, round_dir / "model.alhd1")
        metrics_payload = {
            "round": round_no,
            "labels_used": state.pool.labels_used,
            "report": report_to_dict(report),
            "confusion": {"class_names": cm.class_names, "matrix": cm.counts.tolist()},
        }
        (round_dir / "metrics.json").write_text(
            json.dumps(metrics_payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        query_payload = batch_to_dict(state.current_batch) if state.current_batch else None
        (round_dir / "query.json").write_text(
            json.dumps({"answered_batch": query_payload}, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (round_dir / "confusion.csv").write_text(confusion_to_csv(cm), encoding="utf-8")

        artifacts = RoundArtifacts(round=round_no, model_path=f"{rel}/model.alhd1",
                                   metrics_path=f"{rel}/metrics.json", query_path=f"{rel}/query.json",
                                   labels_used=state.pool.labels_used)
        new_pool = dataclasses.replace(state.pool, round=round_no)

        # Issue the next query batch with the fresh model.
        next_batch = None
        take = min(new_pool.batch_size_query, new_pool.label_budget - new_pool.labels_used,
                   len(new_pool.unlabeled))
        if take > 0:
            scored = score_pool(model, ctx, new_pool.unlabeled, new_pool.strategy)
            rng = np.random.default_rng([new_pool.seed, 3, new_pool.round])
            items = select_batch(scored, take, new_pool.strategy, rng)
            next_batch = QueryBatch(round=new_pool.round, items=tuple(items))

        # Single reference swap: concurrent readers see the old state or the
        # new one, never a half-advanced round.
        self.state = dataclasses.replace(state, pool=new_pool,
                                         history=list(state.history) + [artifacts],
                                         current_batch=next_batch)
        self.save()
        return artifacts

    # --- read models / metrics ---

    def latest_model(self) -> HeadModel:
        if not self.state.history:
            raise SessionError("no completed rounds yet; no model to load")
        return load_model(self.project_dir / self.state.history[-1].model_path)

    def round_metrics(self, artifacts: RoundArtifacts) -> dict:
        return json.loads((self.project_dir / artifacts.metrics_path).read_text(encoding="utf-8"))

    def learning_curve(self, state: ProjectState | None = None) -> LearningCurve:
        state = state if state is not None else self.state
        # Collapse repeated retrains at one budget: the latest round wins.
        by_budget: dict[int, CurvePoint] = {}
        for h in state.history:
            payload = self.round_metrics(h)
            rep = payload["report"]
            by_budget[payload["labels_used"]] = CurvePoint(
                labels_used=payload["labels_used"], accuracy=rep["accuracy"],
                macro_precision=rep["macro_precision"],
                macro_recall=rep["macro_recall"], macro_f1=rep["macro_f1"])
        curve = LearningCurve()
        for budget in sorted(by_budget):
            curve.append(by_budget[budget])
        return curve
