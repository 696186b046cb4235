"""Pool-based active-learning loop with uncertainty sampling.

The loop scores the unlabeled pool with the current head, asks for labels on
the most uncertain batch, retrains from scratch, and records a learning
curve on a fixed held-out validation split. A fully automated simulation
mode answers queries from oracle labels; the synthetic pool generator stands
in for real camera-trap data with a matching class-imbalance profile.
"""
from __future__ import annotations

import io
import csv
import json
from dataclasses import dataclass, field, replace

import numpy as np

from .embeddings import EmbeddingStore
from .errors import DataError
from .head import HeadModel, TrainConfig, class_weights, predict_matrix, train
from .metrics import ConfusionMatrix, MetricsReport, confusion_matrix, metrics

STRATEGIES = ("least_confidence", "margin", "entropy", "random")
DEFAULT_STRATEGY = "entropy"
DEFAULT_QUERY_BATCH = 25
SEED_PER_CLASS = 2
VALIDATION_FRACTION = 0.2

# Default species/grouping taxonomy with reference image counts from a Hong
# Kong camera-trap survey; the counts drive the class-imbalance profile of
# the synthetic benchmark (scaled down 10x).
DEFAULT_GROUP_COUNTS = {
    "Birds": 185,
    "Canis Lupis familaris": 396,
    "Lutra lutra": 1445,
    "Felis catus": 80,
    "Herpestes javanicus": 71,
    "Hystrix brachyura": 3911,
    "Macaca mulatta": 1274,
    "Melogale spp.": 74,
    "Muntiacus spp.": 2733,
    "Other animal": 9,
    "Paguma larvata": 165,
    "Prionailurus bengaliensis": 1614,
    "Rodent": 185,
    "Sus scrofa": 2192,
    "Viverricula indica": 2084,
}
DEFAULT_CLASS_NAMES = list(DEFAULT_GROUP_COUNTS)


def scaled_group_counts(divisor: int = 10, floor: int = 2) -> dict[str, int]:
    """Reference counts scaled down (round half away from zero, floored)."""
    out = {}
    for name, n in DEFAULT_GROUP_COUNTS.items():
        out[name] = max(floor, int(n / divisor + 0.5))
    return out


class PoolError(DataError):
    pass


@dataclass(frozen=True)
class PoolState:
    """Labeled/unlabeled partition of the pool plus loop bookkeeping."""

    labeled: dict[str, str]  # crop_id -> class name, insertion-ordered
    unlabeled: tuple[str, ...]
    round: int
    label_budget: int
    strategy: str
    batch_size_query: int
    seed: int

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise PoolError(f"unknown strategy {self.strategy!r}; choose from {', '.join(STRATEGIES)}")
        if self.batch_size_query < 1:
            raise PoolError("batch_size_query must be >= 1")
        overlap = set(self.labeled) & set(self.unlabeled)
        if overlap:
            raise PoolError(f"labeled and unlabeled ids overlap: {sorted(overlap)[:5]}")

    @property
    def labels_used(self) -> int:
        return len(self.labeled)


@dataclass(frozen=True)
class QueryItem:
    crop_id: str
    score: float
    probs: tuple[float, ...]


@dataclass(frozen=True)
class QueryBatch:
    round: int
    items: tuple[QueryItem, ...]  # sorted by descending score, ties on id


@dataclass(frozen=True)
class CurvePoint:
    labels_used: int
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float


@dataclass
class LearningCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, point: CurvePoint) -> None:
        if self.points and point.labels_used <= self.points[-1].labels_used:
            raise PoolError("labels_used must be strictly increasing along the curve")
        self.points.append(point)


CURVE_HEADER = "labels_used,accuracy,macro_precision,macro_recall,macro_f1"


def curve_to_csv(curve: LearningCurve) -> str:
    buf = io.StringIO()
    buf.write(CURVE_HEADER + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    for p in curve.points:
        writer.writerow([p.labels_used, repr(p.accuracy), repr(p.macro_precision),
                         repr(p.macro_recall), repr(p.macro_f1)])
    return buf.getvalue()


def curve_from_csv(text: str) -> LearningCurve:
    lines = text.splitlines()
    if not lines or lines[0] != CURVE_HEADER:
        raise DataError("not a learning-curve CSV (bad header)")
    curve = LearningCurve()
    for row in csv.reader(lines[1:]):
        if row:
            curve.append(CurvePoint(int(row[0]), *(float(v) for v in row[1:])))
    return curve


# --- uncertainty scores ---

def score_least_confidence(p: np.ndarray) -> float:
    """1 - max probability; 0 at one-hot, 1 - 1/K at uniform."""
    return float(1.0 - np.max(p))


def score_margin(p: np.ndarray) -> float:
    """1 - (top probability - runner-up); 0 at one-hot, 1 at a tie."""
    top2 = np.sort(np.asarray(p))[-2:]
    return float(1.0 - (top2[1] - top2[0]))


def score_entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64)
    terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(-terms.sum())


def score_probs(P: np.ndarray, strategy: str) -> np.ndarray:
    """Vectorized uncertainty scores for a (n, K) probability matrix."""
    if strategy == "least_confidence":
        return 1.0 - P.max(axis=1)
    if strategy == "margin":
        part = np.sort(P, axis=1)
        return 1.0 - (part[:, -1] - part[:, -2])
    if strategy == "entropy":
        terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
        return -terms.sum(axis=1)
    if strategy == "random":
        # Scores are reported for audit but not used for ranking.
        return np.zeros(P.shape[0])
    raise PoolError(f"unknown strategy {strategy!r}")


def select_batch(scored: list[tuple[str, float, np.ndarray]], batch_size: int,
                 strategy: str, seed) -> list[QueryItem]:
    """Pick a query batch from (crop_id, score, probs) triples.

    Uncertainty strategies take the top scores with ties broken by ascending
    crop id; "random" samples uniformly without replacement, driven entirely
    by the seed. The result is always sorted by descending score then id.
    """
    if batch_size <= 0:
        raise PoolError("batch size must be positive")
    if strategy == "random":
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        take = min(batch_size, len(scored))
        chosen_idx = rng.choice(len(scored), size=take, replace=False)
        chosen = [scored[i] for i in chosen_idx]
    else:
        chosen = sorted(scored, key=lambda t: (-t[1], t[0]))[:batch_size]
    chosen.sort(key=lambda t: (-t[1], t[0]))
    return [QueryItem(crop_id=c, score=float(s), probs=tuple(float(v) for v in p))
            for c, s, p in chosen]


def apply_labels(state: PoolState, labels: list[tuple[str, str]], class_names: list[str]) -> PoolState:
    """Move ids from unlabeled to labeled, all-or-nothing.

    Offending rows (already labeled, unknown id, duplicate in the submission,
    unknown class) fail the whole call and leave the state untouched.
    """
    valid = set(class_names)
    unlabeled = set(state.unlabeled)
    problems = []
    seen = set()
    for cid, cls in labels:
        if cid in seen:
            problems.append(f"{cid}: duplicated in submission")
        seen.add(cid)
        if cid in state.labeled:
            problems.append(f"{cid}: already labeled")
        elif cid not in unlabeled:
            problems.append(f"{cid}: not in the unlabeled pool")
        if cls not in valid:
            problems.append(f"{cid}: unknown class {cls!r}; valid classes: {', '.join(class_names)}")
    if problems:
        raise PoolError("label submission rejected: " + "; ".join(problems))
    incoming = dict(labels)
    new_labeled = dict(state.labeled)
    new_labeled.update(incoming)
    new_unlabeled = tuple(i for i in state.unlabeled if i not in incoming)
    return replace(state, labeled=new_labeled, unlabeled=new_unlabeled)


def advance_round(state: PoolState) -> PoolState:
    return replace(state, round=state.round + 1)


# --- the loop ---

@dataclass
class LoopContext:
    """Everything a round needs besides the pool state itself."""

    store: EmbeddingStore
    class_names: list[str]
    val_ids: list[str]
    val_truths: list[str]
    train_config: TrainConfig


def training_weights(labels: list[str], class_names: list[str], config: TrainConfig) -> np.ndarray:
    """Per-class loss weights over the current labeled set.

    Classes absent from the labeled set keep weight 1 (no example carries
    them); present classes follow the inverse-frequency rule.
    """
    k = len(class_names)
    if config.weight_mode == "none":
        return np.ones(k)
    counts = np.zeros(k)
    index = {c: i for i, c in enumerate(class_names)}
    for lab in labels:
        counts[index[lab]] += 1
    if np.all(counts >= 1):
        return class_weights(counts, mode=config.weight_mode, cap=config.weight_cap)
    w = np.ones(k)
    present = counts >= 1
    w[present] = np.minimum(config.weight_cap, counts.sum() / (k * counts[present]))
    return w


def train_on_labeled(labeled: dict[str, str], ctx: LoopContext) -> HeadModel:
    """Retrain the head from scratch on the labeled set.

    The training matrix is assembled in sorted-crop_id order, so the result
    depends only on the labeled *set*, not on the order labels arrived.
    """
    ids = sorted(labeled)
    if not ids:
        raise PoolError("cannot train with an empty labeled set")
    X = ctx.store.matrix(ids)
    index = {c: i for i, c in enumerate(ctx.class_names)}
    y = np.array([index[labeled[i]] for i in ids], dtype=np.int64)
    weights = training_weights([labeled[i] for i in ids], ctx.class_names, ctx.train_config)
    model, _ = train(HeadModel.zeros(ctx.store.dimension, ctx.class_names), X, y,
                     ctx.train_config, weights)
    return model


def evaluate_on_validation(model: HeadModel, ctx: LoopContext) -> tuple[MetricsReport, ConfusionMatrix]:
    P = predict_matrix(model, ctx.store.matrix(ctx.val_ids))
    preds = [ctx.class_names[i] for i in np.argmax(P, axis=1)]
    cm = confusion_matrix(ctx.val_truths, preds, ctx.class_names)
    return metrics(cm), cm


def score_pool(model: HeadModel, ctx: LoopContext, unlabeled: tuple[str, ...],
               strategy: str) -> list[tuple[str, float, np.ndarray]]:
    if not unlabeled:
        return []
    P = predict_matrix(model, ctx.store.matrix(list(unlabeled)))
    scores = score_probs(P, strategy)
    return [(cid, float(scores[i]), P[i]) for i, cid in enumerate(unlabeled)]


@dataclass
class RoundOutcome:
    state: PoolState
    model: HeadModel
    report: MetricsReport
    confusion: ConfusionMatrix
    point: CurvePoint
    batch: QueryBatch | None  # None once the budget or the pool is exhausted


def run_round(state: PoolState, ctx: LoopContext, oracle: dict[str, str] | None = None) -> RoundOutcome:
    """One complete cycle: retrain, evaluate, score, query, (oracle-)label.

    With an oracle, the returned state has the batch labeled and the round
    advanced. Without one (live mode), the batch is returned for a human to
    answer and the state is unchanged. A None batch signals the terminal
    round: evaluation still happens, but nothing is queried.
    """
    model = train_on_labeled(state.labeled, ctx)
    report, cm = evaluate_on_validation(model, ctx)
    point = CurvePoint(labels_used=state.labels_used, accuracy=report.accuracy,
                       macro_precision=report.macro_precision, macro_recall=report.macro_recall,
                       macro_f1=report.macro_f1)
    remaining_budget = state.label_budget - state.labels_used
    if remaining_budget <= 0 or not state.unlabeled:
        return RoundOutcome(state=state, model=model, report=report, confusion=cm,
                            point=point, batch=None)
    take = min(state.batch_size_query, remaining_budget, len(state.unlabeled))
    scored = score_pool(model, ctx, state.unlabeled, state.strategy)
    rng = np.random.default_rng([state.seed, 3, state.round])
    items = select_batch(scored, take, state.strategy, rng)
    batch = QueryBatch(round=state.round, items=tuple(items))
    if oracle is not None:
        answers = [(item.crop_id, oracle[item.crop_id]) for item in batch.items]
        state = advance_round(apply_labels(state, answers, ctx.class_names))
    return RoundOutcome(state=state, model=model, report=report, confusion=cm,
                        point=point, batch=batch)


# --- simulation ---

@dataclass
class PoolDataset:
    """Embeddings plus oracle labels for every item."""

    store: EmbeddingStore
    labels: dict[str, str]
    class_names: list[str]

    def ids(self) -> list[str]:
        return sorted(self.labels)


@dataclass(frozen=True)
class SimulationConfig:
    strategy: str = DEFAULT_STRATEGY
    label_budget: int = 155
    batch_size_query: int = DEFAULT_QUERY_BATCH
    seed: int = 0
    seed_per_class: int = SEED_PER_CLASS
    validation_fraction: float = VALIDATION_FRACTION
    train: TrainConfig = TrainConfig()


@dataclass
class SimulationResult:
    curve: LearningCurve
    final_model: HeadModel
    final_state: PoolState
    rounds: list[RoundOutcome]
    val_ids: list[str]


def stratified_split(ids: list[str], labels: dict[str, str], fraction: float,
                     rng: np.random.Generator) -> tuple[list[str], list[str]]:
    """Split ids into (held_out, rest) per class; every class keeps >= 1 held out."""
    by_class: dict[str, list[str]] = {}
    for cid in ids:
        by_class.setdefault(labels[cid], []).append(cid)
    held, rest = [], []
    for cls in sorted(by_class):
        members = sorted(by_class[cls])
        rng.shuffle(members)
        n_held = max(1, int(len(members) * fraction + 0.5))
        held.extend(members[:n_held])
        rest.extend(members[n_held:])
    return sorted(held), sorted(rest)


def stratified_seed_sample(pool_ids: list[str], labels: dict[str, str], per_class: int,
                           rng: np.random.Generator) -> list[str]:
    by_class: dict[str, list[str]] = {}
    for cid in pool_ids:
        by_class.setdefault(labels[cid], []).append(cid)
    chosen = []
    for cls in sorted(by_class):
        members = sorted(by_class[cls])
        rng.shuffle(members)
        chosen.extend(members[:per_class])
    return sorted(chosen)


def simulate(dataset: PoolDataset, config: SimulationConfig,
             val_ids: list[str] | None = None,
             pool_ids: list[str] | None = None) -> SimulationResult:
    """Run the full loop with oracle answers until the budget is exhausted."""
    all_ids = dataset.ids()
    if val_ids is None and pool_ids is None:
        val_ids, pool_ids = stratified_split(all_ids, dataset.labels, config.validation_fraction,
                                             np.random.default_rng([config.seed, 1]))
    elif val_ids is None:
        val_ids = [i for i in all_ids if i not in set(pool_ids)]
    elif pool_ids is None:
        pool_ids = [i for i in all_ids if i not in set(val_ids)]
    overlap = set(val_ids) & set(pool_ids)
    if overlap:
        raise PoolError(f"validation split overlaps the pool: {sorted(overlap)[:5]}")
    missing = [i for i in list(val_ids) + list(pool_ids) if i not in dataset.labels]
    if missing:
        raise PoolError(f"ids without oracle labels: {missing[:5]}")

    ctx = LoopContext(store=dataset.store, class_names=dataset.class_names,
                      val_ids=list(val_ids), val_truths=[dataset.labels[i] for i in val_ids],
                      train_config=config.train)
    state = PoolState(labeled={}, unlabeled=tuple(pool_ids), round=0,
                      label_budget=config.label_budget, strategy=config.strategy,
                      batch_size_query=config.batch_size_query, seed=config.seed)
    seed_ids = stratified_seed_sample(list(pool_ids), dataset.labels, config.seed_per_class,
                                      np.random.default_rng([config.seed, 2]))
    state = apply_labels(state, [(i, dataset.labels[i]) for i in seed_ids], dataset.class_names)

    curve = LearningCurve()
    rounds: list[RoundOutcome] = []
    while True:
        outcome = run_round(state, ctx, oracle=dataset.labels)
        curve.append(outcome.point)
        rounds.append(outcome)
        if outcome.batch is None:
            break
        state = outcome.state
    return SimulationResult(curve=curve, final_model=rounds[-1].model,
                            final_state=rounds[-1].state, rounds=rounds, val_ids=list(val_ids))


def batch_to_dict(batch: QueryBatch) -> dict:
    return {
        "round": batch.round,
        "items": [
            {"crop_id": it.crop_id, "score": it.score, "probs": list(it.probs)}
            for it in batch.items
        ],
    }


def audit_record(outcome: RoundOutcome) -> str:
    """Per-round JSON audit line: the chosen batch with scores."""
    payload = {
        "round": outcome.batch.round if outcome.batch else outcome.state.round,
        "labels_used": outcome.point.labels_used,
        "batch": batch_to_dict(outcome.batch) if outcome.batch else None,
    }
    return json.dumps(payload, sort_keys=True)


# --- synthetic data ---

def generate_synthetic_pool(class_counts: dict[str, int], dimension: int = 32,
                            cluster_separation: float = 4.0, noise_sigma: float = 1.0,
                            seed: int = 0) -> PoolDataset:
    """Gaussian clusters around seeded random unit directions.

    Class means are unit vectors scaled by cluster_separation; examples add
    isotropic noise. Deterministic for a fixed seed, including ids.
    """
    names = list(class_counts)
    if len(names) < 2:
        raise PoolError("need at least 2 classes")
    if any(n < 1 for n in class_counts.values()):
        raise PoolError("every class needs at least 1 example")
    rng = np.random.default_rng(seed)
    store = EmbeddingStore(dimension=dimension, provider_tag=f"synthetic-pool-d{dimension}-seed{seed}")
    labels: dict[str, str] = {}
    counter = 0
    for name in names:
        direction = rng.standard_normal(dimension)
        mean = direction / np.linalg.norm(direction) * cluster_separation
        for _ in range(class_counts[name]):
            vec = mean + rng.standard_normal(dimension) * noise_sigma
            cid = f"syn-{counter:05d}"
            store.add(cid, vec)
            labels[cid] = name
            counter += 1
    return PoolDataset(store=store, labels=labels, class_names=names)
