"""Class-weighted multinomial-logistic head over embeddings.

A single linear softmax layer trained with mini-batch gradient descent plus
momentum, in double precision throughout. Deliberately small enough that the
gradients stay hand-checkable against finite differences.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .embeddings import EmbeddingStore
from .errors import DataError

MODEL_MAGIC = b"ALHD1"


class ModelFormatError(DataError):
    """Model file does not match the declared layout."""


class TrainingDiverged(DataError):
    """Loss went non-finite during training (learning rate too high?)."""


@dataclass
class HeadModel:
    W: np.ndarray  # (K, d) float64
    b: np.ndarray  # (K,) float64
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def dimension(self) -> int:
        return self.W.shape[1]

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        k, d = self.W.shape
        if self.b.shape != (k,):
            raise ValueError(f"bias shape {self.b.shape} does not match {k} classes")
        if len(self.class_names) != k or len(set(self.class_names)) != k:
            raise ValueError("class_names must be unique and match the weight rows")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("model parameters must be finite")

    @classmethod
    def zeros(cls, dimension: int, class_names: list[str]) -> "HeadModel":
        k = len(class_names)
        return cls(W=np.zeros((k, dimension)), b=np.zeros(k), class_names=list(class_names))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    momentum: float = 0.9
    l2_lambda: float = 1e-4
    batch_size: int = 64
    epochs: int = 100
    seed: int = 0
    weight_mode: str = "inverse_frequency"  # or "none"
    weight_cap: float = 50.0

    def __post_init__(self):
        # 0 is allowed: a zero step leaves the model unchanged, which keeps
        # "training with lr=0 is a no-op" checkable.
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.weight_mode not in ("none", "inverse_frequency"):
            raise ValueError(f"unknown weight_mode {self.weight_mode!r}")
        if self.weight_cap <= 0:
            raise ValueError("weight_cap must be > 0")


@dataclass
class TrainHistory:
    epoch_losses: list[float] = field(default_factory=list)  # full-batch loss at each epoch start
    final_loss: float = float("nan")


@dataclass(frozen=True)
class PredictionRecord:
    crop_id: str
    logits: np.ndarray
    probs: np.ndarray
    argmax: int
    confidence: float


def softmax(z: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise ValueError("softmax input must be finite")
    shifted = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def class_weights(counts: np.ndarray, mode: str = "inverse_frequency", cap: float = 50.0) -> np.ndarray:
    """Per-class loss weights from class counts.

    inverse_frequency: w_c = min(cap, N / (K * n_c)), so a balanced dataset
    gets all-ones and rare classes are boosted up to the cap.
    """
    counts = np.asarray(counts, dtype=np.float64)
    k = counts.shape[0]
    if mode == "none":
        return np.ones(k)
    if mode != "inverse_frequency":
        raise ValueError(f"unknown weight mode {mode!r}")
    zero = np.nonzero(counts == 0)[0]
    if zero.size:
        raise DataError(f"inverse_frequency weighting needs every class count >= 1; "
                        f"zero-count class indices: {zero.tolist()}")
    total = counts.sum()
    return np.minimum(cap, total / (k * counts))


def loss_and_grad(W: np.ndarray, b: np.ndarray, X: np.ndarray, y: np.ndarray,
                  sample_weights: np.ndarray, l2_lambda: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Weighted cross-entropy with L2 on W, plus exact analytic gradients.

    loss = -(1/B) sum_i w_{y_i} log p_{i,y_i} + (lambda/2) ||W||_F^2
    X is (B, d), y is (B,) int class indices, sample_weights is per-class (K,).
    """
    n = X.shape[0]
    if n == 0:
        raise ValueError("batch must be nonempty")
    k = W.shape[0]
    if y.min() < 0 or y.max() >= k:
        raise DataError(f"label out of range [0, {k}): {y.min()}..{y.max()}")
    Z = X @ W.T + b
    P = softmax(Z)
    wy = sample_weights[y]
    with np.errstate(divide="ignore"):  # log(0) -> -inf is caught as divergence upstream
        loss = float(-(wy * np.log(P[np.arange(n), y])).sum() / n + 0.5 * l2_lambda * np.sum(W * W))
    G = P.copy()
    G[np.arange(n), y] -= 1.0
    G *= (wy / n)[:, None]
    grad_W = G.T @ X + l2_lambda * W
    grad_b = G.sum(axis=0)
    return loss, grad_W, grad_b


def train(model: HeadModel, X: np.ndarray, y: np.ndarray, config: TrainConfig,
          weights: np.ndarray | None = None) -> tuple[HeadModel, TrainHistory]:
    """Mini-batch gradient descent with momentum, bitwise-deterministic per seed.

    The incoming model provides the starting parameters (zeros by default,
    the objective being convex). Shuffling is driven only by config.seed.
    Aborts with TrainingDiverged if the full-batch loss goes non-finite.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DataError("training set must be nonempty")
    if X.shape[1] != model.dimension:
        raise DataError(f"embedding dimension {X.shape[1]} does not match model dimension {model.dimension}")
    k = model.num_classes
    if weights is None:
        weights = np.ones(k)
    weights = np.asarray(weights, dtype=np.float64)

    W = model.W.copy()
    b = model.b.copy()
    vW = np.zeros_like(W)
    vb = np.zeros_like(b)
    rng = np.random.default_rng(config.seed)
    n = X.shape[0]
    history = TrainHistory()

    def checked_loss_and_grad(Wc, bc, Xc, yc, epoch):
        # Overflowing logits surface as softmax's finiteness ValueError;
        # report them as divergence like any other non-finite loss.
        try:
            return loss_and_grad(Wc, bc, Xc, yc, weights, config.l2_lambda)
        except ValueError as e:
            raise TrainingDiverged(
                f"non-finite logits at epoch {epoch} (learning_rate={config.learning_rate}); "
                "lower the learning rate") from e

    for epoch in range(config.epochs):
        full_loss, _, _ = checked_loss_and_grad(W, b, X, y, epoch)
        if not np.isfinite(full_loss):
            raise TrainingDiverged(
                f"non-finite loss at start of epoch {epoch} (learning_rate={config.learning_rate}); "
                "lower the learning rate")
        history.epoch_losses.append(full_loss)
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            _, gW, gb = checked_loss_and_grad(W, b, X[idx], y[idx], epoch)
            with np.errstate(over="ignore"):  # overflow -> inf is caught as divergence
                vW = config.momentum * vW - config.learning_rate * gW
                vb = config.momentum * vb - config.learning_rate * gb
                W = W + vW
                b = b + vb

    final_loss, _, _ = checked_loss_and_grad(W, b, X, y, config.epochs)
    if not np.isfinite(final_loss) or not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
        raise TrainingDiverged("training produced non-finite parameters; lower the learning rate")
    history.final_loss = float(final_loss)
    return HeadModel(W=W, b=b, class_names=list(model.class_names)), history


def predict_matrix(model: HeadModel, X: np.ndarray) -> np.ndarray:
    """Softmax probabilities for a stacked embedding matrix."""
    return softmax(X @ model.W.T + model.b)


def predict(model: HeadModel, store: EmbeddingStore, ids: list[str]) -> list[PredictionRecord]:
    """Per-crop predictions in input-id order. Unknown ids are an error."""
    if store.dimension != model.dimension:
        raise DataError(f"store dimension {store.dimension} does not match model dimension {model.dimension}")
    X = store.matrix(ids)
    Z = X @ model.W.T + model.b
    P = softmax(Z) if len(ids) else np.zeros((0, model.num_classes))
    records = []
    for i, cid in enumerate(ids):
        probs = P[i]
        arg = int(np.argmax(probs))  # ties resolve to the lowest class index
        records.append(PredictionRecord(crop_id=cid, logits=Z[i], probs=probs,
                                        argmax=arg, confidence=float(probs[arg])))
    return records


def serialize_model(model: HeadModel) -> bytes:
    k, d = model.W.shape
    parts = [MODEL_MAGIC, struct.pack("<II", k, d),
             model.W.astype("<f8").tobytes(), model.b.astype("<f8").tobytes()]
    for name in model.class_names:
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
    return b"".join(parts)


def save_model(model: HeadModel, path: Path) -> None:
    Path(path).write_bytes(serialize_model(model))


def deserialize_model(blob: bytes) -> HeadModel:
    view = memoryview(blob)

    def take(n: int, what: str) -> memoryview:
        nonlocal view
        if len(view) < n:
            raise ModelFormatError(f"truncated model file while reading {what}")
        out, view = view[:n], view[n:]
        return out

    if bytes(take(5, "magic")) != MODEL_MAGIC:
        raise ModelFormatError("not a head-model file (bad magic)")
    k, d = struct.unpack("<II", take(8, "header"))
    W = np.frombuffer(take(8 * k * d, "weights"), dtype="<f8").reshape(k, d).copy()
    b = np.frombuffer(take(8 * k, "biases"), dtype="<f8").copy()
    names = []
    for i in range(k):
        (n,) = struct.unpack("<H", take(2, f"class name length {i + 1}"))
        names.append(bytes(take(n, f"class name {i + 1}")).decode("utf-8"))
    if len(view) != 0:
        raise ModelFormatError(f"{len(view)} unexpected trailing bytes")
    return HeadModel(W=W, b=b, class_names=names)


def load_model(path: Path) -> HeadModel:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise ModelFormatError(f"cannot read model {path}: {e}") from e
    try:
        return deserialize_model(blob)
    except ModelFormatError as e:
        raise ModelFormatError(f"{path}: {e}") from e
