"""Embedding providers and the on-disk embedding store.

A provider maps crop records to fixed-dimension float vectors. The core ships
three: a deterministic synthetic provider for tests and simulations, a
precomputed-file provider (vectors produced offline by any backbone), and an
optional ONNX-runtime adapter for running a serialized network locally.
"""
from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .detections import CropRecord
from .errors import DataError

MAGIC = b"EMB1"
DEFAULT_SYNTHETIC_DIM = 32


class StoreFormatError(DataError):
    """Embedding-store file does not match the declared layout."""


class EmbeddingError(DataError):
    pass


@dataclass
class EmbeddingStore:
    """Fixed-dimension float32 vectors keyed by crop id, from one provider."""

    dimension: int
    provider_tag: str
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not self.provider_tag:
            raise EmbeddingError("provider_tag must be nonempty")
        if self.dimension < 1:
            raise EmbeddingError("dimension must be positive")

    def add(self, crop_id: str, vector: np.ndarray) -> None:
        v = np.asarray(vector, dtype=np.float32)
        if v.shape != (self.dimension,):
            raise EmbeddingError(
                f"vector for {crop_id} has shape {v.shape}, store dimension is {self.dimension}")
        if not np.all(np.isfinite(v)):
            raise EmbeddingError(f"vector for {crop_id} has non-finite entries")
        self.vectors[crop_id] = v

    def ids(self) -> list[str]:
        return sorted(self.vectors)

    def matrix(self, ids: list[str]) -> np.ndarray:
        """Stack vectors for the given ids (float64), erroring on unknowns."""
        missing = [i for i in ids if i not in self.vectors]
        if missing:
            raise EmbeddingError(f"unknown crop ids: {', '.join(missing)}")
        if not ids:
            return np.zeros((0, self.dimension), dtype=np.float64)
        return np.stack([self.vectors[i] for i in ids]).astype(np.float64)

    def digest(self) -> str:
        return hashlib.blake2b(serialize_store(self), digest_size=16).hexdigest()

    def __len__(self) -> int:
        return len(self.vectors)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm (float64). Zero vectors are an error."""
    v64 = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(v64))
    if norm == 0.0:
        raise EmbeddingError("degenerate embedding: zero vector cannot be normalized")
    return v64 / norm


class SyntheticProvider:
    """Deterministic pseudo-embeddings: seeded Gaussian keyed by crop id.

    Never touches the crop files, so it works on manifests whose images are
    long gone. Useful for tests and end-to-end dry runs.
    """

    def __init__(self, dimension: int = DEFAULT_SYNTHETIC_DIM, seed: int = 0):
        self.dimension = dimension
        self.seed = seed
        self.tag = f"synthetic-d{dimension}-seed{seed}"

    def embed(self, crop: CropRecord) -> np.ndarray:
        key = hashlib.blake2b(f"{self.seed}:{crop.crop_id}".encode(), digest_size=8).digest()
        rng = np.random.default_rng(int.from_bytes(key, "little"))
        return rng.standard_normal(self.dimension)


class PrecomputedProvider:
    """Serve vectors from an existing store file, keyed by crop id."""

    def __init__(self, store: EmbeddingStore):
        self.store = store
        self.dimension = store.dimension
        self.tag = store.provider_tag

    @classmethod
    def from_file(cls, path: Path) -> "PrecomputedProvider":
        return cls(load_store(path))

    def embed(self, crop: CropRecord) -> np.ndarray:
        try:
            return self.store.vectors[crop.crop_id]
        except KeyError:
            raise EmbeddingError(f"crop {crop.crop_id} missing from precomputed store") from None


class OnnxProvider:
    """Run a serialized network via onnxruntime (optional dependency).

    Preprocessing is fixed here: decode the crop, resize to `input_size`,
    scale to [0,1], normalize per channel, NCHW float32. The model's first
    output is flattened into the embedding.
    """

    def __init__(self, model_path: Path, image_root: Path, input_size: int = 224,
                 mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)):
        try:
            import onnxruntime
        except ImportError as e:
            raise EmbeddingError(
                "onnxruntime is not installed; install it or use the synthetic/precomputed providers") from e
        self._session = onnxruntime.InferenceSession(str(model_path))
        self._input_name = self._session.get_inputs()[0].name
        self.image_root = Path(image_root)
        self.input_size = input_size
        self.mean = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
        self.std = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
        probe = self._run(np.zeros((3, input_size, input_size), dtype=np.float32))
        self.dimension = probe.size
        self.tag = f"onnx-{Path(model_path).name}-d{self.dimension}"

    def _run(self, chw: np.ndarray) -> np.ndarray:
        out = self._session.run(None, {self._input_name: chw[None]})[0]
        return np.asarray(out, dtype=np.float32).reshape(-1)

    def embed(self, crop: CropRecord) -> np.ndarray:
        from PIL import Image

        with Image.open(self.image_root / crop.crop_path) as img:
            rgb = img.convert("RGB").resize((self.input_size, self.input_size))
        arr = np.asarray(rgb, dtype=np.float32).transpose(2, 0, 1) / 255.0
        return self._run((arr - self.mean) / self.std)


def embed_batch(provider, crops: list[CropRecord], normalize: bool = False) -> tuple[EmbeddingStore, list[tuple[str, str]]]:
    """Embed a batch of crops into a fresh store.

    Per-crop failures (unreadable file, missing precomputed id) are skipped
    and reported; a dimension mismatch is a provider bug and is fatal.
    Returns (store, [(crop_id, reason), ...]).
    """
    tag = provider.tag + ("+l2norm" if normalize else "")
    store = EmbeddingStore(dimension=provider.dimension, provider_tag=tag)
    skipped: list[tuple[str, str]] = []
    for crop in crops:
        try:
            vec = provider.embed(crop)
        except (OSError, EmbeddingError) as e:
            skipped.append((crop.crop_id, str(e)))
            continue
        vec = np.asarray(vec)
        if vec.shape != (provider.dimension,):
            raise EmbeddingError(
                f"provider {provider.tag} returned shape {vec.shape}, declared dimension {provider.dimension}")
        store.add(crop.crop_id, l2_normalize(vec) if normalize else vec)
    return store, skipped


def serialize_store(store: EmbeddingStore) -> bytes:
    """Canonical little-endian layout, entries sorted by crop id."""
    parts = [MAGIC, struct.pack("<II", store.dimension, len(store.vectors))]
    for cid in store.ids():
        raw = cid.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(store.vectors[cid].astype("<f4").tobytes())
    tag = store.provider_tag.encode("utf-8")
    parts.append(struct.pack("<H", len(tag)))
    parts.append(tag)
    return b"".join(parts)


def save_store(store: EmbeddingStore, path: Path) -> None:
    Path(path).write_bytes(serialize_store(store))


def deserialize_store(blob: bytes) -> EmbeddingStore:
    view = memoryview(blob)

    def take(n: int, what: str) -> memoryview:
        nonlocal view
        if len(view) < n:
            raise StoreFormatError(f"truncated store file while reading {what}")
        out, view = view[:n], view[n:]
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise StoreFormatError("not an embedding store (bad magic)")
    dim, count = struct.unpack("<II", take(8, "header"))
    vectors: dict[str, np.ndarray] = {}
    for i in range(count):
        here = f"entry {i + 1} of {count}"
        (id_len,) = struct.unpack("<H", take(2, f"id length, {here}"))
        try:
            cid = bytes(take(id_len, f"id, {here}")).decode("utf-8")
        except UnicodeDecodeError as e:
            raise StoreFormatError(f"id is not valid UTF-8 at {here}: {e}") from e
        vec = np.frombuffer(take(4 * dim, f"values, {here}"), dtype="<f4").copy()
        vectors[cid] = vec
    (tag_len,) = struct.unpack("<H", take(2, "provider tag length"))
    tag = bytes(take(tag_len, "provider tag")).decode("utf-8")
    if len(view) != 0:
        raise StoreFormatError(
            f"{len(view)} unexpected trailing bytes after provider tag (row lengths do not match dimension {dim})")
    store = EmbeddingStore(dimension=dim, provider_tag=tag)
    for cid, vec in vectors.items():
        store.add(cid, vec)
    return store


def load_store(path: Path) -> EmbeddingStore:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise StoreFormatError(f"cannot read embedding store {path}: {e}") from e
    try:
        return deserialize_store(blob)
    except StoreFormatError as e:
        raise StoreFormatError(f"{path}: {e}") from e
