"""Shared fixtures and helpers for the test suite."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from PIL import Image

# Property tests build numpy arrays and occasionally train models; wall-clock
# deadlines just make them flaky on loaded machines.
settings.register_profile("suite", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("suite")


def write_png(path: Path, width: int, height: int, seed: int = 0) -> None:
    """A deterministic full-color test image (gradient + seeded noise)."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(0, 255, width, dtype=np.float64)[None, :]
    ys = np.linspace(0, 255, height, dtype=np.float64)[:, None]
    r = np.broadcast_to(xs, (height, width))
    g = np.broadcast_to(ys, (height, width))
    b = rng.integers(0, 256, size=(height, width))
    img = np.stack([r, g, b], axis=-1).astype(np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    fmt = "JPEG" if path.suffix.lower() in (".jpg", ".jpeg") else "PNG"
    Image.fromarray(img, mode="RGB").save(path, format=fmt)


def detector_doc(images: list[dict], categories: dict | None = None) -> bytes:
    doc = {"images": images,
           "detection_categories": categories if categories is not None
           else {"1": "animal", "2": "person", "3": "vehicle"},
           "info": {"detector": "unit-test", "format_version": "1.3"}}
    return json.dumps(doc).encode("utf-8")


@pytest.fixture
def three_class_pool():
    """Small well-separated pool: 3 classes x 40 examples in 8 dimensions."""
    from camloop.active import generate_synthetic_pool

    return generate_synthetic_pool({"alpha": 40, "beta": 40, "gamma": 40},
                                   dimension=8, cluster_separation=6.0,
                                   noise_sigma=1.0, seed=11)
