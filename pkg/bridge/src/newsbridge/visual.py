"""Image-side extraction: 7x7 region features and visual entities.

Region features come from per-cell color/texture statistics pushed through
a fixed random projection, a deterministic stand-in for a pretrained
backbone's grid features. Visual entities come from a `<image>.labels.json`
sidecar when a real detector ran offline, with a pixel-statistics fallback
(skin-tone share, saturation, edge energy) that only fires on strong
evidence so bland images yield no entities.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .textproc import tokenize

N_GRID = 7
N_REGIONS = N_GRID * N_GRID
_CELL = 32
_SIDE = N_GRID * _CELL
_STATS_DIM = 10
_PROJECTION_SEED = 2718281

LABELS_SUFFIX = ".labels.json"

_KIND_MAP = {
    "person": "person", "face": "person", "celebrity": "person",
    "location": "location", "landmark": "location", "place": "location",
}


def load_image(path: str) -> np.ndarray:
    """RGB pixels in [0, 1], resized to the fixed grid resolution. Raises
    OSError for unreadable files; callers turn that into a skip."""
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((_SIDE, _SIDE), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float64) / 255.0


def _cell_stats(cell: np.ndarray) -> np.ndarray:
    luma = cell @ np.array([0.299, 0.587, 0.114])
    dx = np.abs(np.diff(luma, axis=1)).mean()
    dy = np.abs(np.diff(luma, axis=0)).mean()
    return np.concatenate([
        cell.reshape(-1, 3).mean(axis=0),
        cell.reshape(-1, 3).std(axis=0),
        [dx, dy, luma.mean(), luma.std()],
    ])


def _projection(d_visual: int) -> np.ndarray:
    rng = np.random.default_rng(_PROJECTION_SEED)
    return rng.normal(size=(_STATS_DIM, d_visual)) / np.sqrt(_STATS_DIM)


def region_features(pixels: np.ndarray, d_visual: int = 512) -> np.ndarray:
    """(49, d_visual) grid features, row-major over the 7x7 cells."""
    if d_visual <= 0:
        raise ValueError(f"d_visual must be positive, got {d_visual}")
    stats = np.empty((N_REGIONS, _STATS_DIM))
    for row in range(N_GRID):
        for col in range(N_GRID):
            cell = pixels[row * _CELL:(row + 1) * _CELL, col * _CELL:(col + 1) * _CELL]
            stats[row * N_GRID + col] = _cell_stats(cell)
    return stats @ _projection(d_visual)


def _sidecar_entities(path: str, suffix: str) -> list[dict] | None:
    sidecar = Path(str(path) + suffix)
    try:
        raw = sidecar.read_text(encoding="utf-8")
    except OSError:
        return None
    entries = json.loads(raw)
    if not isinstance(entries, list):
        raise ValueError(f"{sidecar}: labels sidecar must be a JSON list")
    out = []
    for entry in entries:
        surface = tokenize(str(entry.get("name", "")))
        confidence = float(entry.get("confidence", 1.0))
        if not surface or confidence <= 0.0:
            # zero-confidence detections carry no evidence; drop them
            continue
        kind = _KIND_MAP.get(str(entry.get("kind", "")).lower(), "context")
        out.append({"surface": surface, "kind": kind, "confidence": min(confidence, 1.0)})
    return out


def _heuristic_entities(pixels: np.ndarray) -> list[dict]:
    out = []
    r, g, b = pixels[..., 0], pixels[..., 1], pixels[..., 2]

    skin = (r > 0.35) & (r > g) & (g > b) & ((r - b) > 0.1) & (r < 0.95)
    skin_share = float(skin.mean())
    if skin_share > 0.10:
        out.append({"surface": ["face"], "kind": "person",
                    "confidence": min(1.0, 0.4 + 2.0 * skin_share)})

    saturation = float((pixels.max(axis=2) - pixels.min(axis=2)).mean())
    if saturation > 0.25:
        out.append({"surface": ["colorful", "graphic"], "kind": "context",
                    "confidence": min(1.0, saturation + 0.4)})

    luma = pixels @ np.array([0.299, 0.587, 0.114])
    edges = float(np.abs(np.diff(luma, axis=1)).mean() + np.abs(np.diff(luma, axis=0)).mean())
    if edges > 0.12:
        out.append({"surface": ["detailed", "scene"], "kind": "context",
                    "confidence": min(1.0, 0.3 + edges)})
    return out


def visual_entities(path: str, pixels: np.ndarray, suffix: str = LABELS_SUFFIX) -> list[dict]:
    from_sidecar = _sidecar_entities(path, suffix)
    if from_sidecar is not None:
        return from_sidecar
    return _heuristic_entities(pixels)
