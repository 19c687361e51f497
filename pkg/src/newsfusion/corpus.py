"""Dataset model, JSONL ingestion, and the event-based train/val/test split.

A post is one news item: text tokens, OCR tokens from its image, entity
mentions on both sides, and a matrix of per-region image features. Posts are
grouped into events by clustering text, and splits keep every event cluster
whole so evaluation never sees a training event.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "DatasetError",
    "EntityMention",
    "NewsPost",
    "SplitAssignment",
    "ENTITY_KINDS",
    "parse_record",
    "serialize_record",
    "load_dataset",
    "save_dataset",
    "tokenize",
    "embed_for_clustering",
    "kmeans_cluster",
    "event_split",
]

ENTITY_KINDS = ("person", "location", "context")

REAL, FAKE = 0, 1

DEFAULT_N_REGIONS = 49


class DatasetError(ValueError):
    """A record or dataset failed validation."""


@dataclass
class EntityMention:
    surface: list[str]
    kind: str
    confidence: float = 1.0

    def validate(self, where: str) -> None:
        if not self.surface:
            raise DatasetError(f"{where}: entity surface is empty")
        if self.kind not in ENTITY_KINDS:
            raise DatasetError(f"{where}: entity kind {self.kind!r} not in {ENTITY_KINDS}")
        if not (0.0 < self.confidence <= 1.0):
            raise DatasetError(f"{where}: entity confidence {self.confidence} outside (0, 1]")


@dataclass
class NewsPost:
    id: str
    text: list[str]
    label: int
    ocr_text: list[str] = field(default_factory=list)
    textual_entities: list[EntityMention] = field(default_factory=list)
    visual_entities: list[EntityMention] = field(default_factory=list)
    visual_regions: np.ndarray | None = None
    event_id: int | None = None
    # optional precomputed per-token text vectors; bypasses the toy encoder
    text_features: np.ndarray | None = None

    def validate(self, where: str = "post", n_regions: int = DEFAULT_N_REGIONS) -> None:
        if not self.id:
            raise DatasetError(f"{where}: id is empty")
        if self.label not in (REAL, FAKE):
            raise DatasetError(f"{where}: label out of range (got {self.label}, want 0 or 1)")
        for m in self.textual_entities:
            m.validate(where)
            if m.confidence != 1.0:
                raise DatasetError(f"{where}: textual entity confidence must be 1.0, got {m.confidence}")
        for m in self.visual_entities:
            m.validate(where)
        if self.visual_regions is not None:
            if self.visual_regions.ndim != 2:
                raise DatasetError(f"{where}: visual_regions must be a matrix")
            if self.visual_regions.shape[0] != n_regions:
                raise DatasetError(
                    f"{where}: visual_regions has {self.visual_regions.shape[0]} rows, want {n_regions}"
                )
            if not np.all(np.isfinite(self.visual_regions)):
                raise DatasetError(f"{where}: visual_regions contains non-finite values")
        if self.text_features is not None:
            if self.text_features.ndim != 2 or self.text_features.shape[0] == 0:
                raise DatasetError(f"{where}: text_features must be a non-empty matrix")
            if not np.all(np.isfinite(self.text_features)):
                raise DatasetError(f"{where}: text_features contains non-finite values")


@dataclass
class SplitAssignment:
    by_id: dict[str, str]

    SPLITS = ("train", "validation", "test")

    def ids_for(self, split: str) -> list[str]:
        if split not in self.SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [i for i, s in self.by_id.items() if s == split]

    def subset(self, posts: Sequence[NewsPost], split: str) -> list[NewsPost]:
        wanted = set(self.ids_for(split))
        return [p for p in posts if p.id in wanted]


# -- JSONL ---------------------------------------------------------------


def _field(obj: dict, name: str, where: str):
    if name not in obj:
        raise DatasetError(f"{where}: missing field {name!r}")
    return obj[name]


def _token_list(value, name: str, where: str) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise DatasetError(f"{where}: field {name!r} must be an array of token strings")
    return list(value)


def _parse_entities(value, name: str, where: str) -> list[EntityMention]:
    if not isinstance(value, list):
        raise DatasetError(f"{where}: field {name!r} must be an array")
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, dict):
            raise DatasetError(f"{where}: {name}[{i}] must be an object")
        spot = f"{where}: {name}[{i}]"
        surface = _token_list(_field(item, "surface", spot), "surface", spot)
        kind = _field(item, "kind", spot)
        conf = item.get("confidence", 1.0)
        if not isinstance(conf, (int, float)) or isinstance(conf, bool):
            raise DatasetError(f"{spot}: confidence must be a number")
        m = EntityMention(surface=surface, kind=kind, confidence=float(conf))
        m.validate(spot)
        out.append(m)
    return out


def parse_record(line: str, line_number: int = 0, n_regions: int = DEFAULT_N_REGIONS) -> NewsPost:
    """One JSONL line to a validated NewsPost.

    Unknown fields are ignored; ocr_text, entities, visual_regions and
    event_id are optional. Errors name the offending field and line.
    """
    where = f"line {line_number}" if line_number else "record"
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as e:
        raise DatasetError(f"{where}: invalid JSON ({e.msg})") from None
    if not isinstance(obj, dict):
        raise DatasetError(f"{where}: record must be a JSON object")

    post_id = _field(obj, "id", where)
    if not isinstance(post_id, str):
        raise DatasetError(f"{where}: field 'id' must be a string")
    text = _token_list(_field(obj, "text", where), "text", where)
    label = _field(obj, "label", where)
    if not isinstance(label, int) or isinstance(label, bool):
        raise DatasetError(f"{where}: field 'label' must be an integer")

    ocr = _token_list(obj.get("ocr_text", []), "ocr_text", where)
    textual = _parse_entities(obj.get("textual_entities", []), "textual_entities", where)
    visual = _parse_entities(obj.get("visual_entities", []), "visual_entities", where)

    regions = None
    if obj.get("visual_regions") is not None:
        raw = obj["visual_regions"]
        if not isinstance(raw, list) or not raw:
            raise DatasetError(f"{where}: field 'visual_regions' must be a non-empty array of rows")
        widths = set()
        for r, rowvals in enumerate(raw):
            if not isinstance(rowvals, list):
                raise DatasetError(f"{where}: visual_regions[{r}] must be an array")
            widths.add(len(rowvals))
            for v in rowvals:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                    raise DatasetError(f"{where}: visual_regions[{r}] has a malformed number")
        if len(widths) != 1:
            raise DatasetError(f"{where}: visual_regions rows have unequal widths {sorted(widths)}")
        regions = np.asarray(raw, dtype=np.float64)

    event_id = obj.get("event_id")
    if event_id is not None and (not isinstance(event_id, int) or isinstance(event_id, bool)):
        raise DatasetError(f"{where}: field 'event_id' must be an integer")

    features = None
    if obj.get("text_features") is not None:
        raw = obj["text_features"]
        if not isinstance(raw, list) or not raw or not all(isinstance(r, list) for r in raw):
            raise DatasetError(f"{where}: field 'text_features' must be an array of rows")
        if len({len(r) for r in raw}) != 1:
            raise DatasetError(f"{where}: text_features rows have unequal widths")
        for r, rowvals in enumerate(raw):
            for v in rowvals:
                if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
                    raise DatasetError(f"{where}: text_features[{r}] has a malformed number")
        features = np.asarray(raw, dtype=np.float64)

    post = NewsPost(
        id=post_id,
        text=text,
        label=label,
        ocr_text=ocr,
        textual_entities=textual,
        visual_entities=visual,
        visual_regions=regions,
        event_id=event_id,
        text_features=features,
    )
    post.validate(where, n_regions=n_regions)
    return post


def _round_sig(x: float, digits: int = 9) -> float:
    if x == 0.0 or not math.isfinite(x):
        return x
    return round(x, digits - 1 - int(math.floor(math.log10(abs(x)))))


def serialize_record(post: NewsPost) -> str:
    """One-line JSON for a post; floats carry 9 significant digits."""
    obj: dict = {"id": post.id, "text": post.text, "label": post.label}
    if post.ocr_text:
        obj["ocr_text"] = post.ocr_text
    for name, mentions in (
        ("textual_entities", post.textual_entities),
        ("visual_entities", post.visual_entities),
    ):
        if mentions:
            obj[name] = [
                {"surface": m.surface, "kind": m.kind, "confidence": _round_sig(m.confidence)}
                for m in mentions
            ]
    if post.visual_regions is not None:
        obj["visual_regions"] = [
            [_round_sig(float(v)) for v in row] for row in post.visual_regions
        ]
    if post.event_id is not None:
        obj["event_id"] = post.event_id
    if post.text_features is not None:
        obj["text_features"] = [
            [_round_sig(float(v)) for v in row] for row in post.text_features
        ]
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def load_dataset(path, n_regions: int = DEFAULT_N_REGIONS) -> list[NewsPost]:
    posts = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            post = parse_record(line, line_number=lineno, n_regions=n_regions)
            if post.id in seen:
                raise DatasetError(f"line {lineno}: duplicate id {post.id!r}")
            seen.add(post.id)
            posts.append(post)
    if not posts:
        raise DatasetError(f"{path}: dataset is empty")
    return posts


def save_dataset(posts: Iterable[NewsPost], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for post in posts:
            fh.write(serialize_record(post) + "\n")


# -- tokenization and clustering -------------------------------------------


def tokenize(text: str) -> list[str]:
    """Whitespace split, lowercased, punctuation stripped at token edges."""
    out = []
    for raw in text.split():
        tok = raw.strip(".,;:!?\"'()[]{}").lower()
        if tok:
            out.append(tok)
    return out


def _stable_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def embed_for_clustering(post: NewsPost, dim: int = 256) -> np.ndarray:
    """Hashed bag-of-tokens over the post text, L2-normalized.

    Deliberately independent of any trainable state so the split cannot move
    during training. Empty text maps to the zero vector.
    """
    if dim < 8:
        raise ValueError(f"clustering dim must be >= 8, got {dim}")
    vec = np.zeros(dim, dtype=np.float64)
    for token in post.text:
        vec[_stable_hash(token) % dim] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def kmeans_cluster(vectors: Sequence[np.ndarray], k: int, seed: int) -> list[int]:
    """Lloyd's algorithm with k-means++ seeding; capped at 100 iterations or
    total centroid movement below 1e-6."""
    if k <= 0:
        raise ValueError(f"k must be positive, got {k}")
    n = len(vectors)
    if k > n:
        raise ValueError(f"k={k} exceeds {n} points")
    x = np.asarray(vectors, dtype=np.float64)
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    dist2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = dist2.sum()
        if total <= 0.0:
            # all remaining points coincide with a centroid; pick any
            choice = int(rng.integers(n))
        else:
            choice = int(rng.choice(n, p=dist2 / total))
        centroids[j] = x[choice]
        dist2 = np.minimum(dist2, ((x - centroids[j]) ** 2).sum(axis=1))

    assign = np.zeros(n, dtype=np.int64)
    for _ in range(100):
        d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        moved = 0.0
        for j in range(k):
            members = x[assign == j]
            if len(members) == 0:
                # re-seed an empty cluster on the point farthest from its centroid
                farthest = int(d2.min(axis=1).argmax())
                new = x[farthest]
            else:
                new = members.mean(axis=0)
            moved += float(np.linalg.norm(new - centroids[j]))
            centroids[j] = new
        if moved < 1e-6:
            break
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return [int(a) for a in d2.argmin(axis=1)]


def event_split(
    posts: Sequence[NewsPost],
    ratios: tuple[int, int, int] = (3, 1, 1),
    seed: int = 0,
    k: int | None = None,
    cluster_dim: int = 256,
) -> SplitAssignment:
    """Assign whole event clusters to train/validation/test near the ratios.

    Posts without event_id are clustered first (hashed bag-of-tokens +
    k-means, k defaulting to max(5, n//50)). Clusters go largest-first to the
    split with the largest remaining deficit, so no event spans two splits.
    """
    if len(posts) == 0:
        raise DatasetError("cannot split an empty dataset")
    if any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be positive, got {ratios}")

    events: list[int]
    if all(p.event_id is not None for p in posts):
        events = [p.event_id for p in posts]  # type: ignore[misc]
    else:
        if k is None:
            k = max(5, len(posts) // 50)
        vectors = [embed_for_clustering(p, dim=cluster_dim) for p in posts]
        events = kmeans_cluster(vectors, k=min(k, len(posts)), seed=seed)

    clusters: dict[int, list[int]] = {}
    for i, e in enumerate(events):
        clusters.setdefault(e, []).append(i)
    if len(clusters) < 3:
        raise DatasetError(f"need at least 3 event clusters to split, got {len(clusters)}")

    total = len(posts)
    ratio_sum = sum(ratios)
    targets = [total * r / ratio_sum for r in ratios]
    counts = [0.0, 0.0, 0.0]
    names = SplitAssignment.SPLITS

    # largest cluster first; ties broken by cluster id for determinism
    order = sorted(clusters, key=lambda e: (-len(clusters[e]), e))
    by_id: dict[str, str] = {}
    for e in order:
        deficits = [targets[s] - counts[s] for s in range(3)]
        s = max(range(3), key=lambda i: (deficits[i], -i))
        counts[s] += len(clusters[e])
        for idx in clusters[e]:
            by_id[posts[idx].id] = names[s]
    return SplitAssignment(by_id=by_id)
