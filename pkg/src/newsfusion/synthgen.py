"""Synthetic dataset generator.

Three kinds, one per cross-modal correlation the model is built to exploit:

- entity-mismatch: text is label-neutral; real posts show the same person
  entity in text and image, fakes show different people. The only reliable
  signal is cross-modal entity consistency.
- aligned-keyword: class-disjoint text vocabularies, with visual context
  entities echoing the text keywords. Linearly separable from text alone.
- ocr-story: bland label-neutral text; the story lives in the OCR tokens,
  which draw from class-disjoint pools. These posts carry no visual
  entities, so they also exercise the sentinel path.

Labels alternate (even index = real), event ids advance every 10 posts, and
region features are label-free noise everywhere, so each kind isolates its
intended signal. `noise` flips a post's signal channel with that probability.
"""

from __future__ import annotations

import numpy as np

from .corpus import EntityMention, NewsPost
from .encoders import synth_visual_features

__all__ = ["KINDS", "generate"]

KINDS = ("entity-mismatch", "aligned-keyword", "ocr-story")

EVENT_SIZE = 10


def generate(
    kind: str,
    n: int,
    seed: int,
    noise: float = 0.05,
    d_visual: int = 64,
    n_regions: int = 49,
    vocab_words: int = 50,
) -> list[NewsPost]:
    if kind not in KINDS:
        raise ValueError(f"unknown kind {kind!r}; valid kinds: {', '.join(KINDS)}")
    if n <= 0:
        raise ValueError(f"n must be positive, got {n}")
    if not 0.0 <= noise < 1.0:
        raise ValueError(f"noise must be in [0, 1), got {noise}")
    rng = np.random.default_rng(seed)
    build = {
        "entity-mismatch": _entity_mismatch_post,
        "aligned-keyword": _aligned_keyword_post,
        "ocr-story": _ocr_story_post,
    }[kind]
    posts = []
    for i in range(n):
        label = i % 2
        flipped = bool(rng.random() < noise)
        topic = [f"topic{i // EVENT_SIZE}w{j}" for j in range(3)]
        post = build(i, label, flipped, topic, rng, vocab_words)
        post.event_id = i // EVENT_SIZE
        post.visual_regions = synth_visual_features(
            f"{kind}-{seed}-{i}", seed, n_regions=n_regions, d_visual=d_visual
        )
        posts.append(post)
    return posts


def _fillers(rng, count: int, pool: int = 200) -> list[str]:
    return [f"filler{rng.integers(pool)}" for _ in range(count)]


def _entity_mismatch_post(i, label, flipped, topic, rng, vocab_words) -> NewsPost:
    names = vocab_words * 4  # large pool keeps name identity from being learnable
    name_a = f"person{rng.integers(names)}"
    matched = (label == 0) != flipped
    if matched:
        visual_name = name_a
    else:
        visual_name = f"person{rng.integers(names)}"
        while visual_name == name_a:
            visual_name = f"person{rng.integers(names)}"
    text = list(topic) + [name_a, "attends", "event"] + _fillers(rng, 2)
    rng.shuffle(text)
    return NewsPost(
        id=f"em-{i:05d}",
        text=text,
        label=label,
        ocr_text=[topic[0]],
        textual_entities=[EntityMention(surface=[name_a], kind="person")],
        visual_entities=[
            EntityMention(
                surface=[visual_name], kind="person", confidence=float(rng.uniform(0.7, 1.0))
            )
        ],
    )


def _aligned_keyword_post(i, label, flipped, topic, rng, vocab_words) -> NewsPost:
    effective = label if not flipped else 1 - label
    pool = "shock" if effective == 1 else "calm"
    keywords = [f"{pool}{rng.integers(vocab_words)}" for _ in range(3)]
    text = keywords + list(topic[:2]) + _fillers(rng, 1)
    rng.shuffle(text)
    return NewsPost(
        id=f"ak-{i:05d}",
        text=text,
        label=label,
        textual_entities=[EntityMention(surface=[keywords[0]], kind="context")],
        visual_entities=[
            EntityMention(
                surface=[keywords[1]], kind="context", confidence=float(rng.uniform(0.8, 1.0))
            )
        ],
    )


def _ocr_story_post(i, label, flipped, topic, rng, vocab_words) -> NewsPost:
    effective = label if not flipped else 1 - label
    pool = "hoax" if effective == 1 else "truth"
    ocr = [f"{pool}{rng.integers(vocab_words)}" for _ in range(3)]
    text = list(topic) + ["image", "shows"] + _fillers(rng, 2)
    rng.shuffle(text)
    return NewsPost(
        id=f"os-{i:05d}",
        text=text,
        label=label,
        ocr_text=ocr,
    )
