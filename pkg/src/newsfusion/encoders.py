"""Trainable stand-ins for pretrained feature extractors.

The text side composes post text and OCR text into one [CLS]/[SEP] sequence,
embeds it with a hashed vocabulary plus fixed sinusoidal positions, and runs
a small self-attention stack. Entity mentions are embedded from the same
token table (both textual and visual mentions, so they live in one space).
The visual side projects per-region image features into model width.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .corpus import EntityMention
from .fusion import BlockParams, register_block, transformer_block
from .numerics import ParameterStore, Tensor

__all__ = [
    "Vocabulary",
    "TextEncoderParams",
    "VisualProjectionParams",
    "sinusoidal_table",
    "register_text_encoder",
    "register_visual_projection",
    "compose_text",
    "encode_text",
    "embed_entity",
    "project_visual",
    "synth_visual_features",
]

PAD_ID, CLS_ID, SEP_ID = 0, 1, 2
_N_SPECIALS = 3

TEXT_BUDGET_SHARE = 0.75  # slice of L_max reserved for original text over OCR

POS_SCALE = 0.1  # keeps the fixed positional signal below the token signal


@dataclass(frozen=True)
class Vocabulary:
    """Hash-bucketed vocabulary; ids 0..2 are PAD/CLS/SEP, the rest hashed."""

    size: int

    def __post_init__(self):
        if self.size < 1024:
            raise ValueError(f"vocabulary size must be >= 1024, got {self.size}")

    def token_id(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return _N_SPECIALS + int.from_bytes(digest, "little") % (self.size - _N_SPECIALS)

    def ids(self, tokens: list[str]) -> list[int]:
        return [self.token_id(t) for t in tokens]


def sinusoidal_table(l_max: int, d: int) -> np.ndarray:
    pos = np.arange(l_max, dtype=np.float64)[:, None]
    idx = np.arange(d, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, (2.0 * np.floor(idx / 2.0)) / d)
    table = np.where(idx % 2 == 0, np.sin(angle), np.cos(angle))
    return POS_SCALE * table


@dataclass
class TextEncoderParams:
    store: ParameterStore
    vocab: Vocabulary
    d: int
    l_max: int
    layers: list[BlockParams]

    def table(self) -> Tensor:
        return self.store.tensor("embed.table")

    def positions(self) -> Tensor:
        return self.store.tensor("embed.pos")


def register_text_encoder(
    store: ParameterStore,
    vocab: Vocabulary,
    d: int,
    l_max: int,
    n_layers: int,
    heads: int,
    rng: np.random.Generator,
) -> TextEncoderParams:
    # rows are looked up individually, so scale by width alone rather than
    # the glorot fan sum (V + d would shrink token vectors toward zero)
    bound = math.sqrt(6.0 / (2 * d))
    table = rng.uniform(-bound, bound, size=(vocab.size, d))
    table[PAD_ID] = 0.0
    store.create("embed.table", table)
    store.create("embed.pos", sinusoidal_table(l_max, d), trainable=False)
    layers = [register_block(store, f"enc{i}", d, heads, rng) for i in range(n_layers)]
    return TextEncoderParams(store=store, vocab=vocab, d=d, l_max=l_max, layers=layers)


def compose_text(
    text: list[str], ocr: list[str], l_max: int, vocab: Vocabulary
) -> tuple[np.ndarray, np.ndarray]:
    """[CLS] text [SEP] ocr [SEP] as (ids, mask), truncated to l_max.

    Over budget, text keeps up to 75% of l_max and OCR the remainder; either
    side may grow into budget the other does not use. Specials survive
    truncation; a fully squeezed-out OCR side drops its [SEP] too.
    """
    specials = _N_SPECIALS if ocr else 2
    text_len = min(len(text), max(int(TEXT_BUDGET_SHARE * l_max), l_max - specials - len(ocr)), l_max - specials)
    text_len = max(text_len, 0)
    ocr_len = max(min(len(ocr), l_max - specials - text_len), 0)
    if ocr and ocr_len == 0:
        specials = 2
        text_len = max(min(len(text), l_max - specials), 0)

    ids = [CLS_ID] + vocab.ids(text[:text_len]) + [SEP_ID]
    if ocr and ocr_len > 0:
        ids += vocab.ids(ocr[:ocr_len]) + [SEP_ID]
    mask = np.ones(len(ids), dtype=bool)
    return np.asarray(ids, dtype=np.int64), mask


def encode_text(
    ids: np.ndarray,
    mask: np.ndarray,
    params: TextEncoderParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Contextual (n, d) features; rows at padded positions are zeroed."""
    n = len(ids)
    if n > params.l_max:
        raise ValueError(f"sequence length {n} exceeds maximum {params.l_max}")
    mask = np.asarray(mask, dtype=bool)
    pos = nm.gather_rows(params.positions(), np.arange(n))
    x = nm.gather_rows(params.table(), ids) + pos
    for block in params.layers:
        x = transformer_block(block, x, x, mask, dropout_rate, training, rng)
    return x * Tensor(mask.astype(np.float64)[:, None])


def embed_entity(mention: EntityMention, params: TextEncoderParams) -> Tensor:
    """Mean of the surface tokens' embedding rows (no positional term)."""
    if not mention.surface:
        raise ValueError("entity mention has an empty surface")
    ids = np.asarray(params.vocab.ids(mention.surface), dtype=np.int64)
    rows = nm.gather_rows(params.table(), ids)
    return nm.reduce_mean(rows, axis=0)


@dataclass
class VisualProjectionParams:
    store: ParameterStore
    d_visual: int
    d: int


def register_visual_projection(
    store: ParameterStore, d_visual: int, d: int, rng: np.random.Generator
) -> VisualProjectionParams:
    bound = math.sqrt(6.0 / (d_visual + d))
    store.create("visproj.w", rng.uniform(-bound, bound, size=(d_visual, d)))
    store.create("visproj.b", np.zeros(d))
    return VisualProjectionParams(store=store, d_visual=d_visual, d=d)


def project_visual(regions: np.ndarray, params: VisualProjectionParams) -> Tensor:
    """Affine per-region projection of (n_regions, d_visual) into width d."""
    regions = np.asarray(regions, dtype=np.float64)
    if regions.ndim != 2 or regions.shape[1] != params.d_visual:
        raise ValueError(
            f"region width {regions.shape[-1] if regions.ndim == 2 else regions.shape} "
            f"does not match configured d_visual {params.d_visual}"
        )
    return nm.linear(Tensor(regions), params.store.tensor("visproj.w"), params.store.tensor("visproj.b"))


def synth_visual_features(
    descriptor: str, seed: int, n_regions: int = 49, d_visual: int = 512
) -> np.ndarray:
    """Deterministic pseudo region features for a descriptor/seed pair."""
    digest = hashlib.blake2b(f"{descriptor}\x00{seed}".encode("utf-8"), digest_size=8).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    return rng.normal(size=(n_regions, d_visual))
