"""Co-attention fusion core.

Two streams enhance each other through a co-attention transformer layer
(queries from the own stream, keys/values from the other), applied in two
stages: text with visual entities first, then the entity-enhanced text with
the visual region features. A separate cross-modal consistency measure
compares textual and visual entity mentions per kind. The fused vector is the
concatenation of the three pooled streams and the consistency triple.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .corpus import ENTITY_KINDS, EntityMention, NewsPost
from .numerics import ParameterStore, Tensor

__all__ = [
    "BlockParams",
    "MCTLayerParams",
    "MCTOutput",
    "FuseParams",
    "FuseResult",
    "ConsistencyVector",
    "register_block",
    "multi_head_attention",
    "transformer_block",
    "register_mct_layer",
    "mct_layer",
    "masked_mean",
    "fuse",
    "entity_similarity",
    "consistency_vector",
    "concat_multimodal",
]

FFN_WIDTH_FACTOR = 4


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


@dataclass
class BlockParams:
    """One transformer block's parameter handle: attention + FFN + two norms,
    all named under a prefix in the store."""

    store: ParameterStore
    prefix: str
    d: int
    heads: int

    def t(self, suffix: str) -> Tensor:
        return self.store.tensor(f"{self.prefix}.{suffix}")


def register_block(store: ParameterStore, prefix: str, d: int, heads: int, rng: np.random.Generator) -> BlockParams:
    if d % heads != 0:
        raise ValueError(f"width {d} not divisible by {heads} heads")
    hidden = FFN_WIDTH_FACTOR * d
    for name in ("wq", "wk", "wv", "wo"):
        store.create(f"{prefix}.attn.{name}", _glorot(rng, d, d))
        if name != "wk":
            # a key bias shifts every logit of a query equally, so softmax
            # cancels it exactly; a parameter with an identically zero
            # gradient would only add finite-difference noise
            store.create(f"{prefix}.attn.b{name[1]}", np.zeros(d))
    store.create(f"{prefix}.ffn.w1", _glorot(rng, d, hidden))
    store.create(f"{prefix}.ffn.b1", np.zeros(hidden))
    store.create(f"{prefix}.ffn.w2", _glorot(rng, hidden, d))
    store.create(f"{prefix}.ffn.b2", np.zeros(d))
    for ln in ("ln1", "ln2"):
        store.create(f"{prefix}.{ln}.gain", np.ones(d))
        store.create(f"{prefix}.{ln}.bias", np.zeros(d))
    return BlockParams(store=store, prefix=prefix, d=d, heads=heads)


def multi_head_attention(
    params: BlockParams,
    q_in: Tensor,
    kv: Tensor,
    kv_mask,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Query-conditioned key-value attention sublayer, pre-residual.

    q_in: (n_q, d) own stream; kv: (n_k, d) other stream. Masked key
    positions get zero weight; dropout lands on the attention weights.
    """
    d, h = params.d, params.heads
    dh = d // h
    mask = np.asarray(kv_mask, dtype=bool)
    if not mask.any():
        raise ValueError("attention key stream is fully masked")

    q = nm.linear(q_in, params.t("attn.wq"), params.t("attn.bq"))
    k = nm.linear(kv, params.t("attn.wk"))
    v = nm.linear(kv, params.t("attn.wv"), params.t("attn.bv"))
    n_q, n_k = q_in.shape[0], kv.shape[0]
    qh = nm.transpose(nm.reshape(q, (n_q, h, dh)), (1, 0, 2))
    kh = nm.transpose(nm.reshape(k, (n_k, h, dh)), (1, 0, 2))
    vh = nm.transpose(nm.reshape(v, (n_k, h, dh)), (1, 0, 2))

    logits = nm.matmul(qh, nm.transpose(kh, (0, 2, 1))) * (1.0 / math.sqrt(dh))
    weights = nm.masked_softmax(logits, mask, axis=-1)
    if training and dropout_rate > 0.0:
        weights = nm.dropout(weights, dropout_rate, rng, training)
    ctx = nm.matmul(weights, vh)
    merged = nm.reshape(nm.transpose(ctx, (1, 0, 2)), (n_q, d))
    return nm.linear(merged, params.t("attn.wo"), params.t("attn.bo"))


def transformer_block(
    params: BlockParams,
    q_in: Tensor,
    kv: Tensor,
    kv_mask,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    ln_passthrough: bool = False,
) -> Tensor:
    """LayerNorm(x + attention) then LayerNorm(x + FFN); the norms become
    identity in ln_passthrough test mode."""
    attn = multi_head_attention(params, q_in, kv, kv_mask, dropout_rate, training, rng)
    x1 = q_in + attn
    if not ln_passthrough:
        x1 = nm.layer_norm(x1, params.t("ln1.gain"), params.t("ln1.bias"))
    hidden = nm.relu(nm.linear(x1, params.t("ffn.w1"), params.t("ffn.b1")))
    ff = nm.linear(hidden, params.t("ffn.w2"), params.t("ffn.b2"))
    if training and dropout_rate > 0.0:
        ff = nm.dropout(ff, dropout_rate, rng, training)
    out = x1 + ff
    if not ln_passthrough:
        out = nm.layer_norm(out, params.t("ln2.gain"), params.t("ln2.bias"))
    return out


# -- co-attention ----------------------------------------------------------


@dataclass
class MCTLayerParams:
    """Parameters for one co-attention layer: each stream runs its own block
    with queries from itself and keys/values from the other stream."""

    stream_a: BlockParams
    stream_b: BlockParams

    @property
    def d(self) -> int:
        return self.stream_a.d


@dataclass
class MCTOutput:
    stream_a: Tensor
    stream_b: Tensor


def register_mct_layer(
    store: ParameterStore, prefix_a: str, prefix_b: str, d: int, heads: int, rng: np.random.Generator
) -> MCTLayerParams:
    return MCTLayerParams(
        stream_a=register_block(store, prefix_a, d, heads, rng),
        stream_b=register_block(store, prefix_b, d, heads, rng),
    )


def mct_layer(
    a: Tensor,
    a_mask,
    b: Tensor,
    b_mask,
    params: MCTLayerParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    ln_passthrough: bool = False,
) -> MCTOutput:
    """One co-attention exchange: A enhanced by B, B enhanced by A."""
    a_mask = np.asarray(a_mask, dtype=bool)
    b_mask = np.asarray(b_mask, dtype=bool)
    if not a_mask.any() or not b_mask.any():
        raise ValueError("a co-attention stream is fully masked")
    out_a = transformer_block(params.stream_a, a, b, b_mask, dropout_rate, training, rng, ln_passthrough)
    out_b = transformer_block(params.stream_b, b, a, a_mask, dropout_rate, training, rng, ln_passthrough)
    return MCTOutput(stream_a=out_a, stream_b=out_b)


def masked_mean(x: Tensor, mask) -> Tensor:
    """Mean over unmasked rows of an (n, d) tensor."""
    m = np.asarray(mask, dtype=bool)
    if m.shape != (x.shape[0],):
        raise ValueError(f"mask length {m.shape} does not match {x.shape[0]} rows")
    count = int(m.sum())
    if count == 0:
        raise ValueError("masked_mean over zero rows")
    kept = x * Tensor(m.astype(np.float64)[:, None])
    return nm.reduce_sum(kept, axis=0) * (1.0 / count)


@dataclass
class FuseParams:
    stage1: list[MCTLayerParams]
    stage2: list[MCTLayerParams]
    store: ParameterStore
    sentinel_name: str = "ve_sentinel"

    def sentinel(self) -> Tensor:
        return self.store.tensor(self.sentinel_name)


@dataclass
class FuseResult:
    x_t: Tensor
    x_ve: Tensor
    x_v: Tensor


def fuse(
    h_t: Tensor,
    t_mask,
    h_ve: Tensor | None,
    ve_mask,
    h_v: Tensor,
    params: FuseParams,
    dropout_rate: float = 0.0,
    training: bool = False,
    rng: np.random.Generator | None = None,
    use_stage1: bool = True,
    use_stage2: bool = True,
    ln_passthrough: bool = False,
) -> FuseResult:
    """Two-stage pipeline producing the three pooled stream vectors.

    Stage 1 exchanges text and visual entities; stage 2 exchanges the
    entity-enhanced text with the visual regions. A disabled stage degrades
    to the average operation on its unenhanced inputs. An empty visual-entity
    stream is replaced by the learned sentinel row.
    """
    t_mask = np.asarray(t_mask, dtype=bool)
    if h_ve is None or h_ve.shape[0] == 0:
        h_ve = nm.reshape(params.sentinel(), (1, params.stage1[0].d))
        ve_mask = np.array([True])
    else:
        ve_mask = np.asarray(ve_mask, dtype=bool)

    t_enhanced = h_t
    if use_stage1:
        ve_enhanced = h_ve
        for layer in params.stage1:
            out = mct_layer(
                t_enhanced, t_mask, ve_enhanced, ve_mask, layer,
                dropout_rate, training, rng, ln_passthrough,
            )
            t_enhanced, ve_enhanced = out.stream_a, out.stream_b
        x_ve = masked_mean(ve_enhanced, ve_mask)
    else:
        x_ve = masked_mean(h_ve, ve_mask)

    v_mask = np.ones(h_v.shape[0], dtype=bool)
    if use_stage2:
        t_final, v_final = t_enhanced, h_v
        for layer in params.stage2:
            out = mct_layer(
                t_final, t_mask, v_final, v_mask, layer,
                dropout_rate, training, rng, ln_passthrough,
            )
            t_final, v_final = out.stream_a, out.stream_b
        x_t = masked_mean(t_final, t_mask)
        x_v = masked_mean(v_final, v_mask)
    else:
        x_t = masked_mean(t_enhanced, t_mask)
        x_v = masked_mean(h_v, v_mask)
    return FuseResult(x_t=x_t, x_ve=x_ve, x_v=x_v)


# -- entity consistency -------------------------------------------------------


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    # zero vector carries no evidence: cosine defined as 0
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b) / (na * nb)


def entity_similarity(
    textual: Sequence[EntityMention],
    visual: Sequence[EntityMention],
    embedder: Callable[[EntityMention], np.ndarray],
) -> float:
    """max over textual mentions of the confidence-weighted cosine sum
    against all visual mentions; 1.0 when either side is empty."""
    if not textual or not visual:
        return 1.0
    visual_vecs = [(m.confidence, embedder(m)) for m in visual]
    best = -math.inf
    for t in textual:
        et = embedder(t)
        score = sum(rho * _cosine(et, ev) for rho, ev in visual_vecs)
        if score > best:
            best = score
    return best


@dataclass
class ConsistencyVector:
    person: float
    location: float
    context: float

    def as_array(self) -> np.ndarray:
        return np.array([self.person, self.location, self.context], dtype=np.float64)


def consistency_vector(
    post: NewsPost,
    embedder: Callable[[EntityMention], np.ndarray],
    clamp: bool = True,
) -> ConsistencyVector:
    """Per-kind cross-modal similarity triple (person, location, context).

    The confidence-weighted sum can leave [-1, 1] when several visual
    entities exist; the clamp keeps the feature bounded and can be disabled.
    """
    values = []
    for kind in ENTITY_KINDS:
        t = [m for m in post.textual_entities if m.kind == kind]
        v = [m for m in post.visual_entities if m.kind == kind]
        s = entity_similarity(t, v, embedder)
        if clamp:
            s = min(1.0, max(-1.0, s))
        values.append(s)
    return ConsistencyVector(*values)


def consistency_vector_tensor(
    post: NewsPost,
    embedder: Callable[[EntityMention], Tensor],
    clamp: bool = True,
) -> Tensor:
    """Differentiable twin of consistency_vector: same arithmetic on tape
    tensors, for the end-to-end-gradients mode."""
    parts = []
    for kind in ENTITY_KINDS:
        textual = [m for m in post.textual_entities if m.kind == kind]
        visual = [m for m in post.visual_entities if m.kind == kind]
        if not textual or not visual:
            parts.append(Tensor([1.0]))
            continue
        visual_vecs = [(m.confidence, embedder(m)) for m in visual]
        scores = []
        for t in textual:
            et = embedder(t)
            nt = nm.sqrt(nm.reduce_sum(et * et))
            total = Tensor([0.0])
            for rho, ev in visual_vecs:
                if not et.data.any() or not ev.data.any():
                    continue
                nv = nm.sqrt(nm.reduce_sum(ev * ev))
                cos = nm.reduce_sum(et * ev) / (nt * nv)
                total = total + nm.reshape(cos, (1,)) * rho
            scores.append(total)
        best = nm.reduce_max(nm.concat(scores, axis=0))
        if clamp:
            best = nm.clip(best, -1.0, 1.0)
        parts.append(nm.reshape(best, (1,)))
    return nm.concat(parts, axis=0)


def concat_multimodal(x_t: Tensor, x_ve: Tensor, x_v: Tensor, x_s: Tensor) -> Tensor:
    """Fixed-order concatenation (x_t, x_ve, x_v, x_s) of width 3d + 3."""
    d = x_t.shape[0]
    if x_ve.shape != (d,) or x_v.shape != (d,):
        raise ValueError(f"stream widths differ: {x_t.shape}, {x_ve.shape}, {x_v.shape}")
    if x_s.shape != (3,):
        raise ValueError(f"consistency vector must have width 3, got {x_s.shape}")
    return nm.concat([x_t, x_ve, x_v, x_s], axis=0)
