"""Classification head, loss, full forward pipeline, training loop,
ablation switchboard, and the binary checkpoint format."""

from __future__ import annotations

import dataclasses
import json
import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import numerics as nm
from .corpus import FAKE, DatasetError, EntityMention, NewsPost
from .encoders import (
    TextEncoderParams,
    VisualProjectionParams,
    Vocabulary,
    compose_text,
    embed_entity,
    encode_text,
    project_visual,
    register_text_encoder,
    register_visual_projection,
)
from .evaluation import confusion_metrics
from .fusion import (
    FuseParams,
    concat_multimodal,
    consistency_vector,
    consistency_vector_tensor,
    fuse,
    register_mct_layer,
)
from .numerics import AdamState, ParameterStore, Tensor, adam_step

__all__ = [
    "ConfigError",
    "ModelConfig",
    "Model",
    "Prediction",
    "HistoryRow",
    "init_model",
    "classify",
    "loss",
    "forward",
    "predict",
    "fit",
    "apply_ablation",
    "ABLATION_NAMES",
    "save_checkpoint",
    "load_checkpoint",
    "toy_gradcheck_setup",
]


class ConfigError(ValueError):
    """Invalid model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    d: int = 256
    heads: int = 8
    l_max: int = 256
    dropout: float = 0.3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    lr: float = 1e-3
    seed: int = 0
    vocab_size: int = 4096
    n_enc_layers: int = 2
    mct_depth: int = 1
    d_visual: int = 512
    n_regions: int = 49
    clamp_consistency: bool = True
    consistency_gradients: bool = False
    positive_class_weight: float = 1.0
    use_visual_entities: bool = True
    use_ocr: bool = True
    use_coattention_ve: bool = True
    use_coattention_vf: bool = True
    use_entity_consistency: bool = True
    finetune_visual_projection: bool = True

    def __post_init__(self):
        if self.d <= 0 or self.d % self.heads != 0:
            raise ConfigError(f"width {self.d} must be a positive multiple of heads {self.heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.l_max < 8:
            raise ConfigError(f"l_max must be at least 8, got {self.l_max}")
        if self.vocab_size < 1024:
            raise ConfigError(f"vocab_size must be at least 1024, got {self.vocab_size}")
        if self.batch_size <= 0 or self.max_epochs <= 0:
            raise ConfigError("batch_size and max_epochs must be positive")
        if self.patience < 0:
            raise ConfigError(f"patience must be nonnegative, got {self.patience}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.mct_depth <= 0 or self.n_enc_layers < 0:
            raise ConfigError("mct_depth must be positive and n_enc_layers nonnegative")
        if self.d_visual <= 0 or self.n_regions <= 0:
            raise ConfigError("d_visual and n_regions must be positive")
        if self.positive_class_weight <= 0:
            raise ConfigError("positive_class_weight must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**obj)

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e.msg}") from None
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(obj)


@dataclass
class Model:
    config: ModelConfig
    store: ParameterStore
    text_encoder: TextEncoderParams
    visual: VisualProjectionParams
    fuse_params: FuseParams

    @property
    def vocab(self) -> Vocabulary:
        return self.text_encoder.vocab


def init_model(config: ModelConfig, dtype=np.float32) -> Model:
    """Create all parameters. Every parameter always exists regardless of
    ablation flags, so checkpoints stay interchangeable across variants;
    flags only change routing and trainability."""
    store = ParameterStore(dtype=dtype)
    rng = np.random.default_rng(config.seed)
    vocab = Vocabulary(config.vocab_size)
    encoder = register_text_encoder(
        store, vocab, config.d, config.l_max, config.n_enc_layers, config.heads, rng
    )
    stage1 = [
        register_mct_layer(store, f"co_ve{k}.text", f"co_ve{k}.ent", config.d, config.heads, rng)
        for k in range(config.mct_depth)
    ]
    stage2 = [
        register_mct_layer(store, f"co_vf{k}.text", f"co_vf{k}.vis", config.d, config.heads, rng)
        for k in range(config.mct_depth)
    ]
    visual = register_visual_projection(store, config.d_visual, config.d, rng)
    store.create("ve_sentinel", rng.uniform(-0.1, 0.1, size=config.d))
    width = 3 * config.d + 3
    bound = math.sqrt(6.0 / (width + 2))
    store.create("head.w", rng.uniform(-bound, bound, size=(width, 2)))
    store.create("head.b", np.zeros(2))
    if not config.finetune_visual_projection:
        store.set_trainable("visproj.w", False)
        store.set_trainable("visproj.b", False)
    return Model(
        config=config,
        store=store,
        text_encoder=encoder,
        visual=visual,
        fuse_params=FuseParams(stage1=stage1, stage2=stage2, store=store),
    )


@dataclass
class Prediction:
    id: str
    p_real: float
    p_fake: float

    @property
    def label_pred(self) -> int:
        return int(np.argmax([self.p_real, self.p_fake]))


def classify(x_m: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Two-class probabilities from the fused vector: softmax(x_m W + b)."""
    logits = nm.linear(nm.reshape(x_m, (1, x_m.shape[0])), w, b)
    return nm.reshape(nm.softmax(logits, axis=-1), (2,))


def loss(p: Tensor, y: int, positive_class_weight: float = 1.0) -> Tensor:
    """Cross-entropy of the true class, with probabilities clamped to
    [1e-12, 1-1e-12] before the log."""
    if y not in (0, 1):
        raise ValueError(f"label must be 0 or 1, got {y}")
    clamped = nm.clip(p, 1e-12, 1.0 - 1e-12)
    onehot = np.zeros(2)
    onehot[y] = 1.0
    value = -nm.reduce_sum(nm.log(clamped) * Tensor(onehot))
    if y == FAKE and positive_class_weight != 1.0:
        value = value * positive_class_weight
    return value


def forward(
    post: NewsPost,
    model: Model,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Probability vector (2,) for one post, honoring the ablation flags."""
    cfg = model.config
    rate = cfg.dropout if training else 0.0

    if post.text_features is not None:
        if post.text_features.shape[1] != cfg.d:
            raise DatasetError(
                f"post {post.id}: text_features width {post.text_features.shape[1]} != model width {cfg.d}"
            )
        h_t = Tensor(post.text_features)
        t_mask = np.ones(h_t.shape[0], dtype=bool)
    else:
        ocr = post.ocr_text if cfg.use_ocr else []
        ids, t_mask = compose_text(post.text, ocr, cfg.l_max, model.vocab)
        h_t = encode_text(ids, t_mask, model.text_encoder, rate, training, rng)

    if post.visual_regions is not None:
        regions = post.visual_regions
    else:
        # a post without an image carries no visual evidence
        regions = np.zeros((cfg.n_regions, cfg.d_visual))
    h_v = project_visual(regions, model.visual)

    h_ve = None
    ve_mask = None
    if cfg.use_visual_entities and post.visual_entities:
        rows = [
            nm.reshape(embed_entity(m, model.text_encoder), (1, cfg.d))
            for m in post.visual_entities
        ]
        h_ve = nm.concat(rows, axis=0)
        ve_mask = np.ones(len(rows), dtype=bool)

    result = fuse(
        h_t, t_mask, h_ve, ve_mask, h_v, model.fuse_params,
        dropout_rate=rate, training=training, rng=rng,
        use_stage1=cfg.use_visual_entities and cfg.use_coattention_ve,
        use_stage2=cfg.use_coattention_vf,
    )
    x_ve = result.x_ve if cfg.use_visual_entities else Tensor(np.zeros(cfg.d))

    if cfg.use_entity_consistency and cfg.use_visual_entities:
        if cfg.consistency_gradients:
            x_s = consistency_vector_tensor(
                post, lambda m: embed_entity(m, model.text_encoder), clamp=cfg.clamp_consistency
            )
        else:
            # measurement mode: x_s enters the head as constants
            with nm.no_grad():
                vec = consistency_vector(
                    post,
                    lambda m: embed_entity(m, model.text_encoder).data,
                    clamp=cfg.clamp_consistency,
                ).as_array()
            x_s = Tensor(vec)
    else:
        x_s = Tensor(np.ones(3))

    x_m = concat_multimodal(result.x_t, x_ve, result.x_v, x_s)
    return classify(x_m, model.store.tensor("head.w"), model.store.tensor("head.b"))


def predict(post: NewsPost, model: Model) -> Prediction:
    with nm.no_grad():
        p = forward(post, model, training=False)
    return Prediction(id=post.id, p_real=float(p.data[0]), p_fake=float(p.data[1]))


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_acc: float
    val_f1: float


def _validation_scores(posts: Sequence[NewsPost], model: Model) -> tuple[float, float]:
    preds = [predict(p, model) for p in posts]
    m = confusion_metrics(preds, [p.label for p in posts])
    return m.accuracy, m.f1


def fit(
    train: Sequence[NewsPost],
    validation: Sequence[NewsPost],
    model: Model,
    log: Callable[[str], None] | None = None,
) -> list[HistoryRow]:
    """Mini-batch Adam with validation-accuracy early stopping.

    Shuffling and dropout are driven by generators seeded from config.seed,
    so identical data and config reproduce identical history and parameters.
    Returns per-epoch history; the model keeps the best-validation weights.
    """
    if not train:
        raise DatasetError("training set is empty")
    if not validation:
        raise DatasetError("validation set is empty")
    cfg = model.config
    store = model.store
    shuffle_rng = np.random.default_rng(cfg.seed)
    dropout_rng = np.random.default_rng(cfg.seed + 1)
    adam = AdamState(lr=cfg.lr)

    history: list[HistoryRow] = []
    best_acc = -1.0
    best_snapshot = store.snapshot()
    stale = 0
    order = np.arange(len(train))

    for epoch in range(1, cfg.max_epochs + 1):
        shuffle_rng.shuffle(order)
        total_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start : start + cfg.batch_size]
            store.zero_grads()
            for idx in batch:
                post = train[int(idx)]
                p = forward(post, model, training=True, rng=dropout_rng)
                item_loss = loss(p, post.label, cfg.positive_class_weight)
                nm.backward(item_loss)
                total_loss += item_loss.item()
            store.scale_grads(1.0 / len(batch))
            adam_step(store, adam)
        store.zero_grads()

        val_acc, val_f1 = _validation_scores(validation, model)
        row = HistoryRow(
            epoch=epoch,
            train_loss=total_loss / len(train),
            val_acc=val_acc,
            val_f1=val_f1,
        )
        history.append(row)
        if log:
            log(
                f"epoch {row.epoch:3d}  loss {row.train_loss:.4f}  "
                f"val_acc {row.val_acc:.4f}  val_f1 {row.val_f1:.4f}"
            )

        if val_acc > best_acc:
            best_acc = val_acc
            best_snapshot = store.snapshot()
            stale = 0
        else:
            stale += 1
            if stale > cfg.patience:
                break

    store.restore(best_snapshot)
    return history


ABLATION_NAMES = (
    "w/o visual entities",
    "w/o OCR text",
    "w/o FT VGG feature",
    "w/o co-attention-ve",
    "w/o co-attention-vf",
    "w/o entity consistency",
)


def apply_ablation(config: ModelConfig, name: str) -> ModelConfig:
    """Config for one named variant; removing the visual entities also
    removes their co-attention stage and the consistency measure."""
    if name == "w/o visual entities":
        return dataclasses.replace(
            config,
            use_visual_entities=False,
            use_coattention_ve=False,
            use_entity_consistency=False,
        )
    if name == "w/o OCR text":
        return dataclasses.replace(config, use_ocr=False)
    if name == "w/o FT VGG feature":
        return dataclasses.replace(config, finetune_visual_projection=False)
    if name == "w/o co-attention-ve":
        return dataclasses.replace(config, use_coattention_ve=False)
    if name == "w/o co-attention-vf":
        return dataclasses.replace(config, use_coattention_vf=False)
    if name == "w/o entity consistency":
        return dataclasses.replace(config, use_entity_consistency=False)
    raise ValueError(f"unknown ablation {name!r}; valid names: {', '.join(ABLATION_NAMES)}")


# -- checkpoints ---------------------------------------------------------------

_MAGIC = b"NFCK"
_VERSION = 1


def save_checkpoint(model: Model, path) -> None:
    """Versioned little-endian container: config echo, then each parameter's
    name, trainable flag, shape, and raw 32-bit values, in name order."""
    config_blob = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(config_blob)))
        fh.write(config_blob)
        names = model.store.names()
        fh.write(struct.pack("<I", len(names)))
        for name in names:
            raw = name.encode("utf-8")
            value = np.ascontiguousarray(model.store.value(name), dtype="<f4")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<B", 1 if model.store.is_trainable(name) else 0))
            fh.write(struct.pack("<I", value.ndim))
            fh.write(struct.pack(f"<{value.ndim}I", *value.shape))
            fh.write(value.tobytes())


def load_checkpoint(path) -> Model:
    with open(path, "rb") as fh:
        blob = fh.read()
    view = memoryview(blob)
    offset = 0

    def take(n: int) -> memoryview:
        nonlocal offset
        if offset + n > len(view):
            raise ValueError("checkpoint truncated")
        part = view[offset : offset + n]
        offset += n
        return part

    if bytes(take(4)) != _MAGIC:
        raise ValueError("not a model checkpoint (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    (config_len,) = struct.unpack("<I", take(4))
    config = ModelConfig.from_json(bytes(take(config_len)).decode("utf-8"))
    model = init_model(config)

    (n_params,) = struct.unpack("<I", take(4))
    expected = model.store.names()
    if n_params != len(expected):
        raise ValueError(f"checkpoint has {n_params} parameters, model defines {len(expected)}")
    for wanted in expected:
        (name_len,) = struct.unpack("<I", take(4))
        name = bytes(take(name_len)).decode("utf-8")
        if name != wanted:
            raise ValueError(f"checkpoint parameter {name!r} does not match expected {wanted!r}")
        (trainable,) = struct.unpack("<B", take(1))
        (ndim,) = struct.unpack("<I", take(4))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        count = int(np.prod(shape)) if shape else 1
        value = np.frombuffer(take(4 * count), dtype="<f4").reshape(shape)
        if value.shape != model.store.value(name).shape:
            raise ValueError(f"checkpoint parameter {name!r} has shape {value.shape}")
        model.store.set_value(name, value.copy())
        model.store.set_trainable(name, bool(trainable))
    if offset != len(view):
        raise ValueError("checkpoint has trailing bytes")
    return model


# -- toy fixture for end-to-end gradient verification ---------------------------


def toy_gradcheck_setup() -> tuple[Model, list[NewsPost], Callable[[], Tensor]]:
    """A small full pipeline in float64 with every feature path active:
    entities on both sides on one post (consistency in its smooth region),
    no visual entities on the other (sentinel path), plus OCR text.
    Consistency gradients are enabled so finite differences see the
    entity-consistency term's contribution; dropout is off for determinism."""
    config = ModelConfig(
        d=8,
        heads=2,
        l_max=16,
        dropout=0.0,
        batch_size=2,
        max_epochs=1,
        patience=0,
        lr=1e-3,
        seed=5,
        vocab_size=1024,
        n_enc_layers=1,
        mct_depth=1,
        d_visual=16,
        n_regions=4,
        consistency_gradients=True,
    )
    model = init_model(config, dtype=np.float64)
    posts = [
        NewsPost(
            id="toy-0",
            text=["storm", "surge", "floods", "harbor", "town", "quay"],
            label=1,
            ocr_text=["evacuation", "notice"],
            textual_entities=[
                EntityMention(surface=["mayor", "reyes"], kind="person"),
                EntityMention(surface=["harbor"], kind="context"),
            ],
            visual_entities=[
                EntityMention(surface=["crowd"], kind="person", confidence=0.8),
                EntityMention(surface=["waterfront"], kind="context", confidence=0.6),
            ],
            visual_regions=np.random.default_rng(21).normal(size=(4, 16)),
        ),
        NewsPost(
            id="toy-1",
            text=["markets", "rally", "after", "announcement"],
            label=0,
            ocr_text=["index", "chart"],
            textual_entities=[EntityMention(surface=["exchange"], kind="location")],
            visual_entities=[],
            visual_regions=np.random.default_rng(22).normal(size=(4, 16)),
        ),
    ]

    def loss_fn() -> Tensor:
        total = None
        for post in posts:
            p = forward(post, model, training=False)
            item = loss(p, post.label)
            total = item if total is None else total + item
        return total

    return model, posts, loss_fn
