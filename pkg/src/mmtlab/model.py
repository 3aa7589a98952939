"""Transformer encoder-decoder with three visual conditioning modes.

* text-only: the plain encoder-decoder.
* AIC (additive image conditioning): a learned projection of the global
  video vector is added to every encoder output row.
* AIF (attention over image features): each decoder layer gains an extra
  cross-attention sublayer whose keys and values are visual feature rows
  (region rows, category rows, or the row-major reshape of the global
  vector), linearly projected to the model dimension.

Blocks follow the standard layout: multi-head attention and feed-forward
sublayers, each wrapped with dropout, a residual connection and layer
normalization. Dropout is applied to sublayer outputs before the residual
addition and to the embedding sums, and is disabled at inference.
"""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

LN_EPS = 1e-6


class Mode(enum.Enum):
    TEXT_ONLY = "text-only"
    AIC = "aic"
    AIF = "aif"


class VisualKind(enum.Enum):
    NONE = "none"
    VIDEOSUM = "videosum"
    CONV4 = "conv4"
    EMB = "emb"


SETUP_NAMES = ("text-only", "aic-videosum", "aif-videosum", "aif-conv4",
               "aif-emb")


def parse_setup(name: str) -> tuple[Mode, VisualKind]:
    """Map a setup name like ``aif-conv4`` to (mode, visual kind)."""
    name = name.strip().lower()
    if name == "text-only":
        return Mode.TEXT_ONLY, VisualKind.NONE
    for prefix, mode in (("aic-", Mode.AIC), ("aif-", Mode.AIF)):
        if name.startswith(prefix):
            return mode, VisualKind(name[len(prefix):])
    raise ValueError(f"unknown setup {name!r}; expected one of {SETUP_NAMES}")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Desk-scale defaults; ``full_scale`` gives the validated full-size preset
    (6 layers, 16 heads, width 1024), which is shape-checked but not meant
    to be trained here.
    """

    src_vocab: int
    tgt_vocab: int
    n_layers: int = 2
    n_heads: int = 4
    model_dim: int = 128
    ff_dim: int = 256
    dropout: float = 0.1
    mode: Mode = Mode.TEXT_ONLY
    visual_kind: VisualKind = VisualKind.NONE
    visual_dim: int = 0     # feature column width (0 unless mode uses one)
    visual_rows: int = 0    # rows the decoder attends over in AIF
    max_len: int = 64

    def __post_init__(self):
        if self.model_dim % self.n_heads != 0:
            raise ValueError(
                f"model_dim {self.model_dim} not divisible by "
                f"n_heads {self.n_heads}")
        if min(self.src_vocab, self.tgt_vocab, self.n_layers,
               self.max_len) < 1:
            raise ValueError("vocab sizes, layer count and max_len must be >= 1")
        if self.mode is Mode.TEXT_ONLY and self.visual_kind is not VisualKind.NONE:
            raise ValueError("text-only mode takes no visual kind")
        if self.mode is Mode.AIC and self.visual_kind is not VisualKind.VIDEOSUM:
            raise ValueError("AIC conditions on the global videosum vector only")
        if self.mode is Mode.AIF and self.visual_kind is VisualKind.NONE:
            raise ValueError("AIF mode needs a visual kind")
        if self.mode is not Mode.TEXT_ONLY and self.visual_dim < 1:
            raise ValueError("visual modes need visual_dim >= 1")
        if self.mode is Mode.AIF and self.visual_rows < 1:
            raise ValueError("AIF mode needs visual_rows >= 1")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    @classmethod
    def full_scale(cls, src_vocab: int, tgt_vocab: int,
                   mode: Mode = Mode.TEXT_ONLY,
                   visual_kind: VisualKind = VisualKind.NONE) -> "ModelConfig":
        visual_dim = {VisualKind.NONE: 0, VisualKind.VIDEOSUM: 64,
                      VisualKind.CONV4: 2048, VisualKind.EMB: 300}[visual_kind]
        visual_rows = {VisualKind.NONE: 0, VisualKind.VIDEOSUM: 32,
                       VisualKind.CONV4: 49, VisualKind.EMB: 339}[visual_kind]
        if mode is Mode.AIC:
            visual_dim = 2048
        return cls(src_vocab=src_vocab, tgt_vocab=tgt_vocab, n_layers=6,
                   n_heads=16, model_dim=1024, ff_dim=4096, dropout=0.1,
                   mode=mode, visual_kind=visual_kind, visual_dim=visual_dim,
                   visual_rows=0 if mode is not Mode.AIF else visual_rows,
                   max_len=256)


# -- parameters ---------------------------------------------------------------

def parameter_shapes(config: ModelConfig) -> dict[str, tuple]:
    """Name -> shape map for every learnable tensor (no allocation)."""
    d, ff = config.model_dim, config.ff_dim
    shapes: dict[str, tuple] = {
        "src_embed": (config.src_vocab, d),
        "tgt_embed": (config.tgt_vocab, d),
        "out.w": (d, config.tgt_vocab),
        "out.b": (config.tgt_vocab,),
    }

    def attn(prefix: str) -> None:
        for nm in ("q", "k", "v", "o"):
            shapes[f"{prefix}.w{nm}"] = (d, d)
            shapes[f"{prefix}.b{nm}"] = (d,)

    def ln(prefix: str) -> None:
        shapes[f"{prefix}.gain"] = (d,)
        shapes[f"{prefix}.bias"] = (d,)

    for i in range(config.n_layers):
        attn(f"enc.{i}.self")
        ln(f"enc.{i}.ln1")
        shapes[f"enc.{i}.ff.w1"] = (d, ff)
        shapes[f"enc.{i}.ff.b1"] = (ff,)
        shapes[f"enc.{i}.ff.w2"] = (ff, d)
        shapes[f"enc.{i}.ff.b2"] = (d,)
        ln(f"enc.{i}.ln2")
    for i in range(config.n_layers):
        attn(f"dec.{i}.self")
        ln(f"dec.{i}.ln1")
        attn(f"dec.{i}.cross")
        ln(f"dec.{i}.ln2")
        if config.mode is Mode.AIF:
            attn(f"dec.{i}.visual")
            ln(f"dec.{i}.ln_visual")
        shapes[f"dec.{i}.ff.w1"] = (d, ff)
        shapes[f"dec.{i}.ff.b1"] = (ff,)
        shapes[f"dec.{i}.ff.w2"] = (ff, d)
        shapes[f"dec.{i}.ff.b2"] = (d,)
        ln(f"dec.{i}.ln3")
    if config.mode is Mode.AIC:
        shapes["aic.w"] = (config.visual_dim, d)
        shapes["aic.b"] = (d,)
    if config.mode is Mode.AIF:
        shapes["visual_in.w"] = (config.visual_dim, d)
        shapes["visual_in.b"] = (d,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> dict[str, Tensor]:
    """Seeded initialization; a parameter's values depend only on
    (seed, name, shape), so shared names match across model modes."""
    params: dict[str, Tensor] = {}
    for name, shape in parameter_shapes(config).items():
        rng = np.random.default_rng(
            np.random.SeedSequence([seed, zlib.crc32(name.encode())]))
        if name.endswith((".gain",)):
            data = np.ones(shape)
        elif name.endswith((".b", ".bias", ".bq", ".bk", ".bv", ".bo",
                            ".b1", ".b2")):
            data = np.zeros(shape)
        elif name.endswith("_embed"):
            data = rng.normal(0.0, shape[1] ** -0.5, size=shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            data = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def positional_encoding(length: int, dim: int) -> np.ndarray:
    """Fixed sinusoidal position table of shape (length, dim)."""
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angles = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    pe = np.zeros((length, dim))
    pe[:, 0::2] = np.sin(angles[:, 0::2])
    pe[:, 1::2] = np.cos(angles[:, 1::2])
    return pe


# -- forward pieces -----------------------------------------------------------

def _proj(x: Tensor, params: dict, prefix: str, nm: str) -> Tensor:
    return ad.matmul(x, params[f"{prefix}.w{nm}"]) + params[f"{prefix}.b{nm}"]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    x = ad.reshape(x, (b, length, n_heads, d // n_heads))
    return ad.transpose(x, (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, length, hd = x.shape
    x = ad.transpose(x, (0, 2, 1, 3))
    return ad.reshape(x, (b, length, h * hd))


def multi_head_attention(params: dict, prefix: str, n_heads: int,
                         queries: Tensor, keys_values: Tensor,
                         allow: Optional[np.ndarray],
                         collect: Optional[dict] = None,
                         collect_key: str = "") -> Tensor:
    """Standard multi-head attention; ``allow`` is a boolean mask
    broadcastable to (batch, 1, L_q, L_k), True where attending is legal."""
    q = _split_heads(_proj(queries, params, prefix, "q"), n_heads)
    k = _split_heads(_proj(keys_values, params, prefix, "k"), n_heads)
    v = _split_heads(_proj(keys_values, params, prefix, "v"), n_heads)
    out, weights = ad.scaled_dot_attention(q, k, v, mask=allow)
    if collect is not None:
        collect.setdefault(collect_key, []).append(weights.data)
    merged = _merge_heads(out)
    return ad.matmul(merged, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def _feed_forward(params: dict, prefix: str, x: Tensor) -> Tensor:
    h = ad.relu(ad.matmul(x, params[f"{prefix}.w1"]) + params[f"{prefix}.b1"])
    return ad.matmul(h, params[f"{prefix}.w2"]) + params[f"{prefix}.b2"]


def _sublayer(params: dict, ln_prefix: str, x: Tensor, sub_out: Tensor,
              config: ModelConfig, rng, training: bool) -> Tensor:
    dropped = ad.dropout(sub_out, config.dropout, rng, training=training)
    return ad.layer_norm(x + dropped, params[f"{ln_prefix}.gain"],
                         params[f"{ln_prefix}.bias"], eps=LN_EPS)


def _embed(table: Tensor, ids: np.ndarray, config: ModelConfig, rng,
           training: bool) -> Tensor:
    x = ad.scale(ad.embedding(table, ids), math.sqrt(config.model_dim))
    pe = positional_encoding(ids.shape[-1], config.model_dim)
    x = x + Tensor(pe)
    return ad.dropout(x, config.dropout, rng, training=training)


def _as_batch(ids) -> tuple[np.ndarray, bool]:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        return ids[None, :], True
    if ids.ndim == 2:
        return ids, False
    raise ValueError(f"token ids must be 1-d or 2-d, got shape {ids.shape}")


def encode(config: ModelConfig, params: dict, source_ids,
           src_ok: Optional[np.ndarray] = None, rng=None,
           training: bool = False, collect: Optional[dict] = None) -> Tensor:
    """Run the encoder stack; returns the encoder memory.

    ``source_ids`` is (L,) for one sentence or (B, L) for a batch; the
    memory has one row per source position. ``src_ok`` is a boolean
    (B, L) mask, False at padding positions (they are excluded as
    attention keys).
    """
    ids, squeeze = _as_batch(source_ids)
    if ids.shape[-1] == 0:
        raise ValueError("cannot encode an empty source")
    if training and rng is None:
        raise ValueError("training forward passes need an explicit rng")
    b, length = ids.shape
    if src_ok is None:
        src_ok = np.ones((b, length), dtype=bool)
    allow = src_ok[:, None, None, :]  # (B, 1, 1, L_k) broadcast over heads/queries

    x = _embed(params["src_embed"], ids, config, rng, training)
    for i in range(config.n_layers):
        attn = multi_head_attention(params, f"enc.{i}.self", config.n_heads,
                                    x, x, allow, collect, "enc_self")
        x = _sublayer(params, f"enc.{i}.ln1", x, attn, config, rng, training)
        ff = _feed_forward(params, f"enc.{i}.ff", x)
        x = _sublayer(params, f"enc.{i}.ln2", x, ff, config, rng, training)
    return ad.reshape(x, x.shape[1:]) if squeeze else x


def condition_aic(memory: Tensor, feature, weight: Tensor,
                  bias: Tensor) -> Tensor:
    """Add the projected global feature vector to every memory row."""
    feat = np.asarray(feature, dtype=np.float64)
    if feat.shape[-1] != weight.shape[0]:
        raise ValueError(
            f"feature dimension {feat.shape[-1]} does not match projection "
            f"input {weight.shape[0]}")
    shift = ad.matmul(Tensor(feat), weight) + bias
    if memory.ndim == 3 and feat.ndim == 2:
        shift = ad.reshape(shift, (shift.shape[0], 1, shift.shape[1]))
    return memory + shift


def apply_aic(config: ModelConfig, params: dict, memory: Tensor,
              feature) -> Tensor:
    if config.mode is not Mode.AIC:
        raise ValueError("apply_aic is only defined for AIC mode")
    return condition_aic(memory, feature, params["aic.w"], params["aic.b"])


def decode_forward(config: ModelConfig, params: dict, memory: Tensor,
                   visual, target_prefix_ids,
                   src_ok: Optional[np.ndarray] = None,
                   tgt_ok: Optional[np.ndarray] = None,
                   rng=None, training: bool = False,
                   collect: Optional[dict] = None) -> Tensor:
    """Run the decoder stack over a target prefix; returns per-position
    vocabulary logits (L, V) or (B, L, V).

    Sublayers per layer: causally masked self-attention, cross-attention
    over the encoder memory, an extra visual cross-attention in AIF mode,
    then the feed-forward, each with residual + layer normalization.
    ``visual`` is required in AIF mode (rows x visual_dim, optionally
    batched) and rejected in any other mode.
    """
    if config.mode is Mode.AIF:
        if visual is None:
            raise ValueError("AIF decoding needs a visual feature matrix")
    elif visual is not None:
        raise ValueError(f"visual input supplied in {config.mode.value} mode")
    if training and rng is None:
        raise ValueError("training forward passes need an explicit rng")

    ids, squeeze = _as_batch(target_prefix_ids)
    if ids.shape[-1] == 0:
        raise ValueError("cannot decode an empty target prefix")
    b, lt = ids.shape
    mem = ad.reshape(memory, (1, *memory.shape)) if memory.ndim == 2 else memory
    if mem.shape[0] != b:
        raise ValueError(
            f"memory batch {mem.shape[0]} does not match target batch {b}")
    ls = mem.shape[1]
    if src_ok is None:
        src_ok = np.ones((b, ls), dtype=bool)
    if tgt_ok is None:
        tgt_ok = np.ones((b, lt), dtype=bool)

    causal = np.tril(np.ones((lt, lt), dtype=bool))
    self_allow = causal[None, None, :, :] & tgt_ok[:, None, None, :]
    cross_allow = src_ok[:, None, None, :]

    vis_rows = None
    if config.mode is Mode.AIF:
        vis = np.asarray(visual, dtype=np.float64)
        if vis.ndim == 2:
            vis = np.broadcast_to(vis, (b, *vis.shape))
        if vis.ndim != 3 or vis.shape[0] != b:
            raise ValueError(f"bad visual feature shape {vis.shape}")
        if vis.shape[1] != config.visual_rows or vis.shape[2] != config.visual_dim:
            raise ValueError(
                f"visual feature shape {vis.shape[1:]} does not match "
                f"configured ({config.visual_rows}, {config.visual_dim})")
        vis_rows = (ad.matmul(Tensor(vis), params["visual_in.w"])
                    + params["visual_in.b"])

    y = _embed(params["tgt_embed"], ids, config, rng, training)
    for i in range(config.n_layers):
        attn = multi_head_attention(params, f"dec.{i}.self", config.n_heads,
                                    y, y, self_allow, collect, "dec_self")
        y = _sublayer(params, f"dec.{i}.ln1", y, attn, config, rng, training)
        cross = multi_head_attention(params, f"dec.{i}.cross", config.n_heads,
                                     y, mem, cross_allow, collect, "dec_cross")
        y = _sublayer(params, f"dec.{i}.ln2", y, cross, config, rng, training)
        if vis_rows is not None:
            vattn = multi_head_attention(params, f"dec.{i}.visual",
                                         config.n_heads, y, vis_rows, None,
                                         collect, "dec_visual")
            y = _sublayer(params, f"dec.{i}.ln_visual", y, vattn, config,
                          rng, training)
        ff = _feed_forward(params, f"dec.{i}.ff", y)
        y = _sublayer(params, f"dec.{i}.ln3", y, ff, config, rng, training)

    logits = ad.matmul(y, params["out.w"]) + params["out.b"]
    return ad.reshape(logits, logits.shape[1:]) if squeeze else logits
