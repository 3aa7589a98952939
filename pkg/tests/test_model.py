import math

import numpy as np
import pytest

from mmtlab import autodiff as ad
from mmtlab.autodiff import Tensor
from mmtlab.model import (Mode, ModelConfig, VisualKind, apply_aic,
                          condition_aic, decode_forward, encode, init_params,
                          parameter_shapes, parse_setup, positional_encoding)

from oracles import finite_difference_gradient, gradient_relative_error


def micro_config(mode=Mode.TEXT_ONLY, kind=VisualKind.NONE, visual_dim=0,
                 visual_rows=0, n_layers=1, n_heads=1, model_dim=2, ff_dim=4):
    return ModelConfig(src_vocab=5, tgt_vocab=6, n_layers=n_layers,
                       n_heads=n_heads, model_dim=model_dim, ff_dim=ff_dim,
                       dropout=0.0, mode=mode, visual_kind=kind,
                       visual_dim=visual_dim, visual_rows=visual_rows,
                       max_len=16)


def hand_set_params(config, scale=0.3):
    """Deterministic small distinct values for every weight."""
    params = {}
    for i, (name, shape) in enumerate(sorted(parameter_shapes(config).items())):
        n = int(np.prod(shape))
        vals = scale * np.cos(0.7 * i + 0.13 * np.arange(n))
        if name.endswith(".gain"):
            vals = 1.0 + 0.1 * vals
        params[name] = Tensor(vals.reshape(shape), requires_grad=True,
                              name=name)
    return params


# -- independent straight-line forward pass (the micro-model oracle) ---------

def manual_layer_norm(x, gain, bias, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    var = ((x - mu) ** 2).mean(-1, keepdims=True)
    return gain * (x - mu) / np.sqrt(var + eps) + bias


def manual_attention(x_q, x_kv, p, prefix, causal=False):
    """Single-head attention computed position by position."""
    q = x_q @ p[f"{prefix}.wq"].data + p[f"{prefix}.bq"].data
    k = x_kv @ p[f"{prefix}.wk"].data + p[f"{prefix}.bk"].data
    v = x_kv @ p[f"{prefix}.wv"].data + p[f"{prefix}.bv"].data
    d = q.shape[-1]
    out = np.zeros((q.shape[0], v.shape[1]))
    for t in range(q.shape[0]):
        limit = t + 1 if causal else k.shape[0]
        scores = np.array([q[t] @ k[j] / math.sqrt(d) for j in range(limit)])
        scores = scores - scores.max()
        w = np.exp(scores) / np.exp(scores).sum()
        out[t] = sum(w[j] * v[j] for j in range(limit))
    return out @ p[f"{prefix}.wo"].data + p[f"{prefix}.bo"].data


def manual_ff(x, p, prefix):
    h = np.maximum(x @ p[f"{prefix}.w1"].data + p[f"{prefix}.b1"].data, 0.0)
    return h @ p[f"{prefix}.w2"].data + p[f"{prefix}.b2"].data


def manual_encode(config, p, ids):
    d = config.model_dim
    x = p["src_embed"].data[ids] * math.sqrt(d)
    x = x + positional_encoding(len(ids), d)
    for i in range(config.n_layers):
        attn = manual_attention(x, x, p, f"enc.{i}.self")
        x = manual_layer_norm(x + attn, p[f"enc.{i}.ln1.gain"].data,
                              p[f"enc.{i}.ln1.bias"].data)
        ff = manual_ff(x, p, f"enc.{i}.ff")
        x = manual_layer_norm(x + ff, p[f"enc.{i}.ln2.gain"].data,
                              p[f"enc.{i}.ln2.bias"].data)
    return x


def manual_decode(config, p, memory, tgt_ids):
    d = config.model_dim
    y = p["tgt_embed"].data[tgt_ids] * math.sqrt(d)
    y = y + positional_encoding(len(tgt_ids), d)
    for i in range(config.n_layers):
        attn = manual_attention(y, y, p, f"dec.{i}.self", causal=True)
        y = manual_layer_norm(y + attn, p[f"dec.{i}.ln1.gain"].data,
                              p[f"dec.{i}.ln1.bias"].data)
        cross = manual_attention(y, memory, p, f"dec.{i}.cross")
        y = manual_layer_norm(y + cross, p[f"dec.{i}.ln2.gain"].data,
                              p[f"dec.{i}.ln2.bias"].data)
        ff = manual_ff(y, p, f"dec.{i}.ff")
        y = manual_layer_norm(y + ff, p[f"dec.{i}.ln3.gain"].data,
                              p[f"dec.{i}.ln3.bias"].data)
    return y @ p["out.w"].data + p["out.b"].data


class TestEncode:
    def test_memory_rows_equal_source_length(self, rng):
        config = micro_config(n_layers=2, n_heads=2, model_dim=8, ff_dim=16)
        params = init_params(config, seed=0)
        for length in (1, 3, 7):
            ids = rng.integers(0, config.src_vocab, size=length)
            memory = encode(config, params, ids)
            assert memory.shape == (length, config.model_dim)

    def test_identical_sources_identical_memories(self, rng):
        config = micro_config(n_layers=2, n_heads=2, model_dim=8, ff_dim=16)
        params = init_params(config, seed=0)
        ids = rng.integers(0, config.src_vocab, size=4)
        a = encode(config, params, ids)
        b = encode(config, params, ids.copy())
        np.testing.assert_array_equal(a.data, b.data)

    def test_micro_model_matches_manual_forward(self):
        config = micro_config()
        params = hand_set_params(config)
        ids = np.array([0, 3, 1])
        got = encode(config, params, ids)
        expected = manual_encode(config, params, ids)
        np.testing.assert_allclose(got.data, expected, atol=1e-12)

    def test_micro_model_two_layers(self):
        config = micro_config(n_layers=2, model_dim=4, n_heads=1, ff_dim=8)
        params = hand_set_params(config)
        ids = np.array([2, 2, 4, 0])
        got = encode(config, params, ids)
        expected = manual_encode(config, params, ids)
        np.testing.assert_allclose(got.data, expected, atol=1e-12)

    def test_empty_source_rejected(self):
        config = micro_config()
        params = init_params(config, seed=0)
        with pytest.raises(ValueError):
            encode(config, params, np.zeros(0, dtype=int))


class TestDecodeForward:
    def test_micro_model_matches_manual_forward(self):
        config = micro_config()
        params = hand_set_params(config)
        src = np.array([1, 4])
        tgt = np.array([0, 2, 5])
        memory = encode(config, params, src)
        logits = decode_forward(config, params, memory, None, tgt)
        expected = manual_decode(config, params, memory.data, tgt)
        np.testing.assert_allclose(logits.data, expected, atol=1e-12)
        assert logits.shape == (3, config.tgt_vocab)

    def test_causality(self, rng):
        config = micro_config(n_layers=2, n_heads=2, model_dim=8, ff_dim=16)
        params = init_params(config, seed=1)
        src = rng.integers(0, config.src_vocab, size=4)
        memory = encode(config, params, src)
        tgt = rng.integers(0, config.tgt_vocab, size=6)
        base = decode_forward(config, params, memory, None, tgt).data
        for t in range(5):
            changed = tgt.copy()
            changed[t + 1:] = (changed[t + 1:] + 1) % config.tgt_vocab
            other = decode_forward(config, params, memory, None, changed).data
            np.testing.assert_array_equal(base[: t + 1], other[: t + 1])

    def test_visual_in_text_only_rejected(self, rng):
        config = micro_config()
        params = init_params(config, seed=0)
        memory = encode(config, params, np.array([1]))
        with pytest.raises(ValueError):
            decode_forward(config, params, memory, rng.normal(size=(3, 2)),
                           np.array([0]))

    def test_missing_visual_in_aif_rejected(self):
        config = micro_config(mode=Mode.AIF, kind=VisualKind.EMB,
                              visual_dim=3, visual_rows=4)
        params = init_params(config, seed=0)
        memory = encode(config, params, np.array([1]))
        with pytest.raises(ValueError):
            decode_forward(config, params, memory, None, np.array([0]))

    def test_wrong_visual_rows_rejected(self, rng):
        config = micro_config(mode=Mode.AIF, kind=VisualKind.EMB,
                              visual_dim=3, visual_rows=4)
        params = init_params(config, seed=0)
        memory = encode(config, params, np.array([1]))
        with pytest.raises(ValueError):
            decode_forward(config, params, memory, rng.normal(size=(5, 3)),
                           np.array([0]))


class TestAic:
    def test_zero_feature_leaves_memory_unchanged(self, rng):
        # the projection bias is zero-initialized, so W @ 0 + b adds nothing
        config = micro_config(mode=Mode.AIC, kind=VisualKind.VIDEOSUM,
                              visual_dim=6, model_dim=4, n_heads=2, ff_dim=8)
        params = init_params(config, seed=0)
        memory = encode(config, params, np.array([1, 2, 3]))
        out = apply_aic(config, params, memory, np.zeros(6))
        np.testing.assert_array_equal(out.data, memory.data)

    def test_zero_memory_rows_equal_projection(self, rng):
        w = Tensor(rng.normal(size=(6, 4)))
        b = Tensor(rng.normal(size=4))
        feat = rng.normal(size=6)
        memory = Tensor(np.zeros((5, 4)))
        out = condition_aic(memory, feat, w, b)
        expected = feat @ w.data + b.data
        for row in out.data:
            np.testing.assert_allclose(row, expected, atol=1e-12)

    def test_rowwise_matches_direct_product_oracle(self, rng):
        w = Tensor(rng.normal(size=(6, 4)))
        b = Tensor(rng.normal(size=4))
        feat = rng.normal(size=6)
        memory = Tensor(rng.normal(size=(5, 4)))
        out = condition_aic(memory, feat, w, b)
        shift = np.array([sum(feat[i] * w.data[i, j] for i in range(6))
                          for j in range(4)]) + b.data
        for r in range(5):
            np.testing.assert_allclose(out.data[r], memory.data[r] + shift,
                                       atol=1e-12)

    def test_dimension_mismatch_rejected(self, rng):
        w = Tensor(rng.normal(size=(6, 4)))
        b = Tensor(rng.normal(size=4))
        with pytest.raises(ValueError):
            condition_aic(Tensor(np.zeros((2, 4))), rng.normal(size=5), w, b)

    def test_zero_feature_zero_bias_bit_equal_to_text_only(self, rng):
        """Shared weights + zero feature + zero bias => identical logits."""
        text_cfg = micro_config(n_layers=2, n_heads=2, model_dim=8, ff_dim=16)
        aic_cfg = ModelConfig(
            src_vocab=text_cfg.src_vocab, tgt_vocab=text_cfg.tgt_vocab,
            n_layers=2, n_heads=2, model_dim=8, ff_dim=16, dropout=0.0,
            mode=Mode.AIC, visual_kind=VisualKind.VIDEOSUM, visual_dim=12,
            max_len=16)
        text_params = init_params(text_cfg, seed=5)
        aic_params = init_params(aic_cfg, seed=5)
        for name, p in text_params.items():
            np.testing.assert_array_equal(p.data, aic_params[name].data)

        src = rng.integers(0, text_cfg.src_vocab, size=4)
        tgt = rng.integers(0, text_cfg.tgt_vocab, size=3)
        text_memory = encode(text_cfg, text_params, src)
        aic_memory = apply_aic(aic_cfg, aic_params,
                               encode(aic_cfg, aic_params, src), np.zeros(12))
        assert np.array_equal(text_memory.data, aic_memory.data)
        text_logits = decode_forward(text_cfg, text_params, text_memory,
                                     None, tgt)
        aic_logits = decode_forward(aic_cfg, aic_params, aic_memory, None, tgt)
        assert np.array_equal(text_logits.data, aic_logits.data)


class TestAifShapes:
    @pytest.mark.parametrize("kind,rows,dim", [
        (VisualKind.CONV4, 49, 2048),
        (VisualKind.EMB, 339, 300),
        (VisualKind.VIDEOSUM, 32, 64),
    ])
    def test_visual_attention_columns_at_full_scale_features(self, rng, kind,
                                                             rows, dim):
        config = micro_config(mode=Mode.AIF, kind=kind, visual_dim=dim,
                              visual_rows=rows, n_layers=1, n_heads=2,
                              model_dim=8, ff_dim=8)
        params = init_params(config, seed=2)
        memory = encode(config, params, np.array([1, 2]))
        collect = {}
        decode_forward(config, params, memory, rng.normal(size=(rows, dim)),
                       np.array([0, 1, 2]), collect=collect)
        for weights in collect["dec_visual"]:
            assert weights.shape[-1] == rows
            np.testing.assert_allclose(weights.sum(-1), 1.0, atol=1e-6)

    def test_all_attention_rows_normalized(self, rng):
        config = micro_config(mode=Mode.AIF, kind=VisualKind.EMB,
                              visual_dim=5, visual_rows=7, n_layers=2,
                              n_heads=2, model_dim=8, ff_dim=8)
        params = init_params(config, seed=3)
        collect = {}
        src = rng.integers(0, config.src_vocab, size=4)
        memory = encode(config, params, src, collect=collect)
        decode_forward(config, params, memory, rng.normal(size=(7, 5)),
                       np.array([0, 1, 2]), collect=collect)
        for key in ("enc_self", "dec_self", "dec_cross", "dec_visual"):
            for weights in collect[key]:
                np.testing.assert_allclose(weights.sum(-1), 1.0, atol=1e-6)

    def test_causal_self_attention_has_no_future_weight(self, rng):
        config = micro_config(n_layers=1, n_heads=2, model_dim=8, ff_dim=8)
        params = init_params(config, seed=4)
        memory = encode(config, params, np.array([1, 2]))
        collect = {}
        decode_forward(config, params, memory, None, np.array([0, 1, 2, 3]),
                       collect=collect)
        w = collect["dec_self"][0]
        upper = np.triu(np.ones((4, 4), dtype=bool), k=1)
        assert (w[..., upper] == 0).all()


class TestConfig:
    def test_model_dim_divisibility_enforced(self):
        with pytest.raises(ValueError):
            ModelConfig(src_vocab=5, tgt_vocab=5, model_dim=10, n_heads=4)

    def test_text_only_rejects_visual_kind(self):
        with pytest.raises(ValueError):
            ModelConfig(src_vocab=5, tgt_vocab=5, mode=Mode.TEXT_ONLY,
                        visual_kind=VisualKind.EMB)

    def test_aic_requires_videosum(self):
        with pytest.raises(ValueError):
            ModelConfig(src_vocab=5, tgt_vocab=5, mode=Mode.AIC,
                        visual_kind=VisualKind.CONV4, visual_dim=10)

    def test_aif_requires_kind(self):
        with pytest.raises(ValueError):
            ModelConfig(src_vocab=5, tgt_vocab=5, mode=Mode.AIF,
                        visual_kind=VisualKind.NONE)

    def test_parse_setup(self):
        assert parse_setup("text-only") == (Mode.TEXT_ONLY, VisualKind.NONE)
        assert parse_setup("AIC-videosum") == (Mode.AIC, VisualKind.VIDEOSUM)
        assert parse_setup("aif-emb") == (Mode.AIF, VisualKind.EMB)
        with pytest.raises(ValueError):
            parse_setup("aif-spectrogram")

    def test_full_scale_preset_shapes(self):
        config = ModelConfig.full_scale(30000, 30000, mode=Mode.AIF,
                                        visual_kind=VisualKind.CONV4)
        assert (config.n_layers, config.n_heads, config.model_dim) == (6, 16, 1024)
        shapes = parameter_shapes(config)
        assert shapes["enc.0.self.wq"] == (1024, 1024)
        assert shapes["enc.5.ff.w1"] == (1024, 4096)
        assert shapes["dec.3.visual.wk"] == (1024, 1024)
        assert shapes["visual_in.w"] == (2048, 1024)
        assert shapes["out.w"] == (1024, 30000)
        # six encoder and six decoder layers, all attention blocks present:
        # per encoder layer 8 attention + 4 ff + 4 norm tensors; the AIF
        # decoder layer adds cross and visual attention plus their norms
        assert sum(1 for n in shapes if n.startswith("enc.")) == 6 * 16
        assert sum(1 for n in shapes if n.startswith("dec.")) == 6 * 36

    def test_init_is_seed_deterministic(self):
        config = micro_config(n_layers=2, n_heads=2, model_dim=8, ff_dim=16)
        a = init_params(config, seed=11)
        b = init_params(config, seed=11)
        for name in a:
            np.testing.assert_array_equal(a[name].data, b[name].data)
        c = init_params(config, seed=12)
        assert any(not np.array_equal(a[n].data, c[n].data) for n in a)


class TestDropoutPaths:
    def test_training_forward_needs_rng(self):
        config = ModelConfig(src_vocab=5, tgt_vocab=5, n_layers=1, n_heads=1,
                             model_dim=4, ff_dim=4, dropout=0.1)
        params = init_params(config, seed=0)
        with pytest.raises(ValueError):
            encode(config, params, np.array([1, 2]), training=True)

    def test_inference_ignores_dropout(self, rng):
        config = ModelConfig(src_vocab=5, tgt_vocab=5, n_layers=1, n_heads=1,
                             model_dim=4, ff_dim=4, dropout=0.5)
        params = init_params(config, seed=0)
        ids = np.array([1, 2, 3])
        a = encode(config, params, ids)
        b = encode(config, params, ids)
        np.testing.assert_array_equal(a.data, b.data)


def test_micro_model_gradient_spot_check(rng):
    """Quick finite-difference sanity on a handful of parameters; the full
    every-parameter sweep runs in the acceptance suite."""
    config = micro_config(mode=Mode.AIF, kind=VisualKind.EMB, visual_dim=3,
                          visual_rows=4, n_layers=1, n_heads=2, model_dim=4,
                          ff_dim=8)
    params = init_params(config, seed=6)
    src = np.array([1, 2, 0])
    tgt = np.array([0, 3, 4, 2])
    visual = rng.normal(size=(4, 3))

    def forward():
        memory = encode(config, params, src)
        logits = decode_forward(config, params, memory, visual, tgt[:-1])
        return ad.cross_entropy(logits, tgt[1:])

    ad.backward(forward())
    for name in ("src_embed", "dec.0.visual.wv", "enc.0.ln2.gain", "out.b"):
        numeric = finite_difference_gradient(lambda: forward().item(),
                                             params[name])
        err = gradient_relative_error(params[name].grad, numeric)
        assert err <= 1e-6, f"{name}: rel err {err}"
