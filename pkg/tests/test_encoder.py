import math

import numpy as np
import pytest

from eend_lab.encoder.config import EncoderConfig, conformer_default, toy_config, transformer_default
from eend_lab.encoder.decide import decide
from eend_lab.encoder.gradcheck import check_model_gradients
from eend_lab.encoder.model import (PosteriorMatrix, backward, conformer_block,
                                    conv_subsample_frontend, forward, transformer_block)
from eend_lab.encoder.params import (count_parameters, deserialize_checkpoint, format_ledger,
                                     init_params, load_checkpoint, parameter_ledger,
                                     parameter_specs, save_checkpoint, serialize_checkpoint,
                                     zero_params)
from eend_lab.errors import ConfigurationError, FormatError, InternalError
from eend_lab.numerics.ops import conv2d_depthwise_separable, layer_norm, relu, sigmoid, swish
from eend_lab.numerics.rng import Rng

from conftest import normal

ALL_TOYS = [("transformer", "conv_subsample"), ("transformer", "stacked"),
            ("conformer", "conv_subsample"), ("conformer", "stacked")]


def perturbed(cfg, seed=0, scale=0.1):
    """Glorot init plus noise on biases and gains so that nothing is trivially zero."""
    params = init_params(cfg, seed)
    rng = Rng(seed + 100)
    for s in parameter_specs(cfg):
        if s.init != "glorot":
            params[s.name][...] += scale * normal(rng, s.shape)
    return params


class TestConfig:
    def test_default_architecture(self):
        t, c = transformer_default(), conformer_default()
        assert (t.n_blocks, t.d_model, t.n_heads, t.ffn_units) == (4, 256, 4, 1024)
        assert (c.n_blocks, c.d_model, c.n_heads, c.ffn_units, c.conv_kernel) == (4, 256, 4, 256, 32)

    def test_strides_follow_input_dims(self):
        assert EncoderConfig(input_dims=23).subsample_strides == ((2, 1), (5, 1))
        assert EncoderConfig(input_dims=80).subsample_strides == ((2, 2), (5, 2))

    @pytest.mark.parametrize("kw", [{"d_model": 10, "n_heads": 4}, {"conv_kernel": 0},
                                    {"n_speakers": 0}, {"input_dims": 40}, {"arch": "lstm"},
                                    {"frontend": "none"}])
    def test_invalid(self, kw):
        with pytest.raises(ConfigurationError):
            EncoderConfig(**kw)

    def test_dict_round_trip(self):
        cfg = toy_config("transformer", "stacked")
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(ConfigurationError):
            EncoderConfig.from_dict({"bogus": 1})


class TestParameterCount:
    @pytest.mark.parametrize("cfg,target", [(transformer_default(), 4.4e6),
                                           (conformer_default(), 4.2e6)])
    def test_within_15_percent(self, cfg, target):
        assert abs(count_parameters(cfg) - target) / target <= 0.15

    def test_transformer_larger_than_conformer(self):
        assert count_parameters(transformer_default()) > count_parameters(conformer_default())

    def test_ledger_sums_to_total(self):
        for cfg in (transformer_default(), conformer_default(), toy_config()):
            assert sum(r[3] for r in parameter_ledger(cfg)) == count_parameters(cfg)
            assert format_ledger(cfg).rstrip().endswith(f"total\t{count_parameters(cfg)}")

    def test_hand_audited_transformer_block(self):
        D, H = 256, 1024
        attn = 4 * (D * D + D)
        ffn = D * H + H + H * D + D
        norms = 2 * 2 * D
        block = sum(s.size for s in parameter_specs(transformer_default())
                    if s.name.startswith("blocks.0."))
        assert block == attn + ffn + norms

    def test_hand_audited_conformer_block(self):
        D, H, K = 256, 256, 32
        ffn = 2 * (D * H + H + H * D + D)
        attn = 4 * (D * D + D)
        conv = (D * 2 * D + 2 * D) + (K * D + D) + 2 * D + (D * D + D)
        norms = 5 * 2 * D
        block = sum(s.size for s in parameter_specs(conformer_default())
                    if s.name.startswith("blocks.0."))
        assert block == ffn + attn + conv + norms

    def test_hand_audited_frontend(self):
        cfg = transformer_default()
        C, D = cfg.channels, cfg.d_model
        conv1 = 3 * 3 * 1 + 1 * C + C
        conv2 = 7 * 7 * C + C * C + C
        proj = 23 * C * D + D
        front = sum(s.size for s in parameter_specs(cfg) if s.name.startswith("frontend."))
        assert front == conv1 + conv2 + proj


class TestFrontend:
    def test_t1000_gives_100(self):
        cfg = toy_config("transformer")
        e = conv_subsample_frontend(np.zeros((1000, 23)), init_params(cfg, 0))
        assert e.shape == (100, cfg.d_model)

    def test_zero_params_zero_output(self, rng):
        cfg = toy_config("conformer")
        e = conv_subsample_frontend(normal(rng, (57, 23)), zero_params(cfg))
        assert e.shape == (6, cfg.d_model) and not e.any()

    @pytest.mark.parametrize("dims", [23, 80])
    def test_primitive_composition_oracle(self, rng, dims):
        cfg = toy_config("transformer", input_dims=dims)
        p = perturbed(cfg)
        x = normal(rng, (43, dims))
        (s1, s2) = cfg.subsample_strides
        h = relu(conv2d_depthwise_separable(x[:, :, None], p["frontend.conv1.depthwise"],
                                            p["frontend.conv1.pointwise.weight"], s1,
                                            p["frontend.conv1.pointwise.bias"]))
        h = relu(conv2d_depthwise_separable(h, p["frontend.conv2.depthwise"],
                                            p["frontend.conv2.pointwise.weight"], s2,
                                            p["frontend.conv2.pointwise.bias"]))
        ref = h.reshape(h.shape[0], -1) @ p["frontend.proj.weight"] + p["frontend.proj.bias"]
        np.testing.assert_allclose(conv_subsample_frontend(x, p), ref, atol=1e-10)

    def test_wrong_dims(self):
        cfg = toy_config("transformer")
        with pytest.raises(ConfigurationError):
            conv_subsample_frontend(np.zeros((50, 80)), init_params(cfg, 0))


def ln(x, p, name, eps=1e-5):
    return layer_norm(x, p[f"{name}.gain"], p[f"{name}.bias"], eps)


def lin(x, p, name):
    return x @ p[f"{name}.weight"] + p[f"{name}.bias"]


class TestBlocks:
    def test_transformer_zero_identity(self, rng):
        cfg = toy_config("transformer")
        e = normal(rng, (7, cfg.d_model))
        assert np.array_equal(transformer_block(e, zero_params(cfg)), e)

    def test_conformer_zero_is_layer_norm(self, rng):
        cfg = toy_config("conformer")
        e = normal(rng, (7, cfg.d_model))
        D = cfg.d_model
        np.testing.assert_array_equal(conformer_block(e, zero_params(cfg)),
                                      layer_norm(e, np.ones(D), np.zeros(D)))

    def test_single_position_attention(self, rng):
        cfg = toy_config("transformer")
        p = perturbed(cfg)
        for name in ("ffn.fc1.weight", "ffn.fc1.bias", "ffn.fc2.weight", "ffn.fc2.bias"):
            p[f"blocks.0.{name}"][...] = 0.0
        e = normal(rng, (1, cfg.d_model))
        # softmax over one key is 1: attention output is O(V(LN(e))).
        v = lin(ln(e, p, "blocks.0.attn_norm"), p, "blocks.0.attn.v")
        expected = e + lin(v, p, "blocks.0.attn.o")
        np.testing.assert_allclose(transformer_block(e, p, 0), expected, atol=1e-12)

    def test_half_residual(self, rng):
        cfg = toy_config("conformer")
        p = zero_params(cfg)
        src = perturbed(cfg)
        for name in p:
            if name.startswith("blocks.0.ffn1.") or name.startswith("blocks.0.ffn1_norm."):
                p[name][...] = src[name]
        e = normal(rng, (9, cfg.d_model))
        h = swish(lin(ln(e, p, "blocks.0.ffn1_norm"), p, "blocks.0.ffn1.fc1"))
        pre = e + 0.5 * lin(h, p, "blocks.0.ffn1.fc2")
        D = cfg.d_model
        expected = layer_norm(pre, np.ones(D), np.zeros(D))
        np.testing.assert_allclose(conformer_block(e, p, 0), expected, atol=1e-12)

    @pytest.mark.parametrize("arch", ["transformer", "conformer"])
    def test_shape_preserved(self, rng, arch):
        cfg = toy_config(arch)
        p = perturbed(cfg)
        block = transformer_block if arch == "transformer" else conformer_block
        for t in (1, 2, 13):
            assert block(normal(rng, (t, cfg.d_model)), p, 1).shape == (t, cfg.d_model)

    def test_transformer_permutation_equivariance(self, rng):
        cfg = toy_config("transformer")
        p = perturbed(cfg)
        e = normal(rng, (11, cfg.d_model))
        perm = Rng(4).shuffle(list(range(11)))
        np.testing.assert_allclose(transformer_block(e[perm], p, 0),
                                   transformer_block(e, p, 0)[perm], atol=1e-12)

    def test_block_index_checked(self, rng):
        cfg = toy_config("transformer")
        with pytest.raises(ConfigurationError):
            transformer_block(normal(rng, (3, cfg.d_model)), zero_params(cfg), 5)
        with pytest.raises(ConfigurationError):
            conformer_block(normal(rng, (3, cfg.d_model)), zero_params(cfg), 0)


class TestForward:
    @pytest.mark.parametrize("arch,frontend", ALL_TOYS)
    def test_zero_model_half(self, rng, arch, frontend):
        cfg = toy_config(arch, frontend)
        z = forward(normal(rng, (95, 23)), zero_params(cfg))
        assert z.values.shape == (10, 2) and np.all(z.values == 0.5)

    def test_output_shape_1000(self):
        cfg = toy_config("conformer")
        z = forward(np.zeros((1000, 23)), init_params(cfg, 1))
        assert z.values.shape == (100, 2) and z.frame_shift == 0.1
        assert np.all((z.values >= 0) & (z.values <= 1))

    def test_head_bias_monotone(self, rng):
        cfg = toy_config("transformer")
        p = perturbed(cfg)
        x = normal(rng, (60, 23))
        before = forward(x, p).values
        p["head.bias"][1] += 0.5
        after = forward(x, p).values
        assert np.all(after[:, 1] > before[:, 1])
        assert np.array_equal(after[:, 0], before[:, 0])

    def test_deterministic(self, rng):
        cfg = toy_config("conformer")
        x = normal(rng, (60, 23))
        p = init_params(cfg, 3)
        assert np.array_equal(forward(x, p).values, forward(x, p).values)


class TestBackward:
    def test_zero_upstream(self, rng):
        cfg = toy_config("conformer")
        p = perturbed(cfg)
        z, cache = forward(normal(rng, (40, 23)), p, return_cache=True)
        grads = backward(cache, p, np.zeros_like(z.values))
        assert all(not g.any() for g in grads.values())
        assert list(grads) == list(p)

    def test_head_logistic_regression(self, rng):
        cfg = toy_config("transformer")
        p = perturbed(cfg)
        x = normal(rng, (80, 23))
        y = (Rng(9).random_array(16) < 0.5).astype(float).reshape(8, 2)
        z, cache = forward(x, p, return_cache=True)
        # Mean BCE: dL/dz = (z - y) / (z (1 - z) n); closed form dL/dW = E^T (z - y) / n.
        n = y.size
        dz = (z.values - y) / (z.values * (1 - z.values) * n)
        grads = backward(cache, p, dz)
        D = cfg.d_model
        e = cache.final
        np.testing.assert_allclose(grads["head.weight"], e.T @ (z.values - y) / n, atol=1e-12)
        np.testing.assert_allclose(grads["head.bias"], (z.values - y).sum(0) / n, atol=1e-12)
        assert e.shape == (8, D)

    def test_mismatched_params(self, rng):
        cfg = toy_config("transformer")
        p = init_params(cfg, 0)
        z, cache = forward(normal(rng, (40, 23)), p, return_cache=True)
        other = init_params(cfg, 1)
        with pytest.raises(InternalError):
            backward(cache, other, np.ones_like(z.values))
        with pytest.raises(InternalError):
            backward(cache, p, np.ones((3, 2)))

    @pytest.mark.parametrize("arch,frontend", ALL_TOYS)
    def test_gradient_check_seed0(self, arch, frontend):
        report = check_model_gradients(toy_config(arch, frontend), seed=0)
        assert report.max_relative_error <= 1e-4, report.worst_parameter

    def test_gradient_check_catches_wrong_backward(self, monkeypatch):
        import eend_lab.encoder.gradcheck as gc

        real = gc.backward

        def skewed(cache, params, dz):
            grads = real(cache, params, dz)
            grads["frontend.conv1.depthwise"] *= 1.001
            return grads

        monkeypatch.setattr(gc, "backward", skewed)
        report = gc.check_model_gradients(toy_config("conformer"), seed=3)
        assert report.worst_parameter == "frontend.conv1.depthwise"
        assert report.max_relative_error > 1e-4

    def test_dropout_only_in_training(self, rng):
        cfg = toy_config("transformer", dropout=0.5)
        p = init_params(cfg, 0)
        x = normal(rng, (40, 23))
        assert np.array_equal(forward(x, p).values, forward(x, p, rng=Rng(1)).values)
        trained = forward(x, p, training=True, rng=Rng(1)).values
        assert not np.array_equal(trained, forward(x, p).values)


class TestCheckpoint:
    def test_byte_identical_reserialization(self, tmp_path):
        p = init_params(toy_config("conformer"), 5)
        save_checkpoint(tmp_path / "a.ckpt", p)
        q = load_checkpoint(tmp_path / "a.ckpt")
        assert serialize_checkpoint(q) == (tmp_path / "a.ckpt").read_bytes()
        assert all(np.array_equal(p[n], q[n]) for n in p)
        assert q.config == p.config

    def test_layout(self):
        p = init_params(toy_config("transformer"), 0)
        blob = serialize_checkpoint(p)
        assert blob[:8] == b"EENDCKPT"
        assert len(blob) > 8 * p.size

    def test_corruption(self):
        blob = serialize_checkpoint(init_params(toy_config("transformer"), 0))
        for bad in (b"XXXXXXXX" + blob[8:], blob[:-8], blob + b"\x00"):
            with pytest.raises(FormatError):
                deserialize_checkpoint(bad)

    def test_flat_round_trip(self):
        p = init_params(toy_config("transformer"), 0)
        q = p.with_flat(p.flatten() * 2)
        assert np.array_equal(q.flatten(), 2 * p.flatten())
        with pytest.raises(ConfigurationError):
            p.with_flat(np.zeros(3))


def run_pm(values):
    return PosteriorMatrix(np.asarray(values, dtype=float).reshape(-1, 1))


def spans(ann):
    return [(s.start, s.end) for s in ann.segments]


class TestDecide:
    def test_all_below(self):
        assert decide(PosteriorMatrix(np.full((5, 2), 0.4))).segments == []

    def test_runs(self):
        assert spans(decide(run_pm([0.9, 0.9, 0.1, 0.9]))) == [(0.0, 0.2), (0.3, 0.4)]

    def test_median_scalar_oracle(self):
        pattern = [1, 0, 1, 1, 0, 1]
        n = len(pattern)
        smoothed = [sorted(pattern[max(0, min(n - 1, j))] for j in (i - 1, i, i + 1))[1]
                    for i in range(n)]
        assert smoothed == [1, 1, 1, 1, 1, 1]
        assert spans(decide(run_pm(pattern), median_window=3)) == [(0.0, 0.6)]

    def test_even_window(self):
        with pytest.raises(ConfigurationError):
            decide(run_pm([1, 0]), median_window=2)

    def test_threshold_inclusive(self):
        assert spans(decide(run_pm([0.5, 0.49]))) == [(0.0, 0.1)]

    def test_monotone_reparameterisation(self, rng):
        logits = normal(rng, (30, 2))
        a = decide(PosteriorMatrix(sigmoid(logits)))
        b = decide(PosteriorMatrix(sigmoid(np.sign(logits) * np.abs(logits) ** 3 * 5)))
        assert a.segments == b.segments
        assert not math.isnan(a.length)
