import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eend_lab.annotation import Annotation, Segment
from eend_lab.encoder.config import toy_config
from eend_lab.encoder.params import init_params, save_checkpoint
from eend_lab.errors import ConfigurationError, InputError, TrainingError
from eend_lab.features import FeatureMatrix
from eend_lab.numerics.gradcheck import finite_difference_gradient
from eend_lab.numerics.rng import Rng
from eend_lab.training import (Example, TrainConfig, average_checkpoints, average_params,
                               finetune_grid, finetune_grid_configs, format_finetune_report,
                               new_optimizer_state, noam_lr, optimizer_step, pit_bce_grad,
                               pit_bce_loss, rasterize_labels, train)

from conftest import normal


def bce_oracle(z, y):
    """Exhaustive PIT oracle with scalar loops; returns (loss, perm)."""
    z = [[min(max(v, 1e-7), 1 - 1e-7) for v in row] for row in z]
    S = len(z[0])
    best = None
    for perm in itertools.permutations(range(S)):
        total = 0.0
        for t in range(len(z)):
            for s in range(S):
                yv = y[t][perm[s]]
                total -= yv * math.log(z[t][s]) + (1 - yv) * math.log(1 - z[t][s])
        loss = total / (len(z) * S)
        if best is None or loss < best[0]:
            best = (loss, perm)
    return best


class TestPIT:
    def test_perfect_prediction(self):
        y = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        loss, perm = pit_bce_loss(y, y)
        assert loss <= 1e-6 and perm == (0, 1)

    def test_worked_example(self):
        z = [[0.9, 0.2], [0.8, 0.3]]
        y = [[1, 0], [1, 0]]
        loss, perm = pit_bce_loss(np.array(z), np.array(y, dtype=float))
        ref_loss, ref_perm = bce_oracle(z, y)
        assert abs(loss - ref_loss) <= 1e-12 and perm == ref_perm

    def test_swapped_labels_exact(self, rng):
        z = rng.random_array(40).reshape(20, 2)
        y = (rng.random_array(40) < 0.5).astype(float).reshape(20, 2)
        assert pit_bce_loss(z, y)[0] == pit_bce_loss(z, y[:, ::-1])[0]

    @pytest.mark.parametrize("seed", range(20))
    def test_oracle_random(self, seed):
        r = Rng(seed)
        T = r.randint(1, 12)
        z = r.random_array(2 * T).reshape(T, 2)
        y = (r.random_array(2 * T) < 0.5).astype(float).reshape(T, 2)
        loss, perm = pit_bce_loss(z, y)
        ref_loss, ref_perm = bce_oracle(z.tolist(), y.tolist())
        assert abs(loss - ref_loss) <= 1e-12 and perm == ref_perm

    @given(st.integers(0, 2 ** 31), st.permutations([0, 1, 2]))
    @settings(max_examples=30)
    def test_three_speaker_invariance(self, seed, perm):
        r = Rng(seed)
        z = r.random_array(15).reshape(5, 3)
        y = (r.random_array(15) < 0.5).astype(float).reshape(5, 3)
        a, b = pit_bce_loss(z, y)[0], pit_bce_loss(z, y[:, list(perm)])[0]
        assert abs(a - b) <= 1e-15
        assert 0.0 <= a <= -math.log(1e-7)

    def test_tie_goes_to_identity(self):
        assert pit_bce_loss(np.full((3, 2), 0.5), np.zeros((3, 2)))[1] == (0, 1)

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            pit_bce_loss(np.zeros((3, 2)), np.zeros((4, 2)))

    def test_gradient_matches_differences(self, rng):
        z = 0.05 + 0.9 * rng.random_array(12).reshape(6, 2)
        y = (rng.random_array(12) < 0.5).astype(float).reshape(6, 2)
        _, perm = pit_bce_loss(z, y)
        numeric = finite_difference_gradient(lambda v: pit_bce_loss(v.reshape(6, 2), y)[0], z, 1e-7)
        np.testing.assert_allclose(pit_bce_grad(z, y, perm).ravel(), numeric, rtol=1e-6, atol=1e-9)


class TestRasterize:
    def test_majority_rule(self):
        ann = Annotation("r", [Segment("A", 0.05, 0.26), Segment("B", 0.0, 0.04)])
        labels = rasterize_labels(ann, 4)
        assert labels[:, 0].tolist() == [1, 1, 1, 0]
        assert labels[:, 1].tolist() == [0, 0, 0, 0]

    def test_too_many_speakers(self):
        ann = Annotation("r", [Segment(s, 0, 1) for s in "ABC"])
        with pytest.raises(InputError):
            rasterize_labels(ann, 10)


class TestNoam:
    @pytest.mark.parametrize("step", [1, 25000, 100000])
    def test_closed_formula(self, step):
        expected = 256 ** -0.5 * min(step ** -0.5, step * 25000 ** -1.5)
        assert abs(noam_lr(step, 256) - expected) <= 1e-12

    def test_peak_value(self):
        assert noam_lr(25000, 256) == pytest.approx(1 / math.sqrt(256 * 25000), abs=1e-15)
        assert noam_lr(25000, 256) == pytest.approx(3.9528470752104745e-04, rel=1e-12)

    def test_shape(self):
        warm = [noam_lr(s, 256, warmup=100) for s in range(1, 101)]
        decay = [noam_lr(s, 256, warmup=100) for s in range(100, 300)]
        assert all(a < b for a, b in zip(warm, warm[1:]))
        assert all(a > b for a, b in zip(decay, decay[1:]))

    def test_scale_zero_and_step_zero(self):
        assert noam_lr(7, 256, scale=0.0) == 0.0
        with pytest.raises(InputError):
            noam_lr(0, 256)


def scalar_params(value):
    cfg = toy_config("transformer")
    p = init_params(cfg, 0)
    return p, cfg


class TestOptimizer:
    def test_zero_grad_no_change(self):
        p = init_params(toy_config("transformer"), 0)
        before = p.flatten()
        for opt in ("adam", "sgd"):
            cfg = TrainConfig(optimizer=opt, schedule="constant", lr=0.1, momentum=0.9)
            optimizer_step(p, p.zeros_like(), new_optimizer_state(p, cfg), cfg, 0.1)
        assert np.array_equal(p.flatten(), before)

    def test_sgd_single_step(self):
        p = init_params(toy_config("transformer"), 0)
        before = p.flatten()
        grads = {k: np.ones_like(v) for k, v in p.items()}
        cfg = TrainConfig(optimizer="sgd", schedule="constant", lr=0.1)
        optimizer_step(p, grads, new_optimizer_state(p, cfg), cfg, 0.1)
        np.testing.assert_allclose(before - p.flatten(), 0.1, atol=1e-15)

    def test_sgd_momentum_and_decay(self):
        p = init_params(toy_config("transformer"), 0)
        theta0 = p.flatten()
        cfg = TrainConfig(optimizer="sgd", schedule="constant", lr=0.01, momentum=0.9,
                          weight_decay=1e-4)
        state = new_optimizer_state(p, cfg)
        grads = {k: np.full_like(v, 0.5) for k, v in p.items()}
        theta, v = theta0.copy(), np.zeros_like(theta0)
        for _ in range(3):
            optimizer_step(p, grads, state, cfg, 0.01)
            v = 0.9 * v + 0.5 + 1e-4 * theta
            theta = theta - 0.01 * v
        np.testing.assert_allclose(p.flatten(), theta, atol=1e-14)

    def test_adam_recurrence_oracle(self):
        cfg = toy_config("transformer")
        p = init_params(cfg, 0)
        for k in p:
            p[k][...] = 1.0
        tc = TrainConfig(optimizer="adam", schedule="constant", lr=0.01)
        state = new_optimizer_state(p, tc)
        theta, m, v = 1.0, 0.0, 0.0
        for t in range(1, 11):
            grads = {k: 2.0 * a for k, a in p.items()}  # f(theta) = theta^2
            optimizer_step(p, grads, state, tc, 0.01)
            g = 2.0 * theta
            m = 0.9 * m + 0.1 * g
            v = 0.98 * v + 0.02 * g * g
            theta -= 0.01 * (m / (1 - 0.9 ** t)) / (math.sqrt(v / (1 - 0.98 ** t)) + 1e-9)
        assert np.max(np.abs(p.flatten() - theta)) <= 1e-12

    def test_nan_gradient_names_parameter(self):
        p = init_params(toy_config("transformer"), 0)
        grads = p.zeros_like()
        grads["head.bias"][0] = np.nan
        cfg = TrainConfig()
        with pytest.raises(TrainingError, match="head.bias"):
            optimizer_step(p, grads, new_optimizer_state(p, cfg), cfg, 0.1)

    @pytest.mark.parametrize("kw", [{"optimizer": "rmsprop"}, {"warmup_steps": 0}, {"lr": -1},
                                    {"betas": (1.0, 0.9)}, {"batch_size": 0}])
    def test_invalid_config(self, kw):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kw)


class TestAveraging:
    def test_identical(self):
        p = init_params(toy_config("conformer"), 2)
        avg = average_params([p, p.copy(), p.copy()])
        assert np.array_equal(avg.flatten(), p.flatten())

    def test_pair(self):
        cfg = toy_config("conformer")
        a, b = init_params(cfg, 1), init_params(cfg, 2)
        np.testing.assert_allclose(average_params([a, b]).flatten(),
                                   (a.flatten() + b.flatten()) / 2, atol=1e-15)

    def test_scalar_loop_oracle(self, tmp_path):
        cfg = toy_config("transformer")
        models = [init_params(cfg, s) for s in range(10)]
        paths = []
        for i, m in enumerate(models):
            paths.append(tmp_path / f"{i}.ckpt")
            save_checkpoint(paths[-1], m)
        avg = average_checkpoints(paths).flatten()
        flats = [m.flatten().tolist() for m in models]
        oracle = [sum(col) / 10 for col in zip(*flats)]
        assert np.max(np.abs(avg - np.array(oracle))) <= 1e-12

    def test_idempotent(self):
        cfg = toy_config("transformer")
        avg = average_params([init_params(cfg, s) for s in range(3)])
        assert np.array_equal(average_params([avg]).flatten(), avg.flatten())

    def test_config_mismatch(self):
        with pytest.raises(InputError):
            average_params([init_params(toy_config("transformer"), 0),
                            init_params(toy_config("conformer"), 0)])


def tiny_corpus(n=3, frames=60, seed=0):
    r = Rng(seed)
    out = []
    for i in range(n):
        feats = FeatureMatrix(normal(r, (frames, 23)))
        segs = [Segment("A", 0.0, 0.3), Segment("B", 0.2, 0.6)]
        ann = Annotation(f"rec{i}", segs, frames / 100)
        out.append(Example(f"rec{i}", feats, rasterize_labels(ann, frames // 10), ann))
    return out


class TestTrain:
    def test_lr_zero_leaves_params(self):
        cfg = toy_config("transformer")
        init = init_params(cfg, 0)
        tc = TrainConfig(schedule="noam", lr=0.0, warmup_steps=10, batch_size=2, epochs=1)
        res = train(tiny_corpus(), cfg, tc, init=init)
        assert np.array_equal(res.params.flatten(), init.flatten())

    def test_log_lines_equal_steps(self, tmp_path):
        cfg = toy_config("transformer")
        tc = TrainConfig(schedule="noam", lr=1.0, warmup_steps=10, batch_size=2, epochs=3,
                         average_last=2)
        res = train(tiny_corpus(), cfg, tc, out_dir=tmp_path)
        lines = res.log_text().splitlines()
        assert len(lines) == 3 * 2 == len(res.log)
        assert [int(l.split("\t")[0]) for l in lines] == list(range(1, 7))
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            "epoch001.ckpt", "epoch002.ckpt", "epoch003.ckpt"]
        assert len(res.checkpoints) == 2

    def test_reproducible(self):
        cfg = toy_config("conformer")
        tc = TrainConfig(schedule="noam", lr=1.0, warmup_steps=10, batch_size=2, epochs=2)
        a = train(tiny_corpus(), cfg, tc)
        b = train(tiny_corpus(), cfg, tc)
        assert np.array_equal(a.params.flatten(), b.params.flatten())
        assert a.log_text() == b.log_text()

    def test_empty_corpus(self):
        with pytest.raises(InputError):
            train([], toy_config(), TrainConfig())


class TestFinetune:
    def test_grid_has_13(self):
        configs = finetune_grid_configs()
        assert len(configs) == 13
        assert configs[0].optimizer == "adam" and configs[0].lr == 1e-5
        sgd = {(c.lr, c.momentum, c.weight_decay) for c in configs[1:]}
        assert sgd == set(itertools.product([0.01, 0.005, 0.001], [0.9, 0.0], [0.0, 1e-4]))
        assert all(c.schedule == "constant" for c in configs)

    def test_zero_epochs_tie(self):
        cfg = toy_config("transformer")
        base = init_params(cfg, 0)
        results = finetune_grid(base, tiny_corpus(2), tiny_corpus(2, seed=1), epochs=0)
        assert len(results) == 13
        assert len({r.der for r in results}) == 1

    def test_ranking_is_sorted(self):
        cfg = toy_config("transformer")
        base = init_params(cfg, 0)
        configs = finetune_grid_configs(batch_size=2, epochs=1)[:4]
        results = finetune_grid(base, tiny_corpus(2), tiny_corpus(2, seed=1), configs=configs)
        report = format_finetune_report(results).splitlines()[1:]
        ders = [float(line.split("\t")[-1]) for line in report]
        assert ders == sorted(ders)
        assert [r.der for r in results] == sorted(r.der for r in results)

    def test_empty_adapt(self):
        with pytest.raises(InputError):
            finetune_grid(init_params(toy_config(), 0), [], tiny_corpus(1))
