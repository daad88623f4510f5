import time

import numpy as np
import pytest

from gradcheck import directional_errors
from wavenet_ndt.errors import Divergence, FormatVersionMismatch, ShapeMismatch
from wavenet_ndt.nn.model import (
    build_default_model,
    load_checkpoint,
    predict,
    save_checkpoint,
)
from wavenet_ndt.nn.optim import adam_step, init_moments, mse_l2_loss
from wavenet_ndt.nn.training import TrainConfig, train


def small_model(seed=0, length=100, dropout_rate=0.3, normalization="rms"):
    return build_default_model(length, dropout_rate, seed, conv_blocks=((4, 5), (4, 3)),
                               normalization=normalization)


class TestLoss:
    def test_perfect_prediction(self):
        loss, grad = mse_l2_loss(np.ones((2, 3)), np.ones((2, 3)))
        assert loss == 0 and not grad.any()

    def test_mean_of_squares(self):
        loss, _ = mse_l2_loss(np.array([1.0, 1.0]), np.zeros(2))
        assert loss == 1

    def test_l2_term_finite_difference(self):
        rng = np.random.default_rng(0)
        w = np.array([0.7])
        pred, target = rng.normal(size=4), rng.normal(size=4)
        lam = 0.3
        step = 1e-6
        up = mse_l2_loss(pred, target, [w + step], lam)[0]
        down = mse_l2_loss(pred, target, [w - step], lam)[0]
        assert (up - down) / (2 * step) == pytest.approx(2 * lam * w[0], rel=1e-8)

    def test_prediction_gradient(self):
        rng = np.random.default_rng(1)
        params = {"p": rng.normal(size=(3, 4))}
        target = rng.normal(size=(3, 4))
        _, grad = mse_l2_loss(params["p"], target)
        f = lambda: mse_l2_loss(params["p"], target)[0]
        assert directional_errors(f, {"p": grad}, params, rng, probes=20).max() < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            mse_l2_loss(np.zeros(3), np.zeros(4))


class TestAdam:
    def test_first_step_by_hand(self):
        params = {"w": np.array([0.0])}
        moments = init_moments(params)
        adam_step(params, {"w": np.array([1.0])}, moments, 1, 0.001)
        # m_hat = v_hat = 1 after bias correction
        assert params["w"][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-14)

    def test_zero_gradient_is_stationary(self):
        params = {"w": np.array([0.3, -2.0])}
        moments = init_moments(params)
        for t in range(1, 50):
            adam_step(params, {"w": np.zeros(2)}, moments, t, 0.01)
        assert np.array_equal(params["w"], [0.3, -2.0])

    def test_bit_identical_trajectories(self):
        def run():
            rng = np.random.default_rng(5)
            params = {"w": rng.normal(size=10)}
            moments = init_moments(params)
            for t in range(1, 30):
                adam_step(params, {"w": 2 * params["w"] + rng.normal(size=10)}, moments, t, 0.01)
            return params["w"]

        assert np.array_equal(run(), run())


class TestWholeModelGradient:
    def test_every_parameter_group(self):
        rng = np.random.default_rng(42)
        model = build_default_model(seed=3)
        model.train_mode()
        x = rng.normal(0, 0.1, size=(2, 100))
        y = rng.normal(0, 0.1, size=(2, 100))
        lam = 1e-3
        weights = model.regularised_weights()

        def loss():
            model.rng = np.random.default_rng(0)  # same dropout mask every call
            return mse_l2_loss(model.forward(x), y, weights.values(), lam)[0]

        model.rng = np.random.default_rng(0)
        _, g = mse_l2_loss(model.forward(x), y, weights.values(), lam)
        model.backward(g)
        grads = model.named_grads()
        for k, w in weights.items():
            grads[k] = grads[k] + 2 * lam * w

        relus = [layer for layer in model.layers if layer.kind == "ReLU"]

        def active():
            return np.concatenate([(layer._x > 0).ravel() for layer in relus])

        params = model.named_params()
        errors = []
        for name in params:
            if np.linalg.norm(grads[name]) < 1e-12:
                # convolution biases feeding batch norm have identically zero gradient
                assert "bias" in name and model.layers[int(name.split(".")[0]) + 1].kind == "BatchNorm"
                continue
            errors.extend(directional_errors(
                loss, {name: grads[name]}, {name: params[name]}, rng, probes=8, pattern=active))
        errors.extend(directional_errors(loss, grads, params, rng, probes=20, pattern=active))
        errors = np.array(errors)
        assert errors.size >= 100
        assert errors.max() < 1e-4


class TestTraining:
    def toy(self, n=4, seed=0):
        rng = np.random.default_rng(seed)
        y = np.abs(rng.normal(size=(n, 100)))
        return y - y.mean(axis=1, keepdims=True), y

    def test_one_epoch_reduces_train_mse(self):
        x, y = self.toy()
        model = small_model()
        cfg = TrainConfig(learning_rate=1e-2, batch_size=4, max_epochs=1, l2_lambda=0.0, seed=1)
        from wavenet_ndt.nn.training import evaluate_mse
        model.rng = np.random.default_rng(0)
        before = evaluate_mse(model, x, y)
        model, _ = train(model, (x, y), (x, y), cfg)
        assert evaluate_mse(model, x, y) < before

    def test_seeded_history_is_identical(self):
        x, y = self.toy(12, 1)
        cfg = TrainConfig(batch_size=4, max_epochs=5, seed=9)
        _, h1 = train(small_model(), (x[:8], y[:8]), (x[8:], y[8:]), cfg)
        _, h2 = train(small_model(), (x[:8], y[:8]), (x[8:], y[8:]), cfg)
        assert h1.train_mse == h2.train_mse and h1.val_mse == h2.val_mse
        assert h1.epochs == len(h1.epoch_seconds) == 5

    def test_best_epoch_restored_and_early_stop(self):
        x, y = self.toy(12, 2)
        cfg = TrainConfig(learning_rate=0.5, batch_size=4, max_epochs=60, patience=3, seed=0)
        # unit fixed scale keeps history values in the same units as evaluate_mse
        model, hist = train(small_model(normalization="fixed"), (x[:8], y[:8]), (x[8:], y[8:]), cfg)
        from wavenet_ndt.nn.training import evaluate_mse
        assert hist.epochs < 60
        assert evaluate_mse(model, x[8:], y[8:]) == pytest.approx(min(hist.val_mse), rel=1e-12)
        assert not model.training

    @pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
    def test_divergence(self):
        x, y = self.toy(8, 3)
        y = y * 1e300
        with pytest.raises(Divergence):
            train(small_model(), (x, y), (x, y), TrainConfig(max_epochs=3, batch_size=4))

    def test_lr_decay_schedule(self):
        x, y = self.toy(12, 6)
        cfg = TrainConfig(learning_rate=0.5, batch_size=4, max_epochs=40, patience=9,
                          lr_decay=0.5, lr_decay_patience=3, seed=0)
        _, hist = train(small_model(), (x[:8], y[:8]), (x[8:], y[8:]), cfg)
        lrs = hist.learning_rate
        assert lrs[0] == 0.5 and len(lrs) == hist.epochs
        # rate only ever halves, and only after a run of stale epochs
        ratios = {b / a for a, b in zip(lrs, lrs[1:])}
        assert ratios <= {1.0, 0.5} and 0.5 in ratios
        best = 0
        for e in range(hist.epochs - 1):
            if e == 0 or hist.val_mse[e] < min(hist.val_mse[:e]):
                best = e
            stale = e - best
            assert (lrs[e + 1] < lrs[e]) == (stale > 0 and stale % 3 == 0)

    def test_constant_rate_by_default(self):
        x, y = self.toy(12, 6)
        _, hist = train(small_model(), (x[:8], y[:8]), (x[8:], y[8:]), TrainConfig(batch_size=4, max_epochs=5))
        assert set(hist.learning_rate) == {1e-3}

    @pytest.mark.parametrize("bad", [{"lr_decay": 0.0}, {"lr_decay": 1.5}, {"lr_decay_patience": 0}])
    def test_invalid_decay(self, bad):
        from wavenet_ndt.errors import InvalidParameter

        with pytest.raises(InvalidParameter):
            TrainConfig(**bad)

    def test_odd_batch_remainder(self):
        x, y = self.toy(9, 4)
        cfg = TrainConfig(batch_size=4, max_epochs=1)
        _, hist = train(small_model(), (x, y), (x[:2], y[:2]), cfg)
        assert np.isfinite(hist.train_mse[0])


class TestInference:
    def test_predict_deterministic_and_fast(self):
        model = build_default_model(seed=1, input_scale=5e-3)
        x = np.random.default_rng(0).normal(0, 1e-4, 100)
        t0 = time.perf_counter()
        a = predict(model, x)
        elapsed = time.perf_counter() - t0
        assert np.array_equal(a, predict(model, x))
        assert a.shape == (100,) and elapsed < 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            predict(build_default_model(), np.zeros(99))

    def test_rms_mode_is_positively_homogeneous(self):
        model = build_default_model(seed=2)
        x = np.random.default_rng(3).normal(0, 1e-4, size=(5, 100))
        base = predict(model, x)
        for c in (1e-3, 0.5, 7.0, 1e4):
            assert np.allclose(predict(model, c * x), c * base, rtol=1e-12, atol=0)

    def test_rms_mode_zero_input(self):
        model = build_default_model(seed=2)
        assert np.all(np.isfinite(predict(model, np.zeros(100))))

    def test_fixed_mode_scale(self):
        model = build_default_model(seed=2, input_scale=5e-3, normalization="fixed")
        x = np.random.default_rng(3).normal(0, 1e-4, size=(2, 100))
        model.infer_mode()
        assert np.array_equal(predict(model, x), model.forward(x / 5e-3) * 5e-3)

    def test_unknown_normalization(self):
        from wavenet_ndt.errors import InvalidParameter

        with pytest.raises(InvalidParameter):
            build_default_model(normalization="max")

    def test_checkpoint_roundtrip(self, tmp_path):
        x, y = TestTraining().toy(8, 5)
        model, _ = train(small_model(), (x, y), (x, y), TrainConfig(batch_size=4, max_epochs=2))
        save_checkpoint(model, tmp_path / "m.json", {"seed": 0})
        back, cfg = load_checkpoint(tmp_path / "m.json")
        assert cfg == {"seed": 0}
        inputs = np.random.default_rng(6).normal(size=(10, 100))
        assert np.array_equal(predict(model, inputs), predict(back, inputs))
        assert back.arch() == model.arch() and back.normalization == model.normalization

    def test_checkpoint_header(self, tmp_path):
        import json

        save_checkpoint(small_model(), tmp_path / "m.json")
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["format"] == "wavenet-ndt/model" and doc["version"] == 1
        assert {"arch", "params", "bn_state", "train_config"} <= set(doc)
        doc["version"] = 2
        (tmp_path / "m.json").write_text(json.dumps(doc))
        with pytest.raises(FormatVersionMismatch):
            load_checkpoint(tmp_path / "m.json")

    def test_residual_passes_input_through(self):
        model = build_default_model(seed=2)
        dense = model.layers[-1]
        for v in dense.params.values():
            v[...] = 0.0
        model.infer_mode()
        x = np.random.default_rng(4).normal(size=(3, 100))
        assert np.array_equal(model.forward(x), x)

    @pytest.mark.parametrize("residual", [True, False])
    def test_input_gradient(self, residual):
        rng = np.random.default_rng(8)
        model = build_default_model(seed=4, residual=residual, dropout_rate=0.0)
        model.infer_mode()
        inputs = {"x": rng.normal(size=(2, 100))}
        target = rng.normal(size=(2, 100))
        f = lambda: mse_l2_loss(model.forward(inputs["x"]), target)[0]
        _, g = mse_l2_loss(model.forward(inputs["x"]), target)
        grad = model.backward(g)
        relus = [layer for layer in model.layers if layer.kind == "ReLU"]

        def active():
            return np.concatenate([(layer._x > 0).ravel() for layer in relus])

        errors = directional_errors(f, {"x": grad}, inputs, rng, probes=20, pattern=active)
        assert errors.max() < 1e-4

    def test_checkpoint_keeps_residual_flag(self, tmp_path):
        model = build_default_model(seed=1, residual=False)
        save_checkpoint(model, tmp_path / "m.json")
        assert load_checkpoint(tmp_path / "m.json")[0].residual is False
        save_checkpoint(build_default_model(seed=1), tmp_path / "r.json")
        assert load_checkpoint(tmp_path / "r.json")[0].residual is True

    def test_default_architecture(self):
        kinds = [layer.kind for layer in build_default_model().layers]
        assert kinds == ["Conv1D", "BatchNorm", "ReLU"] * 4 + ["Dropout", "Flatten", "Dense"]
