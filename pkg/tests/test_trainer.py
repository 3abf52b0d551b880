import math

import numpy as np
import pytest

from dpaudit.accountant import SgdConfig
from dpaudit.trainer import (
    Dataset,
    Model,
    TrainingDiverged,
    accuracy,
    generate_synthetic,
    load_csv,
    load_model,
    per_example_losses,
    save_csv,
    save_model,
    train_dpsgd,
)


def small_config(sigma=0.0, clip=1.0, q=0.05, lr=0.1, epochs=100, seed=1):
    return SgdConfig.from_epochs(sigma=sigma, clip=clip, q=q, lr=lr, epochs=epochs, seed=seed)


class TestGenerateSynthetic:
    def test_zero_separation_gives_chance_accuracy(self):
        train, holdout = generate_synthetic(2000, 10, 4, 0.0, 3)
        model, _ = train_dpsgd(train, small_config(epochs=30))
        stderr = math.sqrt(0.25 * 0.75 / holdout.n)
        assert accuracy(model, holdout) == pytest.approx(0.25, abs=3 * stderr)

    def test_separable_data_trains_well(self):
        train, _ = generate_synthetic(2000, 20, 2, 3.0, 5)
        model, _ = train_dpsgd(train, small_config())
        assert accuracy(model, train) > 0.90

    def test_same_seed_identical(self):
        a = generate_synthetic(100, 5, 3, 1.0, 9)
        b = generate_synthetic(100, 5, 3, 1.0, 9)
        for x, y in zip(a, b):
            assert np.array_equal(x.features, y.features)
            assert np.array_equal(x.labels, y.labels)

    def test_equal_split_sizes_and_tags(self):
        train, holdout = generate_synthetic(500, 8, 2, 1.0, 0)
        assert train.n == holdout.n == 500
        assert (train.split, holdout.split) == ("train", "holdout")


class TestLoadCsv:
    def test_parses_rows(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("1,0.5,0.25\n0,0.1,0.9\n")
        data = load_csv(str(path))
        assert data.n == 2 and data.dim == 2
        assert list(data.labels) == [1, 0]
        assert np.allclose(data.features, [[0.5, 0.25], [0.1, 0.9]])

    def test_header_skipped(self, tmp_path):
        bare = tmp_path / "bare.csv"
        bare.write_text("1,0.5,0.25\n0,0.1,0.9\n")
        headed = tmp_path / "headed.csv"
        headed.write_text("label,f1,f2\n1,0.5,0.25\n0,0.1,0.9\n")
        a, b = load_csv(str(bare)), load_csv(str(headed))
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.labels, b.labels)

    def test_inconsistent_dimension_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,0.5,0.25,0.1\n0,0.1,0.9,0.2\n1,0.3,0.4\n0,0.1,0.2,0.3\n")
        with pytest.raises(ValueError, match=":3:"):
            load_csv(str(path))

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("1,0.5,0.25\n0,oops,0.9\n")
        with pytest.raises(ValueError, match=":2:"):
            load_csv(str(path))

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "empty.csv"
        path.write_text("")
        with pytest.raises(ValueError, match="no data rows"):
            load_csv(str(path))

    def test_save_round_trip(self, tmp_path):
        data, _ = generate_synthetic(50, 4, 3, 1.0, 2)
        path = tmp_path / "rt.csv"
        save_csv(data, str(path))
        loaded = load_csv(str(path))
        assert np.array_equal(loaded.features, data.features)
        assert np.array_equal(loaded.labels, data.labels)


class TestTrainDpsgd:
    def test_noiseless_baseline_accuracy(self):
        train, _ = generate_synthetic(2000, 20, 2, 3.0, 5)
        model, trace = train_dpsgd(train, small_config(epochs=100))
        assert accuracy(model, train) >= 0.95
        assert len(trace.losses) == len(trace.accuracies) == 100

    def test_huge_noise_gives_chance_accuracy(self):
        train, _ = generate_synthetic(1000, 20, 5, 3.0, 5)
        model, _ = train_dpsgd(train, small_config(sigma=500.0, epochs=20))
        stderr = math.sqrt(0.2 * 0.8 / train.n)
        assert accuracy(model, train) == pytest.approx(0.2, abs=3 * stderr)

    def test_determinism_bit_identical(self):
        train, _ = generate_synthetic(300, 10, 3, 1.0, 8)
        cfg = small_config(sigma=2.0, epochs=10, seed=77)
        a, _ = train_dpsgd(train, cfg)
        b, _ = train_dpsgd(train, cfg)
        assert np.array_equal(a.weights, b.weights)
        assert np.array_equal(a.bias, b.bias)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reported(self):
        # Noise drawn at the float64 ceiling overflows the parameters to
        # non-finite values within the first epoch.
        train, _ = generate_synthetic(200, 5, 2, 1.0, 0)
        with pytest.raises(TrainingDiverged, match="learning rate"):
            train_dpsgd(train, small_config(sigma=1.8e308, epochs=1))

    def test_rejects_empty_expected_batch(self):
        train, _ = generate_synthetic(10, 5, 2, 1.0, 0)
        with pytest.raises(ValueError, match="q\\*n"):
            train_dpsgd(train, SgdConfig(sigma=0, clip=1, q=0.01, steps=5, lr=0.1, epochs=1, seed=0))

    def test_metadata_recorded(self):
        train, _ = generate_synthetic(200, 5, 2, 1.0, 0)
        cfg = small_config(epochs=5)
        model, trace = train_dpsgd(train, cfg)
        assert model.config == cfg
        assert model.steps_run == cfg.steps
        assert model.final_train_loss == trace.losses[-1]

    def test_accuracy_non_increasing_in_sigma(self):
        # Trial-mean over 5 seeds; training seeds shared across sigmas so the
        # comparison is paired on identical Poisson masks.
        means = {}
        for sigma in (0.0, 1.0, 8.0):
            accs = []
            for seed in range(5):
                train, _ = generate_synthetic(1000, 20, 5, 0.5, 50 + seed)
                cfg = small_config(sigma=sigma, q=0.02, epochs=50, seed=90 + seed)
                model, _ = train_dpsgd(train, cfg)
                accs.append(accuracy(model, train))
            means[sigma] = np.mean(accs)
        assert means[8.0] <= means[1.0] <= means[0.0]


class TestGradients:
    def test_matches_central_finite_differences(self):
        # One full-batch noiseless unclipped step from zero recovers the
        # gradient of the mean loss; compare against central differences.
        rng = np.random.default_rng(4)
        data = Dataset(features=rng.normal(size=(40, 2)), labels=rng.integers(0, 3, 40))
        cfg = SgdConfig(sigma=0.0, clip=np.inf, q=1.0, steps=1, lr=1.0, epochs=1, seed=0)
        model, _ = train_dpsgd(data, cfg)
        grad_w = -model.weights  # lr = 1, start from zero
        grad_b = -model.bias

        def mean_loss(w, b):
            probe = Model(weights=w, bias=b)
            return float(per_example_losses(probe, data).mean())

        h = 1e-5
        for idx in np.ndindex(grad_w.shape):
            w_hi, w_lo = np.zeros((2, 3)), np.zeros((2, 3))
            w_hi[idx] += h
            w_lo[idx] -= h
            fd = (mean_loss(w_hi, np.zeros(3)) - mean_loss(w_lo, np.zeros(3))) / (2 * h)
            assert grad_w[idx] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        for k in range(3):
            b_hi, b_lo = np.zeros(3), np.zeros(3)
            b_hi[k] += h
            b_lo[k] -= h
            fd = (mean_loss(np.zeros((2, 3)), b_hi) - mean_loss(np.zeros((2, 3)), b_lo)) / (2 * h)
            assert grad_b[k] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_noiseless_unclipped_matches_reference_sgd(self):
        # Independent per-example reference loop sharing the trainer's
        # sampling stream protocol: one uniform vector per step.
        train, _ = generate_synthetic(200, 6, 3, 1.0, 12)
        cfg = SgdConfig(sigma=0.0, clip=np.inf, q=0.2, steps=60, lr=0.2, epochs=6, seed=33)
        model, _ = train_dpsgd(train, cfg)

        sample_ss, _ = np.random.SeedSequence(cfg.seed).spawn(2)
        rng = np.random.Generator(np.random.PCG64(sample_ss))
        w = np.zeros((6, 3))
        b = np.zeros(3)
        for _ in range(cfg.steps):
            mask = rng.random(train.n) < cfg.q
            grad_w = np.zeros_like(w)
            grad_b = np.zeros_like(b)
            for x, y in zip(train.features[mask], train.labels[mask]):
                logits = x @ w + b
                p = np.exp(logits - logits.max())
                p /= p.sum()
                g = p.copy()
                g[y] -= 1.0
                grad_w += np.outer(x, g)
                grad_b += g
            w -= cfg.lr * grad_w / (cfg.q * train.n)
            b -= cfg.lr * grad_b / (cfg.q * train.n)

        assert np.allclose(model.weights, w, atol=1e-10, rtol=0)
        assert np.allclose(model.bias, b, atol=1e-10, rtol=0)


class TestLossesAndAccuracy:
    def test_perfect_confidence_zero_loss(self):
        data = Dataset(features=np.array([[1.0], [-1.0]]), labels=np.array([1, 0]))
        model = Model(weights=np.array([[-50.0, 50.0]]), bias=np.zeros(2))
        assert per_example_losses(model, data).max() < 1e-6

    def test_uniform_prediction_loss_is_log_k(self):
        data = Dataset(features=np.ones((4, 3)), labels=np.array([0, 1, 2, 3]))
        model = Model(weights=np.zeros((3, 4)), bias=np.zeros(4))
        assert per_example_losses(model, data) == pytest.approx(math.log(4), abs=1e-12)

    def test_loss_floor(self):
        data = Dataset(features=np.array([[1.0]]), labels=np.array([0]))
        model = Model(weights=np.array([[-1000.0, 1000.0]]), bias=np.zeros(2))
        assert per_example_losses(model, data)[0] == pytest.approx(-math.log(1e-12))

    def test_zero_model_predicts_lowest_class(self):
        rng = np.random.default_rng(0)
        data = Dataset(features=rng.normal(size=(500, 4)), labels=rng.integers(0, 2, 500))
        model = Model(weights=np.zeros((4, 2)), bias=np.zeros(2))
        assert accuracy(model, data) == float(np.mean(data.labels == 0))

    def test_memorizing_one_hot_rows(self):
        k = 4
        data = Dataset(features=np.eye(k), labels=np.arange(k))
        model = Model(weights=100.0 * np.eye(k), bias=np.zeros(k))
        assert accuracy(model, data) == 1.0

    def test_dimension_mismatch_rejected(self):
        data = Dataset(features=np.ones((2, 3)), labels=np.array([0, 1]))
        model = Model(weights=np.zeros((4, 2)), bias=np.zeros(2))
        with pytest.raises(ValueError):
            per_example_losses(model, data)


class TestModelSerialization:
    def test_round_trip_exact(self, tmp_path):
        train, _ = generate_synthetic(100, 5, 3, 1.0, 6)
        model, _ = train_dpsgd(train, small_config(sigma=1.0, epochs=5))
        path = tmp_path / "m.txt"
        save_model(model, str(path))
        loaded = load_model(str(path))
        assert np.array_equal(loaded.weights, model.weights)
        assert np.array_equal(loaded.bias, model.bias)

    def test_header_format(self, tmp_path):
        model = Model(weights=np.zeros((2, 3)), bias=np.zeros(3))
        path = tmp_path / "m.txt"
        save_model(model, str(path))
        first = path.read_text().splitlines()[0]
        assert first == "dpsgd-model v1 2 3"

    def test_rejects_wrong_header(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("not-a-model 1 2\n0\n0\n")
        with pytest.raises(ValueError):
            load_model(str(path))

    def test_rejects_truncated_file(self, tmp_path):
        path = tmp_path / "m.txt"
        path.write_text("dpsgd-model v1 2 2\n0.0\n0.0\n")
        with pytest.raises(ValueError, match="coordinates"):
            load_model(str(path))
