"""SMO optimizer and calibration tests."""

from __future__ import annotations

import numpy as np
import pytest

from tuskmark.svm import (
    SvmConvergenceError,
    fit_sigmoid,
    kkt_violation,
    rbf_kernel,
    scale_gamma,
    train_rbf_svm,
)


def blobs(rng: np.random.Generator, centers, n_per: int, spread: float = 0.3):
    xs, ys = [], []
    for center, label in centers:
        xs.append(rng.normal(center, spread, size=(n_per, len(center))))
        ys.append(np.full(n_per, label, dtype=float))
    return np.vstack(xs), np.concatenate(ys)


def xor_data(rng: np.random.Generator, n_per: int = 20, spread: float = 0.08):
    return blobs(
        rng,
        [((0, 0), 1.0), ((1, 1), 1.0), ((0, 1), -1.0), ((1, 0), -1.0)],
        n_per,
        spread,
    )


class TestKernel:
    def test_self_kernel_diagonal_one(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=(10, 4))
        k = rbf_kernel(x, x, gamma=0.7)
        assert np.allclose(np.diag(k), 1.0)
        assert np.allclose(k, k.T)
        assert np.all(k > 0) and np.all(k <= 1.0)

    def test_scale_gamma(self):
        x = np.array([[0.0, 0.0], [2.0, 0.0], [0.0, 2.0], [2.0, 2.0]])
        # per-feature variance 1.0 each, 2 features -> gamma 0.5
        assert scale_gamma(x) == pytest.approx(0.5)


class TestTraining:
    def test_separable_blobs_perfect_training_accuracy(self):
        rng = np.random.default_rng(7)
        x, y = blobs(rng, [((0, 0), 1.0), ((4, 4), -1.0)], 25)
        model = train_rbf_svm(x, y, seed=0)
        assert np.all(np.sign(model.decision_function(x)) == y)

    def test_xor_training_accuracy(self):
        rng = np.random.default_rng(11)
        x, y = xor_data(rng)
        model = train_rbf_svm(x, y, seed=0)
        predictions = np.sign(model.decision_function(x))
        assert np.mean(predictions == y) == 1.0

    def test_box_constraints_exact(self):
        rng = np.random.default_rng(3)
        x, y = blobs(rng, [((0, 0), 1.0), ((1.5, 1.5), -1.0)], 30, spread=0.8)
        c = 1.0
        model = train_rbf_svm(x, y, c=c, seed=0)
        assert np.all(model.alphas >= 0.0)
        assert np.all(model.alphas <= c)

    def test_kkt_within_tolerance(self):
        for seed in range(5):
            rng = np.random.default_rng(seed)
            x, y = blobs(rng, [((0, 0), 1.0), ((2, 2), -1.0)], 20, spread=0.7)
            model = train_rbf_svm(x, y, tol=5e-4, seed=seed)
            assert kkt_violation(model, x, y) <= 1e-3

    def test_deterministic_for_fixed_seed(self):
        rng = np.random.default_rng(5)
        x, y = xor_data(rng, n_per=12)
        a = train_rbf_svm(x, y, seed=42)
        b = train_rbf_svm(x, y, seed=42)
        assert np.array_equal(a.alphas, b.alphas)
        assert a.bias == b.bias

    def test_bad_labels_rejected(self):
        with pytest.raises(ValueError):
            train_rbf_svm(np.zeros((4, 2)), np.array([0.0, 1.0, 1.0, 0.0]))

    def test_sweep_cap_raises(self):
        rng = np.random.default_rng(9)
        x, y = xor_data(rng)
        with pytest.raises(SvmConvergenceError):
            train_rbf_svm(x, y, max_sweeps=1)


class TestSigmoid:
    def test_probabilities_monotone_in_margin(self):
        rng = np.random.default_rng(13)
        margins = np.concatenate([rng.normal(-2, 1, 50), rng.normal(2, 1, 50)])
        positive = np.concatenate([np.zeros(50, bool), np.ones(50, bool)])
        calibrator = fit_sigmoid(margins, positive)
        order = np.argsort(margins)
        probabilities = calibrator.probability(margins[order])
        assert np.all(np.diff(probabilities) >= -1e-12)
        assert np.all((probabilities >= 0) & (probabilities <= 1))

    def test_confident_on_separated_margins(self):
        margins = np.array([-3.0, -2.5, -2.8, 2.7, 3.0, 2.4])
        positive = margins > 0
        calibrator = fit_sigmoid(margins, positive)
        assert calibrator.probability(np.array([3.0]))[0] > 0.8
        assert calibrator.probability(np.array([-3.0]))[0] < 0.2

    def test_balanced_coin_near_half(self):
        margins = np.array([-0.01, 0.01, -0.02, 0.02])
        positive = np.array([True, False, False, True])  # margin uninformative
        calibrator = fit_sigmoid(margins, positive)
        p = calibrator.probability(np.array([0.0]))[0]
        assert 0.3 < p < 0.7
