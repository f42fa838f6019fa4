# tests/test_evaluation.py
import math
import unittest

import numpy as np
import pandas as pd

from src.evaluation import (covariance_diagnostic, elbo_estimate, encode_dataset, eval_anchor_accuracy, evaluate,
                            latent_entropy, map_anchors_to_labels, reconstruction_metrics, smooth_curve)
from src.local_loader import Dataset
from src.losses import init_anchors, kl_diag_gaussian, recon_bce
from src.models import ModelConfig, init_weights
from src.tensor import get_tape, reset_tape

LN_2PIE = math.log(2 * math.pi * math.e)
WHITENED = np.array([[1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=np.float64) * math.sqrt(3 / 4)


class TestReconstructionMetrics(unittest.TestCase):

    def setUp(self):
        print("\n" + "=" * 60)
        print(self._testMethodName)
        print("=" * 60)

    def test_01_perfect_reconstruction(self):
        y = np.random.default_rng(0).uniform(size=(3, 5))
        self.assertEqual(reconstruction_metrics(y, y), (0.0, 100.0, 100.0, 100.0))

    def test_02_threshold_accuracy(self):
        rel, d1, d2, d3 = reconstruction_metrics(np.array([[1.1]]), np.array([[1.0]]))
        self.assertAlmostEqual(rel, 0.1)
        self.assertEqual(d1, 100.0, "1.1 sollte innerhalb von delta1 liegen")
        rel, d1, d2, d3 = reconstruction_metrics(np.array([[2.0]]), np.array([[1.0]]))
        self.assertEqual((d1, d2, d3), (0.0, 0.0, 0.0), "2 > 1.25³ sollte außerhalb von delta3 liegen")

    def test_03_zero_pixels_use_the_floor(self):
        rel, d1, _, _ = reconstruction_metrics(np.array([[0.0, 0.005]]), np.array([[0.0, 0.0]]), eps=0.01)
        self.assertAlmostEqual(rel, 0.25)
        self.assertEqual(d1, 100.0)
        with self.assertRaises(ValueError):
            reconstruction_metrics(np.zeros((2, 2)), np.zeros((2, 3)))


class TestLatentDiagnostics(unittest.TestCase):

    def setUp(self):
        print("\n" + "=" * 60)
        print(self._testMethodName)
        print("=" * 60)

    def test_01_entropy_of_whitened_latents(self):
        self.assertAlmostEqual(latent_entropy(WHITENED), LN_2PIE, places=5)

    def test_02_entropy_scaling(self):
        rng = np.random.default_rng(1)
        latents = rng.normal(size=(200, 3))
        gain = latent_entropy(2 * latents) - latent_entropy(latents)
        self.assertAlmostEqual(gain, 3 * math.log(2), places=4, msg="Skalierung mit 2 sollte d·ln 2 addieren")

    def test_03_degenerate_latents(self):
        value = latent_entropy(np.ones((10, 4)))
        self.assertTrue(math.isfinite(value), "Der Ridge sollte die Entropie endlich halten")
        self.assertLess(value, 0.0)
        with self.assertRaises(ValueError):
            latent_entropy(np.ones((1, 4)))

    def test_04_covariance_diagnostic(self):
        cov, offdiag = covariance_diagnostic(WHITENED)
        np.testing.assert_allclose(cov, np.eye(2), atol=1e-6)
        self.assertLess(offdiag, 1e-6)
        cov, offdiag = covariance_diagnostic(np.tile([[1.0, 2.0, 3.0]], (5, 1)))
        np.testing.assert_array_equal(cov, np.zeros((3, 3)))
        _, offdiag = covariance_diagnostic(np.random.default_rng(2).standard_normal((100000, 16)))
        self.assertLess(offdiag, 0.02)
        self.assertEqual(covariance_diagnostic(np.arange(4.0).reshape(4, 1))[1], 0.0)

    def test_05_smooth_curve(self):
        metrics = pd.DataFrame({"elbo": [1.0, 3.0, 5.0]})
        np.testing.assert_allclose(smooth_curve(metrics, "elbo", window=2), [1.0, 2.0, 4.0])
        with self.assertRaises(KeyError):
            smooth_curve(metrics, "missing")


class TestModelEvaluation(unittest.TestCase):

    def setUp(self):
        print("\n" + "=" * 60)
        print(self._testMethodName)
        print("=" * 60)
        reset_tape()
        rng = np.random.default_rng(3)
        self.model = init_weights(ModelConfig(input_dim=6, hidden_dims=[5], latent_dim=2), seed=1)
        labels = np.array([0] * 5 + list(range(1, 10)))
        self.dataset = Dataset(rng.uniform(0.05, 0.95, size=(14, 6)).astype(np.float32), labels)

    def test_01_encode_dataset_records_nothing(self):
        latents = encode_dataset(self.model, self.dataset.samples, batch_size=4)
        self.assertEqual(latents.shape, (14, 2))
        self.assertEqual(len(get_tape()), 0, "Evaluation sollte keinen Graphen aufzeichnen")
        np.testing.assert_allclose(latents, encode_dataset(self.model, self.dataset.samples), rtol=1e-5, atol=1e-6)

    def test_02_single_anchor_accuracy_is_majority_frequency(self):
        anchors = init_anchors(1, 2, seed=0)
        accuracy = eval_anchor_accuracy(self.model, anchors, self.dataset, self.dataset)
        self.assertAlmostEqual(accuracy, 5 / 14 * 100)
        with self.assertRaises(ValueError):
            eval_anchor_accuracy(self.model, anchors, Dataset(self.dataset.samples), self.dataset)

    def test_03_label_mapping(self):
        mapping = map_anchors_to_labels(np.array([0, 0, 0, 2]), np.array([4, 4, 1, 7]), m=3)
        np.testing.assert_array_equal(mapping, [4, -1, 7])

    def test_04_elbo_identity(self):
        batch = self.dataset.samples
        latent = self.model.encode(batch, sample=False)
        recon = recon_bce(self.model.decode(latent.z), batch).item()
        kl = kl_diag_gaussian(latent.mu, latent.logvar).item()
        reset_tape()
        elbo = elbo_estimate(self.model, batch)
        self.assertAlmostEqual(elbo, -(recon + kl), places=5)
        self.assertLessEqual(elbo, 0.0, "ELBO sollte bei Bernoulli-Likelihood nie positiv sein")

    def test_05_evaluate_with_and_without_anchors(self):
        anchors = init_anchors(3, 2, seed=0)
        report = evaluate(self.model, anchors, self.dataset, self.dataset)
        self.assertEqual(sum(report.per_anchor_counts), 14)
        keys = [line.split("=")[0] for line in report.to_lines()]
        self.assertEqual(keys[:5], ["rel", "delta1", "delta2", "delta3", "anchor_accuracy"])
        self.assertIn("covariance_offdiag_mean_abs", keys)

        plain = evaluate(self.model, None, self.dataset, self.dataset)
        self.assertIsNone(plain.anchor_accuracy)
        self.assertNotIn("anchor_accuracy", [line.split("=")[0] for line in plain.to_lines()])
        self.assertEqual(plain.rel, report.rel, "Anker sollten die Rekonstruktion nicht beeinflussen")
        self.assertEqual(len(plain.to_frame()), 1)


if __name__ == "__main__":
    unittest.main()
