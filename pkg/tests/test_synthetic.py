# tests/test_synthetic.py
import unittest

import numpy as np

from src.synthetic import cluster_centers, gen_synthetic


class TestGenSynthetic(unittest.TestCase):

    def setUp(self):
        print("\n" + "=" * 60)
        print(self._testMethodName)
        print("=" * 60)

    def test_01_zero_spread_puts_samples_on_centers(self):
        dataset = gen_synthetic(3, 5, 4, 0.0, seed=1)
        centers = cluster_centers(3, 4, seed=1).astype(np.float32)
        np.testing.assert_array_equal(dataset.samples, centers[dataset.labels])
        self.assertEqual(dataset.kind, "synthetic")
        self.assertEqual(dataset.samples.dtype, np.float32)

    def test_02_seeded(self):
        first, second = gen_synthetic(4, 10, 3, 0.5, seed=7), gen_synthetic(4, 10, 3, 0.5, seed=7)
        np.testing.assert_array_equal(first.samples, second.samples, "Gleicher Seed sollte gleiche Daten liefern")
        other = gen_synthetic(4, 10, 3, 0.5, seed=8)
        self.assertFalse(np.array_equal(first.samples, other.samples))

    def test_03_train_and_test_share_centers(self):
        train = gen_synthetic(2, 50, 3, 0.1, seed=3)
        test = gen_synthetic(2, 50, 3, 0.1, seed=3, split="test")
        self.assertFalse(np.array_equal(train.samples, test.samples), "Test-Split sollte eigenes Rauschen haben")
        for k in range(2):
            np.testing.assert_allclose(train.samples[train.labels == k].mean(axis=0),
                                       test.samples[test.labels == k].mean(axis=0), atol=0.1)

    def test_04_nearest_center_recovers_labels(self):
        dataset = gen_synthetic(4, 100, 8, 0.1, seed=0)
        centers = cluster_centers(4, 8, seed=0)
        distances = ((dataset.samples[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        np.testing.assert_array_equal(np.argmin(distances, axis=1), dataset.labels,
                                      "Nächstes Zentrum sollte 100 % der Labels treffen")

    def test_05_labels_and_shape(self):
        dataset = gen_synthetic(3, 2, 5, 1.0, seed=0)
        self.assertEqual(dataset.samples.shape, (6, 5))
        np.testing.assert_array_equal(dataset.labels, [0, 0, 1, 1, 2, 2])

    def test_06_invalid_arguments(self):
        for args in ((0, 5, 2, 0.1), (2, 0, 2, 0.1), (2, 5, 0, 0.1), (2, 5, 2, -1.0)):
            with self.subTest(args=args), self.assertRaises(ValueError):
                gen_synthetic(*args, seed=0)


if __name__ == "__main__":
    unittest.main()
