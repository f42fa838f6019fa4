# src/synthetic.py
import numpy as np

from .local_loader import Dataset

CENTER_SCALE: float = 4.0


def cluster_centers(num_clusters: int, dim: int, seed: int) -> np.ndarray:
    """Cluster centers ~ N(0, I) * 4, drawn from the sub-stream ``[seed, 0]``."""
    return np.random.default_rng([seed, 0]).standard_normal((num_clusters, dim)) * CENTER_SCALE


def gen_synthetic(num_clusters: int, samples_per_cluster: int, dim: int, spread: float, seed: int,
                  split: str = "train") -> Dataset:
    """
    Gaussian-mixture dataset with known cluster ids as labels.

    Train and test splits of one seed share their centers but draw independent noise,
    so a test split is a held-out sample of the same mixture.

    :param num_clusters: Number of mixture components.
    :type num_clusters: int
    :param samples_per_cluster: Samples drawn per component.
    :type samples_per_cluster: int
    :param dim: Sample dimension.
    :type dim: int
    :param spread: Standard deviation of every component (0 puts samples on their centers).
    :type spread: float
    :param seed: Generator seed.
    :type seed: int
    :param split: ``train`` or ``test``.
    :type split: str
    :raises ValueError: On non-positive counts or a negative spread.
    :rtype: Dataset
    """
    if num_clusters < 1 or samples_per_cluster < 1 or dim < 1:
        raise ValueError(f"counts must be positive: clusters={num_clusters}, "
                         f"per_cluster={samples_per_cluster}, dim={dim}")
    if spread < 0 or not np.isfinite(spread):
        raise ValueError(f"spread must be a finite value >= 0, got {spread}")

    centers = cluster_centers(num_clusters, dim, seed)
    labels = np.repeat(np.arange(num_clusters, dtype=np.int64), samples_per_cluster)
    noise_rng = np.random.default_rng([seed, 1 if split == "train" else 2])
    noise = noise_rng.standard_normal((labels.size, dim)) * spread
    samples = (centers[labels] + noise).astype(np.float32)
    return Dataset(samples, labels, split, "synthetic")
