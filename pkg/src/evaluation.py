# src/evaluation.py
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
import pandas as pd

from .local_loader import Dataset
from .losses import AnchorSet, anchor_purity, assign_anchors, kl_diag_gaussian, reconstruction_loss
from .models import MlpVae
from .tensor import no_grad

EVAL_BATCH: int = 1024
ENTROPY_RIDGE: float = 1e-6
DELTA_BASE: float = 1.25


@dataclass
class EvalReport:
    rel: float
    delta1: float
    delta2: float
    delta3: float
    covariance_offdiag_mean_abs: float
    latent_entropy: float
    elbo: float
    anchor_accuracy: Optional[float] = None
    anchor_purity: Optional[float] = None
    per_anchor_counts: List[int] = field(default_factory=list)

    def to_lines(self) -> List[str]:
        """``key=value`` lines; anchor metrics are omitted for models without anchors."""
        lines = [f"rel={self.rel:.6f}", f"delta1={self.delta1:.4f}", f"delta2={self.delta2:.4f}",
                 f"delta3={self.delta3:.4f}"]
        if self.anchor_accuracy is not None:
            lines.append(f"anchor_accuracy={self.anchor_accuracy:.4f}")
            lines.append(f"anchor_purity={self.anchor_purity:.4f}")
        lines.append(f"covariance_offdiag_mean_abs={self.covariance_offdiag_mean_abs:.6f}")
        lines.append(f"latent_entropy={self.latent_entropy:.6f}")
        lines.append(f"elbo={self.elbo:.6f}")
        if self.per_anchor_counts:
            lines.append("per_anchor_counts=" + ",".join(str(c) for c in self.per_anchor_counts))
        return lines

    def to_frame(self) -> pd.DataFrame:
        row = {"rel": self.rel, "delta1": self.delta1, "delta2": self.delta2, "delta3": self.delta3,
               "anchor_accuracy": self.anchor_accuracy, "anchor_purity": self.anchor_purity,
               "covariance_offdiag_mean_abs": self.covariance_offdiag_mean_abs,
               "latent_entropy": self.latent_entropy, "elbo": self.elbo,
               "per_anchor_counts": ";".join(str(c) for c in self.per_anchor_counts)}
        return pd.DataFrame([row])


def encode_dataset(model: MlpVae, samples: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    """Eval-mode latents (``z = mu``) of every sample, without recording a graph."""
    chunks = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            chunks.append(model.encode(samples[start:start + batch_size], sample=False).mu.numpy())
    return np.concatenate(chunks, axis=0)


def reconstruct(model: MlpVae, samples: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
    chunks = []
    with no_grad():
        for start in range(0, len(samples), batch_size):
            latent = model.encode(samples[start:start + batch_size], sample=False)
            chunks.append(model.decode(latent.mu).numpy())
    return np.concatenate(chunks, axis=0)


def reconstruction_metrics(pred: np.ndarray, target: np.ndarray, eps: float = 0.01) -> Tuple[float, float, float, float]:
    """
    Absolute relative error and threshold accuracies over all elements.

    Ground truth and prediction are floored at ``eps`` so zero-valued pixels stay defined:
    ``rel = mean(|pred - y| / max(y, eps))`` and ``delta_i`` is the percentage of elements with
    ``max(pred'/y', y'/pred') < 1.25**i``.

    :param pred: Reconstructions.
    :type pred: np.ndarray
    :param target: Ground truth of the same shape.
    :type target: np.ndarray
    :param eps: Floor applied to both sides.
    :type eps: float
    :return: ``(rel, delta1, delta2, delta3)`` with deltas in percent.
    :rtype: Tuple[float, float, float, float]
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from target shape {target.shape}")
    y = np.maximum(target, eps)
    y_hat = np.maximum(pred, eps)
    rel = float(np.mean(np.abs(pred - target) / y))
    ratio = np.maximum(y_hat / y, y / y_hat)
    deltas = [float(np.mean(ratio < DELTA_BASE ** i) * 100.0) for i in (1, 2, 3)]
    return rel, deltas[0], deltas[1], deltas[2]


def eval_reconstruction(model: MlpVae, dataset: Dataset, eps: float = 0.01) -> Tuple[float, float, float, float]:
    return reconstruction_metrics(reconstruct(model, dataset.samples), dataset.samples, eps)


def map_anchors_to_labels(assigned: np.ndarray, labels: np.ndarray, m: int) -> np.ndarray:
    """Majority true label per anchor (lowest label on ties); -1 for anchors without members."""
    mapping = np.full(m, -1, dtype=np.int64)
    for i in range(m):
        members = labels[assigned == i]
        if members.size:
            mapping[i] = int(np.argmax(np.bincount(members)))
    return mapping


def eval_anchor_accuracy(model: MlpVae, anchors: AnchorSet, train: Dataset, test: Dataset) -> float:
    """
    Test accuracy (percent) of the nearest anchor's mapped label.

    Anchors are mapped to the majority label of their assigned training latents.

    :raises ValueError: If either split has no labels.
    :rtype: float
    """
    if train.labels is None or test.labels is None:
        raise ValueError("anchor accuracy needs labelled train and test splits")
    train_assigned = assign_anchors(encode_dataset(model, train.samples), anchors).labels
    mapping = map_anchors_to_labels(train_assigned, train.labels, anchors.m)
    test_assigned = assign_anchors(encode_dataset(model, test.samples), anchors).labels
    return float(np.mean(mapping[test_assigned] == test.labels) * 100.0)


def latent_entropy(latents: np.ndarray) -> float:
    """
    Gaussian plug-in entropy ``0.5 * ln((2*pi*e)^d * det(cov + 1e-6*I))`` of a latent batch.

    :raises ValueError: For fewer than two latents.
    :rtype: float
    """
    latents = np.asarray(latents, dtype=np.float64)
    n, d = latents.shape
    if n < 2:
        raise ValueError(f"latent entropy needs at least 2 samples, got {n}")
    cov = np.atleast_2d(np.cov(latents, rowvar=False, ddof=1)) + ENTROPY_RIDGE * np.eye(d)
    _, logdet = np.linalg.slogdet(cov)
    return float(0.5 * (d * np.log(2.0 * np.pi * np.e) + logdet))


def covariance_diagnostic(latents: np.ndarray) -> Tuple[np.ndarray, float]:
    """Sample covariance of the latents and the mean absolute off-diagonal entry."""
    latents = np.asarray(latents, dtype=np.float64)
    n, d = latents.shape
    if n < 2:
        raise ValueError(f"covariance needs at least 2 samples, got {n}")
    cov = np.atleast_2d(np.cov(latents, rowvar=False, ddof=1))
    if d == 1:
        return cov, 0.0
    offdiag = cov[~np.eye(d, dtype=bool)]
    return cov, float(np.mean(np.abs(offdiag)))


def elbo_estimate(model: MlpVae, batch: np.ndarray, sample: bool = False, eta: Optional[np.ndarray] = None) -> float:
    """
    ``-(recon + kl)`` per sample, the negative log-likelihood being the decoder's reconstruction loss.

    Uses ``z = mu`` unless ``sample`` is set.
    """
    with no_grad():
        latent = model.encode(batch, sample=sample, eta=eta)
        recon = reconstruction_loss(model.decode(latent.z), batch, model.config.decoder)
        kl = kl_diag_gaussian(latent.mu, latent.logvar)
    return -(recon.item() + kl.item())


def smooth_curve(metrics: pd.DataFrame, column: str, window: int = 100) -> pd.Series:
    """Rolling mean of a metrics column (windows shorter than ``window`` at the start)."""
    if column not in metrics.columns:
        raise KeyError(f"metrics have no column '{column}'")
    return metrics[column].rolling(window, min_periods=1).mean()


def evaluate(model: MlpVae, anchors: Optional[AnchorSet], train: Dataset, test: Dataset,
             eps: float = 0.01) -> EvalReport:
    """
    Full evaluation of a trained model on the test split.

    :param model: Trained encoder-decoder.
    :type model: MlpVae
    :param anchors: Trained anchors, or None for a plain VAE.
    :type anchors: Optional[AnchorSet]
    :param train: Training split (anchor-to-label mapping).
    :type train: Dataset
    :param test: Held-out split.
    :type test: Dataset
    :param eps: Floor of the relative-error metrics.
    :type eps: float
    :rtype: EvalReport
    """
    latents = encode_dataset(model, test.samples)
    rel, d1, d2, d3 = eval_reconstruction(model, test, eps)
    _, offdiag = covariance_diagnostic(latents)
    elbo_sum = 0.0
    for start in range(0, len(test), EVAL_BATCH):
        chunk = test.samples[start:start + EVAL_BATCH]
        elbo_sum += elbo_estimate(model, chunk) * len(chunk)
    report = EvalReport(rel, d1, d2, d3, offdiag, latent_entropy(latents), elbo_sum / len(test))
    if anchors is not None:
        assigned = assign_anchors(latents, anchors).labels
        report.per_anchor_counts = [int(c) for c in np.bincount(assigned, minlength=anchors.m)]
        if train.labels is not None and test.labels is not None:
            report.anchor_accuracy = eval_anchor_accuracy(model, anchors, train, test)
            report.anchor_purity = anchor_purity(assigned, test.labels)
    return report
