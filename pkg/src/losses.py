# src/losses.py
"""
Loss terms of nebula variational coding.

Differentiable terms (nebula, KL, reconstruction, metric learning) are built from the
primitives in :mod:`src.tensor`; the K-means / Robbins-Monro baselines are plain numpy
updates without autodiff.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .tensor import (Tensor, ShapeError, NumericError, as_tensor, clamp, clamp_min, exp, gather_rows,
                     log, one_hot, pairwise_sq_dist, reduce_mean, reduce_min, reduce_sum, reshape, square)

NEBULA_EPS: float = 1e-12
TRIPLET_OFFSET: float = 0.01
BCE_CLAMP: float = 1e-7
NEBULA_MODES = ("mass", "euclidean")
# exact: gradient of the logged force; bounded: gradient of the non-negative companion force
NEBULA_GRADIENTS = ("exact", "bounded")

Seed = Union[int, Sequence[int]]


@dataclass
class AnchorSet:
    """The m trainable nebula anchors (m×d, d = latent dimension)."""
    anchors: Tensor
    rng_seed: Seed = 0

    @property
    def m(self) -> int:
        return self.anchors.shape[0]

    @property
    def d(self) -> int:
        return self.anchors.shape[1]


@dataclass
class Assignment:
    """Nearest-anchor labels of one mini-batch; a constant for autodiff."""
    labels: np.ndarray
    distances_sq: np.ndarray

    def members(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.labels == i)

    def counts(self, m: int) -> np.ndarray:
        return np.bincount(self.labels, minlength=m)


def _array(x) -> np.ndarray:
    if isinstance(x, AnchorSet):
        return x.anchors.data
    if isinstance(x, Tensor):
        return x.data
    return np.asarray(x)


def _anchor_tensor(anchors) -> Tensor:
    return anchors.anchors if isinstance(anchors, AnchorSet) else as_tensor(anchors)


def _zero(like: Tensor) -> Tensor:
    return Tensor(np.zeros((), dtype=like.dtype))


def init_anchors(m: int, d: int, seed: Seed, dtype=np.float32) -> AnchorSet:
    """
    Draws the anchors i.i.d. from the standard normal, matching the Gaussian prior on the latent space.

    :param m: Anchor count.
    :type m: int
    :param d: Latent dimension.
    :type d: int
    :param seed: Seed (or seed sequence) of the anchor RNG.
    :type seed: Seed
    :raises ValueError: If ``m`` or ``d`` is smaller than 1.
    :rtype: AnchorSet
    """
    if m < 1 or d < 1:
        raise ValueError(f"anchor set needs m >= 1 and d >= 1, got m={m}, d={d}")
    rng = np.random.default_rng(seed)
    return AnchorSet(Tensor(rng.standard_normal((m, d)).astype(dtype), requires_grad=True), seed)


def _farthest_points(features: np.ndarray, nearest_sq: np.ndarray, count: int) -> List[int]:
    """Greedy farthest-point order; stops early once every feature coincides with a chosen one."""
    f = features.astype(np.float64)
    nearest_sq = nearest_sq.astype(np.float64).copy()
    chosen: List[int] = []
    for _ in range(count):
        k = int(np.argmax(nearest_sq))
        if nearest_sq[k] <= 0:
            break
        chosen.append(k)
        diff = f - f[k]
        nearest_sq = np.minimum(nearest_sq, np.einsum("ij,ij->i", diff, diff))
    return chosen


def init_anchors_from_features(features, m: int, dtype=np.float32) -> AnchorSet:
    """
    Places the anchors on ``m`` features in farthest-point order, starting with the feature
    farthest from the feature mean.

    With fewer than ``m`` distinct features the chosen ones are repeated.

    :param features: n×d latent features (eval-mode encodings of the training data).
    :param m: Anchor count.
    :type m: int
    :raises ValueError: If ``m`` < 1 or there are no features.
    :rtype: AnchorSet
    """
    f = _array(features)
    if m < 1 or f.ndim != 2 or f.shape[0] == 0:
        raise ValueError(f"anchor placement needs m >= 1 and a non-empty n×d feature matrix, got m={m}, {f.shape}")
    diff = f.astype(np.float64) - f.mean(axis=0, dtype=np.float64)
    chosen = _farthest_points(f, np.einsum("ij,ij->i", diff, diff), m) or [0]
    rows = [chosen[k % len(chosen)] for k in range(m)]
    return AnchorSet(Tensor(f[rows].astype(dtype), requires_grad=True))


def relocate_empty_anchors(features, anchors, assignment: Optional[Assignment] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Moves every anchor without assigned features onto the feature farthest from all anchors.

    Several empty anchors are placed in farthest-point order, so they land on different
    features. Anchors stay where they are once every feature coincides with an anchor.

    :param features: n×d latent features.
    :param anchors: AnchorSet or m×d matrix.
    :param assignment: Assignment of ``features``; computed when omitted.
    :type assignment: Optional[Assignment]
    :return: The new anchor matrix and the indices of the moved anchors.
    :rtype: Tuple[np.ndarray, np.ndarray]
    """
    f, a = _array(features), _array(anchors).copy()
    if assignment is None:
        assignment = assign_anchors(f, a)
    empty = np.flatnonzero(assignment.counts(a.shape[0]) == 0)
    if empty.size == 0 or f.shape[0] == 0:
        return a, np.empty(0, dtype=np.int64)
    targets = _farthest_points(f, assignment.distances_sq.min(axis=1), empty.size)
    moved = empty[:len(targets)]
    a[moved] = f[targets].astype(a.dtype)
    return a, moved


def assign_anchors(features, anchors) -> Assignment:
    """
    Labels every feature with its nearest anchor (lowest index on ties).

    :param features: n×d latent features (Tensor or array).
    :param anchors: AnchorSet or m×d matrix.
    :raises ShapeError: If the feature and anchor dimensions differ.
    :rtype: Assignment
    """
    f, a = _array(features), _array(anchors)
    if f.ndim != 2 or a.ndim != 2 or f.shape[1] != a.shape[1]:
        raise ShapeError(f"assign_anchors: features {f.shape} and anchors {a.shape} do not conform")
    diff = f[:, None, :] - a[None, :, :]
    distances_sq = np.einsum("ijk,ijk->ij", diff, diff)
    return Assignment(np.argmin(distances_sq, axis=1), distances_sq)


def _anchor_row(anchor_tensor: Tensor, i: int) -> Tensor:
    return reshape(gather_rows(anchor_tensor, [i]), (anchor_tensor.shape[1],))


def anchor_mass(features: Optional[Tensor], anchors, assignment: Optional[Assignment], i: int) -> Tensor:
    """
    Mass of anchor ``i``: one plus the summed squared distances of its assigned features.

    ``features=None`` stands for an empty batch (every mass is 1).
    """
    a = _anchor_tensor(anchors)
    if not 0 <= i < a.shape[0]:
        raise IndexError(f"anchor index {i} out of range for {a.shape[0]} anchors")
    if features is not None and assignment is None:
        assignment = assign_anchors(features, a)
    members = np.empty(0, dtype=np.int64) if features is None else assignment.members(i)
    if members.size == 0:
        return Tensor(np.ones((), dtype=a.dtype))
    z = gather_rows(as_tensor(features, a), members)
    return 1.0 + reduce_sum(square(z - _anchor_row(a, i)))


def log_inv_sq_distance(a_i: Tensor, a_j: Tensor) -> Tensor:
    """Negative log of the squared anchor distance, guarded by ``NEBULA_EPS``; may be negative."""
    return -log(reduce_sum(square(a_j - a_i)) + NEBULA_EPS, min_value=NEBULA_EPS)


def _bounded_inverse(sq: Tensor) -> Tensor:
    # ln(1 + 1/(d² + eps)) written as a difference of logs, both arguments positive
    return log(sq + (1.0 + NEBULA_EPS)) - log(sq + NEBULA_EPS, min_value=NEBULA_EPS)


def bounded_inv_sq_distance(a_i: Tensor, a_j: Tensor) -> Tensor:
    """
    ``ln(1 + 1/||a_j - a_i||²)``: positive at every distance, close to the negative log of
    the squared distance for near anchors and to the inverse squared distance for far ones.

    :param a_i: First anchor (d-vector).
    :type a_i: Tensor
    :param a_j: Second anchor (d-vector).
    :type a_j: Tensor
    :rtype: Tensor
    """
    return _bounded_inverse(reduce_sum(square(a_j - a_i)))


def gravitational_force(i: int, j: int, features: Optional[Tensor], anchors,
                        assignment: Optional[Assignment], clamp_d: bool = False) -> Tensor:
    """Force between anchors ``i`` and ``j``: product of both masses and the log inverse distance."""
    if i == j:
        raise ValueError("gravitational_force needs two distinct anchors")
    a = _anchor_tensor(anchors)
    inv = log_inv_sq_distance(_anchor_row(a, i), _anchor_row(a, j))
    if clamp_d:
        inv = clamp_min(inv, 0.0)
    return anchor_mass(features, a, assignment, i) * anchor_mass(features, a, assignment, j) * inv


def nebula_loss(features: Optional[Tensor], anchors, mode: str = "mass",
                assignment: Optional[Assignment] = None, clamp_d: bool = False,
                gradient: str = "exact") -> Tensor:
    """
    Nebula anchor loss for one batch.

    ``mass`` mode sums the gravitational force over all unordered anchor pairs; with a single
    anchor the pair sum is empty and the loss falls back to the pure attraction term.
    ``euclidean`` mode keeps only the attraction of every feature to its assigned anchor.
    Gradients reach features and anchors; the assignment itself is constant.

    The value is always the force sum above. With ``gradient = "bounded"`` the backward pass
    instead follows the companion force ``sum M_i·M_j·ln(1 + 1/||a_j - a_i||²)``, which is
    non-negative: features are always pulled towards their anchor and the pair repulsion
    fades with distance. The exact gradient rewards growing masses as soon as two anchors
    are more than unit distance apart.

    :param features: n×d latent features, or None for an empty batch.
    :type features: Optional[Tensor]
    :param anchors: AnchorSet or m×d tensor.
    :param mode: ``mass`` or ``euclidean``.
    :type mode: str
    :param assignment: Precomputed assignment; computed from the current values when omitted.
    :type assignment: Optional[Assignment]
    :param clamp_d: Clamp the log inverse distance at 0.
    :type clamp_d: bool
    :param gradient: ``exact`` or ``bounded`` (mass mode with at least two anchors only).
    :type gradient: str
    :rtype: Tensor
    """
    if mode not in NEBULA_MODES:
        raise ValueError(f"unknown nebula mode '{mode}' (expected one of {NEBULA_MODES})")
    if gradient not in NEBULA_GRADIENTS:
        raise ValueError(f"unknown nebula gradient '{gradient}' (expected one of {NEBULA_GRADIENTS})")
    a = _anchor_tensor(anchors)
    m = a.shape[0]
    attraction_only = mode == "euclidean" or m == 1
    if features is None:
        if attraction_only:
            return _zero(a)
        masses = Tensor(np.ones(m, dtype=a.dtype))
    else:
        features = as_tensor(features, a)
        if assignment is None:
            assignment = assign_anchors(features, a)
        attraction = pairwise_sq_dist(features, a) * one_hot(assignment.labels, m, dtype=a.dtype)
        if attraction_only:
            return reduce_sum(attraction)
        masses = 1.0 + reduce_sum(attraction, axis=0)
    rows, cols = np.triu_indices(m, k=1)
    pair_sq = gather_rows(reshape(pairwise_sq_dist(a, a), (m * m,)), rows * m + cols)
    inv = -log(pair_sq + NEBULA_EPS, min_value=NEBULA_EPS)
    if clamp_d:
        inv = clamp_min(inv, 0.0)
    mass_products = gather_rows(masses, rows) * gather_rows(masses, cols)
    force = reduce_sum(mass_products * inv)
    if gradient == "exact":
        return force
    companion = reduce_sum(mass_products * _bounded_inverse(pair_sq))
    # value of the force, gradient of the companion
    return force.detach() + (companion - companion.detach())


def bounded_nebula_force(features: Optional[Tensor], anchors, assignment: Optional[Assignment] = None) -> Tensor:
    """
    The companion force whose gradient ``nebula_loss(..., gradient="bounded")`` follows.

    :param features: n×d latent features, or None for an empty batch.
    :type features: Optional[Tensor]
    :param anchors: AnchorSet or m×d tensor with m >= 2.
    :param assignment: Precomputed assignment; computed when omitted.
    :type assignment: Optional[Assignment]
    :rtype: Tensor
    """
    a = _anchor_tensor(anchors)
    m = a.shape[0]
    if m < 2:
        raise ValueError("the companion force needs at least two anchors")
    rows, cols = np.triu_indices(m, k=1)
    masses = [anchor_mass(features, a, assignment, i) for i in range(m)]
    total = None
    for i, j in zip(rows, cols):
        term = masses[i] * masses[j] * bounded_inv_sq_distance(_anchor_row(a, i), _anchor_row(a, j))
        total = term if total is None else total + term
    return total


def kl_diag_gaussian(mu: Tensor, logvar: Tensor) -> Tensor:
    """Closed-form KL of N(mu, diag(exp(logvar))) to the standard normal, averaged over the batch."""
    if mu.shape != logvar.shape:
        raise ShapeError(f"kl_diag_gaussian: mu {mu.shape} and logvar {logvar.shape} differ")
    n = mu.shape[0]
    return 0.5 * reduce_sum(square(mu) + exp(logvar) - 1.0 - logvar) / float(n)


def recon_euclidean(pred: Tensor, target) -> Tensor:
    """Squared Euclidean reconstruction error per sample, averaged over the batch."""
    pred = as_tensor(pred)
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError(f"recon_euclidean: pred {pred.shape} and target {target.shape} differ")
    return reduce_sum(square(pred - target)) / float(pred.shape[0])


def recon_bce(pred: Tensor, target) -> Tensor:
    """
    Binary cross entropy summed over elements, averaged over the batch.

    Predictions are clamped to ``[BCE_CLAMP, 1 - BCE_CLAMP]`` before the logarithms.

    :raises NumericError: If a prediction lies outside [0, 1].
    :raises ShapeError: If shapes differ.
    :rtype: Tensor
    """
    pred = as_tensor(pred)
    target = as_tensor(target, pred)
    if pred.shape != target.shape:
        raise ShapeError(f"recon_bce: pred {pred.shape} and target {target.shape} differ")
    if np.any(pred.data < 0) or np.any(pred.data > 1):
        raise NumericError("recon_bce: predictions must lie in [0, 1]")
    p = clamp(pred, BCE_CLAMP, 1.0 - BCE_CLAMP)
    per_element = target * log(p) + (1.0 - target) * log(1.0 - p)
    return -reduce_sum(per_element) / float(pred.shape[0])


def reconstruction_loss(pred: Tensor, target, decoder: str) -> Tensor:
    """BCE for the Bernoulli decoder, squared Euclidean error for the Gaussian one."""
    return recon_bce(pred, target) if decoder == "bernoulli" else recon_euclidean(pred, target)


def chamfer(set_a: Tensor, set_b: Tensor) -> Tensor:
    """Symmetric squared-distance Chamfer distance, each direction averaged over its own set."""
    set_a = as_tensor(set_a)
    set_b = as_tensor(set_b, set_a)
    distances = pairwise_sq_dist(set_a, set_b)
    return reduce_mean(reduce_min(distances, axis=1)) + reduce_mean(reduce_min(distances, axis=0))


def siamese_pair(e_i: Tensor, e_p: Tensor) -> Tensor:
    """
    Squared distance between two same-label embeddings.

    :param e_i: First embedding (d-vector).
    :type e_i: Tensor
    :param e_p: Embedding with the same label.
    :type e_p: Tensor
    :rtype: Tensor
    """
    return reduce_sum(square(e_i - e_p))


def triplet(e_i: Tensor, e_p: Tensor, e_n: Tensor) -> Tensor:
    """``ln(max(1, 2 - |e_i - e_n|^2 / (|e_i - e_p|^2 + 0.01)))``; lies in [0, ln 2]."""
    ratio = reduce_sum(square(e_i - e_n)) / (reduce_sum(square(e_i - e_p)) + TRIPLET_OFFSET)
    return log(clamp_min(2.0 - ratio, 1.0))


def metric_terms(features: Tensor, labels) -> Tuple[Tensor, Tensor]:
    """
    Siamese and triplet terms over every permutation inside the batch.

    Pairs are unordered same-label pairs; triplets are (i, p, n) with label(i) = label(p),
    i != p and label(n) != label(i). Each term is averaged by its count, and a batch without
    any valid pair (or triplet) contributes 0 for that term.

    :param features: n×d latent features, n >= 2.
    :type features: Tensor
    :param labels: Integer label per feature (anchor assignment or, supervised, the true class).
    :rtype: Tuple[Tensor, Tensor]
    """
    labels = np.asarray(labels)
    n = features.shape[0]
    if n < 2:
        raise ValueError(f"metric learning needs at least 2 samples, got {n}")
    same = labels[:, None] == labels[None, :]
    distances = reshape(pairwise_sq_dist(features, features), (n * n,))

    rows, cols = np.nonzero(np.triu(same, k=1))
    pair_term = reduce_mean(gather_rows(distances, rows * n + cols)) if rows.size else _zero(features)

    positive = same & ~np.eye(n, dtype=bool)
    anchor_idx, pos_idx, neg_idx = np.nonzero(positive[:, :, None] & ~same[:, None, :])
    if anchor_idx.size == 0:
        return pair_term, _zero(features)
    d_pos = gather_rows(distances, anchor_idx * n + pos_idx)
    d_neg = gather_rows(distances, anchor_idx * n + neg_idx)
    triplet_term = reduce_mean(log(clamp_min(2.0 - d_neg / (d_pos + TRIPLET_OFFSET), 1.0)))
    return pair_term, triplet_term


def metric_loss(features: Tensor, labels, pair_weight: float = 1.0, triplet_weight: float = 1.0) -> Tensor:
    """
    Weighted sum of the siamese and triplet terms of :func:`metric_terms`.

    :param features: n×d latent features, n >= 2.
    :type features: Tensor
    :param labels: Integer label per feature.
    :param pair_weight: Weight of the siamese term.
    :type pair_weight: float
    :param triplet_weight: Weight of the triplet term.
    :type triplet_weight: float
    :raises ValueError: If fewer than two features are given.
    :rtype: Tensor
    """
    pair_term, triplet_term = metric_terms(features, labels)
    return pair_weight * pair_term + triplet_weight * triplet_term


def total_loss(recon, kl, nebula, metric, weights: Sequence[float] = (1.0, 1.0, 1.0, 1.0)):
    """``w_r·recon + w_k·kl + w_n·nebula + w_m·metric``; zero nebula and metric weights give a plain VAE."""
    if len(weights) != 4 or any(w < 0 for w in weights):
        raise ValueError(f"total_loss needs four non-negative weights, got {tuple(weights)}")
    w_recon, w_kl, w_nebula, w_metric = weights
    return w_recon * recon + w_kl * kl + w_nebula * nebula + w_metric * metric


# --------------------------------------------------------------
# K-means / Robbins-Monro baselines (no autodiff)
# --------------------------------------------------------------

def kmeans_update(features, assignment: Assignment, previous) -> np.ndarray:
    """Moves every center to the mean of its assigned features; empty clusters keep their center."""
    f, centers = _array(features), _array(previous).copy()
    counts = assignment.counts(centers.shape[0])
    sums = np.zeros_like(centers)
    np.add.at(sums, assignment.labels, f.astype(centers.dtype))
    filled = counts > 0
    centers[filled] = sums[filled] / counts[filled, None]
    return centers


def kmeans_loss(features, anchors, assignment: Assignment) -> float:
    """Within-cluster sum of squared distances for the given assignment."""
    f, a = _array(features), _array(anchors)
    diff = f - a[assignment.labels]
    return float(np.sum(diff * diff))


def robbins_monro_update(anchors, features, assignment: Assignment, lr: float) -> np.ndarray:
    """Batch-wise stochastic approximation ``a_i <- a_i + lr * sum(z - a_i)`` over each cluster."""
    a, f = _array(anchors).copy(), _array(features)
    counts = assignment.counts(a.shape[0])
    sums = np.zeros_like(a)
    np.add.at(sums, assignment.labels, f.astype(a.dtype))
    return a + lr * (sums - counts[:, None] * a)


# --------------------------------------------------------------
# diagnostics
# --------------------------------------------------------------

def anchor_purity(assigned, true_labels) -> float:
    """Fraction of samples whose anchor's majority true label equals their own label."""
    assigned, true_labels = np.asarray(assigned), np.asarray(true_labels)
    if assigned.size == 0:
        return 0.0
    agreeing = 0
    for anchor in np.unique(assigned):
        members = true_labels[assigned == anchor]
        agreeing += int(np.bincount(members).max())
    return agreeing / assigned.size


def mean_pairwise_anchor_distance(anchors) -> float:
    """
    Mean Euclidean distance over all unordered anchor pairs.

    :param anchors: AnchorSet or m×d matrix.
    :return: The mean distance, 0.0 for fewer than two anchors.
    :rtype: float
    """
    a = _array(anchors).astype(np.float64)
    m = a.shape[0]
    if m < 2:
        return 0.0
    rows, cols = np.triu_indices(m, k=1)
    return float(np.mean(np.linalg.norm(a[rows] - a[cols], axis=1)))
